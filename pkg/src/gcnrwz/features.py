"""Feature maps, speed-wave fusion, normalization, and sliding windows."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STEP_SECONDS = 300  # 5-minute time slices

FUSION_VARIANTS = ("learned-both", "learned-c-only", "degenerate")


@dataclass
class FeatureMap:
    """One N x T channel of per-segment, per-timestep values."""
    kind: str  # "speed" | "construction"
    values: np.ndarray
    step_minutes: int = 5
    start_timestamp: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"feature map must be N x T, got shape {self.values.shape}")
        if self.kind not in ("speed", "construction"):
            raise ValueError(f"unknown feature-map kind: {self.kind!r}")

    def timestamp_of(self, t):
        return self.start_timestamp + t * self.step_minutes * 60


@dataclass(frozen=True)
class ConstructionEvent:
    segment_id: str
    start: float  # epoch seconds
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"event on {self.segment_id!r}: start must precede end")


@dataclass(frozen=True)
class NormalizationParams:
    per_min: np.ndarray  # length N
    per_max: np.ndarray

    def __post_init__(self):
        if np.any(self.per_max < self.per_min):
            raise ValueError("per-segment max must be >= min")


@dataclass(frozen=True)
class WindowedDataset:
    """Supervised samples: inputs (S, C, N, H) -> targets (S, N, P)."""
    inputs: np.ndarray
    targets: np.ndarray
    history: int
    horizon: int

    @property
    def num_samples(self):
        return self.inputs.shape[0]


def construction_feature_map(g, events, kernel_lambda, num_steps, start_timestamp=0.0):
    """Influence field max(0, 1 - (dis/lambda)^2) around active workzones.

    ``dis`` is shortest-path miles over the graph; overlapping events
    combine by per-cell maximum, keeping values in [0, 1].
    """
    if kernel_lambda <= 0:
        raise ValueError(f"kernel lambda must be positive, got {kernel_lambda}")
    values = np.zeros((g.n, num_steps))
    if events:
        sp = g.shortest_path_miles()
        for ev in events:
            src = g.index_of(ev.segment_id)
            # active timesteps: start <= ts < end at 5-minute spacing
            t0 = int(np.ceil((ev.start - start_timestamp) / STEP_SECONDS))
            t1 = int(np.ceil((ev.end - start_timestamp) / STEP_SECONDS))
            t0, t1 = max(t0, 0), min(t1, num_steps)
            if t0 >= t1:
                continue
            with np.errstate(invalid="ignore"):
                kernel = np.maximum(0.0, 1.0 - (sp[src] / kernel_lambda) ** 2)
            kernel = np.nan_to_num(kernel, nan=0.0, posinf=0.0, neginf=0.0)
            values[:, t0:t1] = np.maximum(values[:, t0:t1], kernel[:, None])
    return FeatureMap("construction", values, start_timestamp=start_timestamp)


def construction_kernel(dis, kernel_lambda):
    """Scalar/array form of the workzone influence kernel."""
    if kernel_lambda <= 0:
        raise ValueError(f"kernel lambda must be positive, got {kernel_lambda}")
    return np.maximum(0.0, 1.0 - (np.asarray(dis, dtype=np.float64) / kernel_lambda) ** 2)


def fuse(x_s, x_c, w_s, w_c, variant="learned-both"):
    """Speed-wave fusion of the speed and construction channels.

    learned-both:   W_s (.) X^s + W_c (.) X^c
    learned-c-only: X^s + W_c (.) X^c
    degenerate:     X^s (.) X^s + W_c
    """
    x_s, x_c = np.asarray(x_s, dtype=np.float64), np.asarray(x_c, dtype=np.float64)
    w_s, w_c = np.asarray(w_s, dtype=np.float64), np.asarray(w_c, dtype=np.float64)
    for name, arr in (("x_c", x_c), ("w_s", w_s), ("w_c", w_c)):
        if arr.shape != x_s.shape:
            raise ValueError(f"fuse: {name} shape {arr.shape} != x_s shape {x_s.shape}")
    if variant == "learned-both":
        return w_s * x_s + w_c * x_c
    if variant == "learned-c-only":
        return x_s + w_c * x_c
    if variant == "degenerate":
        return x_s * x_s + w_c
    raise ValueError(f"unknown fusion variant: {variant!r}")


def min_max_normalize(fmap):
    """Per-segment (x - min) / (max - min); constant rows map to 0.5."""
    values = fmap.values if isinstance(fmap, FeatureMap) else np.asarray(fmap, dtype=np.float64)
    finite = np.isfinite(values)
    if not finite.all():
        bad = np.where(~finite.any(axis=1))[0]
        if bad.size:
            raise ValueError(f"segment row {bad[0]} has no finite values")
        raise ValueError("feature map contains non-finite values")
    per_min = values.min(axis=1)
    per_max = values.max(axis=1)
    span = per_max - per_min
    out = np.empty_like(values)
    constant = span == 0
    safe_span = np.where(constant, 1.0, span)
    out = (values - per_min[:, None]) / safe_span[:, None]
    out[constant, :] = 0.5
    return out, NormalizationParams(per_min, per_max)


def denormalize(values, params):
    """Inverse of min_max_normalize; the segment axis is axis -2."""
    values = np.asarray(values, dtype=np.float64)
    n = params.per_min.shape[0]
    if values.shape[-2] != n:
        raise ValueError(f"segment axis has size {values.shape[-2]}, expected {n}")
    span = params.per_max - params.per_min
    return values * span[:, None] + params.per_min[:, None]


def sliding_windows(channels, history, horizon, stride=1):
    """Cut supervised samples; channel 0 is the speed (target) channel."""
    channels = [np.asarray(c, dtype=np.float64) for c in channels]
    n, t_len = channels[0].shape
    for c in channels[1:]:
        if c.shape != (n, t_len):
            raise ValueError(f"channel shape {c.shape} != {(n, t_len)}")
    if t_len < history + horizon:
        raise ValueError(f"series length {t_len} < required minimum "
                         f"{history + horizon} (H + P)")
    num = (t_len - history - horizon) // stride + 1
    inputs = np.empty((num, len(channels), n, history))
    targets = np.empty((num, n, horizon))
    for s in range(num):
        lo = s * stride
        for ci, c in enumerate(channels):
            inputs[s, ci] = c[:, lo:lo + history]
        targets[s] = channels[0][:, lo + history:lo + history + horizon]
    return WindowedDataset(inputs, targets, history, horizon)
