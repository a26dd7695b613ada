"""End-to-end data pipeline shared by the CLI commands, plus the two
reference baselines (historical average and last-value persistence)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dataio, features, metrics, training
from .dataio import STEPS_PER_DAY


@dataclass
class PreparedData:
    graph: object
    speeds: features.FeatureMap  # imputed, MPH
    events: list
    norm_params: features.NormalizationParams
    construction_map: np.ndarray  # (N, T)
    dataset: features.WindowedDataset
    train: features.WindowedDataset
    val: features.WindowedDataset
    test: features.WindowedDataset
    offsets: np.ndarray  # original window start index per retained sample

    def test_window_offsets(self):
        start = self.train.num_samples + self.val.num_samples
        return self.offsets[start:start + self.test.num_samples]


def prepare(g, speeds, mask, events, config, exclusion_windows=None):
    """Impute -> normalize -> construction map -> window -> split.

    ``exclusion_windows`` is an optional list of (start, end) epoch-second
    pairs; samples whose target span intersects one are dropped (trailing
    samples only, to keep the chronological split contiguous).
    """
    imputed = dataio.impute_missing(speeds, mask) if mask.any() else speeds
    normalized, norm_params = features.min_max_normalize(imputed)
    t_len = normalized.shape[1]
    cmap = features.construction_feature_map(
        g, events, config.kernel_lambda, t_len, speeds.start_timestamp)

    channels = [normalized]
    if config.include_construction:
        channels.append(cmap.values)
    ds = features.sliding_windows(channels, config.history, config.horizon)
    offsets = np.arange(ds.num_samples)

    if exclusion_windows:
        keep = np.ones(ds.num_samples, dtype=bool)
        for s in range(ds.num_samples):
            lo = speeds.timestamp_of(s + config.history)
            hi = speeds.timestamp_of(s + config.history + config.horizon)
            for start, end in exclusion_windows:
                if lo < end and start < hi:
                    keep[s] = False
                    break
        ds = features.WindowedDataset(ds.inputs[keep], ds.targets[keep],
                                      ds.history, ds.horizon)
        offsets = offsets[keep]

    train_ds, val_ds, test_ds = training.split_dataset(ds)
    return PreparedData(g, imputed, events, norm_params, cmap.values,
                        ds, train_ds, val_ds, test_ds, offsets)


def persistence_baseline(prepared):
    """Forecast every horizon step as the last observed speed (MPH)."""
    offsets = prepared.test_window_offsets()
    h = prepared.dataset.history
    p = prepared.dataset.horizon
    last = prepared.speeds.values[:, offsets + h - 1]  # (N, S)
    return np.repeat(last.T[:, :, None], p, axis=2)


def historical_average_baseline(prepared):
    """Per segment, per time-of-day mean over the training timesteps (MPH)."""
    speeds = prepared.speeds.values
    n, t_len = speeds.shape
    h = prepared.dataset.history
    p = prepared.dataset.horizon
    train_end = prepared.train.num_samples + h + p - 1  # last training target + 1

    bins = np.arange(t_len) % STEPS_PER_DAY
    sums = np.zeros((n, STEPS_PER_DAY))
    counts = np.zeros(STEPS_PER_DAY)
    for t in range(train_end):
        sums[:, bins[t]] += speeds[:, t]
        counts[bins[t]] += 1
    overall = speeds[:, :train_end].mean(axis=1)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), overall[:, None])

    offsets = prepared.test_window_offsets()
    pred = np.empty((offsets.size, n, p))
    for si, off in enumerate(offsets):
        for step in range(p):
            pred[si, :, step] = means[:, (off + h + step) % STEPS_PER_DAY]
    return pred


def test_truth_mph(prepared):
    return features.denormalize(prepared.test.targets, prepared.norm_params)


def test_event_mask(prepared):
    return metrics.event_cell_mask(prepared.construction_map,
                                   prepared.test_window_offsets(),
                                   prepared.dataset.history,
                                   prepared.dataset.horizon)
