"""Corpus I/O (edges/speeds/events CSV) and the seeded synthetic corridor
generator used for acceptance testing in place of private field data."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import features as featuresmod
from . import graph as graphmod
from .features import STEP_SECONDS, ConstructionEvent, FeatureMap

DEFAULT_START_TIMESTAMP = 1546300800.0  # 2019-01-01T00:00:00Z
STEPS_PER_DAY = 24 * 60 // 5


@dataclass
class SyntheticConfig:
    n_segments: int = 20
    topology: str = "ring"  # "ring" | "grid" | "random"
    random_p: float = 0.15
    days: int = 21
    base_speed: float = 60.0
    amplitude: float = 8.0  # daily profile swing, MPH
    alpha: float = 0.2  # diffusion coefficient
    recovery: float = 0.25  # pull toward the free-flow profile per step
    noise: float = 2.0  # per-step Gaussian noise, MPH
    event_count: int = 30
    event_min_hours: float = 2.0
    event_max_hours: float = 6.0
    slowdown_depth: float = 0.5  # delta, fraction of free-flow lost at the workzone
    influence_radius: float = 3.0  # miles
    seed: int = 42
    start_timestamp: float = DEFAULT_START_TIMESTAMP

    def validate(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if not 0 < self.alpha < 0.5:
            raise ValueError(f"alpha must be in (0, 0.5) for stability, got {self.alpha}")
        if not 0 <= self.slowdown_depth < 1:
            raise ValueError(f"slowdown depth must be in [0, 1), got {self.slowdown_depth}")
        if self.topology not in ("ring", "grid", "random"):
            raise ValueError(f"unknown topology: {self.topology!r}")
        if self.days < 1:
            raise ValueError("days must be >= 1")


def _iso(ts):
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_iso(text):
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(
        tzinfo=timezone.utc).timestamp()


# ---------------------------------------------------------------------------
# loaders


def load_edges_csv(path):
    edges = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["src", "dst", "distance_miles"]:
            raise ValueError(f"bad edges.csv header: {header}")
        for row in reader:
            if not row:
                continue
            edges.append((row[0], row[1], float(row[2])))
    return edges


def load_events_csv(path):
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["segment_id", "start_iso8601", "end_iso8601"]:
            raise ValueError(f"bad events.csv header: {header}")
        for row in reader:
            if not row:
                continue
            events.append(ConstructionEvent(row[0], _parse_iso(row[1]),
                                            _parse_iso(row[2])))
    return events


def load_speeds_csv(path, segment_ids=None):
    """Read an N x T speed map plus a missing-cell mask.

    Rows must sit at exact 5-minute spacing; empty cells mark missing data
    and are flagged, never fabricated.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "timestamp":
            raise ValueError(f"bad speeds.csv header: {header}")
        columns = header[1:]
        if segment_ids is not None:
            roster = list(segment_ids)
            unknown = [c for c in columns if c not in roster]
            if unknown:
                raise ValueError(f"unknown segment column(s): {unknown}")
            missing_cols = [s for s in roster if s not in columns]
            if missing_cols:
                raise ValueError(f"speeds.csv missing segment column(s): {missing_cols}")
        else:
            roster = columns
        col_of = {c: i for i, c in enumerate(columns)}

        timestamps = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            ts = _parse_iso(row[0])
            if timestamps:
                gap = ts - timestamps[-1]
                if gap == 0:
                    raise ValueError(f"duplicate timestamp {row[0]} at row {lineno}")
                if gap != STEP_SECONDS:
                    raise ValueError(
                        f"rows must be 5 minutes apart; got {gap / 60:.1f} minutes "
                        f"between rows {lineno - 1} and {lineno} ({row[0]})")
            timestamps.append(ts)
            rows.append([float(v) if v != "" else np.nan for v in row[1:]])

    if not rows:
        raise ValueError("speeds.csv has no data rows")
    data = np.array(rows).T  # columns-as-file order -> (N_file, T)
    values = np.vstack([data[col_of[s]] for s in roster])
    mask = np.isnan(values)
    return (FeatureMap("speed", np.nan_to_num(values, nan=0.0),
                       start_timestamp=timestamps[0]), mask)


def impute_missing(fmap, mask):
    """Per segment: forward-fill, then backward-fill leading gaps."""
    values = fmap.values.copy()
    n, t = values.shape
    for i in range(n):
        if mask[i].all():
            raise ValueError(f"segment row {i} is entirely missing")
        row = values[i]
        miss = mask[i]
        last = None
        for j in range(t):
            if miss[j]:
                if last is not None:
                    row[j] = last
            else:
                last = row[j]
        first = row[np.argmax(~miss)]
        lead = np.argmax(~miss)
        row[:lead] = first
    return FeatureMap(fmap.kind, values, fmap.step_minutes, fmap.start_timestamp)


# ---------------------------------------------------------------------------
# writers


def write_corpus(out_dir, g, speeds, events, truth=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "distance_miles"])
        n = g.n
        for i in range(n):
            for j in range(i + 1, n):
                if np.isfinite(g.distances[i, j]):
                    writer.writerow([g.segment_ids[i], g.segment_ids[j],
                                     repr(float(g.distances[i, j]))])

    with open(out / "speeds.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *g.segment_ids])
        for t in range(speeds.values.shape[1]):
            ts = speeds.timestamp_of(t)
            writer.writerow([_iso(ts), *(repr(float(v)) for v in speeds.values[:, t])])

    with open(out / "events.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment_id", "start_iso8601", "end_iso8601"])
        for ev in events:
            writer.writerow([ev.segment_id, _iso(ev.start), _iso(ev.end)])

    if truth is not None:
        with open(out / "truth.json", "w", encoding="utf-8") as fh:
            json.dump(truth, fh, indent=2, sort_keys=True)


def load_corpus(data_dir, adjacency_mode="gaussian"):
    """Read edges/speeds/events back into (graph, speeds, mask, events)."""
    data_dir = Path(data_dir)
    edges = load_edges_csv(data_dir / "edges.csv")
    g = graphmod.build_graph(edges, adjacency_mode=adjacency_mode)
    speeds, mask = load_speeds_csv(data_dir / "speeds.csv", g.segment_ids)
    events_path = data_dir / "events.csv"
    events = load_events_csv(events_path) if events_path.exists() else []
    for ev in events:
        g.index_of(ev.segment_id)  # raises on unknown ids
    return g, speeds, mask, events


# ---------------------------------------------------------------------------
# synthetic corridor generator


def _topology_edges(cfg, rng):
    n = cfg.n_segments
    ids = [f"seg{i:03d}" for i in range(n)]
    pairs = set()
    if n == 1:
        return ids, []
    if cfg.topology == "ring":
        pairs = {(i, (i + 1) % n) for i in range(n if n > 2 else 1)}
    elif cfg.topology == "grid":
        cols = max(1, int(math.ceil(math.sqrt(n))))
        for i in range(n):
            if (i + 1) % cols != 0 and i + 1 < n:
                pairs.add((i, i + 1))
            if i + cols < n:
                pairs.add((i, i + cols))
    else:  # random(p) over a connected chain backbone
        pairs = {(i, i + 1) for i in range(n - 1)}
        for i in range(n):
            for j in range(i + 2, n):
                if rng.random() < cfg.random_p:
                    pairs.add((i, j))
    edges = []
    for i, j in sorted(pairs):
        # mostly short links with occasional long connectors; the spread keeps
        # the Gaussian adjacency kernel from thresholding every edge away
        if rng.random() < 0.15:
            dist = float(rng.uniform(2.5, 4.0))
        else:
            dist = float(rng.uniform(0.4, 1.0))
        edges.append((ids[i], ids[j], dist))
    return ids, edges


def _draw_events(cfg, ids, rng):
    horizon = cfg.days * STEPS_PER_DAY * STEP_SECONDS
    events = []
    for _ in range(cfg.event_count):
        seg = ids[int(rng.integers(len(ids)))]
        duration = rng.uniform(cfg.event_min_hours, cfg.event_max_hours) * 3600.0
        start = cfg.start_timestamp + rng.uniform(0, max(horizon - duration, 1.0))
        # snap to the 5-minute lattice so the CSV round-trip is lossless
        start = cfg.start_timestamp + round(
            (start - cfg.start_timestamp) / STEP_SECONDS) * STEP_SECONDS
        duration = max(round(duration / STEP_SECONDS), 1) * STEP_SECONDS
        events.append(ConstructionEvent(seg, start, start + duration))
    return events


def generate_synthetic(cfg):
    """Deterministically generate (graph, speeds, events, free_flow).

    Speeds follow neighbor diffusion plus relaxation toward a per-segment
    daily free-flow profile; active workzones depress the local free-flow
    through the same quadratic influence kernel the model learns from, so
    the construction channel carries genuine signal.
    """
    cfg.validate()
    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_graph = np.random.default_rng(streams[0])
    rng_profile = np.random.default_rng(streams[1])
    rng_events = np.random.default_rng(streams[2])
    rng_noise = np.random.default_rng(streams[3])

    ids, edges = _topology_edges(cfg, rng_graph)
    g = graphmod.build_graph(edges, segment_ids=ids)
    n = g.n
    t_len = cfg.days * STEPS_PER_DAY

    amp = cfg.amplitude * rng_profile.uniform(0.5, 1.0, size=n)
    phase = rng_profile.uniform(0, 2 * np.pi, size=n)
    t_axis = np.arange(t_len)
    # congestion dips below base speed once per day, per segment
    profile = cfg.base_speed - amp[:, None] * (
        0.5 + 0.5 * np.sin(2 * np.pi * t_axis[None, :] / STEPS_PER_DAY + phase[:, None]))

    events = _draw_events(cfg, ids, rng_events)

    # multiplicative free-flow depression around active workzones
    factor = np.ones((n, t_len))
    if events and cfg.slowdown_depth > 0:
        sp = g.shortest_path_miles()
        for ev in events:
            src = g.index_of(ev.segment_id)
            t0 = max(int(np.ceil((ev.start - cfg.start_timestamp) / STEP_SECONDS)), 0)
            t1 = min(int(np.ceil((ev.end - cfg.start_timestamp) / STEP_SECONDS)), t_len)
            if t0 >= t1:
                continue
            kernel = featuresmod.construction_kernel(sp[src], cfg.influence_radius)
            kernel = np.nan_to_num(kernel, nan=0.0)
            factor[:, t0:t1] = np.minimum(factor[:, t0:t1],
                                          (1.0 - cfg.slowdown_depth * kernel)[:, None])
    free_flow = profile * factor

    neighbor = g.adjacency > 0
    degree = neighbor.sum(axis=1)
    noise = rng_noise.standard_normal((n, t_len)) * cfg.noise

    speeds = np.empty((n, t_len))
    speeds[:, 0] = np.clip(free_flow[:, 0], 0.0, 80.0)
    for t in range(t_len - 1):
        s = speeds[:, t]
        with np.errstate(invalid="ignore"):
            nmean = np.where(degree > 0, neighbor @ s / np.maximum(degree, 1), s)
        nxt = (s + cfg.alpha * (nmean - s)
               + cfg.recovery * (free_flow[:, t + 1] - s) + noise[:, t + 1])
        speeds[:, t + 1] = np.clip(nxt, 0.0, 80.0)

    fmap = FeatureMap("speed", speeds, start_timestamp=cfg.start_timestamp)
    return g, fmap, events, free_flow


def truth_dict(cfg):
    return {"generator": asdict(cfg)}
