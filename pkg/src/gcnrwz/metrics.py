"""Evaluation metrics in MPH units, with per-segment, per-horizon, and
event-window breakdowns."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import features as featuresmod

MAPE_EPSILON_MPH = 1.0  # truth cells below this are excluded from MAPE


@dataclass
class MetricReport:
    rmse: float
    mae: float
    mape: float
    mape_excluded_cells: int
    per_segment: list  # (segment_id, rmse, mae, mape)
    per_horizon: list  # (step, rmse, mae, mape), step 1..P
    event_window: dict  # {"rmse", "mae", "mape", "cell_count"} or empty

    def to_json_dict(self):
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "mape": self.mape,
            "mape_excluded_cells": self.mape_excluded_cells,
            "per_segment": [
                {"segment_id": s, "rmse": r, "mae": m, "mape": p}
                for s, r, m, p in self.per_segment],
            "per_horizon": [
                {"step": h, "rmse": r, "mae": m, "mape": p}
                for h, r, m, p in self.per_horizon],
            "event_window": self.event_window,
        }


def _check(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty selection")
    return pred, truth


def rmse(pred, truth):
    pred, truth = _check(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def mae(pred, truth):
    pred, truth = _check(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def mape(pred, truth, epsilon=MAPE_EPSILON_MPH):
    """Mean absolute percentage error; cells with truth < epsilon are
    excluded and their count returned alongside."""
    pred, truth = _check(pred, truth)
    included = truth >= epsilon
    excluded = int(pred.size - included.sum())
    if not included.any():
        raise ValueError("all cells excluded by the MAPE threshold")
    value = 100.0 * np.mean(np.abs(pred[included] - truth[included]) / truth[included])
    return float(value), excluded


def _triple(pred, truth):
    try:
        mape_val, _ = mape(pred, truth)
    except ValueError:
        mape_val = float("nan")
    return rmse(pred, truth), mae(pred, truth), mape_val


def report(pred, truth, segment_ids, norm_params=None, event_mask=None):
    """Full MetricReport over (S, N, P) predictions.

    ``event_mask`` is an (S, N, P) boolean array marking cells influenced by
    an active construction event (see :func:`event_cell_mask`).
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if norm_params is not None:
        pred = featuresmod.denormalize(pred, norm_params)
        truth = featuresmod.denormalize(truth, norm_params)
    if pred.ndim != 3 or pred.shape[1] != len(segment_ids):
        raise ValueError(f"expected (S, N, P) with N = {len(segment_ids)}, "
                         f"got shape {pred.shape}")

    total_rmse, total_mae, total_mape = _triple(pred, truth)
    _, excluded = mape(pred, truth)

    per_segment = []
    for i, sid in enumerate(segment_ids):
        r, m, p = _triple(pred[:, i, :], truth[:, i, :])
        per_segment.append((sid, r, m, p))

    per_horizon = []
    for h in range(pred.shape[2]):
        r, m, p = _triple(pred[:, :, h], truth[:, :, h])
        per_horizon.append((h + 1, r, m, p))

    if event_mask is not None and event_mask.any():
        r, m, p = _triple(pred[event_mask], truth[event_mask])
        event_window = {"rmse": r, "mae": m, "mape": p,
                        "cell_count": int(event_mask.sum())}
    else:
        event_window = {"cell_count": 0}

    return MetricReport(total_rmse, total_mae, total_mape, excluded,
                        per_segment, per_horizon, event_window)


def event_cell_mask(construction_map, window_offsets, history, horizon):
    """Boolean (S, N, P) mask of target cells inside a workzone's influence.

    A cell (s, n, p) is flagged when the construction map is positive at
    segment n and absolute timestep ``offsets[s] + history + p``.
    """
    cmap = np.asarray(construction_map, dtype=np.float64)
    offsets = np.asarray(window_offsets, dtype=np.int64)
    n = cmap.shape[0]
    mask = np.zeros((offsets.size, n, horizon), dtype=bool)
    for si, off in enumerate(offsets):
        cols = cmap[:, off + history:off + history + horizon]
        mask[si, :, :cols.shape[1]] = cols > 0
    return mask
