"""Chronological splitting, loss, Adam, and the epoch loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics as metricsmod
from . import model as modelmod
from .features import WindowedDataset, denormalize


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float
    val_mae: float
    val_mape: float
    wall_time_sec: float

    def to_json_dict(self, include_wall_time=False):
        d = {"epoch": self.epoch, "train_loss": self.train_loss,
             "val_rmse": self.val_rmse, "val_mae": self.val_mae,
             "val_mape": self.val_mape}
        if include_wall_time:
            d["wall_time_sec"] = self.wall_time_sec
        return d


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def best_epoch(self):
        return min(self.records, key=lambda r: r.val_rmse).epoch

    def to_json_list(self, include_wall_time=False):
        return [r.to_json_dict(include_wall_time) for r in self.records]


def split_dataset(ds):
    """Chronological contiguous 70/10/20 split; train takes the remainder."""
    s = ds.num_samples
    if s < 10:
        raise ValueError(f"need at least 10 samples to split, got {s}")
    n_val = int(0.1 * s)
    n_test = int(0.2 * s)
    n_train = s - n_val - n_test

    def take(lo, hi):
        return WindowedDataset(ds.inputs[lo:hi], ds.targets[lo:hi],
                               ds.history, ds.horizon)

    return (take(0, n_train), take(n_train, n_train + n_val),
            take(n_train + n_val, s))


def mse_loss(pred, target):
    """Mean squared error over all S*N*P cells; differentiable."""
    target = target if isinstance(target, ad.Tensor) else ad.constant(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shapes differ: {pred.shape} vs {target.shape}")
    diff = ad.sub(pred, target)
    return ad.reduce_mean(ad.hadamard(diff, diff))


def mae_loss(pred, target):
    """Mean absolute error, smooth-free; subgradient 0 at exact zeros."""
    target = target if isinstance(target, ad.Tensor) else ad.constant(target)
    if pred.shape != target.shape:
        raise ValueError(f"mae_loss: shapes differ: {pred.shape} vs {target.shape}")
    diff = ad.sub(pred, target)
    sign = ad.constant(np.sign(diff.values))
    return ad.reduce_mean(ad.hadamard(diff, sign))


def adam_init(params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(lr, beta1, beta2, eps, 0,
                     [np.zeros_like(p.values) for p in params],
                     [np.zeros_like(p.values) for p in params])


def adam_step(params, grads, state, names=None):
    """One Adam update with bias correction, in place on the parameters."""
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"parameter {i}"
            raise ValueError(f"non-finite gradient in {label}")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** t)
        v_hat = state.v[i] / (1 - state.beta2 ** t)
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def evaluate_denormalized(model, ds, norm_params, batch_size=256):
    """RMSE/MAE/MAPE in MPH units over a windowed dataset."""
    preds = []
    for lo in range(0, ds.num_samples, batch_size):
        preds.append(modelmod.predict(model, ds.inputs[lo:lo + batch_size]))
    pred = denormalize(np.concatenate(preds, axis=0), norm_params)
    truth = denormalize(ds.targets, norm_params)
    return (metricsmod.rmse(pred, truth), metricsmod.mae(pred, truth),
            metricsmod.mape(pred, truth)[0])


def train(model, train_ds, val_ds, norm_params, epochs, batch_size=32,
          seed=0, lr=0.001, loss="mse"):
    """Seeded mini-batch training; returns (history, best_parameter_values).

    The best snapshot is the epoch with the lowest validation RMSE; the
    model itself is left at its last-epoch state.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    loss_fn = {"mse": mse_loss, "mae": mae_loss}[loss]
    names = list(model.registry)
    params = model.parameters()
    state = adam_init(params, lr=lr)
    rng = np.random.default_rng(seed)
    history = TrainHistory()
    best_rmse = np.inf
    best_values = None

    s = train_ds.num_samples
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(s)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, s, batch_size):
            idx = order[lo:lo + batch_size]
            model.zero_grad()
            pred = modelmod.forward(model, train_ds.inputs[idx])
            loss_t = loss_fn(pred, train_ds.targets[idx])
            if not np.isfinite(loss_t.values):
                raise RuntimeError(f"non-finite loss in epoch {epoch}, "
                                   f"batch {n_batches}")
            ad.backward(loss_t)
            adam_step(params, [p.grad for p in params], state, names)
            epoch_loss += float(loss_t.values)
            n_batches += 1

        val_rmse, val_mae, val_mape = evaluate_denormalized(model, val_ds, norm_params)
        history.records.append(EpochRecord(
            epoch, epoch_loss / n_batches, val_rmse, val_mae, val_mape,
            time.perf_counter() - t0))
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_values = [p.values.copy() for p in params]
    return history, best_values


def restore_parameters(model, values):
    for p, v in zip(model.parameters(), values):
        p.values = v.copy()
