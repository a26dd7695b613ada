"""Network building blocks: attention, graph/temporal convolution, blocks,
bidirectional recurrent readout, and the forecasting head.

All layer functions accept a batched input (S, C, N, T); a 3-d (C, N, T)
input is treated as a batch of one and returned unbatched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


# ---------------------------------------------------------------------------
# parameter containers and initialization


@dataclass
class AttentionParams:
    wq: list  # per head: (d_model, d_head) Tensors
    wk: list
    wv: list
    wo: Tensor  # (heads * d_head, d_model)

    @property
    def heads(self):
        return len(self.wq)

    @property
    def d_model(self):
        return self.wq[0].shape[0]

    def tensors(self):
        return [*self.wq, *self.wk, *self.wv, self.wo]


@dataclass
class SpatialConvParams:
    mode: str  # "linear" | "chebyshev"
    thetas: list  # one (C_in, C_out) Tensor in linear mode, K+1 in chebyshev
    operator: np.ndarray  # renormalized adjacency or scaled Laplacian
    activation: str = "relu"

    def tensors(self):
        return list(self.thetas)


@dataclass
class TemporalConvParams:
    kernel: Tensor  # (C_out, C_in, k_t)
    bias: Tensor  # (C_out,)

    def tensors(self):
        return [self.kernel, self.bias]


@dataclass
class GruCellParams:
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor

    def tensors(self):
        return [self.wz, self.uz, self.bz, self.wr, self.ur, self.br,
                self.wh, self.uh, self.bh]


@dataclass
class BiRecurrentParams:
    forward: GruCellParams
    backward: GruCellParams

    @property
    def hidden(self):
        return self.forward.uz.shape[0]

    def tensors(self):
        return self.forward.tensors() + self.backward.tensors()


@dataclass
class StBlockParams:
    spatial_att: AttentionParams
    temporal_att: AttentionParams
    spatial_conv: SpatialConvParams
    temporal_conv: TemporalConvParams
    residual_proj: Tensor | None  # (C_in, C_out) or None for identity

    def tensors(self):
        ts = (self.spatial_att.tensors() + self.temporal_att.tensors()
              + self.spatial_conv.tensors() + self.temporal_conv.tensors())
        if self.residual_proj is not None:
            ts.append(self.residual_proj)
        return ts


@dataclass
class OutputHeadParams:
    channel_proj: Tensor  # (C, 1)
    channel_bias: Tensor  # (1,)
    recurrent: BiRecurrentParams
    w_out: Tensor  # (2 * d_h, P)
    b_out: Tensor  # (P,)

    def tensors(self):
        return ([self.channel_proj, self.channel_bias]
                + self.recurrent.tensors() + [self.w_out, self.b_out])


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def orthogonal(rng, size):
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    q *= np.sign(np.diag(r))  # fix sign convention for determinism
    return Tensor(q, requires_grad=True)


def init_attention(rng, d_model, heads):
    if d_model % heads != 0:
        raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
    d_head = d_model // heads
    wq = [glorot_uniform(rng, d_model, d_head) for _ in range(heads)]
    wk = [glorot_uniform(rng, d_model, d_head) for _ in range(heads)]
    wv = [glorot_uniform(rng, d_model, d_head) for _ in range(heads)]
    wo = glorot_uniform(rng, heads * d_head, d_model)
    return AttentionParams(wq, wk, wv, wo)


def init_spatial_conv(rng, c_in, c_out, operator, mode="linear", cheb_k=2,
                      activation="relu"):
    if mode == "linear":
        thetas = [glorot_uniform(rng, c_in, c_out)]
    elif mode == "chebyshev":
        thetas = [glorot_uniform(rng, c_in, c_out) for _ in range(cheb_k + 1)]
    else:
        raise ValueError(f"unknown spatial conv mode: {mode!r}")
    return SpatialConvParams(mode, thetas, np.asarray(operator, dtype=np.float64),
                             activation)


def init_temporal_conv(rng, c_in, c_out, k_t):
    if k_t < 1:
        raise ValueError(f"temporal kernel length must be >= 1, got {k_t}")
    kernel = glorot_uniform(rng, c_in * k_t, c_out, shape=(c_out, c_in, k_t))
    bias = Tensor(np.zeros(c_out), requires_grad=True)
    return TemporalConvParams(kernel, bias)


def init_gru_cell(rng, d_in, d_h):
    def gates():
        w = glorot_uniform(rng, d_in, d_h)
        u = orthogonal(rng, d_h)
        b = Tensor(np.zeros(d_h), requires_grad=True)
        return w, u, b

    wz, uz, bz = gates()
    wr, ur, br = gates()
    wh, uh, bh = gates()
    return GruCellParams(wz, uz, bz, wr, ur, br, wh, uh, bh)


def init_bi_recurrent(rng, d_in, d_h):
    return BiRecurrentParams(init_gru_cell(rng, d_in, d_h),
                             init_gru_cell(rng, d_in, d_h))


# ---------------------------------------------------------------------------
# forward functions


def _ensure_batched(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 3:
        return ad.reshape(x, (1, *x.shape)), True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C, N, T) or (S, C, N, T), got shape {x.shape}")


def _maybe_unbatch(y, was_unbatched):
    return ad.reshape(y, y.shape[1:]) if was_unbatched else y


def _multi_head(tokens, p):
    """Scaled dot-product attention over axis -2 of (S, tokens, d_model)."""
    d_head = p.wq[0].shape[1]
    scale = 1.0 / math.sqrt(d_head)
    heads = []
    for wq, wk, wv in zip(p.wq, p.wk, p.wv):
        q = ad.matmul(tokens, wq)
        k = ad.matmul(tokens, wk)
        v = ad.matmul(tokens, wv)
        scores = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), scale),
                            axis=-1)
        heads.append(ad.matmul(scores, v))
    merged = heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)
    return ad.matmul(merged, p.wo)


def spatial_attention(x, p):
    """Multi-head attention with road segments as tokens, residual add.

    Token features are the channel and time axes folded together, so
    d_model = C * T for the block's input shape.
    """
    x, unbatch = _ensure_batched(x)
    s, c, n, t = x.shape
    if p.d_model != c * t:
        raise ValueError(f"attention d_model {p.d_model} != C*T = {c * t}")
    tokens = ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (s, n, c * t))
    out = _multi_head(tokens, p)
    out = ad.transpose(ad.reshape(out, (s, n, c, t)), (0, 2, 1, 3))
    return _maybe_unbatch(ad.add(x, out), unbatch)


def temporal_attention(x, p):
    """Multi-head attention with timesteps as tokens (d_model = C * N)."""
    x, unbatch = _ensure_batched(x)
    s, c, n, t = x.shape
    if p.d_model != c * n:
        raise ValueError(f"attention d_model {p.d_model} != C*N = {c * n}")
    tokens = ad.reshape(ad.transpose(x, (0, 3, 1, 2)), (s, t, c * n))
    out = _multi_head(tokens, p)
    out = ad.transpose(ad.reshape(out, (s, t, c, n)), (0, 2, 3, 1))
    return _maybe_unbatch(ad.add(x, out), unbatch)


def _activate(x, activation):
    if activation == "relu":
        return ad.relu(x)
    if activation == "sigmoid":
        return ad.sigmoid(x)
    if activation == "none":
        return x
    raise ValueError(f"unknown activation: {activation!r}")


def spatial_graph_conv(x, p, apply_activation=True):
    """Graph convolution per timestep.

    linear mode: sigma(A_hat x_t theta) with the renormalized adjacency;
    chebyshev mode: sigma(sum_k T_k(L_hat) x_t theta_k).
    """
    x, unbatch = _ensure_batched(x)
    s, c_in, n, t = x.shape
    if p.operator.shape != (n, n):
        raise ValueError(f"graph operator shape {p.operator.shape} does not "
                         f"match node count {n}")
    op = ad.constant(p.operator)
    xt = ad.transpose(x, (0, 3, 2, 1))  # (S, T, N, C_in)
    if p.mode == "linear":
        out = ad.matmul(ad.matmul(op, xt), p.thetas[0])
    else:
        term_prev2 = xt  # T_0(L_hat) x
        out = ad.matmul(term_prev2, p.thetas[0])
        if len(p.thetas) > 1:
            term_prev = ad.matmul(op, xt)  # T_1
            out = ad.add(out, ad.matmul(term_prev, p.thetas[1]))
        for theta in p.thetas[2:]:
            term = ad.sub(ad.scale(ad.matmul(op, term_prev), 2.0), term_prev2)
            out = ad.add(out, ad.matmul(term, theta))
            term_prev2, term_prev = term_prev, term
    out = ad.transpose(out, (0, 3, 2, 1))  # (S, C_out, N, T)
    if apply_activation:
        out = _activate(out, p.activation)
    return _maybe_unbatch(out, unbatch)


def temporal_conv(x, p, apply_activation=True):
    """Valid 1-d convolution along time, shared across nodes, then ReLU."""
    x, unbatch = _ensure_batched(x)
    out = ad.conv1d_time(x, p.kernel)
    bias = ad.reshape(p.bias, (1, p.bias.shape[0], 1, 1))
    out = ad.add(out, bias)
    if apply_activation:
        out = ad.relu(out)
    return _maybe_unbatch(out, unbatch)


def st_block(x, p):
    """attention -> graph conv -> temporal conv with a residual shortcut.

    The shortcut is a 1x1 channel projection (identity when channels match),
    center-cropped in time to the convolution output length, added before
    the final ReLU.
    """
    x, unbatch = _ensure_batched(x)
    s, c_in, n, t = x.shape
    k_t = p.temporal_conv.kernel.shape[2]
    t_out = t - k_t + 1
    if t_out < 1:
        raise ValueError(f"time length {t} too short for kernel {k_t}")

    h = spatial_attention(x, p.spatial_att)
    h = temporal_attention(h, p.temporal_att)
    h = spatial_graph_conv(h, p.spatial_conv)
    h = temporal_conv(h, p.temporal_conv, apply_activation=False)

    crop = ad.slice_axis(x, 3, (t - t_out) // 2, t_out)
    if p.residual_proj is not None:
        shortcut = ad.transpose(
            ad.matmul(ad.transpose(crop, (0, 3, 2, 1)), p.residual_proj),
            (0, 3, 2, 1))
    else:
        shortcut = crop
    return _maybe_unbatch(ad.relu(ad.add(h, shortcut)), unbatch)


def _gru_sequence(x_steps, cell, reverse=False):
    """Run a gated recurrent cell over a list of (B, d_in) step tensors."""
    batch = x_steps[0].shape[0]
    d_h = cell.uz.shape[0]
    h = ad.constant(np.zeros((batch, d_h)))
    outputs = [None] * len(x_steps)
    order = range(len(x_steps) - 1, -1, -1) if reverse else range(len(x_steps))
    for i in order:
        xt = x_steps[i]
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(xt, cell.wz), ad.matmul(h, cell.uz)),
                              cell.bz))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(xt, cell.wr), ad.matmul(h, cell.ur)),
                              cell.br))
        cand = ad.tanh(ad.add(ad.add(ad.matmul(xt, cell.wh),
                                     ad.matmul(ad.hadamard(r, h), cell.uh)),
                              cell.bh))
        one_minus_z = ad.sub(ad.constant(np.ones_like(z.values)), z)
        h = ad.add(ad.hadamard(one_minus_z, h), ad.hadamard(z, cand))
        outputs[i] = h
    return outputs


def bi_recurrent(x, p):
    """Bidirectional gated recurrence over (..., T, d_in) sequences.

    Accepts (N, T, d_in) or (S, N, T, d_in); forward and backward passes run
    independently from zero initial state and are concatenated per timestep,
    giving (..., T, 2 * d_h).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    unbatch = x.ndim == 3
    if unbatch:
        x = ad.reshape(x, (1, *x.shape))
    s, n, t, d_in = x.shape
    flat = ad.reshape(x, (s * n, t, d_in))
    steps = [ad.reshape(ad.slice_axis(flat, 1, i, 1), (s * n, d_in))
             for i in range(t)]
    fwd = _gru_sequence(steps, p.forward)
    bwd = _gru_sequence(steps, p.backward, reverse=True)
    d_h = p.hidden
    per_step = [ad.reshape(ad.concat([f, b], axis=-1), (s * n, 1, 2 * d_h))
                for f, b in zip(fwd, bwd)]
    seq = per_step[0] if t == 1 else ad.concat(per_step, axis=1)
    out = ad.reshape(seq, (s, n, t, 2 * d_h))
    return _maybe_unbatch(out, unbatch)


def output_head(x, p):
    """1x1 channel reduction -> bidirectional recurrence -> affine to P."""
    x, unbatch = _ensure_batched(x)
    s, c, n, t = x.shape
    reduced = ad.add(ad.matmul(ad.transpose(x, (0, 2, 3, 1)), p.channel_proj),
                     p.channel_bias)  # (S, N, T, 1)
    seq = bi_recurrent(reduced, p.recurrent)  # (S, N, T, 2 d_h)
    d_h = p.recurrent.hidden
    fwd_last = ad.slice_axis(ad.slice_axis(seq, 2, t - 1, 1), 3, 0, d_h)
    bwd_first = ad.slice_axis(ad.slice_axis(seq, 2, 0, 1), 3, d_h, d_h)
    state = ad.reshape(ad.concat([fwd_last, bwd_first], axis=-1), (s, n, 2 * d_h))
    out = ad.add(ad.matmul(state, p.w_out), p.b_out)
    return _maybe_unbatch(out, unbatch)
