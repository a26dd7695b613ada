"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every layer and the optimizer are built on this. No operator fusion, no
graph rewriting: each primitive records a closure that scatters its output
adjoint back to its parents. Double precision throughout so finite-difference
checks to 1e-6 are meaningful.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    """A dense array plus the bookkeeping needed for backward().

    ``values`` is always float64 and row-major. ``grad`` is populated (same
    shape) by :func:`backward` for every tensor reachable from the loss that
    requires gradients.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad=False, _parents=(), _backward_fn=None):
        values = np.asarray(values, dtype=np.float64)
        self.values = values if values.flags.c_contiguous else np.ascontiguousarray(values)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self):
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # convenience operators; all dispatch to the module-level primitives
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(values):
    """A tensor that never receives gradients."""
    return Tensor(values, requires_grad=False)


def _needs_grad(t):
    return t.requires_grad or bool(t._parents)


def _track(*parents):
    return any(_needs_grad(p) for p in parents)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (undo numpy trailing-dim broadcast)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _binary(a, b, out_values, da, db):
    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, _unbroadcast(da(g), a.values.shape))
        if _needs_grad(b):
            _accumulate(b, _unbroadcast(db(g), b.values.shape))

    return Tensor(out_values, requires_grad=_track(a, b),
                  _parents=(a, b), _backward_fn=backward_fn)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.values.shape, b.values.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.values.shape} and {b.values.shape}")


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _binary(a, b, a.values + b.values, lambda g: g, lambda g: g)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _binary(a, b, a.values - b.values, lambda g: g, lambda g: -g)


def hadamard(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "hadamard")
    return _binary(a, b, a.values * b.values,
                   lambda g: g * b.values, lambda g: g * a.values)


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)

    def backward_fn(g):
        _accumulate(a, s * g)

    return Tensor(a.values * s, requires_grad=_track(a),
                  _parents=(a,), _backward_fn=backward_fn)


def sigmoid(a):
    a = _as_tensor(a)
    out = np.empty_like(a.values)
    pos = a.values >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.values[pos]))
    ex = np.exp(a.values[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        _accumulate(a, g * out * (1.0 - out))

    return Tensor(out, requires_grad=_track(a), _parents=(a,), _backward_fn=backward_fn)


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.values, 0.0)

    def backward_fn(g):
        _accumulate(a, g * (a.values > 0))

    return Tensor(out, requires_grad=_track(a), _parents=(a,), _backward_fn=backward_fn)


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.values)

    def backward_fn(g):
        _accumulate(a, g * (1.0 - out * out))

    return Tensor(out, requires_grad=_track(a), _parents=(a,), _backward_fn=backward_fn)


def matmul(a, b):
    """Batched matrix product; leading dimensions broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.shape[-1] != b.values.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree: "
                         f"{a.values.shape} @ {b.values.shape}")
    out = a.values @ b.values

    def backward_fn(g):
        if _needs_grad(a):
            ga = g @ np.swapaxes(b.values, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.values.shape))
        if _needs_grad(b):
            gb = np.swapaxes(a.values, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.values.shape))

    return Tensor(out, requires_grad=_track(a, b),
                  _parents=(a, b), _backward_fn=backward_fn)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    nd = a.values.ndim
    if not -nd <= axis < nd:
        raise ValueError(f"softmax: axis {axis} out of range for {nd}-d tensor")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        # full Jacobian-vector product along the softmax axis
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return Tensor(out, requires_grad=_track(a), _parents=(a,), _backward_fn=backward_fn)


def conv1d_time(x, kernel):
    """Valid (no-pad) correlation along the trailing time axis.

    x: (C_in, N, T) or (S, C_in, N, T); kernel: (C_out, C_in, k).
    Output time length is T - k + 1; the same kernel is shared across nodes.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    batched = x.values.ndim == 4
    if not batched and x.values.ndim != 3:
        raise ValueError(f"conv1d_time: expected 3-d or 4-d input, got shape {x.values.shape}")
    if kernel.values.ndim != 3:
        raise ValueError(f"conv1d_time: kernel must be 3-d, got shape {kernel.values.shape}")
    c_out, c_in, k = kernel.values.shape
    t_len = x.values.shape[-1]
    if x.values.shape[-3] != c_in:
        raise ValueError(f"conv1d_time: input channels {x.values.shape[-3]} != kernel {c_in}")
    if k > t_len:
        raise ValueError(f"conv1d_time: kernel length {k} exceeds sequence length {t_len}")

    xv = x.values if batched else x.values[None]
    t_out = t_len - k + 1
    s, _, n, _ = xv.shape
    # lower the correlation to one BLAS matmul over stacked kernel taps:
    # (S, N, T', C_in * k) @ (C_in * k, C_out)
    taps = np.concatenate([xv[:, :, :, j:j + t_out] for j in range(k)], axis=1)
    cols = taps.transpose(0, 2, 3, 1).reshape(s * n * t_out, c_in * k)
    w = kernel.values.transpose(2, 1, 0).reshape(c_in * k, c_out)
    out = (cols @ w).reshape(s, n, t_out, c_out).transpose(0, 3, 1, 2)

    def backward_fn(g):
        gv = g if batched else g[None]
        gcols = gv.transpose(0, 2, 3, 1).reshape(s * n * t_out, c_out)
        if _needs_grad(x):
            gtaps = (gcols @ w.T).reshape(s, n, t_out, c_in * k).transpose(0, 3, 1, 2)
            gx = np.zeros_like(xv)
            for j in range(k):
                gx[:, :, :, j:j + t_out] += gtaps[:, j * c_in:(j + 1) * c_in]
            _accumulate(x, gx if batched else gx[0])
        if _needs_grad(kernel):
            gw = cols.T @ gcols
            _accumulate(kernel, gw.reshape(k, c_in, c_out).transpose(2, 1, 0))

    return Tensor(out if batched else out[0], requires_grad=_track(x, kernel),
                  _parents=(x, kernel), _backward_fn=backward_fn)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return Tensor(out, requires_grad=_track(*tensors),
                  _parents=tuple(tensors), _backward_fn=backward_fn)


def slice_axis(a, axis, start, length):
    a = _as_tensor(a)
    size = a.values.shape[axis]
    if start < 0 or start + length > size:
        raise ValueError(f"slice_axis: [{start}, {start + length}) out of bounds "
                         f"for axis {axis} of size {size}")
    idx = [slice(None)] * a.values.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward_fn(g):
        full = np.zeros_like(a.values)
        full[idx] = g
        _accumulate(a, full)

    return Tensor(a.values[idx], requires_grad=_track(a),
                  _parents=(a,), _backward_fn=backward_fn)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        _accumulate(a, g.transpose(inverse))

    return Tensor(a.values.transpose(axes), requires_grad=_track(a),
                  _parents=(a,), _backward_fn=backward_fn)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.values.shape

    def backward_fn(g):
        _accumulate(a, g.reshape(old))

    return Tensor(a.values.reshape(shape), requires_grad=_track(a),
                  _parents=(a,), _backward_fn=backward_fn)


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.full_like(a.values, g if np.ndim(g) == 0 else g.item()))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.values.shape).copy())

    return Tensor(out, requires_grad=_track(a), _parents=(a,), _backward_fn=backward_fn)


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.values.size if axis is None else a.values.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def backward(loss):
    """Reverse-topological adjoint accumulation from a scalar loss.

    Gradients of tensors reached through several paths are summed. Tensors
    outside the loss's ancestry keep ``grad is None`` (read as zero).
    """
    if loss.values.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.values.shape}")

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def finite_difference_check(f, tensors, eps=1e-5):
    """Max relative error between backward() and central finite differences.

    ``f`` takes no arguments, reads the current ``values`` of ``tensors``
    and returns a scalar Tensor. It must be deterministic; a repeat
    evaluation mismatch is rejected.
    """
    y0 = f()
    y1 = f()
    if not np.array_equal(y0.values, y1.values):
        raise ValueError("finite_difference_check: f is not deterministic")

    zero_grads(tensors)
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy()
                for t in tensors]

    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().values)
            flat[i] = orig - eps
            fm = float(f().values)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            an = a.reshape(-1)[i]
            denom = max(abs(an), abs(numeric), 1e-8)
            worst = max(worst, abs(an - numeric) / denom)
    return worst
