"""Reverse-mode differentiation on numpy arrays.

Each op returns a ``Tensor`` that remembers its parents and a closure mapping
the output gradient to one gradient per parent. ``Tensor.backward`` walks the
graph in reverse topological order. Only the operations the codec and the
up-sampling network need are provided.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np
from scipy.special import expit, ndtr

from ..entropy.likelihood import LIKELIHOOD_FLOOR

# per thread so parallel block workers cannot clobber each other's state
_STATE = threading.local()
_LN2 = math.log(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if not isinstance(data, np.ndarray):
            # numpy scalars keep their dtype; python numbers become float32
            data = np.asarray(data) if isinstance(data, np.generic) else np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return Tensor(arr)


def _node(data, parents, backward) -> Tensor:
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    return a, b


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data).astype(a.dtype)
    return _node(out, (a,), lambda g: (g * out * (1 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0, a.data).astype(a.dtype)
    return _node(out, (a,), lambda g: (g * expit(a.data).astype(a.dtype),))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient passes only where no clipping happened."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# shape and reduction

def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else axis
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),)

    return _node(np.asarray(a.data.sum(axis=axis), dtype=a.dtype), (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.data)
        if _fancy(idx):
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _node(a.data[idx], (a,), back)


def _fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


# 3D convolution, layout (N, C, D, H, W), weights (O, C, k, k, k)

def same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    """Output size and (low, high) zero padding for 'same'-style convolution."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def _pad(x: np.ndarray, pads) -> np.ndarray:
    if all(lo == 0 and hi == 0 for lo, hi in pads):
        return x
    return np.pad(x, ((0, 0), (0, 0)) + tuple(pads))


def _window(k_off, s, n_out):
    return slice(k_off, k_off + s * (n_out - 1) + 1, s)


def _corr(xp: np.ndarray, w: np.ndarray, s: int, out_sp) -> np.ndarray:
    """Strided cross-correlation of padded input; returns (N, O, *out_sp)."""
    k = w.shape[2]
    xt = xp.transpose(1, 0, 2, 3, 4)
    acc = None
    for a in range(k):
        for b in range(k):
            for c in range(k):
                patch = xt[:, :, _window(a, s, out_sp[0]), _window(b, s, out_sp[1]), _window(c, s, out_sp[2])]
                term = np.tensordot(w[:, :, a, b, c], patch, axes=1)
                acc = term if acc is None else acc + term
    return acc.transpose(1, 0, 2, 3, 4)


def _corr_adjoint_x(g: np.ndarray, w: np.ndarray, s: int, padded_shape) -> np.ndarray:
    """Adjoint of ``_corr`` with respect to the padded input."""
    k = w.shape[2]
    out_sp = g.shape[2:]
    gt = g.transpose(1, 0, 2, 3, 4)
    dxt = np.zeros((padded_shape[1], padded_shape[0]) + tuple(padded_shape[2:]), dtype=g.dtype)
    for a in range(k):
        for b in range(k):
            for c in range(k):
                dxt[:, :, _window(a, s, out_sp[0]), _window(b, s, out_sp[1]), _window(c, s, out_sp[2])] += \
                    np.tensordot(w[:, :, a, b, c], gt, axes=([0], [0]))
    return dxt.transpose(1, 0, 2, 3, 4)


def _corr_adjoint_w(g: np.ndarray, xp: np.ndarray, s: int, k: int) -> np.ndarray:
    """Gradient of ``_corr`` with respect to the weights."""
    out_sp = g.shape[2:]
    dw = np.empty((g.shape[1], xp.shape[1], k, k, k), dtype=g.dtype)
    for a in range(k):
        for b in range(k):
            for c in range(k):
                patch = xp[:, :, _window(a, s, out_sp[0]), _window(b, s, out_sp[1]), _window(c, s, out_sp[2])]
                dw[:, :, a, b, c] = np.tensordot(g, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return dw


def _check_conv(x, w, bias):
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv expects 5-D input and weights, got {x.shape} and {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {w.shape[0]} outputs")


def conv3d(x, w, bias=None, stride: int = 1) -> Tensor:
    """Cross-correlation with 'same' zero padding; output spatial size ceil(n / stride)."""
    x, w = _pair(x, w)
    bias = None if bias is None else as_tensor(bias, x.dtype)
    _check_conv(x, w, bias)
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {w.shape[1]}")
    k = w.shape[2]
    plan = [same_padding(n, k, stride) for n in x.shape[2:]]
    out_sp = tuple(p[0] for p in plan)
    pads = [(p[1], p[2]) for p in plan]
    xp = _pad(x.data, pads)
    out = _corr(xp, w.data, stride, out_sp)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)

    def back(g):
        dxp = _corr_adjoint_x(g, w.data, stride, xp.shape) if x.requires_grad else None
        dx = None if dxp is None else dxp[(slice(None), slice(None)) + tuple(
            slice(lo, lo + n) for (lo, _), n in zip(pads, x.shape[2:]))]
        dw = _corr_adjoint_w(g, xp, stride, k) if w.requires_grad else None
        grads = (dx, dw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3, 4)),)
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out, parents, back)


def conv_transpose3d(x, w, bias=None, stride: int = 1) -> Tensor:
    """Adjoint of ``conv3d`` on an input of size n * stride; weights (C_in, C_out, k, k, k)."""
    x, w = _pair(x, w)
    bias = None if bias is None else as_tensor(bias, x.dtype)
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv expects 5-D input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {w.shape[0]}")
    if bias is not None and bias.shape != (w.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match {w.shape[1]} outputs")
    k = w.shape[2]
    big = tuple(n * stride for n in x.shape[2:])
    plan = [same_padding(n, k, stride) for n in big]
    pads = [(p[1], p[2]) for p in plan]
    padded = (x.shape[0], w.shape[1]) + tuple(n + lo + hi for n, (lo, hi) in zip(big, pads))
    crop = (slice(None), slice(None)) + tuple(slice(lo, lo + n) for (lo, _), n in zip(pads, big))
    out = _corr_adjoint_x(x.data, w.data, stride, padded)[crop]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        gp = _pad(g, pads)
        dx = _corr(gp, w.data, stride, x.shape[2:]) if x.requires_grad else None
        dw = _corr_adjoint_w(x.data, gp, stride, k) if w.requires_grad else None
        grads = (dx, dw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3, 4)),)
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out, parents, back)


# interval likelihoods of unit-width bins, returned as bits per element

def gaussian_bits(y, mu, sigma) -> Tensor:
    """-log2 P(bin of width 1 centred at y) under N(mu, sigma), P floored at 2**-64."""
    y, mu = _pair(y, mu)
    sigma = as_tensor(sigma, y.dtype)
    d = y.data.astype(np.float64) - mu.data
    v = np.abs(d)
    s = sigma.data.astype(np.float64)
    hi, lo = (0.5 - v) / s, (-0.5 - v) / s
    p = ndtr(hi) - ndtr(lo)
    live = p > LIKELIHOOD_FLOOR
    p = np.maximum(p, LIKELIHOOD_FLOOR)
    out = (-np.log2(p)).astype(y.dtype)

    def back(g):
        phi_hi = np.exp(-0.5 * hi * hi) * _INV_SQRT_2PI
        phi_lo = np.exp(-0.5 * lo * lo) * _INV_SQRT_2PI
        scale = -g / (p * _LN2) * live
        dp_dd = (phi_lo - phi_hi) / s * np.sign(d)
        dp_ds = (lo * phi_lo - hi * phi_hi) / s
        gd = scale * dp_dd
        return (unbroadcast(gd, y.shape).astype(y.dtype), unbroadcast(-gd, mu.shape).astype(y.dtype),
                unbroadcast(scale * dp_ds, sigma.shape).astype(y.dtype))

    return _node(out, (y, mu, sigma), back)


def logistic_bits(y, loc, scale) -> Tensor:
    """-log2 P(bin of width 1 centred at y) under Logistic(loc, scale), floored."""
    y, loc = _pair(y, loc)
    scale = as_tensor(scale, y.dtype)
    d = y.data.astype(np.float64) - loc.data
    v = np.abs(d)
    s = scale.data.astype(np.float64)
    hi, lo = (0.5 - v) / s, (-0.5 - v) / s
    s_hi, s_lo = expit(hi), expit(lo)
    p = s_hi - s_lo
    live = p > LIKELIHOOD_FLOOR
    p = np.maximum(p, LIKELIHOOD_FLOOR)
    out = (-np.log2(p)).astype(y.dtype)

    def back(g):
        f_hi, f_lo = s_hi * (1 - s_hi), s_lo * (1 - s_lo)
        k = -g / (p * _LN2) * live
        gd = k * (f_lo - f_hi) / s * np.sign(d)
        gs = k * (lo * f_lo - hi * f_hi) / s
        return (unbroadcast(gd, y.shape).astype(y.dtype), unbroadcast(-gd, loc.shape).astype(y.dtype),
                unbroadcast(gs, scale.shape).astype(y.dtype))

    return _node(out, (y, loc, scale), back)
