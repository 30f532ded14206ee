"""Minimal reverse-mode differentiation over numpy arrays.

The package computes first and second input derivatives of its small MLPs in
closed form (see ``nn``). Training losses, however, contain those derivatives
*inside* them (squared gradient norms, log-determinants of input Hessians), so
their parameter gradients are third-order mixed derivatives. Rather than
hand-derive every adjoint, the closed-form layered expressions are rebuilt
from the primitives below and differentiated once by this tape.

Scope is deliberately narrow: exactly the operations the models need, each
with an analytic vector-Jacobian product, each finite-difference tested.
Python floats are used for literal constants throughout taped code so float32
parameter sets stay float32.
"""

from __future__ import annotations

import numpy as np


class Var:
    """A node in the computation graph: a value plus how to push gradients back."""

    __slots__ = ("value", "grad", "parents", "vjp")

    # make numpy defer to the reflected operators instead of object-broadcasting
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _as_scalar(x):
    """Python/numpy scalars stay raw: numpy keeps array dtypes for them and
    they need no graph node."""
    if isinstance(x, (int, float)) or (isinstance(x, np.generic) and x.ndim == 0):
        return float(x)
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    for x, y in ((a, b), (b, a)):
        s = _as_scalar(x)
        if s is not None:
            y = wrap(y)
            return Var(y.value + s, (y,), lambda g: (g,))
    a, b = wrap(a), wrap(b)
    return Var(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b):
    if _as_scalar(b) is not None:
        return add(a, -_as_scalar(b))
    if _as_scalar(a) is not None:
        return add(neg(b), _as_scalar(a))
    a, b = wrap(a), wrap(b)
    return Var(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def neg(a):
    a = wrap(a)
    return Var(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    for x, y in ((a, b), (b, a)):
        s = _as_scalar(x)
        if s is not None:
            y = wrap(y)
            return Var(y.value * s, (y,), lambda g: (g * s,))
    a, b = wrap(a), wrap(b)
    return Var(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b):
    if _as_scalar(b) is not None:
        return mul(a, 1.0 / _as_scalar(b))
    if _as_scalar(a) is not None:
        s = _as_scalar(a)
        b = wrap(b)
        return Var(s / b.value, (b,), lambda g: (-g * s / (b.value * b.value),))
    a, b = wrap(a), wrap(b)
    return Var(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def matmul(a, b):
    a, b = wrap(a), wrap(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")

    def vjp(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return Var(a.value @ b.value, (a, b), vjp)


def transpose_last2(a):
    a = wrap(a)
    return Var(
        np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def reshape(a, shape):
    a = wrap(a)
    old = a.value.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts, axis=-1):
    parts = [wrap(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offs = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offs[i], offs[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def narrow(a, axis, start, length):
    a = wrap(a)
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[idx] = g
        return (out,)

    return Var(a.value[idx], (a,), vjp)


def vsum(a, axis=None, keepdims=False):
    a = wrap(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.value.shape).copy(),)

    return Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def vmean(a, axis=None, keepdims=False):
    a = wrap(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def tanh(a):
    a = wrap(a)
    t = np.tanh(a.value)
    return Var(t, (a,), lambda g: (g * (1.0 - t * t),))


def tanh_d1(a):
    """1 - tanh(a)^2 as a primitive, so Hessian formulas stay differentiable."""
    a = wrap(a)
    t = np.tanh(a.value)
    return Var(1.0 - t * t, (a,), lambda g: (g * (-2.0 * t * (1.0 - t * t)),))


def tanh_d2(a):
    """-2 tanh(a)(1 - tanh(a)^2); derivative is -2(1-t^2)(1-3t^2)."""
    a = wrap(a)
    t = np.tanh(a.value)
    s = 1.0 - t * t
    return Var(-2.0 * t * s, (a,), lambda g: (g * (-2.0 * s * (1.0 - 3.0 * t * t)),))


def relu(a):
    a = wrap(a)
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = wrap(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    return Var(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a):
    a = wrap(a)
    e = np.exp(a.value)
    return Var(e, (a,), lambda g: (g * e,))


def log(a):
    a = wrap(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a):
    a = wrap(a)
    s = np.sqrt(a.value)
    return Var(s, (a,), lambda g: (g * (0.5 / s),))


def square(a):
    a = wrap(a)
    return Var(a.value * a.value, (a,), lambda g: (g * (2.0 * a.value),))


def clip(a, lo, hi):
    """Clamp; gradient passes only where the input was strictly inside [lo, hi]."""
    a = wrap(a)
    mask = (a.value > lo) & (a.value < hi)
    return Var(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


def logsumexp(a, axis=-1):
    a = wrap(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)

    def vjp(g):
        soft = e / s
        return (np.expand_dims(g, axis) * soft,)

    return Var(out, (a,), vjp)


def softmax(a, axis=-1):
    return exp(sub(a, _expand(logsumexp(a, axis=axis), axis)))


def _expand(a, axis):
    a = wrap(a)
    return Var(np.expand_dims(a.value, axis), (a,), lambda g: (np.squeeze(g, axis=axis),))


def logdet(a):
    """log|det| of (..., d, d); caller is responsible for sign/singularity checks."""
    a = wrap(a)
    _, logabs = np.linalg.slogdet(a.value)

    def vjp(g):
        inv_t = np.swapaxes(np.linalg.inv(a.value), -1, -2)
        return (np.asarray(g)[..., None, None] * inv_t,)

    return Var(logabs, (a,), vjp)


def onehot_argmax_st(a):
    """Hard one-hot of the last-axis argmax; straight-through gradient."""
    a = wrap(a)
    idx = np.argmax(a.value, axis=-1)
    hard = np.zeros_like(a.value)
    np.put_along_axis(hard, idx[..., None], 1.0, axis=-1)
    return Var(hard, (a,), lambda g: (g,))


# -- convolutions -------------------------------------------------------------


def _im2col(xp, kh, kw, stride, ho, wo):
    b, c, _, _ = xp.shape
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(cols, b, c, h_pad, w_pad, kh, kw, stride, ho, wo):
    xp = np.zeros((b, c, h_pad, w_pad), dtype=cols.dtype)
    cols6 = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols6[:, :, i, j]
    return xp


def conv2d(x, w, b, stride=2, pad=1):
    """x: (B, C, H, W), w: (O, C, kh, kw), b: (O,)."""
    x, w, b = wrap(x), wrap(w), wrap(b)
    bs, c, h, wd = x.value.shape
    o, c2, kh, kw = w.value.shape
    if c2 != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {c2}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w_flat = w.value.reshape(o, -1)
    out = (w_flat @ cols).reshape(bs, o, ho, wo) + b.value[:, None, None]

    def vjp(g):
        g2 = g.reshape(bs, o, ho * wo)
        ga = np.ascontiguousarray(g2.transpose(1, 0, 2)).reshape(o, -1)
        ca = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(cols.shape[1], -1)
        gw = (ga @ ca.T).reshape(w.value.shape)
        gb = g2.sum(axis=(0, 2))
        gcols = np.matmul(w_flat.T, g2)
        gxp = _col2im(gcols, bs, c, h + 2 * pad, wd + 2 * pad, kh, kw, stride, ho, wo)
        gx = gxp[:, :, pad : pad + h, pad : pad + wd]
        return gx, gw, gb

    return Var(out, (x, w, b), vjp)


def conv2d_transpose(x, w, b, stride=2, pad=1, out_pad=0):
    """x: (B, C_in, H, W), w: (C_in, C_out, kh, kw), b: (C_out,)."""
    x, w, b = wrap(x), wrap(w), wrap(b)
    bs, ci, h, wd = x.value.shape
    ci2, co, kh, kw = w.value.shape
    if ci2 != ci:
        raise ValueError(f"conv2d_transpose: input has {ci} channels, kernel expects {ci2}")
    ho = (h - 1) * stride - 2 * pad + kh + out_pad
    wo = (wd - 1) * stride - 2 * pad + kw + out_pad
    w_flat = w.value.reshape(ci, -1)  # (C_in, C_out*kh*kw)
    x_flat = x.value.reshape(bs, ci, h * wd)
    cols = np.matmul(w_flat.T, x_flat)  # (B, C_out*kh*kw, H*W)
    outp = _col2im(cols, bs, co, ho + 2 * pad + out_pad, wo + 2 * pad + out_pad, kh, kw, stride, h, wd)
    out = outp[:, :, pad : pad + ho, pad : pad + wo] + b.value[:, None, None]

    def vjp(g):
        gp = np.zeros((bs, co, ho + 2 * pad + out_pad, wo + 2 * pad + out_pad), dtype=g.dtype)
        gp[:, :, pad : pad + ho, pad : pad + wo] = g
        gcols = _im2col(gp, kh, kw, stride, h, wd)  # (B, C_out*kh*kw, H*W)
        gx = np.matmul(w_flat, gcols).reshape(bs, ci, h, wd)
        xa = np.ascontiguousarray(x_flat.transpose(1, 0, 2)).reshape(ci, -1)
        ga = np.ascontiguousarray(gcols.transpose(1, 0, 2)).reshape(gcols.shape[1], -1)
        gw = (xa @ ga.T).reshape(w.value.shape)
        gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return Var(out, (x, w, b), vjp)


# -- backward pass ------------------------------------------------------------


def _topo_order(root: Var) -> list[Var]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into .grad over the whole graph; root is scalar."""
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if parent.grad is None:
                # own a fresh buffer (g may alias another node's grad)
                parent.grad = np.array(g, dtype=parent.value.dtype)
            else:
                np.add(parent.grad, g, out=parent.grad)
