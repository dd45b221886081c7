"""Differentiable primitives.

Shapes must match exactly; the only implicit broadcast is a Python or numpy
scalar constant. Per-channel broadcasting is explicit through :func:`affine`
and :func:`expand`.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DomainError, ShapeError
from .tensor import Tensor, current_tape

DIRECT_CONV_MAX_KERNEL = 7


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data, parents: tuple, vjp) -> Tensor:
    tape = current_tape()
    if tape is None or not any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        return Tensor(data)
    node = tape.record(op, parents, vjp)
    return Tensor(data, requires_grad=True, _node=node)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operand combined with an array: sum the gradient back down
    if g.shape == t.shape:
        return g
    return np.sum(g).reshape(t.shape)


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_reduce_to(g * np.conj(bd), a), _reduce_to(g * np.conj(ad), b)))


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = g / np.conj(bd)
        return _reduce_to(ga, a), _reduce_to(-ga * np.conj(out), b)

    return _make("div", out, (a, b), vjp)


def abs_(x) -> Tensor:
    x = _t(x)
    if x.is_complex:
        raise DomainError("abs_ is defined for real tensors; use modulus_squared")
    d = x.data
    return _make("abs", np.abs(d), (x,), lambda g: (g * np.sign(d),))


def exp(x) -> Tensor:
    x = _t(x)
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * np.conj(out),))


def log(x) -> Tensor:
    x = _t(x)
    d = x.data
    if not x.is_complex and np.any(d <= 0):
        raise DomainError("log of a non-positive value")
    return _make("log", np.log(d), (x,), lambda g: (g / np.conj(d),))


def sqrt(x) -> Tensor:
    x = _t(x)
    if not x.is_complex and np.any(x.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(x.data)
    return _make("sqrt", out, (x,), lambda g: (g / (2.0 * np.conj(out)),))


def sqrt_clamped(x) -> Tensor:
    """sqrt(max(x, 0)) with a zero gradient wherever x <= 0."""
    x = _t(x)
    pos = x.data > 0
    out = np.sqrt(np.where(pos, x.data, 0.0))
    safe = np.where(pos, out, 1.0)
    return _make("sqrt_clamped", out, (x,), lambda g: (np.where(pos, g / (2.0 * safe), 0.0),))


def square(x) -> Tensor:
    return mul(x, x)


def relu(x) -> Tensor:
    x = _t(x)
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = _t(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def max_with_constant(x, c: float) -> Tensor:
    x = _t(x)
    mask = x.data > c
    return _make("max_with_constant", np.where(mask, x.data, c), (x,), lambda g: (g * mask,))


def softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make("softmax", out, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make("log_softmax", out, (x,),
                 lambda g: (g - sm * np.sum(g, axis=axis, keepdims=True),))


# ----------------------------------------------------------------------------
# complex-field primitives


def complex_exp(x) -> Tensor:
    """exp(i x) for real x."""
    x = _t(x)
    if x.is_complex:
        raise DomainError("complex_exp expects a real phase")
    out = np.exp(1j * x.data)
    return _make("complex_exp", out, (x,), lambda g: (np.imag(g * np.conj(out)),))


def modulus_squared(z) -> Tensor:
    z = _t(z)
    d = z.data
    out = d.real ** 2 + d.imag ** 2 if z.is_complex else d ** 2
    return _make("modulus_squared", out, (z,), lambda g: (2.0 * g * d,))


def angle(z) -> Tensor:
    z = _t(z)
    d = z.data
    r2 = np.maximum(d.real ** 2 + d.imag ** 2, 1e-300)
    return _make("angle", np.angle(d), (z,), lambda g: (g * 1j * d / r2,))


def real(z) -> Tensor:
    z = _t(z)
    return _make("real", np.real(z.data).copy(), (z,), lambda g: (g.astype(np.complex128),))


def imag(z) -> Tensor:
    z = _t(z)
    return _make("imag", np.imag(z.data).copy(), (z,), lambda g: (1j * g,))


def wrap_phase(x) -> Tensor:
    """Wrap to [-pi, pi); the gradient is the identity almost everywhere."""
    x = _t(x)
    from ..optics import wrap_phase as _wrap
    return _make("wrap_phase", _wrap(x.data), (x,), lambda g: (g,))


def fft2(z) -> Tensor:
    """Unnormalized 2D DFT over the last two axes."""
    z = _t(z)
    n = z.shape[-1] * z.shape[-2]
    out = np.fft.fft2(z.data)
    return _make("fft2", out, (z,), lambda g: (np.fft.ifft2(g) * n,))


def ifft2(z) -> Tensor:
    """Inverse 2D DFT (1/N normalized) over the last two axes."""
    z = _t(z)
    n = z.shape[-1] * z.shape[-2]
    out = np.fft.ifft2(z.data)
    return _make("ifft2", out, (z,), lambda g: (np.fft.fft2(g) / n,))


# ----------------------------------------------------------------------------
# reductions and shape manipulation


def sum_(x, axis=None) -> Tensor:
    x = _t(x)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", np.sum(x.data, axis=axis), (x,), vjp)


def mean(x, axis=None) -> Tensor:
    x = _t(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis), 1.0 / float(count))


def reshape(x, shape) -> Tensor:
    x = _t(x)
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes) -> Tensor:
    x = _t(x)
    inv = np.argsort(axes)
    return _make("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),))


def getitem(x, index) -> Tensor:
    x = _t(x)
    shape, dtype = x.shape, x.data.dtype

    def vjp(g):
        out = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        np.add.at(out, index, g)
        return (out,)

    return _make("getitem", np.array(x.data[index]), (x,), vjp)


def concat(xs, axis: int = 0) -> Tensor:
    xs = [_t(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(xs, axis: int = 0) -> Tensor:
    xs = [_t(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {shapes}")
    n = len(xs)
    return _make("stack", np.stack([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def expand(x, shape) -> Tensor:
    """Explicitly repeat singleton axes of ``x`` up to ``shape``."""
    x = _t(x)
    if len(shape) != x.ndim:
        raise ShapeError("expand keeps the rank; reshape first")
    axes = tuple(i for i, (a, b) in enumerate(zip(x.shape, shape)) if a != b)
    if any(x.shape[i] != 1 for i in axes):
        raise ShapeError(f"expand: cannot expand {x.shape} to {tuple(shape)}")
    return _make("expand", np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (np.sum(g, axis=axes, keepdims=True),))


def pad2d(x, ph: int, pw: int) -> Tensor:
    """Zero-pad the last two axes symmetrically."""
    x = _t(x)
    h, w = x.shape[-2:]
    widths = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    return _make("pad2d", np.pad(x.data, widths), (x,),
                 lambda g: (g[..., ph:ph + h, pw:pw + w],))


# ----------------------------------------------------------------------------
# linear layers


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make("matmul", ad @ bd, (a, b),
                 lambda g: (g @ np.conj(bd).T, np.conj(ad).T @ g))


def affine(x, scale, shift, axis: int = 1) -> Tensor:
    """Per-channel ``x * scale[c] + shift[c]`` along ``axis``; scale and shift are (C,)."""
    x, scale, shift = _t(x), _t(scale), _t(shift)
    c = x.shape[axis]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"affine: expected ({c},) scale/shift, got {scale.shape}/{shift.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = c
    s = scale.data.reshape(bshape)
    xd = x.data
    red = tuple(i for i in range(x.ndim) if i != axis)

    def vjp(g):
        gs = np.sum(np.real(g * np.conj(xd)) if x.is_complex or np.iscomplexobj(g)
                    else g * xd, axis=red)
        gb = np.sum(np.real(g), axis=red)
        return g * s, gs, gb

    return _make("affine", xd * s + shift.data.reshape(bshape), (x, scale, shift), vjp)


def global_avg_pool(x) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    x = _t(x)
    if x.ndim != 4:
        raise ShapeError("global_avg_pool expects NCHW")
    shape = x.shape
    hw = shape[2] * shape[3]
    return _make("global_avg_pool", x.data.mean(axis=(2, 3)), (x,),
                 lambda g: (np.broadcast_to(g[:, :, None, None] / hw, shape).copy(),))


def avg_pool2d(x, k: int = 2) -> Tensor:
    x = _t(x)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return _make("avg_pool2d", out, (x,), vjp)


def upsample_nearest(x, k: int = 2) -> Tensor:
    x = _t(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, k, axis=2), k, axis=3)
    return _make("upsample_nearest", out, (x,),
                 lambda g: (g.reshape(n, c, h, k, w, k).sum(axis=(3, 5)),))


# ----------------------------------------------------------------------------
# convolutions


def _fft_corr_forward(x, w, b):
    n, c, h, wd = x.shape
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    shape = xp.shape[2:]
    fx = np.fft.rfft2(xp)
    fw = np.fft.rfft2(w, s=shape)
    acc = np.einsum("ncyx,ocyx->noyx", fx, np.conj(fw))
    out = np.fft.irfft2(acc, s=shape)[:, :, :h, :wd]
    return out + b[None, :, None, None]


def _fft_corr_backward(x, w, g):
    n, c, h, wd = x.shape
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    shape = xp.shape[2:]
    gp = np.zeros((n, w.shape[0]) + shape)
    gp[:, :, :h, :wd] = g
    fg = np.fft.rfft2(gp)
    fw = np.fft.rfft2(w, s=shape)
    fx = np.fft.rfft2(xp)
    gxp = np.fft.irfft2(np.einsum("noyx,ocyx->ncyx", fg, fw), s=shape)
    gw = np.fft.irfft2(np.einsum("ncyx,noyx->ocyx", fx, np.conj(fg)), s=shape)[:, :, :k, :k]
    return gxp[:, :, p:p + h, p:p + wd], gw


def conv2d(x, w, b=None) -> Tensor:
    """Stride-1 cross-correlation with symmetric zero padding.

    x: (N, C, H, W); w: (O, C, K, K) with odd K; b: (O,). Kernels up to 7x7 run
    the direct-loop kernels, larger ones go through the FFT.
    """
    x, w = _t(x), _t(w)
    b = _t(np.zeros(w.shape[0]) if b is None else b)
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != x.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: bad shapes x={x.shape} w={w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeError("conv2d: kernel size must be odd")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape}")
    xd, wd = x.data, w.data
    if k <= DIRECT_CONV_MAX_KERNEL:
        out = kernels.conv2d_forward(xd, wd, b.data)

        def vjp(g):
            gx = kernels.conv2d_backward_input(g, wd) if x.requires_grad else None
            gw = kernels.conv2d_backward_weight(xd, g, k) if w.requires_grad else None
            return gx, gw, g.sum(axis=(0, 2, 3))
    else:
        out = _fft_corr_forward(xd, wd, b.data)

        def vjp(g):
            gx, gw = _fft_corr_backward(xd, wd, g)
            return gx, gw, g.sum(axis=(0, 2, 3))

    return _make("conv2d", out, (x, w, b), vjp)


def depthwise_conv2d(x, w, b=None) -> Tensor:
    """Per-channel same-padded correlation; w: (C, 1, K, K)."""
    x, w = _t(x), _t(w)
    n, c, h, wd_ = x.shape
    k = w.shape[2]
    if w.shape != (c, 1, k, k) or k % 2 == 0:
        raise ShapeError(f"depthwise_conv2d: bad weight shape {w.shape}")
    b = _t(np.zeros(c) if b is None else b)
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    wd = w.data[:, 0]
    out = np.empty((n, c, h, wd_))
    out[...] = b.data[None, :, None, None]
    for ky in range(k):
        for kx in range(k):
            out += wd[None, :, ky, kx, None, None] * xp[:, :, ky:ky + h, kx:kx + wd_]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty((c, 1, k, k))
        for ky in range(k):
            for kx in range(k):
                gxp[:, :, ky:ky + h, kx:kx + wd_] += wd[None, :, ky, kx, None, None] * g
                gw[:, 0, ky, kx] = np.einsum("nchw,nchw->c", g, xp[:, :, ky:ky + h, kx:kx + wd_])
        return gxp[:, :, p:p + h, p:p + wd_], gw, g.sum(axis=(0, 2, 3))

    return _make("depthwise_conv2d", out, (x, w, b), vjp)


def transpose_conv2d(x, w, b=None, stride: int = 2) -> Tensor:
    """Transposed convolution with kernel size equal to the stride.

    x: (N, C, H, W); w: (C, O, s, s); output (N, O, s*H, s*W). Output taps do
    not overlap, so every output pixel sees exactly one input pixel.
    """
    x, w = _t(x), _t(w)
    n, c, h, wd_ = x.shape
    s = stride
    if w.ndim != 4 or w.shape[0] != c or w.shape[2:] != (s, s):
        raise ShapeError(f"transpose_conv2d: bad weight shape {w.shape}")
    o = w.shape[1]
    b = _t(np.zeros(o) if b is None else b)
    xd, wd = x.data, w.data
    out = np.einsum("ncyx,cokl->noykxl", xd, wd, optimize=True).reshape(n, o, h * s, wd_ * s)
    out = out + b.data[None, :, None, None]

    def vjp(g):
        g6 = g.reshape(n, o, h, s, wd_, s)
        gx = np.einsum("noykxl,cokl->ncyx", g6, wd, optimize=True)
        gw = np.einsum("noykxl,ncyx->cokl", g6, xd, optimize=True)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make("transpose_conv2d", out, (x, w, b), vjp)
