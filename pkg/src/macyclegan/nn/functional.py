"""Differentiable primitives. Arrays are ``(batch, channels, x, y, z)`` unless noted."""
import numpy as np

from ..errors import OddDimension, ShapeError
from ..field import axis_matrix, resample_array
from . import kernels
from .autograd import Tensor, as_tensor, make

# Names of primitives whose backward is deliberately broken; used only by
# the gradient-check negative control.
CORRUPTED = set()


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def add(a, b):
    a_, b_ = _data(a), _data(b)
    sa, sb = a_.shape, b_.shape
    return make("add", a_ + b_, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a_, b_ = _data(a), _data(b)
    sa, sb = a_.shape, b_.shape
    return make("sub", a_ - b_, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a_, b_ = _data(a), _data(b)
    return make("mul", a_ * b_, (a, b),
                lambda g: (_unbroadcast(g * b_, a_.shape), _unbroadcast(g * a_, b_.shape)))


def sum(x, axis=None):
    x_ = _data(x)
    shape = x_.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make("sum", np.sum(x_, axis=axis), (x,), back)


def mean(x, axis=None):
    x_ = _data(x)
    n = x_.size if axis is None else int(np.prod([x_.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis), 1.0 / n)


def abs(x):
    x_ = _data(x)
    return make("abs", np.abs(x_), (x,), lambda g: (g * np.sign(x_),))


def reshape(x, shape):
    x_ = _data(x)
    old = x_.shape
    return make("reshape", x_.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs, axis=1):
    arrs = [_data(x) for x in xs]
    bounds = np.cumsum([a.shape[axis] for a in arrs])[:-1]
    return make("concat", np.concatenate(arrs, axis=axis), tuple(xs),
                lambda g: tuple(np.split(g, bounds, axis=axis)))


def matmul(a, b):
    a_, b_ = _data(a), _data(b)
    return make("matmul", a_ @ b_, (a, b), lambda g: (g @ b_.T, a_.T @ g))


def leaky_relu(x, slope=0.2):
    x_ = _data(x)
    d = np.where(x_ > 0, 1.0, slope)
    return make("leaky_relu", x_ * d, (x,), lambda g: (g * d,))


def sigmoid(x):
    x_ = _data(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x_))

    def back(g):
        d = y * (1.0 - y)
        if "sigmoid" in CORRUPTED:
            d = d * 1.01
        return (g * d,)

    return make("sigmoid", y, (x,), back)


def hard_tanh(x):
    x_ = _data(x)
    inside = (x_ > -1.0) & (x_ < 1.0)
    return make("hard_tanh", np.clip(x_, -1.0, 1.0), (x,), lambda g: (g * inside,))


def conv3d(x, w, b=None, stride=1, padding=0):
    """3D cross-correlation. ``w`` is ``(out, in, k, k, k)``; ``b`` is ``(out,)``."""
    x_, w_ = _data(x), _data(w)
    if x_.ndim != 5 or w_.ndim != 5:
        raise ShapeError(f"conv3d expects 5-D input and weights, got {x_.shape}, {w_.shape}")
    B, C = x_.shape[:2]
    O, Cw, k = w_.shape[:3]
    if Cw != C:
        raise ShapeError(f"conv3d: input has {C} channels, weights expect {Cw}")
    if w_.shape[2:] != (k, k, k) or k % 2 == 0:
        raise ShapeError(f"conv3d needs an odd cubic kernel, got {w_.shape[2:]}")
    p, s = padding, stride
    xp = np.pad(x_, ((0, 0), (0, 0), (p, p), (p, p), (p, p))) if p else x_
    dims = tuple(kernels.out_size(n, k, s) for n in xp.shape[2:])
    if min(dims) < 1:
        raise ShapeError(f"conv3d: input {x_.shape[2:]} too small for kernel {k}")
    if k == 1 and s == 1:
        cols = xp.transpose(1, 0, 2, 3, 4).reshape(C, -1)
    else:
        cols = kernels.im2col(xp, k, s)
    wm = w_.reshape(O, -1)
    out = wm @ cols  # (O, B*P)
    if b is not None:
        out += _data(b)[:, None]
    out = out.reshape((O, B) + dims).transpose(1, 0, 2, 3, 4).copy()

    def back(g):
        g2 = g.transpose(1, 0, 2, 3, 4).reshape(O, -1)
        gw = (g2 @ cols.T).reshape(w_.shape)
        gb = g2.sum(axis=1) if b is not None else None
        gcols = wm.T @ g2
        if k == 1 and s == 1:
            gxp = gcols.reshape((C, B) + xp.shape[2:]).transpose(1, 0, 2, 3, 4)
        else:
            gxp = kernels.col2im(gcols, xp.shape, k, s)
        gx = gxp[:, :, p:p + x_.shape[2], p:p + x_.shape[3], p:p + x_.shape[4]] if p else gxp
        return np.ascontiguousarray(gx), gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make("conv3d", out, inputs, back)


def _check_even(shape):
    if any(n % 2 for n in shape[2:]):
        raise OddDimension(f"spatial dims must be even, got {shape[2:]}")


def downsample_avg2(x):
    """Mean over 2x2x2 blocks, done as three exact pairwise halvings."""
    x_ = _data(x)
    _check_even(x_.shape)
    y = x_
    for ax in (2, 3, 4):
        sl0 = [slice(None)] * 5
        sl1 = [slice(None)] * 5
        sl0[ax] = slice(0, None, 2)
        sl1[ax] = slice(1, None, 2)
        y = 0.5 * (y[tuple(sl0)] + y[tuple(sl1)])

    def back(g):
        g = g * 0.125
        for ax in (2, 3, 4):
            g = np.repeat(g, 2, axis=ax)
        return (g,)

    return make("downsample_avg2", y, (x,), back)


def upsample_nearest2(x):
    x_ = _data(x)
    y = x_
    for ax in (2, 3, 4):
        y = np.repeat(y, 2, axis=ax)

    def back(g):
        for ax in (2, 3, 4):
            sl0 = [slice(None)] * 5
            sl1 = [slice(None)] * 5
            sl0[ax] = slice(0, None, 2)
            sl1[ax] = slice(1, None, 2)
            g = g[tuple(sl0)] + g[tuple(sl1)]
        return (g,)

    return make("upsample_nearest2", y, (x,), back)


def resample_linear(x, factor):
    """Trilinear resampling over the three spatial axes (voxel-center aligned)."""
    x_ = _data(x)
    y = resample_array(x_, factor, axes=(2, 3, 4))
    mats = [axis_matrix(n, y.shape[ax], factor) for ax, n in zip((2, 3, 4), x_.shape[2:])]

    def back(g):
        for ax, m in zip((2, 3, 4), mats):
            g = np.moveaxis(np.tensordot(m.T, np.moveaxis(g, ax, 0), axes=1), 0, ax)
        return (g,)

    return make("resample_linear", y, (x,), back)


# 9-channel row-major 3x3 -> packed (m11, m22, m33, m12, m13, m23)
_SYM = np.zeros((6, 9))
for _c, (_i, _j) in enumerate(((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))):
    _SYM[_c, 3 * _i + _j] += 0.5
    _SYM[_c, 3 * _j + _i] += 0.5


def symmetrize9(x):
    """Per-voxel ``(Y + Y^T) / 2`` of a 9-channel 3x3 map, packed to 6 channels."""
    x_ = _data(x)
    if x_.shape[1] != 9:
        raise ShapeError(f"symmetrize9 expects 9 channels, got {x_.shape[1]}")
    y = np.einsum("oc,bc...->bo...", _SYM, x_)
    return make("symmetrize9", y, (x,), lambda g: (np.einsum("oc,bo...->bc...", _SYM, g),))


def l1_mean(a, b):
    """Element-count-normalized l1 distance."""
    return mean(abs(sub(a, b)))


__all__ = [
    "add", "sub", "mul", "sum", "mean", "abs", "reshape", "concat", "matmul", "leaky_relu",
    "sigmoid", "hard_tanh", "conv3d", "downsample_avg2", "upsample_nearest2", "resample_linear",
    "symmetrize9", "l1_mean", "as_tensor",
]
