"""im2col / col2im for 3D convolution, with numba and numpy implementations.

Column layout: ``cols[(c*k + i)*k*k + j*k + l, b*P + (x*Y + y)*Z + z]`` holds
``xp[b, c, x*s + i, y*s + j, z*s + l]``. Both backends add contributions in
the same order, so their outputs are bit-identical.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import _accel


def out_size(n, k, stride):
    return (n - k) // stride + 1


@_accel.njit
def _im2col_nb(xp, k, s, cols):
    B, C, X, Y, Z = xp.shape
    OX = (X - k) // s + 1
    OY = (Y - k) // s + 1
    OZ = (Z - k) // s + 1
    for b in range(B):
        for c in range(C):
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        row = (c * k + i) * k * k + j * k + l
                        for ox in range(OX):
                            for oy in range(OY):
                                base = b * OX * OY * OZ + (ox * OY + oy) * OZ
                                for oz in range(OZ):
                                    cols[row, base + oz] = xp[b, c, ox * s + i, oy * s + j, oz * s + l]


@_accel.njit
def _col2im_nb(cols, k, s, dxp):
    B, C, X, Y, Z = dxp.shape
    OX = (X - k) // s + 1
    OY = (Y - k) // s + 1
    OZ = (Z - k) // s + 1
    for b in range(B):
        for c in range(C):
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        row = (c * k + i) * k * k + j * k + l
                        for ox in range(OX):
                            for oy in range(OY):
                                base = b * OX * OY * OZ + (ox * OY + oy) * OZ
                                for oz in range(OZ):
                                    dxp[b, c, ox * s + i, oy * s + j, oz * s + l] += cols[row, base + oz]


def _im2col_np(xp, k, s, cols):
    B, C = xp.shape[:2]
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))[:, :, ::s, ::s, ::s]
    # (B, C, OX, OY, OZ, k, k, k) -> (C, k, k, k, B, OX, OY, OZ)
    win = win.transpose(1, 5, 6, 7, 0, 2, 3, 4)
    cols[...] = win.reshape(C * k ** 3, -1)


def _col2im_np(cols, k, s, dxp):
    B, C, X, Y, Z = dxp.shape
    OX, OY, OZ = out_size(X, k, s), out_size(Y, k, s), out_size(Z, k, s)
    c8 = cols.reshape(C, k, k, k, B, OX, OY, OZ)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                dxp[:, :, i:i + s * (OX - 1) + 1:s, j:j + s * (OY - 1) + 1:s, l:l + s * (OZ - 1) + 1:s] += \
                    c8[:, i, j, l].transpose(1, 0, 2, 3, 4)


def im2col(xp, k, s, backend=None):
    B, C, X, Y, Z = xp.shape
    P = out_size(X, k, s) * out_size(Y, k, s) * out_size(Z, k, s)
    cols = np.empty((C * k ** 3, B * P))
    backend = backend or _accel.backend_name()
    if backend == "numba":
        _im2col_nb(np.ascontiguousarray(xp), k, s, cols)
    else:
        _im2col_np(xp, k, s, cols)
    return cols


def col2im(cols, shape, k, s, backend=None):
    dxp = np.zeros(shape)
    backend = backend or _accel.backend_name()
    if backend == "numba":
        _col2im_nb(np.ascontiguousarray(cols), k, s, dxp)
    else:
        _col2im_np(cols, k, s, dxp)
    return dxp
