"""Symmetric 3x3 linear algebra and Log-Euclidean maps on SPD(3).

Symmetric matrices are stored as arrays whose last axis holds the six unique
components in the order ``(m11, m22, m33, m12, m13, m23)``. Every function
here accepts a single matrix of shape ``(6,)`` or any batch ``(..., 6)``.
"""
from typing import NamedTuple

import numpy as np

from . import _accel
from .errors import NonFinite, NotClampablePD, Overflow

# (row, col) of each stored component
SIX_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
OFFDIAG_WEIGHT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])

CLAMP_FLOOR = 1e-6
CLAMP_TOL = 1e-4
EXP_MAX = 700.0

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50


class EigDecomp3(NamedTuple):
    eigenvalues: np.ndarray  # (..., 3), descending
    eigenvectors: np.ndarray  # (..., 3, 3), column i pairs with eigenvalue i


def _check_finite(a, what="input"):
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{what} contains NaN or Inf")


def to_matrix(six):
    """Expand ``(..., 6)`` storage into full ``(..., 3, 3)`` matrices."""
    six = np.asarray(six, dtype=np.float64)
    m = np.empty(six.shape[:-1] + (3, 3))
    m[..., 0, 0] = six[..., 0]
    m[..., 1, 1] = six[..., 1]
    m[..., 2, 2] = six[..., 2]
    m[..., 0, 1] = m[..., 1, 0] = six[..., 3]
    m[..., 0, 2] = m[..., 2, 0] = six[..., 4]
    m[..., 1, 2] = m[..., 2, 1] = six[..., 5]
    return m


def from_matrix(m):
    """Pack the upper triangle of ``(..., 3, 3)`` matrices (assumed symmetric)."""
    m = np.asarray(m, dtype=np.float64)
    return np.stack([m[..., i, j] for i, j in SIX_INDEX], axis=-1)


def symmetrize(y):
    """Closest symmetric matrix ``(Y + Y^T) / 2`` in packed form."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3), got {y.shape}")
    _check_finite(y)
    return from_matrix(0.5 * (y + np.swapaxes(y, -1, -2)))


def frob_norm(six):
    """Frobenius norm of the full matrix; off-diagonals count twice."""
    six = np.asarray(six, dtype=np.float64)
    return np.sqrt(np.sum(OFFDIAG_WEIGHT * six * six, axis=-1))


def identity(shape=()):
    out = np.zeros(tuple(shape) + (6,))
    out[..., :3] = 1.0
    return out


# ---------------------------------------------------------------------------
# Jacobi eigensolver kernels. Both backends run the same arithmetic in the
# same order, so they agree bit for bit.


@_accel.njit
def _jacobi_kernel(six, w_out, v_out, tol, max_sweeps):
    n = six.shape[0]
    for b in range(n):
        a = np.empty((3, 3))
        a[0, 0] = six[b, 0]
        a[1, 1] = six[b, 1]
        a[2, 2] = six[b, 2]
        a[0, 1] = six[b, 3]
        a[1, 0] = six[b, 3]
        a[0, 2] = six[b, 4]
        a[2, 0] = six[b, 4]
        a[1, 2] = six[b, 5]
        a[2, 1] = six[b, 5]
        v = np.zeros((3, 3))
        v[0, 0] = 1.0
        v[1, 1] = 1.0
        v[2, 2] = 1.0
        scale = np.sqrt(a[0, 0] * a[0, 0] + a[1, 1] * a[1, 1] + a[2, 2] * a[2, 2]
                        + 2.0 * (a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]))
        thresh = tol * scale
        for _sweep in range(max_sweeps):
            off = np.sqrt(2.0 * (a[0, 1] * a[0, 1] + a[0, 2] * a[0, 2] + a[1, 2] * a[1, 2]))
            if off <= thresh:
                break
            for pair in range(3):
                if pair == 0:
                    p, q, r = 0, 1, 2
                elif pair == 1:
                    p, q, r = 0, 2, 1
                else:
                    p, q, r = 1, 2, 0
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                at = abs(theta)
                if at > 1e150:
                    t = sgn * (0.5 / at)
                else:
                    t = sgn / (at + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                a[p, p] = a[p, p] - t * apq
                a[q, q] = a[q, q] + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                arp = a[r, p]
                arq = a[r, q]
                nrp = c * arp - s * arq
                nrq = s * arp + c * arq
                a[r, p] = nrp
                a[p, r] = nrp
                a[r, q] = nrq
                a[q, r] = nrq
                for k in range(3):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        w_out[b, 0] = a[0, 0]
        w_out[b, 1] = a[1, 1]
        w_out[b, 2] = a[2, 2]
        for i in range(3):
            for j in range(3):
                v_out[b, i, j] = v[i, j]


_PAIRS = ((0, 1, 2), (0, 2, 1), (1, 2, 0))


def _jacobi_numpy(six, w_out, v_out, tol, max_sweeps):
    n = six.shape[0]
    a = to_matrix(six)
    v = np.zeros((n, 3, 3))
    v[:, 0, 0] = v[:, 1, 1] = v[:, 2, 2] = 1.0
    d = a[:, [0, 1, 2], [0, 1, 2]]
    o = a[:, [0, 0, 1], [1, 2, 2]]
    scale = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
                    + 2.0 * (o[:, 0] * o[:, 0] + o[:, 1] * o[:, 1] + o[:, 2] * o[:, 2]))
    thresh = tol * scale
    active = np.ones(n, dtype=bool)
    for _sweep in range(max_sweeps):
        off = np.sqrt(2.0 * (a[:, 0, 1] * a[:, 0, 1] + a[:, 0, 2] * a[:, 0, 2] + a[:, 1, 2] * a[:, 1, 2]))
        active &= ~(off <= thresh)
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        for p, q, r in _PAIRS:
            apq = a[idx, p, q]
            go = apq != 0.0
            sub = idx[go]
            if sub.size == 0:
                continue
            apq = apq[go]
            app = a[sub, p, p]
            aqq = a[sub, q, q]
            with np.errstate(over="ignore", divide="ignore"):
                # a subnormal apq can overflow theta to inf; t then becomes 0
                theta = (aqq - app) / (2.0 * apq)
                sgn = np.where(theta >= 0.0, 1.0, -1.0)
                at = np.abs(theta)
                t = np.where(at > 1e150, sgn * (0.5 / at), sgn / (at + np.sqrt(theta * theta + 1.0)))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            a[sub, p, p] = app - t * apq
            a[sub, q, q] = aqq + t * apq
            a[sub, p, q] = 0.0
            a[sub, q, p] = 0.0
            arp = a[sub, r, p]
            arq = a[sub, r, q]
            nrp = c * arp - s * arq
            nrq = s * arp + c * arq
            a[sub, r, p] = nrp
            a[sub, p, r] = nrp
            a[sub, r, q] = nrq
            a[sub, q, r] = nrq
            vkp = v[sub, :, p]
            vkq = v[sub, :, q]
            v[sub, :, p] = c[:, None] * vkp - s[:, None] * vkq
            v[sub, :, q] = s[:, None] * vkp + c[:, None] * vkq
    w_out[:] = a[:, [0, 1, 2], [0, 1, 2]]
    v_out[:] = v


def _canonical_order(w, v):
    """Sort eigenpairs descending and fix eigenvector signs.

    Each column is flipped so its first component with magnitude above 1e-12
    is positive. Exactly tied eigenvalues are ordered by their (canonical)
    eigenvectors, lexicographically ascending.
    """
    first = np.argmax(np.abs(v) > 1e-12, axis=-2)  # (N, 3)
    lead = np.take_along_axis(v, first[:, None, :], axis=-2)[:, 0, :]
    v = v * np.where(lead < 0.0, -1.0, 1.0)[:, None, :]

    def before(i, j):
        # column i should come before column j
        wi, wj = w[:, i], w[:, j]
        res = wi > wj
        tie = wi == wj
        undecided = tie.copy()
        for k in range(3):
            vi, vj = v[:, k, i], v[:, k, j]
            res = np.where(undecided & (vi < vj), True, res)
            undecided &= vi == vj
        return res | (tie & undecided)

    for i, j in ((0, 1), (1, 2), (0, 1)):
        swap = ~before(i, j)
        if swap.any():
            wi = w[swap, i].copy()
            w[swap, i] = w[swap, j]
            w[swap, j] = wi
            vi = v[swap, :, i].copy()
            v[swap, :, i] = v[swap, :, j]
            v[swap, :, j] = vi
    return w, v


def eig_sym3(m, backend=None):
    """Eigendecomposition of packed symmetric matrices by cyclic Jacobi sweeps.

    Returns eigenvalues sorted in descending order with matching orthonormal
    eigenvector columns. ``backend`` may force ``"numba"`` or ``"numpy"``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-1] != 6:
        raise ValueError(f"expected packed (..., 6) input, got {m.shape}")
    _check_finite(m)
    lead = m.shape[:-1]
    flat = np.ascontiguousarray(m.reshape(-1, 6))
    n = flat.shape[0]
    w = np.empty((n, 3))
    v = np.empty((n, 3, 3))
    if backend is None:
        backend = _accel.backend_name()
    if n:
        if backend == "numba":
            _jacobi_kernel(flat, w, v, JACOBI_TOL, JACOBI_MAX_SWEEPS)
        else:
            _jacobi_numpy(flat, w, v, JACOBI_TOL, JACOBI_MAX_SWEEPS)
        w, v = _canonical_order(w, v)
    return EigDecomp3(w.reshape(lead + (3,)), v.reshape(lead + (3, 3)))


def compose(eigenvalues, eigenvectors):
    """Packed ``V diag(w) V^T``."""
    w = eigenvalues
    v = eigenvectors
    out = np.empty(w.shape[:-1] + (6,))
    for c, (i, j) in enumerate(SIX_INDEX):
        out[..., c] = np.sum(v[..., i, :] * w * v[..., j, :], axis=-1)
    return out


def clamp_eigenvalues(w, floor=CLAMP_FLOOR, tol=CLAMP_TOL):
    if np.any(w < -tol):
        raise NotClampablePD(f"eigenvalue {float(np.min(w)):.6g} below -{tol:g}; not a valid tensor")
    return np.maximum(w, floor)


def log_id(p, floor=CLAMP_FLOOR, tol=CLAMP_TOL):
    """Matrix logarithm: map SPD tensors to the tangent plane at identity."""
    w, v = eig_sym3(p)
    return compose(np.log(clamp_eigenvalues(w, floor, tol)), v)


def exp_id(s):
    """Matrix exponential: map tangent vectors at identity onto SPD(3).

    Eigenvalues below ``-EXP_MAX`` are raised to it so the result stays
    strictly positive definite in float64.
    """
    w, v = eig_sym3(s)
    if np.any(w > EXP_MAX):
        raise Overflow(f"eigenvalue {float(np.max(w)):.6g} exceeds {EXP_MAX:g}; exp would overflow")
    return compose(np.exp(np.maximum(w, -EXP_MAX)), v)


def project_spd(p, floor=CLAMP_FLOOR):
    """Nearest-in-spectrum SPD tensor: clamp every eigenvalue at ``floor``."""
    w, v = eig_sym3(p)
    return compose(np.maximum(w, floor), v)


def le_dist(p1, p2):
    """Log-Euclidean distance ``||log(P1) - log(P2)||_F``."""
    return frob_norm(log_id(p1) - log_id(p2))


def min_eigenvalue(m):
    return eig_sym3(m).eigenvalues[..., -1]


def is_spd(m):
    return min_eigenvalue(m) > 0.0
