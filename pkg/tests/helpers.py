"""Shared fixtures-as-functions for the test modules."""
import numpy as np

from macyclegan import spd


def random_rotation(rng, n=None):
    shape = (3, 3) if n is None else (n, 3, 3)
    q, r = np.linalg.qr(rng.standard_normal(shape))
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    q = q * d[..., None, :]
    det = np.linalg.det(q)
    q[..., :, 0] *= det[..., None] if n is not None else det
    return q


def random_spd(rng, n, cond=1e4):
    """Packed SPD tensors with log-uniform eigenvalues spanning at most ``cond``."""
    rot = random_rotation(rng, n)
    w = np.exp(rng.uniform(0.0, np.log(cond), (n, 3))) * rng.uniform(0.1, 10.0, (n, 1))
    m = rot @ (w[:, :, None] * np.swapaxes(rot, -1, -2))
    return spd.from_matrix(m)


def axisym_tensor(direction, fa=0.8, md=1.0):
    """Packed axially symmetric tensor with the given principal direction."""
    from macyclegan.phantom import solve_axisym_eigs
    lpar, lperp = solve_axisym_eigs(fa, md)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return spd.from_matrix(lperp * np.eye(3) + (lpar - lperp) * np.outer(d, d))


def offset_pair(dims=(6, 6, 6), degrees=30.0, fa=0.8):
    """Uniform ground truth along x and a copy rotated about z by ``degrees``."""
    from macyclegan.field import TensorField
    a = np.radians(degrees)
    gt = np.broadcast_to(axisym_tensor((1.0, 0.0, 0.0), fa), tuple(dims) + (6,)).copy()
    gen = np.broadcast_to(axisym_tensor((np.cos(a), np.sin(a), 0.0), fa), tuple(dims) + (6,)).copy()
    return TensorField(gen), TensorField(gt)


# acceptance results, printed by the terminal summary hook in conftest.py
ACCEPTANCE = {}
