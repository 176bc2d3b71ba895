"""Central finite-difference gradient checking."""
from dataclasses import dataclass

import numpy as np

from .autograd import Tape

# gradients smaller than this are compared in absolute terms
GRAD_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    worst_rel_error: float
    n_coords: int
    tol: float
    n_nonsmooth: int = 0

    @property
    def passed(self):
        return self.worst_rel_error <= self.tol and self.n_coords > 0


def rel_error(analytic, numeric, floor=GRAD_FLOOR):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(name, loss_fn, tensors, n_coords=200, h=1e-5, tol=1e-4, rng=None, max_nonsmooth=None):
    """Compare tape gradients of ``loss_fn()`` w.r.t. ``tensors`` against
    central differences at ``n_coords`` coordinates spread over all tensors.

    ``loss_fn`` takes no arguments and must return a scalar Tensor built from
    the (mutable) ``tensors``.

    Each coordinate is differenced with steps ``h`` and ``h / 2``. Where the
    loss is smooth the two estimates agree to O(h^2); when they do not, a kink
    (relu, abs, clipping) lies within the step and the coordinate is replaced
    by a fresh one. The analytic gradient plays no part in that decision.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    max_nonsmooth = n_coords if max_nonsmooth is None else max_nonsmooth
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    sizes = np.array([t.data.size for t in tensors])
    total = int(sizes.sum())
    order = rng.permutation(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def central(t, idx, orig, step):
        t.data[idx] = orig + step
        fp = loss_fn().item()
        t.data[idx] = orig - step
        fm = loss_fn().item()
        t.data[idx] = orig
        return (fp - fm) / (2.0 * step)

    worst, checked, nonsmooth = 0.0, 0, 0
    for flat in order:
        if checked >= n_coords or nonsmooth > max_nonsmooth:
            break
        ti = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[ti]), tensors[ti].data.shape)
        t = tensors[ti]
        orig = t.data[idx]
        coarse = central(t, idx, orig, h)
        fine = central(t, idx, orig, h / 2)
        if rel_error(coarse, fine) > tol:
            nonsmooth += 1
            continue
        worst = max(worst, rel_error(float(grads[ti][idx]), fine))
        checked += 1
    if checked < min(n_coords, total - nonsmooth):
        worst = float("inf")
    return CheckResult(name, worst, checked, tol, nonsmooth)
