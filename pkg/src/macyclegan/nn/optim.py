"""Adam, reduce-on-plateau and critic weight clipping."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place. Parameters with no gradient
    (``None``) are skipped; their moments are left untouched."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[i] = m
        state.v[i] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = value

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class PlateauSchedule:
    lr: float = 1e-4
    patience: int = 3
    factor: float = 0.5
    min_delta: float = 1e-4
    best_loss: float = float("inf")
    epochs_since_improvement: int = 0


def plateau_step(schedule, epoch_loss):
    """Record an epoch loss; multiply the rate by ``factor`` once ``patience``
    epochs pass without an improvement larger than ``min_delta``."""
    if not np.isfinite(epoch_loss):
        raise ValueError("epoch loss must be finite")
    if epoch_loss < schedule.best_loss - schedule.min_delta:
        schedule.best_loss = epoch_loss
        schedule.epochs_since_improvement = 0
    else:
        schedule.epochs_since_improvement += 1
        if schedule.epochs_since_improvement >= schedule.patience:
            schedule.lr *= schedule.factor
            schedule.epochs_since_improvement = 0
    return schedule.lr


def clip_weights(params, c):
    if c <= 0:
        raise ValueError("clip bound must be positive")
    for p in params:
        np.clip(p.data, -c, c, out=p.data)
    return params
