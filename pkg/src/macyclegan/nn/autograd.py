"""Tape-based reverse-mode automatic differentiation over numpy arrays."""
import threading

import numpy as np

from ..errors import NotScalarLoss

_state = threading.local()


def _tapes():
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def current_tape():
    stack = _tapes()
    return stack[-1] if stack else None


class Tensor:
    """An array plus an optional gradient buffer.

    Leaves created with ``requires_grad=True`` (parameters) receive ``.grad``
    during :meth:`Tape.backward`; intermediate gradients are not retained.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __truediv__(self, c):
        from . import functional as F
        return F.mul(self, 1.0 / c)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Record:
    __slots__ = ("op", "output", "inputs", "backward")

    def __init__(self, op, output, inputs, backward):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records differentiable operations executed inside ``with tape:``."""

    def __init__(self):
        self.records = []
        self.visited = 0

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().pop()
        return False

    def record(self, op, output, inputs, backward):
        self.records.append(Record(op, output, inputs, backward))
        output.requires_grad = True

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
        if loss.data.size != 1:
            raise NotScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
        produced = {id(r.output) for r in self.records}
        grads = {id(loss): np.ones_like(loss.data)}
        self.visited = 0
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            self.visited += 1
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if id(t) in produced:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
                else:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
        return self


def make(op, data, inputs, backward):
    """Wrap an op result, recording it when a tape is active and some input needs grad."""
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        tape.record(op, out, inputs, backward)
    return out


def backward(tape, loss):
    return tape.backward(loss)
