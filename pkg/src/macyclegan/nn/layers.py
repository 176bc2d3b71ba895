"""Parameterized building blocks."""
import numpy as np

from . import functional as F
from .autograd import Tensor


class Module:
    """Holds named parameters and child modules, in registration order."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_param(self, name, data):
        p = Tensor(data, requires_grad=True, name=name)
        self._params[name] = p
        return p

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv3d(Module):
    def __init__(self, cin, cout, k=3, stride=1, padding=None, rng=None, zero=False):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        fan_in = cin * k ** 3
        if zero:
            w = np.zeros((cout, cin, k, k, k))
        else:
            w = he_uniform(rng, (cout, cin, k, k, k), fan_in)
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", np.zeros(cout))

    def forward(self, x):
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, cin, cout, rng=None, zero=False):
        super().__init__()
        w = np.zeros((cin, cout)) if zero else he_uniform(rng, (cin, cout), cin)
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", np.zeros(cout))

    def forward(self, x):
        return F.add(F.matmul(x, self.weight), self.bias)
