"""Parameters, modules and the handful of layers the models are built from."""
import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """A named leaf tensor. ``trainable`` decides whether it is tracked."""

    __slots__ = ()

    def __init__(self, data, name=None, trainable=True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype, name=name)

    @property
    def trainable(self):
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.requires_grad = bool(flag)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Module:
    """Walks its attributes (in assignment order) to enumerate parameters."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, ModuleList):
                yield from value.named_parameters(prefix + key)
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix=""):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    """Indexed children named ``<attr><i>``, numbered from ``start``."""

    def __init__(self, modules, start=1):
        self.items = list(modules)
        self.start = start

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self.items):
            if m is not None:
                yield from m.named_parameters(f"{prefix}{i + self.start}.")


class Init:
    """Weight initialization source. ``rng=None`` gives all-zero, shape-only tensors."""

    def __init__(self, rng=None, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)

    @property
    def materialized(self):
        return self.rng is not None

    def zeros(self, *shape):
        return Parameter(np.zeros(shape, dtype=self.dtype))

    def ones(self, *shape):
        if self.rng is None:
            return self.zeros(*shape)
        return Parameter(np.ones(shape, dtype=self.dtype))

    def xavier(self, fan_in, fan_out, shape=None):
        shape = shape or (fan_in, fan_out)
        if self.rng is None:
            return self.zeros(*shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return Parameter(self.rng.uniform(-bound, bound, size=shape).astype(self.dtype))

    def normal(self, std, *shape):
        if self.rng is None:
            return self.zeros(*shape)
        return Parameter((self.rng.standard_normal(shape) * std).astype(self.dtype))


class Linear(Module):
    def __init__(self, init, d_in, d_out, bias=True, zero=False):
        self.weight = init.zeros(d_in, d_out) if zero else init.xavier(d_in, d_out)
        if bias:
            self.bias = init.zeros(d_out)
        else:
            self.bias = None

    def __call__(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, init, d, eps=1e-5):
        self.gamma = init.ones(d)
        self.beta = init.zeros(d)
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv1d(Module):
    """Valid 1-D convolution over ``[B, L, C_in]`` with weight ``[kernel, C_in, C_out]``."""

    def __init__(self, init, c_in, c_out, kernel, stride=1, dilation=1):
        self.kernel, self.stride, self.dilation = kernel, stride, dilation
        self.weight = init.xavier(kernel * c_in, c_out, shape=(kernel, c_in, c_out))
        self.bias = init.zeros(c_out)

    def __call__(self, x):
        cols = ag.unfold1d(x, self.kernel, self.stride, self.dilation)
        k, c_in, c_out = self.weight.shape
        return cols @ self.weight.reshape(k * c_in, c_out) + self.bias

    def out_length(self, length):
        return (length - self.dilation * (self.kernel - 1) - 1) // self.stride + 1
