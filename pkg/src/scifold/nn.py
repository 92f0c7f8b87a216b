"""Parameterized layers built on the autodiff tensors.

A Module is a tree of child modules and named parameter tensors; parameter
paths are dotted (e.g. "stage1.enc2.conv_branch.down.weight") and iteration
is sorted by path so checkpoints and optimizer state are deterministic.
Weights initialize uniformly in +/- sqrt(1/fan_in); biases start at zero.
"""

from __future__ import annotations

from typing import Iterator, NamedTuple

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


class Parameter(NamedTuple):
    name: str
    tensor: Tensor


def _uniform_init(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Module:
    def __init__(self):
        self._children: dict[str, Module] = {}
        self._local_params: dict[str, Tensor] = {}

    def add_child(self, name, child):
        self._children[name] = child
        return child

    def add_param(self, name, tensor):
        self._local_params[name] = tensor
        return tensor

    def named_parameters(self) -> list[Parameter]:
        out = []
        self._collect("", out)
        out.sort(key=lambda p: p.name)
        return out

    def _collect(self, prefix, out):
        for name, t in self._local_params.items():
            out.append(Parameter(prefix + name, t))
        for name, child in self._children.items():
            child._collect(prefix + name + ".", out)

    def parameters(self) -> Iterator[Tensor]:
        for p in self.named_parameters():
            yield p.tensor

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()

    def num_parameters(self):
        return sum(t.size for t in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    """k x k convolution layer with stride, zero padding and channel groups."""

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0,
                 groups=1, rng=None, dtype=np.float32):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"Conv2d: channels ({in_channels}->{out_channels}) must divide groups={groups}"
            )
        rng = rng or np.random.default_rng()
        fan_in = (in_channels // groups) * kernel * kernel
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = self.add_param(
            "weight",
            _uniform_init(rng, (out_channels, in_channels // groups, kernel, kernel), fan_in, dtype),
        )
        self.bias = self.add_param(
            "bias", Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        )

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)


class PointwiseConv(Module):
    """1x1 convolution: per-pixel linear map across channels."""

    def __init__(self, in_channels, out_channels, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.weight = self.add_param(
            "weight", _uniform_init(rng, (out_channels, in_channels), in_channels, dtype)
        )
        self.bias = self.add_param(
            "bias", Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        )

    def forward(self, x):
        return T.conv1x1(x, self.weight, self.bias)


class ChannelAttention(Module):
    """SE-style gate: pooled statistics -> squeeze/excite 1x1 pair -> sigmoid."""

    def __init__(self, channels, reduction=4, rng=None, dtype=np.float32):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.squeeze = self.add_child("squeeze", PointwiseConv(channels, hidden, rng, dtype))
        self.excite = self.add_child("excite", PointwiseConv(hidden, channels, rng, dtype))

    def gate(self, x):
        s = T.global_avg_pool(x)
        return T.sigmoid(self.excite(T.leaky_relu(self.squeeze(s))))

    def forward(self, x):
        return T.mul(x, self.gate(x))
