"""Parameter containers and the layers the model is assembled from."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Registers parameters and submodules in attribute order, like ``torch.nn.Module``."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((name, p.data) for name, p in self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        for name, p in own.items():
            if name in state and np.shape(state[name]) != p.shape:
                raise ValueError(
                    f"shape mismatch for tensor '{name}': checkpoint has {np.shape(state[name])}, "
                    f"model expects {p.shape}"
                )
        missing = [k for k in own if k not in state]
        unexpected = [k for k in state if k not in own]
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            p.data = np.asarray(state[name]).astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def parameter(array: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(array, dtype=dtype), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape), dtype)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
        bias: bool = True,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ValueError(
                f"channels ({in_channels}->{out_channels}) must be divisible by groups ({groups})"
            )
        rng = rng or np.random.default_rng()
        fan_in = in_channels // groups * kernel_size * kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = kaiming_uniform(
            rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in, dtype
        )
        self.bias = parameter(np.zeros(out_channels), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, eps: float = 1e-5, zero_init: bool = False, dtype=np.float32):
        super().__init__()
        if channels % groups:
            raise ValueError(f"channels ({channels}) not divisible by norm groups ({groups})")
        self.groups = groups
        self.eps = eps
        self.weight = parameter(np.zeros(channels) if zero_init else np.ones(channels), dtype)
        self.bias = parameter(np.zeros(channels), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.group_norm(x, self.groups, self.weight, self.bias, self.eps)


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        bias: bool = True,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
        scale: float = 1.0,
    ):
        super().__init__()
        rng = rng or np.random.default_rng()
        bound = scale / np.sqrt(in_features)
        self.weight = parameter(rng.uniform(-bound, bound, size=(out_features, in_features)), dtype)
        self.bias = parameter(np.zeros(out_features), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng()
        self.weight = parameter(rng.normal(0.0, 1.0, size=(num, dim)), dtype)

    def forward(self, indices) -> Tensor:
        return F.embedding(indices, self.weight)


class GRUCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng()
        bound = 1.0 / np.sqrt(hidden_size)
        self.hidden_size = hidden_size
        self.weight_ih = parameter(rng.uniform(-bound, bound, size=(3 * hidden_size, input_size)), dtype)
        self.weight_hh = parameter(rng.uniform(-bound, bound, size=(3 * hidden_size, hidden_size)), dtype)
        self.bias_ih = parameter(rng.uniform(-bound, bound, size=3 * hidden_size), dtype)
        self.bias_hh = parameter(rng.uniform(-bound, bound, size=3 * hidden_size), dtype)

    def forward(self, x: Tensor, h: Tensor) -> Tensor:
        return F.gru_cell(x, h, self.weight_ih, self.weight_hh, self.bias_ih, self.bias_hh)
