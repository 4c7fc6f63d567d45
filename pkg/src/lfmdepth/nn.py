"""Parameter containers and the handful of layers the models need."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Module:
    """Attribute-registered parameter tree; names follow attribute paths."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Conv2d(Module):
    def __init__(self, rng, cin: int, cout: int, k: int = 3, stride: int = 1, dtype=np.float32,
                 zero: bool = False):
        fan_in = cin * k * k
        self.weight = _uniform(rng, (cout, cin, k, k), fan_in, dtype)
        self.bias = _uniform(rng, (cout,), fan_in, dtype)
        if zero:  # draws still consumed so later layers keep their init
            self.weight.data[...] = 0
            self.bias.data[...] = 0
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


class DepthwiseConv2d(Module):
    def __init__(self, rng, channels: int, k: int = 7, dtype=np.float32):
        self.weight = _uniform(rng, (channels, k, k), k * k, dtype)
        self.bias = _uniform(rng, (channels,), k * k, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.depthwise_conv2d(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, rng, cin: int, cout: int, dtype=np.float32):
        self.weight = _uniform(rng, (cout, cin), cin, dtype)
        self.bias = _uniform(rng, (cout,), cin, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class SelfAttention(Module):
    def __init__(self, rng, channels: int, heads: int = 4, dtype=np.float32):
        self.heads = heads
        self.q = Linear(rng, channels, channels, dtype)
        self.k = Linear(rng, channels, channels, dtype)
        self.v = Linear(rng, channels, channels, dtype)
        self.out = Linear(rng, channels, channels, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.self_attention(x, self.q.weight, self.q.bias, self.k.weight, self.k.bias,
                                self.v.weight, self.v.bias, self.out.weight, self.out.bias,
                                heads=self.heads)
