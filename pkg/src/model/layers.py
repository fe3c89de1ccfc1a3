"""
Parameterised building blocks: module base class, convolution, linear and
residual blocks.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from src.errors import DimensionError
from src.ndarr import ops
from src.ndarr.rng import RngStream
from src.ndarr.tensor import Tensor


class Module:
    """Parameters are Tensor attributes with requires_grad; children are
    Module attributes or lists of Modules. Names follow attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, list) and value and all(isinstance(v, Module) for v in value):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise DimensionError(
                f"state dict mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(unexpected)[:3]}"
            )
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = value.astype(p.data.dtype).copy()


def count_parameters(module: Module) -> int:
    return sum(p.size for p in module.parameters())


def parameter(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


class Conv2d(Module):
    """k×k convolution, He-normal weights, zero bias, 'same' padding by default."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: RngStream,
        kernel_size: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
    ):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape=(out_channels, in_channels, kernel_size, kernel_size)))
        self.bias = parameter(np.zeros(out_channels))
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    """Xavier-uniform weights stored as [in, out], zero bias."""

    def __init__(self, in_features: int, out_features: int, rng: RngStream):
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = parameter(rng.uniform(-limit, limit, shape=(in_features, out_features)))
        self.bias = parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class ResBlock(Module):
    """relu(x + conv(relu(conv(x)))); no normalisation layers."""

    def __init__(self, channels: int, rng: RngStream):
        self.conv1 = Conv2d(channels, channels, rng.child("conv1"))
        self.conv2 = Conv2d(channels, channels, rng.child("conv2"))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(x + self.conv2(ops.relu(self.conv1(x))))
