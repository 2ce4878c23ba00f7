"""Parameter containers and small layers on top of :mod:`ranklsd.tensor`."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .. import tensor as T
from ..tensor import Tensor


class Module:
    """Minimal parameter tree: attributes that are Tensors or Modules are registered."""

    def named_parameters(self, prefix: str = ""):
        for name, val in self.__dict__.items():
            if name.startswith("_"):
                continue
            key = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self.named_parameters())


def param(arr: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, zero: bool = False):
        self.weight = param(np.zeros((d_in, d_out)) if zero else _uniform(rng, d_in, (d_in, d_out)))
        self.bias = param(np.zeros(d_out) if zero else _uniform(rng, d_in, (d_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.bias_add(T.matmul(x, self.weight), self.bias)


class Conv2d(Module):
    # edge padding keeps constant inputs constant, so rotation branches agree on them
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1, zero: bool = False):
        fan_in = c_in * k * k
        shape = (c_out, c_in, k, k)
        self.weight = param(np.zeros(shape) if zero else _uniform(rng, fan_in, shape))
        self.bias = param(np.zeros(c_out) if zero else _uniform(rng, fan_in, (c_out,)))
        self._stride = stride
        self._padding = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self._stride, padding=self._padding,
                        pad_mode="edge")


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)
