"""Parameter containers: a tiny ``Module`` protocol and the standard layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .rng import Rng
from .tensor import Tensor


class Module:
    """Collects ``Tensor`` parameters and child modules from instance attributes.

    Attribute names become dotted parameter paths; lists and dicts of modules
    are walked too, using their index or key.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if strict and missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for k, v in state.items():
            if k not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {k}")
                continue
            if own[k].shape != tuple(v.shape):
                raise ValueError(f"{k}: shape {tuple(v.shape)} != {own[k].shape}")
            own[k].data = np.array(v, dtype=np.float64)

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag


def _walk(value, path: str):
    if isinstance(value, Tensor):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{path}.{i}")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{path}.{k}")


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: Rng, bias: bool = True, zero: bool = False):
        bound = 1.0 / math.sqrt(n_in)
        w = np.zeros((n_out, n_in)) if zero else rng.uniform((n_out, n_in), -bound, bound)
        self.weight = param(w)
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int,
        rng: Rng,
        stride: int = 1,
        zero: bool = False,
    ):
        fan_in = c_in * k * k
        bound = 1.0 / math.sqrt(fan_in)
        w = np.zeros((c_out, c_in, k, k)) if zero else rng.uniform((c_out, c_in, k, k), -bound, bound)
        self.weight = param(w)
        self.bias = param(np.zeros(c_out))
        self._stride = stride
        self._pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self._stride, padding=self._pad)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int):
        self.weight = param(np.ones(channels))
        self.bias = param(np.zeros(channels))
        self._groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self._groups, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: Rng, scale: float = 0.02):
        self.weight = param(rng.normal((n, dim), scale))

    def __call__(self, ids) -> Tensor:
        return ops.embedding(self.weight, ids)


def num_groups(channels: int, preferred: int = 8) -> int:
    g = min(preferred, channels)
    while channels % g:
        g -= 1
    return g
