"""Parameter containers for the network building blocks."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Owns named parameters, buffers and sub-modules.

    Attributes holding a :class:`Tensor` are parameters (frozen ones have
    ``requires_grad`` off); numpy arrays registered through :meth:`register_buffer` are
    buffers (running statistics).  ``forward`` does the work.
    """

    training = True

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        buffers = self.__dict__.setdefault("_buffers", [])
        if name not in buffers:
            buffers.append(name)
        object.__setattr__(self, name, value)

    def children(self) -> Iterator[tuple[str, Module]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor):
                        yield f"{prefix}{name}.{i}", item
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.__dict__.get("_buffers", []):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)
        for name, buf in buffers.items():
            buf[...] = state[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def astype(self, dtype) -> Module:
        for _, value in self.named_parameters():
            value.data = value.data.astype(dtype)
        for name in self.__dict__.get("_buffers", []):
            setattr(self, name, getattr(self, name).astype(dtype))
        for _, child in self.children():
            child.astype(dtype)
        return self

    def requires_grad_(self, flag: bool = True) -> Module:
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(arr.astype(dtype), requires_grad=True)


def kaiming(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    return _param(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), dtype)


class Conv3d(Module):
    """3-D convolution layer.

    ``padding=None`` means shape-preserving padding, which only exists for
    odd kernels; even kernels need an explicit padding.
    """

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=None, groups=1, bias=True, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        k = F._triple(kernel)
        if in_ch % groups or out_ch % groups:
            raise ValueError(f"channels {in_ch}->{out_ch} not divisible by groups={groups}")
        if padding is None:
            if any(kk % 2 == 0 for kk in k):
                raise ValueError(f"even kernel {k} needs explicit padding")
            padding = tuple((kk - 1) // 2 for kk in k)
        pad = F._triple(padding)
        fan_in = in_ch // groups * k[0] * k[1] * k[2]
        self.weight = kaiming(rng, (out_ch, in_ch // groups, *k), fan_in, dtype)
        self.bias = _param(np.zeros(out_ch), dtype) if bias else None
        self.stride, self.padding, self.groups = F._triple(stride), pad, groups
        self.in_ch, self.out_ch = in_ch, out_ch

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Norm(Module):
    """Instance or batch normalization with a learned per-channel affine."""

    def __init__(self, channels: int, kind: str = "instance", eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        if kind not in ("instance", "batch"):
            raise ValueError(f"norm kind must be 'instance' or 'batch', got {kind!r}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)
        self.kind, self.eps, self.momentum = kind, eps, momentum
        if kind == "batch":
            self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
            self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "instance":
            return F.instance_norm(x, self.gamma, self.beta, self.eps)
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        self.w = _param(rng.uniform(-bound, bound, (in_features, out_features)), dtype)
        self.b = _param(np.zeros(out_features), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.w, self.b)
