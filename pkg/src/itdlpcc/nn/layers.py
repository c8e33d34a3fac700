"""Parameterized layers on top of the autograd ops."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Container of named parameters and sub-modules (attribute order)."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float32)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, rng=None):
        if k not in (1, 3, 5):
            raise ValueError(f"kernel size must be 1, 3 or 5, got {k}")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.weight = ag.parameter(he_normal(rng, (c_out, c_in, k, k, k), c_in * k**3))
        self.bias = ag.parameter(np.zeros(c_out))

    def forward(self, x):
        return ag.conv3d(x, self.weight, self.bias, self.stride)


class ConvTranspose3d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 2, rng=None):
        if k not in (1, 3, 5):
            raise ValueError(f"kernel size must be 1, 3 or 5, got {k}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        # each output voxel receives about c_in * (k / stride)**3 taps
        fan = max(1, int(round(c_in * k**3 / stride**3)))
        self.weight = ag.parameter(he_normal(rng, (c_in, c_out, k, k, k), fan))
        self.bias = ag.parameter(np.zeros(c_out))

    def forward(self, x):
        return ag.conv_transpose3d(x, self.weight, self.bias, self.stride)


class IRB(Module):
    """Inception-residual block: parallel k-branches, concatenated, fused by 1x1, plus skip.

    Each branch maps C to max(1, C // 4) channels followed by ReLU; the fused
    result is added to the input with no activation after the sum.
    """

    def __init__(self, channels: int, kernels=(1, 3, 5), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        width = max(1, channels // 4)
        self.branches = [Conv3d(channels, width, k, rng=rng) for k in kernels]
        self.fuse = Conv3d(width * len(kernels), channels, 1, rng=rng)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(f"IRB expects {self.channels} channels, got {x.shape[1]}")
        mid = ag.concat([ag.relu(b(x)) for b in self.branches], axis=1)
        return ag.add(x, self.fuse(mid))
