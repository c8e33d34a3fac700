"""Learned block up-sampling: a 3D U-net that densifies basic up-sampled blocks.

The network sees a block holding the basic up-sampled points at the original
precision and predicts per-voxel occupancy (plus RGB for 4-channel models).
It adds no rate: the decoder runs it after basic up-sampling.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .codec import blocks_to_array
from .nn import autograd as ag
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import IRB, Conv3d, ConvTranspose3d, Module
from .nn.losses import block_distortion
from .pointcloud import PointCloud, VoxelBlock, partition, render_block
from .sampling import downsample, is_power_of_two, upsample_basic
from .training import MIN_BLOCK_POINTS, TrainConfig, TrainResult, fit

CHECKPOINT_NAME = "abu.ckpt"


@dataclass(frozen=True)
class AbuArch:
    channels: int = 1
    base: int = 16
    stages: int = 3
    width_factor: int = 1
    irb_kernels: tuple = (1, 3)

    def __post_init__(self):
        if self.channels not in (1, 4):
            raise ValueError(f"channels must be 1 or 4, got {self.channels}")
        if self.stages < 1 or self.base < 1 or self.width_factor < 1:
            raise ValueError("stages, base and width_factor must be >= 1")
        kernels = tuple(int(k) for k in self.irb_kernels)
        if any(k > 3 for k in kernels):
            raise ValueError("ABU IRBs use kernels of at most 3")
        object.__setattr__(self, "irb_kernels", kernels)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(max(1, self.base * 2**i // self.width_factor) for i in range(self.stages + 1))

    @property
    def stride(self) -> int:
        return 2**self.stages

    def to_dict(self) -> dict:
        d = asdict(self)
        d["irb_kernels"] = list(self.irb_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AbuArch:
        keys = set(cls.__dataclass_fields__)
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in keys})


class AbuModel(Module):
    """U-net: stride-2 contracting stages, transposed-conv expansion, concatenated skips."""

    def __init__(self, arch: AbuArch | None = None, seed: int = 0):
        self.arch = arch or AbuArch()
        rng = np.random.default_rng(seed)
        w = self.arch.widths
        ks = self.arch.irb_kernels
        self.inc = Conv3d(self.arch.channels, w[0], 3, rng=rng)
        self.inc_irb = IRB(w[0], ks, rng=rng)
        self.down = [Conv3d(w[i], w[i + 1], 3, 2, rng=rng) for i in range(self.arch.stages)]
        self.down_irb = [IRB(w[i + 1], ks, rng=rng) for i in range(self.arch.stages)]
        self.up = [ConvTranspose3d(w[i + 1], w[i], 3, 2, rng=rng) for i in range(self.arch.stages)]
        self.fuse = [Conv3d(2 * w[i], w[i], 3, rng=rng) for i in range(self.arch.stages)]
        self.up_irb = [IRB(w[i], ks, rng=rng) for i in range(self.arch.stages)]
        self.out = Conv3d(w[0], self.arch.channels, 3, rng=rng)

    def forward(self, x) -> ag.Tensor:
        x = ag.as_tensor(x, self.dtype)
        if x.ndim != 5 or x.shape[1] != self.arch.channels:
            raise ValueError(f"expected (N, {self.arch.channels}, B, B, B) input, got {x.shape}")
        if any(n % self.arch.stride for n in x.shape[2:]):
            raise ValueError(f"block dims {x.shape[2:]} must be multiples of {self.arch.stride}")
        h = self.inc_irb(ag.relu(self.inc(x)))
        skips = [h]
        for conv, irb in zip(self.down, self.down_irb):
            h = irb(ag.relu(conv(h)))
            skips.append(h)
        for i in reversed(range(self.arch.stages)):
            h = ag.relu(self.up[i](h))
            h = ag.relu(self.fuse[i](ag.concat([h, skips[i]], axis=1)))
            h = self.up_irb[i](h)
        return ag.sigmoid(self.out(h))


def abu_forward(model: AbuModel, block):
    """Probability block for a basic up-sampled block (channels-last in, channels-last out)."""
    if isinstance(block, VoxelBlock):
        data = abu_forward(model, block.data)
        return VoxelBlock(block.origin.copy(), block.size, data, block.n_input)
    with ag.no_grad():
        out = model(blocks_to_array([block]))
    return np.ascontiguousarray(out.data[0].transpose(1, 2, 3, 0), dtype=np.float32)


# training data

@dataclass
class AbuPair:
    input: VoxelBlock
    target: VoxelBlock

    @property
    def n_input(self) -> int:
        return self.target.n_input


def upsampled_input(pc: PointCloud, sf: float) -> PointCloud:
    """What the decoder holds before ABU: the cloud down-sampled then basic up-sampled."""
    return upsample_basic(downsample(pc, sf), sf)


def make_abu_blocks(clouds: Sequence[PointCloud], block_size: int, sf: int,
                    min_points: int = MIN_BLOCK_POINTS) -> list[AbuPair]:
    """(basic up-sampled block, original block) pairs on the original block grid."""
    _check_sf(sf)
    pairs = []
    for pc in clouds:
        coarse = upsampled_input(pc, sf)
        by_origin = {tuple(o.tolist()): b for b, o in partition(coarse, block_size)}
        for target, origin in partition(pc, block_size):
            if target.n_input < min_points:
                continue
            inp = by_origin.get(tuple(origin.tolist()))
            if inp is None:
                inp = render_block(np.zeros((0, 3), np.int64), block_size,
                                   np.zeros((0, 3), np.uint8) if pc.has_colors else None, origin)
            pairs.append(AbuPair(inp, target))
    return pairs


def _check_sf(sf):
    if not is_power_of_two(sf) or sf < 2:
        raise ValueError(f"ABU needs a power-of-two sampling factor >= 2, got {sf}")


def abu_batch_size(sf: int) -> int:
    return 1 if sf <= 2 else 8


def abu_loss(cfg: TrainConfig) -> Callable:
    def loss_fn(model: AbuModel, pairs, rng):
        x = blocks_to_array([p.input for p in pairs])
        target = blocks_to_array([p.target for p in pairs])
        return ag.mean(block_distortion(target, model(x), cfg.omega, cfg.alpha, cfg.gamma, per_block=True))

    return loss_fn


def train_abu(pairs: Sequence[AbuPair], sf: int, cfg: TrainConfig | None = None,
              val: Sequence[AbuPair] = (), arch: AbuArch | None = None, model: AbuModel | None = None,
              callback: Callable | None = None) -> tuple[AbuModel, TrainResult]:
    """Distortion-only training of one ABU model for sampling factor ``sf``.

    Without an explicit config the batch size follows the sampling factor
    (1 block for sf=2, 8 for sf=4).
    """
    _check_sf(sf)
    if not pairs:
        raise ValueError("empty training set")
    if cfg is None:
        cfg = TrainConfig(batch=abu_batch_size(sf))
    if model is None:
        arch = arch or AbuArch(channels=pairs[0].target.channels, width_factor=cfg.width_factor)
        model = AbuModel(arch, seed=cfg.seed)
    return model, fit(model, abu_loss(cfg), list(pairs), list(val), cfg, callback)


# checkpoints

def save_abu(model: AbuModel, path, sf: int) -> Path:
    """Write an ABU checkpoint; a directory path gets ``abu.ckpt`` inside it."""
    _check_sf(sf)
    path = Path(path)
    if path.is_dir() or path.suffix != ".ckpt":
        path.mkdir(parents=True, exist_ok=True)
        path = path / CHECKPOINT_NAME
    save_checkpoint(path, {"kind": "abu", "arch": model.arch.to_dict(), "sf": int(sf)}, model.state_dict())
    return path


def load_abu(path) -> tuple[AbuModel, dict]:
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    meta, state = load_checkpoint(path)
    if meta.get("kind") != "abu":
        raise ValueError(f"{path} is not an ABU checkpoint")
    model = AbuModel(AbuArch.from_dict(meta["arch"]))
    model.load_state_dict(state)
    return model, meta
