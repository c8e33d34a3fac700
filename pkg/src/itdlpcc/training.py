"""Training loop with early stopping, training configs and dataset builders."""

from __future__ import annotations

import configparser
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .codec import CodecArch, CodecModel, blocks_to_array, rd_loss
from .nn import autograd as ag
from .nn.optim import Adam
from .pointcloud import PointCloud, VoxelBlock, partition
from .sampling import downsample

log = logging.getLogger(__name__)

MIN_BLOCK_POINTS = 500


@dataclass
class TrainConfig:
    lmbda: float = 0.001
    alpha: float = 0.7
    gamma: float = 2.0
    omega: float = 0.5
    lr: float = 1e-4
    batch: int = 16
    patience: int = 5
    max_epochs: int = 1000
    seed: int = 0
    width_factor: int = 1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.omega <= 1:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if not self.lmbda > 0:
            raise ValueError(f"lambda must be positive, got {self.lmbda}")
        if self.batch < 1 or self.patience < 1 or self.max_epochs < 1 or self.width_factor < 1:
            raise ValueError("batch, patience, max_epochs and width_factor must be >= 1")

    def save(self, path):
        cp = configparser.ConfigParser()
        cp["train"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def load(cls, path) -> TrainConfig:
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        section = cp["train"]
        kwargs = {}
        for f in fields(cls):
            if f.name in section:
                kwargs[f.name] = (float if f.type in ("float", float) else int)(section[f.name])
        unknown = set(section) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val: float
    stopped_early: bool
    history: list = field(default_factory=list)


def _batches(samples: Sequence, order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield [samples[j] for j in order[i:i + size]]


def evaluate(model, samples: Sequence, loss_fn: Callable, batch: int, seed: int) -> float:
    """Sample-weighted mean loss with a fixed noise seed (no gradients)."""
    rng = np.random.default_rng(seed)
    total = 0.0
    with ag.no_grad():
        for chunk in _batches(samples, np.arange(len(samples)), batch):
            total += loss_fn(model, chunk, rng).item() * len(chunk)
    return total / len(samples)


def fit(model, loss_fn: Callable, train: Sequence, val: Sequence, cfg: TrainConfig,
        callback: Callable | None = None) -> TrainResult:
    """Adam on ``loss_fn(model, batch, rng)`` with early stopping on validation loss.

    Training stops once the validation loss has not decreased for
    ``cfg.patience`` consecutive epochs; the model is left holding the
    best-validation weights. Without a validation set the epoch training loss
    is monitored instead.
    """
    if not train:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg.lr)
    best_val, best_epoch, wait = np.inf, 0, 0
    best_state = model.state_dict()
    history = []
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train))
        running = 0.0
        for chunk in _batches(train, order, cfg.batch):
            opt.zero_grad()
            loss = loss_fn(model, chunk, rng)
            loss.backward()
            opt.step()
            running += loss.item() * len(chunk)
        train_loss = running / len(train)
        val_loss = evaluate(model, val, loss_fn, cfg.batch, cfg.seed + 1) if val else train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        log.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if callback is not None:
            callback(history[-1])
        if val_loss < best_val:
            best_val, best_epoch, wait = val_loss, epoch, 0
            best_state = model.state_dict()
        else:
            wait += 1
            if wait >= cfg.patience:
                stopped = True
                break
    model.load_state_dict(best_state)
    return TrainResult(best_state, best_epoch, float(best_val), stopped, history)


# coding model

def codec_loss(cfg: TrainConfig) -> Callable:
    def loss_fn(model: CodecModel, blocks, rng):
        x = blocks_to_array(blocks)
        ny_shape, nz_shape = model.noise_shapes(len(blocks), x.shape[2])
        noise_y = rng.uniform(-0.5, 0.5, ny_shape)
        noise_z = rng.uniform(-0.5, 0.5, nz_shape)
        decoded, bits = model.forward_train(x, noise_y, noise_z)
        n_input = [b.n_input for b in blocks]
        return rd_loss(x, decoded, bits, n_input, cfg.lmbda, cfg.omega, cfg.alpha, cfg.gamma)

    return loss_fn


def train_codec(train: Sequence[VoxelBlock], val: Sequence[VoxelBlock], cfg: TrainConfig,
                arch: CodecArch | None = None, model: CodecModel | None = None,
                callback: Callable | None = None) -> tuple[CodecModel, TrainResult]:
    """Train (or continue training) a codec on source blocks."""
    if not train:
        raise ValueError("empty training set")
    if model is None:
        channels = train[0].channels
        arch = arch or CodecArch(in_channels=channels, width_factor=cfg.width_factor)
        model = CodecModel(arch, seed=cfg.seed)
    return model, fit(model, codec_loss(cfg), list(train), list(val), cfg, callback)


def make_training_blocks(clouds: Sequence[PointCloud], block_size: int = 64, sf: float = 1,
                         min_points: int = MIN_BLOCK_POINTS, with_color: bool | None = None) -> list[VoxelBlock]:
    """Partition (optionally down-sampled) clouds and drop blocks under ``min_points``."""
    blocks = []
    for pc in clouds:
        if with_color is False and pc.has_colors:
            pc = PointCloud(pc.points, None, pc.precision)
        src = downsample(pc, sf) if sf != 1 else pc
        for block, _ in partition(src, block_size):
            if block.n_input >= min_points:
                blocks.append(block)
    return blocks
