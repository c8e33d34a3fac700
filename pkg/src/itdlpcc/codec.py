"""Learned block codec: analysis/synthesis transforms with a mean-scale hyperprior.

Blocks travel as (N, C, B, B, B) arrays, channel 0 occupancy and channels
1..3 RGB in [0, 1]. Latents are B/8 per axis (three stride-2 stages); the
hyper-latents are coded with a per-channel logistic prior learned jointly
with the transforms.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import entropy
from ._rounding import round_half_away
from .entropy.likelihood import gaussian_likelihood, logistic_likelihood
from .nn import autograd as ag
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import IRB, Conv3d, ConvTranspose3d, Module
from .nn.losses import ALPHA, GAMMA, block_distortion
from .pointcloud import VoxelBlock

LAMBDAS = (0.00025, 0.0005, 0.001, 0.0025, 0.005, 0.01)
CUSTOM_MODEL_ID = 255
SIGMA_MIN = 1e-3
STRIDE = 8
CHECKPOINT_NAME = "codec.ckpt"


def model_id_for(lmbda: float | None) -> int:
    """Index of ``lmbda`` in the supported family, or 255 for anything else."""
    for i, value in enumerate(LAMBDAS):
        if lmbda is not None and abs(lmbda - value) <= 1e-12:
            return i
    return CUSTOM_MODEL_ID


@dataclass(frozen=True)
class CodecArch:
    in_channels: int = 1
    filters: tuple = (32, 64, 128)
    latent: int = 128
    hyper: int = 128
    width_factor: int = 1
    irb_kernels: tuple = (1, 3, 5)

    def __post_init__(self):
        if self.in_channels not in (1, 4):
            raise ValueError(f"in_channels must be 1 or 4, got {self.in_channels}")
        if len(self.filters) != 3:
            raise ValueError("filters lists the widths of the three transform stages")
        if self.width_factor < 1:
            raise ValueError("width_factor must be >= 1")
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        object.__setattr__(self, "irb_kernels", tuple(int(k) for k in self.irb_kernels))

    def width(self, n: int) -> int:
        return max(1, n // self.width_factor)

    @property
    def stage_widths(self) -> tuple[int, int, int]:
        return tuple(self.width(f) for f in self.filters)

    @property
    def latent_channels(self) -> int:
        return self.width(self.latent)

    @property
    def hyper_channels(self) -> int:
        return self.width(self.hyper)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        d["irb_kernels"] = list(self.irb_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CodecArch:
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in keys})


def latent_size(block_size: int) -> int:
    if block_size % STRIDE:
        raise ValueError(f"block size {block_size} is not a multiple of the codec stride {STRIDE}")
    return block_size // STRIDE


def hyper_size(block_size: int) -> int:
    return -(-latent_size(block_size) // 4)


class CodecModel(Module):
    def __init__(self, arch: CodecArch | None = None, seed: int = 0):
        self.arch = arch or CodecArch()
        rng = np.random.default_rng(seed)
        c = self.arch.in_channels
        f0, f1, f2 = self.arch.stage_widths
        lat, hyp = self.arch.latent_channels, self.arch.hyper_channels
        ks = self.arch.irb_kernels
        self.a0 = Conv3d(c, f0, 5, rng=rng)
        self.a1 = Conv3d(f0, f1, 3, 2, rng=rng)
        self.a1_irb = IRB(f1, ks, rng=rng)
        self.a2 = Conv3d(f1, f2, 3, 2, rng=rng)
        self.a2_irb = IRB(f2, ks, rng=rng)
        self.a3 = Conv3d(f2, lat, 3, 2, rng=rng)
        self.s3 = ConvTranspose3d(lat, f2, 3, 2, rng=rng)
        self.s3_irb = IRB(f2, ks, rng=rng)
        self.s2 = ConvTranspose3d(f2, f1, 3, 2, rng=rng)
        self.s2_irb = IRB(f1, ks, rng=rng)
        self.s1 = ConvTranspose3d(f1, f0, 3, 2, rng=rng)
        self.s0 = Conv3d(f0, c, 5, rng=rng)
        self.ha0 = Conv3d(lat, hyp, 3, 1, rng=rng)
        self.ha1 = Conv3d(hyp, hyp, 3, 2, rng=rng)
        self.ha2 = Conv3d(hyp, hyp, 3, 2, rng=rng)
        self.hs2 = ConvTranspose3d(hyp, hyp, 3, 2, rng=rng)
        self.hs1 = ConvTranspose3d(hyp, hyp, 3, 2, rng=rng)
        self.hs0 = Conv3d(hyp, 2 * lat, 3, 1, rng=rng)
        self.prior_loc = ag.parameter(np.zeros(hyp))
        self.prior_raw_scale = ag.parameter(np.zeros(hyp))

    def _input(self, x) -> ag.Tensor:
        x = ag.as_tensor(x, self.dtype)
        if x.ndim != 5 or x.shape[1] != self.arch.in_channels:
            raise ValueError(f"expected (N, {self.arch.in_channels}, B, B, B) input, got {x.shape}")
        if any(n % STRIDE for n in x.shape[2:]):
            raise ValueError(f"block dims {x.shape[2:]} must be multiples of {STRIDE}")
        return x

    def analysis(self, x) -> ag.Tensor:
        h = ag.relu(self.a0(self._input(x)))
        h = self.a1_irb(ag.relu(self.a1(h)))
        h = self.a2_irb(ag.relu(self.a2(h)))
        return self.a3(h)

    def synthesis(self, y) -> ag.Tensor:
        y = ag.as_tensor(y, self.dtype)
        h = self.s3_irb(ag.relu(self.s3(y)))
        h = self.s2_irb(ag.relu(self.s2(h)))
        h = ag.relu(self.s1(h))
        return ag.sigmoid(self.s0(h))

    def hyper_analysis(self, y) -> ag.Tensor:
        h = ag.relu(self.ha0(ag.as_tensor(y, self.dtype)))
        h = ag.relu(self.ha1(h))
        return self.ha2(h)

    def hyper_synthesis(self, z, latent_spatial) -> tuple[ag.Tensor, ag.Tensor]:
        """Mean and scale (>= SIGMA_MIN) for every latent element."""
        h = ag.relu(self.hs2(ag.as_tensor(z, self.dtype)))
        h = ag.relu(self.hs1(h))
        h = self.hs0(h)
        d, hh, w = latent_spatial
        lat = self.arch.latent_channels
        mu = h[:, :lat, :d, :hh, :w]
        sigma = ag.softplus(h[:, lat:, :d, :hh, :w]) + SIGMA_MIN
        return mu, sigma

    def prior_scale(self) -> ag.Tensor:
        return ag.softplus(self.prior_raw_scale) + SIGMA_MIN

    def prior_params(self) -> tuple[np.ndarray, np.ndarray]:
        with ag.no_grad():
            return self.prior_loc.data.astype(np.float64), self.prior_scale().data.astype(np.float64)

    def forward_train(self, x, noise_y: np.ndarray, noise_z: np.ndarray):
        """Noisy-proxy forward pass: (reconstruction, bits per block)."""
        y = self.analysis(x)
        y_tilde = y + noise_y.astype(self.dtype)
        z_tilde = self.hyper_analysis(y) + noise_z.astype(self.dtype)
        mu, sigma = self.hyper_synthesis(z_tilde, y.shape[2:])
        loc = self.prior_loc.reshape((1, -1, 1, 1, 1))
        scale = self.prior_scale().reshape((1, -1, 1, 1, 1))
        bits_y = ag.tsum(ag.gaussian_bits(y_tilde, mu, sigma), axis=(1, 2, 3, 4))
        bits_z = ag.tsum(ag.logistic_bits(z_tilde, loc, scale), axis=(1, 2, 3, 4))
        return self.synthesis(y_tilde), bits_y + bits_z

    def noise_shapes(self, n: int, block_size: int):
        ls, hs = latent_size(block_size), hyper_size(block_size)
        return ((n, self.arch.latent_channels, ls, ls, ls), (n, self.arch.hyper_channels, hs, hs, hs))


def quantize(y, qs: float = 1.0) -> np.ndarray:
    """Integer latents q = round(y / qs), ties away from zero."""
    if not qs > 0:
        raise ValueError(f"quantization step must be positive, got {qs}")
    return round_half_away(np.asarray(y, dtype=np.float64) / qs).astype(np.int64)


def dequantize(q, qs: float = 1.0) -> np.ndarray:
    if not qs > 0:
        raise ValueError(f"quantization step must be positive, got {qs}")
    return (np.asarray(q, dtype=np.float64) * qs).astype(np.float32)


def noise_proxy(y, rng: np.random.Generator) -> np.ndarray:
    """y + U(-0.5, 0.5), the training-time stand-in for rounding."""
    y = np.asarray(y)
    return y + rng.uniform(-0.5, 0.5, size=y.shape).astype(y.dtype)


def rate_estimate(q, mu, scale, dist: str = "gaussian") -> float:
    """Estimated bits -sum log2 P(q) with P floored at 2**-64."""
    if dist == "gaussian":
        p = gaussian_likelihood(q, mu, scale)
    elif dist == "logistic":
        p = logistic_likelihood(q, loc=mu, scale=scale)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return float(-np.log2(p).sum())


def rd_loss(source, decoded, rate_bits, n_input, lmbda: float, omega: float = 0.5,
            alpha: float = ALPHA, gamma: float = GAMMA):
    """Mean over blocks of distortion + lmbda * bits / n_input.

    Works on Tensors (training) or plain arrays (evaluation).
    """
    dist = block_distortion(source, decoded, omega, alpha, gamma, per_block=True)
    n = np.asarray(n_input, dtype=np.float64).reshape(-1)
    if np.any(n <= 0):
        raise ValueError("every block needs a positive input point count")
    rate = ag.mul(rate_bits, (lmbda / n).astype(dist.dtype))
    return ag.mean(dist + rate)


def blocks_to_array(blocks) -> np.ndarray:
    """Stack channels-last VoxelBlocks into an (N, C, B, B, B) float32 array."""
    data = [b.data if isinstance(b, VoxelBlock) else np.asarray(b) for b in blocks]
    return np.ascontiguousarray(np.stack(data).transpose(0, 4, 1, 2, 3), dtype=np.float32)


# latent coding

@dataclass
class CodedLatents:
    side: bytes
    main: bytes
    q: np.ndarray = field(repr=False)
    qz: np.ndarray = field(repr=False)


def _gaussian_params(model: CodecModel, qz: np.ndarray, latent_spatial, qs: float):
    with ag.no_grad():
        mu, sigma = model.hyper_synthesis(qz.astype(model.dtype), latent_spatial)
    # model parameters in the q = y / qs domain
    mu = mu.data[0].astype(np.float64) / qs
    sigma = sigma.data[0].astype(np.float64) / qs
    return mu, sigma


def _factorized_params(model: CodecModel, hyper_spatial):
    loc, scale = model.prior_params()
    shape = (len(loc),) + tuple(hyper_spatial)
    return np.broadcast_to(loc[:, None, None, None], shape).ravel(), \
        np.broadcast_to(scale[:, None, None, None], shape).ravel()


def encode_latents(model: CodecModel, block: np.ndarray, qs: float = 1.0) -> CodedLatents:
    """Analysis, quantization and range coding of one (1, C, B, B, B) block."""
    with ag.no_grad():
        y = model.analysis(block)
        z = model.hyper_analysis(y)
    qz = quantize(z.data[0])
    q = quantize(y.data[0], qs)
    loc, scale = _factorized_params(model, qz.shape[1:])
    side = entropy.encode_parametric(qz.ravel(), loc, scale, "logistic")
    mu, sigma = _gaussian_params(model, qz[None], q.shape[1:], qs)
    main = entropy.encode_parametric(q.ravel(), mu.ravel(), sigma.ravel(), "gaussian")
    return CodedLatents(side, main, q, qz)


def decode_latents(model: CodecModel, side: bytes, main: bytes, block_size: int, qs: float = 1.0) -> np.ndarray:
    """Integer latents (C, b, b, b) from the side and main payloads."""
    ls, hs = latent_size(block_size), hyper_size(block_size)
    hyper_shape = (model.arch.hyper_channels, hs, hs, hs)
    loc, scale = _factorized_params(model, hyper_shape[1:])
    qz = entropy.decode_parametric(side, loc, scale, "logistic").reshape(hyper_shape)
    mu, sigma = _gaussian_params(model, qz[None], (ls, ls, ls), qs)
    q = entropy.decode_parametric(main, mu.ravel(), sigma.ravel(), "gaussian")
    return q.reshape((model.arch.latent_channels, ls, ls, ls))


def reconstruct(model: CodecModel, q: np.ndarray, qs: float = 1.0) -> np.ndarray:
    """Synthesis of dequantized latents; returns (C, B, B, B) probabilities in float32."""
    with ag.no_grad():
        out = model.synthesis(dequantize(q, qs)[None])
    return out.data[0].astype(np.float32)


def estimate_coded_bits(model: CodecModel, coded: CodedLatents, qs: float = 1.0) -> float:
    """rate_estimate of the integer symbols actually coded (latents plus hyper-latents)."""
    loc, scale = _factorized_params(model, coded.qz.shape[1:])
    mu, sigma = _gaussian_params(model, coded.qz[None], coded.q.shape[1:], qs)
    return (rate_estimate(coded.qz.ravel(), loc, scale, "logistic")
            + rate_estimate(coded.q.ravel(), mu.ravel(), sigma.ravel(), "gaussian"))


# checkpoints

def save_codec(model: CodecModel, path, lmbda: float | None = None):
    """Write a codec checkpoint; a directory path gets ``codec.ckpt`` inside it."""
    path = Path(path)
    if path.is_dir() or path.suffix != ".ckpt":
        path.mkdir(parents=True, exist_ok=True)
        path = path / CHECKPOINT_NAME
    meta = {"kind": "codec", "arch": model.arch.to_dict(), "lambda": lmbda,
            "model_id": model_id_for(lmbda)}
    save_checkpoint(path, meta, model.state_dict())
    return path


def load_codec(path) -> tuple[CodecModel, dict]:
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    meta, state = load_checkpoint(path)
    if meta.get("kind") != "codec":
        raise ValueError(f"{path} is not a codec checkpoint")
    model = CodecModel(CodecArch.from_dict(meta["arch"]))
    model.load_state_dict(state)
    return model, meta
