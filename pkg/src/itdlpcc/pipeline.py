"""Encoder and decoder orchestration, scale selection and RD sweeps.

Encoder: down-sample, partition, then per block analysis, quantization,
hyperprior coding, a simulated decode and the beta search (and the ABU beta
search when enabled). Decoder: per block payload decoding, synthesis, top-k,
basic up-sampling and optional ABU. Blocks are independent, so any subset of
records decodes on its own.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bitstream as bs
from ._rounding import round_half_away_int
from .abu import AbuModel, abu_forward, load_abu
from .binarization import ABU_MODES, METRICS, TopKConfig, binarize_abu, optimize_beta, top_k
from .codec import STRIDE, CodecModel, blocks_to_array, encode_latents, decode_latents, load_codec, reconstruct
from .pointcloud import PointCloud, VoxelBlock, octant_occupancy, partition, precision_for, render_block, sparsity
from .quality.metrics import psnr_color, psnr_d1, psnr_d2
from .sampling import downsample, is_power_of_two

log = logging.getLogger(__name__)

REFERENCE_BLOCK_MULTIPLE = 64
SCALE_THRESHOLDS = (1.8, 4.0)
SPARSITY_NEIGHBOURS = 20
GEOMETRY_TARGETS = (0.05, 0.15, 0.5, 1.5)
JOINT_TARGETS = (0.1, 0.3, 1.0, 3.0)
TARGET_TOLERANCE = 0.1


@dataclass(frozen=True)
class CodecConfig:
    with_color: bool = False
    blk_size: int = 128
    q_step: float = 1.0
    scale: float | None = None
    use_abu: bool = False
    topk_metrics: str = "d1yuv"
    color_weight: float = 0.5
    use_fast_topk: bool = False
    max_topk: float = 10.0
    topk_patience: int = 5
    abu_topk: str = "full"
    abu_max_topk: float = 10.0

    def __post_init__(self):
        if self.blk_size < STRIDE or self.blk_size % STRIDE:
            raise ValueError(f"block size {self.blk_size} must be a positive multiple of the codec stride {STRIDE}")
        if not self.q_step > 0:
            raise ValueError(f"q_step must be positive, got {self.q_step}")
        if self.scale is not None and not self.scale >= 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.topk_metrics not in METRICS:
            raise ValueError(f"unknown top-k metric {self.topk_metrics!r}; choose from {METRICS}")
        if self.abu_topk not in ABU_MODES:
            raise ValueError(f"unknown abu_topk {self.abu_topk!r}; choose from {ABU_MODES}")
        # validates the remaining top-k fields
        self.topk_config()
        self.abu_topk_config()

    def topk_config(self) -> TopKConfig:
        return TopKConfig(self.topk_metrics, self.color_weight, self.max_topk, self.topk_patience,
                          "fast" if self.use_fast_topk else "full")

    def abu_topk_config(self) -> TopKConfig:
        mode = "full" if self.abu_topk == "none" else self.abu_topk
        return TopKConfig(self.topk_metrics, self.color_weight, self.abu_max_topk, self.topk_patience, mode)


@dataclass
class Models:
    codec: CodecModel
    model_id: int
    abu: dict[int, AbuModel] = field(default_factory=dict)

    @classmethod
    def load(cls, model_dir, abu_dirs: Sequence = ()) -> Models:
        codec, meta = load_codec(model_dir)
        abu = {}
        for d in abu_dirs:
            model, ameta = load_abu(d)
            abu[int(ameta["sf"])] = model
        return cls(codec, int(meta["model_id"]), abu)

    def abu_for(self, sf: float) -> AbuModel:
        model = self.abu.get(int(sf)) if float(sf).is_integer() else None
        if model is None:
            raise ValueError(f"no ABU model for sampling factor {sf:g}")
        return model


def auto_scale(pc: PointCloud, thresholds=SCALE_THRESHOLDS) -> float:
    """Sampling factor from cloud sparsity: 1 up to thresholds[0], 2 up to thresholds[1], else 4."""
    if len(pc) <= SPARSITY_NEIGHBOURS:
        return 1.0
    s = sparsity(pc, SPARSITY_NEIGHBOURS)
    if s <= thresholds[0]:
        return 1.0
    return 2.0 if s <= thresholds[1] else 4.0


# per-block stages shared by the encoder and the decoder

def _channels_last(prob: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(prob.transpose(1, 2, 3, 0))


def _upsampled_points(block: VoxelBlock, sf: float) -> tuple[np.ndarray, np.ndarray | None]:
    local = block.occupied()
    pts = round_half_away_int((block.origin + local) * sf)
    cols = block.colors_at(local) if block.channels >= 4 else None
    return pts, cols


def _abu_input(block: VoxelBlock, sf: int) -> VoxelBlock:
    """The basic up-sampled block covering ``block``'s region in the original frame."""
    local = block.occupied()
    cols = block.colors_at(local) if block.channels >= 4 else None
    return render_block(local * sf, block.size * sf, cols, block.origin * sf)


def _block_points(block: VoxelBlock) -> tuple[np.ndarray, np.ndarray | None]:
    local = block.occupied()
    cols = block.colors_at(local) if block.channels >= 4 else None
    return block.origin + local, cols


def _finish(parts, with_color: bool, precision: int) -> PointCloud:
    pts = [p for p, _ in parts]
    if not pts or sum(len(p) for p in pts) == 0:
        return PointCloud.empty(with_color)
    pts = np.concatenate(pts)
    cols = np.concatenate([c for _, c in parts]) if with_color else None
    return PointCloud.from_points(pts, cols, precision=max(precision, precision_for(pts)))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# encoder

@dataclass
class EncodeResult:
    bitstream: bytes
    header: bs.Header
    records: list[bs.BlockRecord]
    reconstruction: PointCloud
    betas: list[float]
    n_points: int = 0

    @property
    def bpp(self) -> float:
        return 8.0 * len(self.bitstream) / max(1, self.n_points)


def _prepare(pc: PointCloud, config: CodecConfig, models: Models):
    if len(pc) == 0:
        raise ValueError("cannot encode an empty point cloud")
    if config.with_color and not pc.has_colors:
        raise ValueError("colour coding requested but the cloud has no colours")
    if not config.with_color and pc.has_colors:
        pc = PointCloud(pc.points, None, pc.precision)
    channels = 4 if config.with_color else 1
    if models.codec.arch.in_channels != channels:
        raise ValueError(f"codec model codes {models.codec.arch.in_channels}-channel blocks, "
                         f"configuration needs {channels}")
    if config.blk_size % REFERENCE_BLOCK_MULTIPLE:
        log.warning("block size %d is not a multiple of %d", config.blk_size, REFERENCE_BLOCK_MULTIPLE)
    sf = bs.as_f32(config.scale if config.scale is not None else auto_scale(pc))
    use_abu = config.use_abu
    if use_abu and sf == 1:
        log.info("scale 1 leaves nothing to up-sample; ABU disabled")
        use_abu = False
    if use_abu:
        if not is_power_of_two(sf):
            raise ValueError(f"ABU needs a power-of-two scale, got {sf:g}")
        models.abu_for(sf)
    return pc, sf, use_abu


def encode_detailed(pc: PointCloud, config: CodecConfig, models: Models, workers: int = 1) -> EncodeResult:
    pc, sf, use_abu = _prepare(pc, config, models)
    qs = bs.as_f32(config.q_step)
    model = models.codec
    coarse = downsample(pc, sf)
    blocks = partition(coarse, config.blk_size, STRIDE)
    topk_cfg = config.topk_config()
    regions = {}
    if use_abu:
        isf = int(sf)
        abu_model = models.abu_for(sf)
        abu_cfg = config.abu_topk_config()
        regions = {tuple(o.tolist()): b for b, o in partition(pc, config.blk_size * isf)}

    def encode_block(item):
        block, origin = item
        mask = octant_occupancy(block)
        coded = encode_latents(model, blocks_to_array([block]), qs)
        local = block.occupied()
        direct = bs.pack_direct(local, block.colors_at(local) if config.with_color else None, block.size)
        if len(direct) <= len(coded.side) + len(coded.main):
            # lossless and no larger than the learned payloads
            side, main, k_codec, beta_codec = b"", direct, len(local), 1.0
            decoded = block
        else:
            prob = _channels_last(reconstruct(model, coded.q, qs))
            beta = optimize_beta(block, prob, topk_cfg, mask, coarse.precision, block.n_input)
            side, main, k_codec, beta_codec = coded.side, coded.main, beta.k, beta.beta
            decoded = top_k(prob, beta.k, mask, origin)
        k_abu = 0
        if use_abu:
            region = regions.get(tuple((origin * isf).tolist()))
            abu_in = _abu_input(decoded, isf)
            abu_prob = abu_forward(abu_model, abu_in.data)
            if region is None:
                # every original point of this region rounded into a neighbour
                k_abu = binarize_abu(abu_prob, "none", beta_codec, 0).k
            else:
                k_abu = binarize_abu(abu_prob, config.abu_topk, beta_codec, region.n_input, abu_cfg, region,
                                     mask, pc.precision).k
            final = _block_points(top_k(abu_prob, k_abu, mask, abu_in.origin))
        else:
            final = _upsampled_points(decoded, sf)
        pos = tuple(int(v) for v in origin // config.blk_size)
        record = bs.BlockRecord(pos, k_codec, k_abu, mask, side, main)
        return record, final, beta_codec

    results = _map(encode_block, blocks, workers)
    records = [r for r, _, _ in results]
    header = bs.Header(pc.precision, config.blk_size, sf, qs, models.model_id, len(records),
                       config.with_color, use_abu)
    data = bs.pack(header, records)
    recon = _finish([f for _, f, _ in results], config.with_color, pc.precision)
    return EncodeResult(data, header, records, recon, [b for _, _, b in results], len(pc))


def encode(pc: PointCloud, config: CodecConfig, models: Models, workers: int = 1) -> bytes:
    return encode_detailed(pc, config, models, workers).bitstream


# decoder

def decode(data: bytes, models: Models, select=None, workers: int = 1) -> PointCloud:
    """Decode a bitstream; ``select`` restricts decoding to the given block grid positions."""
    header, records = bs.unpack(data)
    if header.model_id != models.model_id:
        raise ValueError(f"bitstream was coded with model id {header.model_id}, "
                         f"the checkpoint has id {models.model_id}")
    model = models.codec
    channels = 4 if header.with_color else 1
    if model.arch.in_channels != channels:
        raise ValueError(f"bitstream holds {channels}-channel blocks, the codec model "
                         f"{model.arch.in_channels}-channel ones")
    sf, qs, size = header.sf, header.qs, header.blk_size
    abu_model = models.abu_for(sf) if header.abu else None
    if select is not None:
        wanted = {tuple(int(v) for v in p) for p in select}
        records = [r for r in records if r.position in wanted]

    def decode_block(rec: bs.BlockRecord):
        origin = np.asarray(rec.position, dtype=np.int64) * size
        if rec.side:
            q = decode_latents(model, rec.side, rec.main, size, qs)
            prob = _channels_last(reconstruct(model, q, qs))
            decoded = top_k(prob, rec.k_codec, rec.mask, origin)
        else:
            local, cols = bs.unpack_direct(rec.main, rec.k_codec, size, header.with_color)
            decoded = render_block(local, size, cols, origin)
        if abu_model is None:
            return _upsampled_points(decoded, sf)
        if rec.k_abu < 1:
            raise bs.BitstreamError("ABU bitstream with k_abu = 0")
        isf = int(sf)
        abu_prob = abu_forward(abu_model, _abu_input(decoded, isf).data)
        return _block_points(top_k(abu_prob, rec.k_abu, rec.mask, origin * isf))

    parts = _map(decode_block, records, workers)
    return _finish(parts, header.with_color, header.precision)


# RD sweeps

QUALITY_METRICS = ("d1", "d2", "y", "yuv")


def quality(ref: PointCloud, test: PointCloud, metric: str = "d1") -> float:
    if metric == "d1":
        return psnr_d1(ref.points, test.points, ref.precision)
    if metric == "d2":
        return psnr_d2(ref.points, test.points, ref.precision)
    if metric in ("y", "yuv"):
        return psnr_color(ref, test, "yuv")[metric]
    raise ValueError(f"unknown quality metric {metric!r}; choose from {QUALITY_METRICS}")


@dataclass
class SweepPoint:
    label: str
    config: CodecConfig
    nbytes: int
    bpp: float
    quality: float


@dataclass
class SweepResult:
    points: list[SweepPoint]
    hull: list[int]
    selections: dict[float, int | None]

    def to_csv(self, fh=None) -> str:
        out = fh or io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        names = [f for f in CodecConfig.__dataclass_fields__]
        w.writerow(["label", *names, "bytes", "bpp", "quality", "on_hull", "target"])
        on_hull = set(self.hull)
        chosen = {i: t for t, i in self.selections.items() if i is not None}
        for i, p in enumerate(self.points):
            cfg = asdict(p.config)
            w.writerow([p.label, *[cfg[n] for n in names], p.nbytes, f"{p.bpp:.6f}", f"{p.quality:.6f}",
                        int(i in on_hull), chosen.get(i, "")])
        return out.getvalue() if fh is None else ""


def upper_hull(rates: Sequence[float], qualities: Sequence[float]) -> list[int]:
    """Indices of the upper-left convex hull of (rate, quality), by increasing rate.

    Dominated points (another point has no more rate and at least the
    quality) are never on it, nor are points under a chord of their
    neighbours.
    """
    r = np.asarray(rates, dtype=np.float64)
    q = np.asarray(qualities, dtype=np.float64)
    order = sorted(range(len(r)), key=lambda i: (r[i], -q[i], i))
    frontier = []
    for i in order:
        if frontier and q[i] <= q[frontier[-1]]:
            continue
        frontier.append(i)
    hull: list[int] = []
    for i in frontier:
        if math.isinf(q[i]):
            # a lossless point tops every chord; it ends the hull
            while hull and math.isinf(q[hull[-1]]):
                hull.pop()
            hull.append(i)
            break
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (r[b] - r[a]) * (q[i] - q[a]) - (q[b] - q[a]) * (r[i] - r[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def select_targets(rates, qualities, hull: Sequence[int], targets: Sequence[float],
                   tolerance: float = TARGET_TOLERANCE) -> dict[float, int | None]:
    """Per target rate, the hull point within ±tolerance (closest rate, then higher quality)."""
    out = {}
    for t in targets:
        cands = [i for i in hull if abs(rates[i] - t) <= tolerance * t]
        out[t] = min(cands, key=lambda i: (abs(rates[i] - t), -qualities[i])) if cands else None
    return out


def rd_sweep(pc: PointCloud, grid: Sequence[tuple[str, CodecConfig, Models]], targets: Sequence[float] | None = None,
             metric: str = "d1", workers: int = 1) -> SweepResult:
    """Encode and decode ``pc`` under every configuration, then pick target-rate points from the hull."""
    if targets is None:
        targets = JOINT_TARGETS if pc.has_colors and any(c.with_color for _, c, _ in grid) else GEOMETRY_TARGETS
    points = []
    for label, cfg, models in grid:
        data = encode(pc, cfg, models, workers)
        rec = decode(data, models, workers=workers)
        ref = pc if cfg.with_color else PointCloud(pc.points, None, pc.precision)
        points.append(SweepPoint(label, cfg, len(data), 8.0 * len(data) / len(pc), quality(ref, rec, metric)))
        log.info("%s: %.4f bpp, %.3f dB", label, points[-1].bpp, points[-1].quality)
    rates = [p.bpp for p in points]
    quals = [p.quality for p in points]
    hull = upper_hull(rates, quals)
    selections = select_targets(rates, quals, hull, targets)
    for t, i in selections.items():
        if i is None:
            log.warning("no hull point within %.0f%% of target %g bpp", 100 * TARGET_TOLERANCE, t)
    return SweepResult(points, hull, selections)


def write_bitstream(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path
