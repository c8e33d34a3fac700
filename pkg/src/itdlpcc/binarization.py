"""Top-k binarization of probability blocks and the search for the k multiplier.

k = max(1, round(N_input * beta)). Only voxels inside octants occupied in the
source block may be selected; among equal probabilities the lower z-major
linear index (z * B**2 + y * B + x) wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._rounding import round_half_away
from .pointcloud import PointCloud, VoxelBlock, octant_admissible
from .quality.metrics import estimate_normals, psnr_color, psnr_d1, psnr_d2

METRICS = ("d1", "d2", "d1yuv", "d2yuv", "d1rgb", "d2rgb")
MODES = ("full", "fast")
ABU_MODES = ("none", "full", "fast")
FINE_STEP = 0.05
COARSE_STEP = 0.5


@dataclass(frozen=True)
class TopKConfig:
    metric: str = "d1yuv"
    color_weight: float = 0.5
    max_topk: float = 10.0
    patience: int = 5
    mode: str = "full"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if self.mode not in MODES:
            raise ValueError(f"unknown search mode {self.mode!r}")
        if not 0 <= self.color_weight <= 1:
            raise ValueError("color_weight must lie in [0, 1]")
        if not self.max_topk >= FINE_STEP:
            raise ValueError(f"max_topk must be at least {FINE_STEP}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class BetaResult:
    beta: float
    k: int
    quality: float
    evaluations: int


def k_for(n_input: int, beta: float) -> int:
    return max(1, int(round_half_away(n_input * beta)))


def _z_major(coords: np.ndarray, size: int) -> np.ndarray:
    return (coords[:, 2] * size + coords[:, 1]) * size + coords[:, 0]


class Ranking:
    """Admissible voxels of a probability block in selection order."""

    def __init__(self, prob_block: np.ndarray, mask: int = 0xFF):
        prob = np.asarray(prob_block)
        self.block = prob if prob.ndim == 4 else prob[..., None]
        self.size = self.block.shape[0]
        occ = self.block[..., 0]
        allowed = octant_admissible(self.size, mask)
        # z-major linear order, then a stable sort on descending probability
        lin_occ = occ.transpose(2, 1, 0).ravel()
        lin_ok = np.flatnonzero(allowed.transpose(2, 1, 0).ravel())
        order = lin_ok[np.argsort(-lin_occ[lin_ok], kind="stable")]
        z, rem = np.divmod(order, self.size * self.size)
        y, x = np.divmod(rem, self.size)
        self.coords = np.stack([x, y, z], axis=1)

    def __len__(self) -> int:
        return len(self.coords)

    def top(self, k: int) -> np.ndarray:
        """The first min(k, admissible) voxels, returned in z-major order."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        chosen = self.coords[:k]
        return chosen[np.argsort(_z_major(chosen, self.size), kind="stable")]

    def colors(self, coords: np.ndarray) -> np.ndarray | None:
        if self.block.shape[-1] < 4:
            return None
        rgb = self.block[coords[:, 0], coords[:, 1], coords[:, 2], 1:4].astype(np.float64)
        return np.clip(round_half_away(rgb * 255.0), 0, 255).astype(np.uint8)


def top_k(prob_block, k: int, mask: int = 0xFF, origin=(0, 0, 0)) -> VoxelBlock:
    """Binary block holding the k most probable admissible voxels (+ their colours)."""
    data = prob_block.data if isinstance(prob_block, VoxelBlock) else prob_block
    rank = Ranking(data, mask)
    coords = rank.top(k)
    out = np.zeros(rank.block.shape, dtype=np.float32)
    out[coords[:, 0], coords[:, 1], coords[:, 2], 0] = 1.0
    if out.shape[-1] == 4:
        out[coords[:, 0], coords[:, 1], coords[:, 2], 1:4] = rank.block[coords[:, 0], coords[:, 1], coords[:, 2], 1:4]
    return VoxelBlock(np.asarray(origin, dtype=np.int64), rank.size, out, len(coords))


class BlockScorer:
    """Quality of candidate reconstructions against fixed source points."""

    def __init__(self, points: np.ndarray, colors: np.ndarray | None, metric: str,
                 color_weight: float, precision: int):
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        if len(points) == 0:
            raise ValueError("cannot score against an empty source block")
        self.points = np.asarray(points, dtype=np.int64)
        self.colors = colors
        self.geo = metric[:2]
        self.space = metric[2:] or None
        self.use_color = colors is not None and self.space is not None
        self.weight = color_weight
        self.precision = precision
        self.normals = estimate_normals(self.points) if self.geo == "d2" else None
        self.ref = PointCloud(self.points, colors, precision)

    def __call__(self, points: np.ndarray, colors: np.ndarray | None = None) -> float:
        if self.geo == "d1":
            geo = psnr_d1(self.points, points, self.precision)
        else:
            geo = psnr_d2(self.points, points, self.precision, self.normals)
        if not self.use_color or colors is None:
            return geo
        test = PointCloud(np.asarray(points, dtype=np.int64), colors, self.precision)
        col = psnr_color(self.ref, test, self.space)[self.space]
        return (1.0 - self.weight) * geo + self.weight * col


def _scan(betas, n_input: int, evaluate, patience: int, cache: dict):
    """Ascending scan with early stop after ``patience`` non-improving steps past the best."""
    best = None
    since = 0
    for beta in betas:
        k = k_for(n_input, beta)
        if k not in cache:
            cache[k] = evaluate(k)
        q = cache[k]
        if best is None or q > best[2]:
            best = (float(beta), k, q)
            since = 0
        else:
            since += 1
            if since >= patience:
                break
    return best


def _grid(step: float, lo: float, hi: float) -> np.ndarray:
    j0 = max(1, int(np.ceil(lo / step - 1e-9)))
    j1 = int(np.floor(hi / step + 1e-9))
    return np.round(np.arange(j0, j1 + 1) * step, 10)


def search_beta(rank: Ranking, n_input: int, scorer: BlockScorer, cfg: TopKConfig) -> BetaResult:
    if n_input < 1:
        raise ValueError("n_input must be >= 1")
    cache: dict[int, float] = {}

    def evaluate(k):
        pts = rank.top(k)
        return scorer(pts, rank.colors(pts))

    if cfg.mode == "full" or cfg.max_topk < COARSE_STEP:
        best = _scan(_grid(FINE_STEP, FINE_STEP, cfg.max_topk), n_input, evaluate, cfg.patience, cache)
    else:
        coarse = _scan(_grid(COARSE_STEP, COARSE_STEP, cfg.max_topk), n_input, evaluate, cfg.patience, cache)
        fine = _scan(_grid(FINE_STEP, coarse[0] - COARSE_STEP, min(coarse[0] + COARSE_STEP, cfg.max_topk)),
                     n_input, evaluate, cfg.patience, cache)
        best = fine if fine[2] > coarse[2] else coarse
    return BetaResult(best[0], best[1], best[2], len(cache))


def _source_arrays(source):
    if isinstance(source, VoxelBlock):
        pts = source.occupied()
        cols = source.colors_at(pts) if source.channels == 4 else None
        return pts, cols
    pts, cols = source
    return np.asarray(pts, dtype=np.int64).reshape(-1, 3), cols


def optimize_beta(source, prob_block, cfg: TopKConfig = TopKConfig(), mask: int = 0xFF,
                  precision: int | None = None, n_input: int | None = None) -> BetaResult:
    """Best beta (and k) for binarizing ``prob_block`` against ``source``.

    ``source`` is a source VoxelBlock or a (local points, colours) pair in the
    probability block's frame. The PSNR peak uses ``precision`` (defaults to
    the block's bit depth).
    """
    pts, cols = _source_arrays(source)
    if len(pts) == 0:
        raise ValueError("empty source block")
    data = prob_block.data if isinstance(prob_block, VoxelBlock) else prob_block
    rank = Ranking(data, mask)
    if precision is None:
        precision = max(1, int(rank.size - 1).bit_length())
    if rank.block.shape[-1] < 4:
        cols = None
    scorer = BlockScorer(pts, cols, cfg.metric, cfg.color_weight, precision)
    return search_beta(rank, n_input if n_input is not None else len(pts), scorer, cfg)


def binarize_abu(abu_prob, mode: str, beta_codec: float, n_input: int, cfg: TopKConfig = TopKConfig(),
                 source=None, mask: int = 0xFF, precision: int | None = None) -> BetaResult:
    """Choose k_abu: inherit the codec beta (``none``) or search it (``full``/``fast``).

    ``n_input`` counts the original points of the up-sampled region; the
    search scores against ``source`` in that same frame.
    """
    if mode not in ABU_MODES:
        raise ValueError(f"unknown ABU binarization mode {mode!r}")
    if mode == "none":
        return BetaResult(float(beta_codec), k_for(n_input, beta_codec), float("nan"), 0)
    if source is None:
        raise ValueError("ABU beta search needs the original-frame source block")
    search = TopKConfig(cfg.metric, cfg.color_weight, cfg.max_topk, cfg.patience, mode)
    return optimize_beta(source, abu_prob, search, mask, precision, n_input)
