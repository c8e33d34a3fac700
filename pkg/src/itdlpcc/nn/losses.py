"""Training losses on (N, C, D, H, W) blocks; channel 0 is occupancy, 1..3 RGB."""

from __future__ import annotations

import numpy as np

from . import autograd as ag

FOCAL_EPS = 1e-7
ALPHA = 0.7
GAMMA = 2.0


def focal_loss(u, v, alpha: float = ALPHA, gamma: float = GAMMA, per_block: bool = False):
    """Focal loss of predicted occupancy ``v`` against binary target ``u`` (natural log).

    ``v`` is clamped to [eps, 1 - eps]. Returns the mean over all voxels, or
    one mean per leading (block) index when ``per_block`` is set.
    """
    v = ag.as_tensor(v)
    u = np.asarray(u.data if isinstance(u, ag.Tensor) else u, dtype=v.dtype)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: target {u.shape}, prediction {v.shape}")
    vc = ag.clamp(v, FOCAL_EPS, 1.0 - FOCAL_EPS)
    pos = ag.power(1.0 - vc, gamma) * ag.log(vc) * (-alpha * u)
    neg = ag.power(vc, gamma) * ag.log(1.0 - vc) * (-(1.0 - alpha) * (1.0 - u))
    fl = pos + neg
    if per_block:
        return ag.mean(fl, axis=tuple(range(1, fl.ndim)))
    return ag.mean(fl)


def color_mse(source, decoded, per_block: bool = False):
    """Mean over the source's occupied voxels of the per-voxel RGB mean squared error."""
    decoded = ag.as_tensor(decoded)
    src = np.asarray(source.data if isinstance(source, ag.Tensor) else source, dtype=decoded.dtype)
    if src.shape != decoded.shape:
        raise ValueError(f"shape mismatch: {src.shape} vs {decoded.shape}")
    if src.shape[1] != 4:
        raise ValueError("colour distortion needs 4-channel blocks")
    occ = (src[:, :1] > 0.5).astype(decoded.dtype)
    counts = occ.sum(axis=(1, 2, 3, 4))
    if np.any(counts == 0):
        raise ValueError("colour distortion of a block with no occupied voxels")
    diff = ag.sub(decoded[:, 1:], src[:, 1:])
    sq = ag.mul(ag.mul(diff, diff), occ)
    per = ag.div(ag.tsum(sq, axis=(1, 2, 3, 4)), 3.0 * counts)
    return per if per_block else ag.mean(per)


def total_distortion(d_geo, d_col, omega: float):
    """(1 - omega) * d_geo + omega * d_col."""
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"colour weight must lie in [0, 1], got {omega}")
    return d_geo * (1.0 - omega) + d_col * omega


def block_distortion(source, decoded, omega: float = 0.5, alpha: float = ALPHA,
                     gamma: float = GAMMA, per_block: bool = False):
    """Focal loss for geometry-only blocks, the weighted joint distortion otherwise."""
    src = np.asarray(source.data if isinstance(source, ag.Tensor) else source)
    geo = focal_loss(src[:, :1], decoded[:, :1], alpha, gamma, per_block)
    if src.shape[1] == 1:
        return geo
    return total_distortion(geo, color_mse(src, decoded, per_block), omega)
