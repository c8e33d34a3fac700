"""Synthetic voxelized surfaces for tests, benchmarks and smoke training."""

from __future__ import annotations

import numpy as np

from ._rounding import round_half_away_int
from .pointcloud import PointCloud, VoxelBlock, render_block


def height_field(size: int, rng: np.random.Generator, curvature: float = 0.02) -> np.ndarray:
    """Voxelized single-valued surface over a random axis of a size^3 cube."""
    u, v = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    u, v = u.ravel().astype(np.float64), v.ravel().astype(np.float64)
    su, sv = rng.uniform(-0.6, 0.6, 2)
    cu, cv = rng.uniform(0, size, 2)
    k = rng.uniform(-curvature, curvature)
    h = su * (u - size / 2) + sv * (v - size / 2) + k * ((u - cu) ** 2 + (v - cv) ** 2)
    h = h - h.mean() + rng.uniform(size * 0.3, size * 0.7)
    w = round_half_away_int(h)
    keep = (w >= 0) & (w < size)
    pts = np.stack([u[keep], v[keep], w[keep]], axis=1).astype(np.int64)
    perm = rng.permutation(3)
    return pts[:, perm]


def surface_colors(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth colour gradient plus mild noise, 8-bit."""
    base = rng.uniform(40, 215, 3)
    grad = rng.uniform(-3, 3, (3, 3))
    col = base + (points - points.mean(axis=0)) @ grad + rng.normal(0, 4, (len(points), 3))
    return np.clip(np.rint(col), 0, 255).astype(np.uint8)


def surface_block(size: int, rng: np.random.Generator, with_color: bool = False) -> VoxelBlock:
    pts = height_field(size, rng)
    return render_block(pts, size, surface_colors(pts, rng) if with_color else None)


def surface_cloud(extent: int, rng: np.random.Generator, n_patches: int = 4,
                  with_color: bool = False) -> PointCloud:
    """Union of random height-field patches tiled over an extent^3 cube."""
    parts = []
    tile = max(8, extent // 2)
    for _ in range(n_patches):
        off = rng.integers(0, extent - tile + 1, 3)
        parts.append(height_field(tile, rng) + off)
    pts = np.concatenate(parts)
    cols = surface_colors(pts, rng) if with_color else None
    return PointCloud.from_points(pts, cols)


def plane_cloud(extent: int, rng: np.random.Generator, with_color: bool = False) -> PointCloud:
    """A single gently tilted plane filling an extent x extent footprint."""
    pts = height_field(extent, rng, curvature=0.0)
    return PointCloud.from_points(pts, surface_colors(pts, rng) if with_color else None)
