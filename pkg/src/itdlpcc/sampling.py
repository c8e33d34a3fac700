"""Basic grid down-sampling and its inverse re-scaling."""

from __future__ import annotations

import numpy as np

from ._rounding import round_half_away_int
from .pointcloud import PointCloud


def is_power_of_two(sf: float) -> bool:
    return float(sf) >= 1 and float(sf).is_integer() and (int(sf) & (int(sf) - 1)) == 0


def downsample(pc: PointCloud, sf: float) -> PointCloud:
    """Scale coordinates by 1/sf and round; merged voxels average their colours."""
    if not sf >= 1:
        raise ValueError(f"sampling factor must be >= 1, got {sf}")
    if sf == 1:
        return pc
    return PointCloud.from_points(pc.points / float(sf), pc.colors)


def upsample_basic(pc: PointCloud, sf: float) -> PointCloud:
    """Scale coordinates back by sf; never adds or removes points for sf >= 1."""
    if not sf >= 1:
        raise ValueError(f"sampling factor must be >= 1, got {sf}")
    if sf == 1:
        return pc
    pts = round_half_away_int(pc.points * float(sf))
    precision = pc.precision + int(np.ceil(np.log2(sf)))
    return PointCloud.from_points(pts, pc.colors, precision=precision)
