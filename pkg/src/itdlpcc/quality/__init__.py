"""Quality metrics, nearest-neighbour search and Bjontegaard deltas."""

from .bd import RdPoint, bd_metrics, bd_quality, bd_rate
from .metrics import (
    LOSSLESS,
    bpp,
    color_mse,
    d1_mse,
    d2_mse,
    estimate_normals,
    geometry_peak,
    psnr,
    psnr_color,
    psnr_d1,
    psnr_d2,
    rgb_to_yuv,
)
from .nearest import GridIndex, Neighbours, nearest

__all__ = [
    "LOSSLESS", "GridIndex", "Neighbours", "RdPoint", "bd_metrics", "bd_quality", "bd_rate",
    "bpp", "color_mse", "d1_mse", "d2_mse", "estimate_normals", "geometry_peak", "nearest",
    "psnr", "psnr_color", "psnr_d1", "psnr_d2", "rgb_to_yuv",
]
