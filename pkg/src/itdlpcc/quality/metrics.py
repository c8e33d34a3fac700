"""Objective point cloud quality metrics (pc_error conventions).

Geometry PSNRs use the symmetric (max of both directions) mean squared error
and a peak of 3 * (2**p - 1)**2. Where several reference points are equally
near a query, D2 errors and colours are averaged over all of them, which
keeps every metric independent of point order.
"""

from __future__ import annotations

import math

import numpy as np

from ..pointcloud import PointCloud
from .nearest import nearest

LOSSLESS = math.inf
NORMAL_NEIGHBOURS = 12
# BT.709, full range
_RGB2YUV = np.array([
    [0.2126, 0.7152, 0.0722],
    [-0.2126 / 1.8556, -0.7152 / 1.8556, 0.9278 / 1.8556],
    [0.7874 / 1.5748, -0.7152 / 1.5748, -0.0722 / 1.5748],
])
_YUV_OFFSET = np.array([0.0, 128.0, 128.0])


def _points(pc) -> np.ndarray:
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("metric on an empty cloud")
    return pts


def psnr(mse: float, peak_sq: float) -> float:
    if mse <= 0:
        return LOSSLESS
    return 10.0 * math.log10(peak_sq / mse)


def geometry_peak(precision: int) -> float:
    return 3.0 * (2.0**precision - 1.0) ** 2


def d1_mse(ref, test) -> float:
    a, b = _points(ref), _points(test)
    return max(float(nearest(b, a).d2.mean()), float(nearest(a, b).d2.mean()))


def psnr_d1(ref, test, precision: int) -> float:
    """Symmetric point-to-point PSNR; ``LOSSLESS`` (+inf) for identical sets."""
    return psnr(d1_mse(ref, test), geometry_peak(precision))


def estimate_normals(points: np.ndarray, k: int = NORMAL_NEIGHBOURS):
    """Unit normals by PCA over the k nearest points (self included, ties kept).

    The neighbourhood is every point within the k-th nearest distance, so it
    does not depend on point order. Returns ``(normals, valid)`` where invalid
    rows come from rank-deficient (collinear or too small) neighbourhoods.
    """
    from scipy.spatial import cKDTree

    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 3:
        return np.zeros((n, 3)), np.zeros(n, dtype=bool)
    tree = cKDTree(pts)
    kk = min(k, n)
    # a few spare candidates catch most ties at the k-th distance
    extra = min(n, kk + 8)
    _, idx = tree.query(pts, k=extra)
    idx = idx.reshape(n, extra)
    disp = pts[idx] - pts[:, None, :]
    d2 = (disp**2).sum(axis=2)
    kth = d2[:, kk - 1]
    keep = d2 <= kth[:, None]
    cnt = keep.sum(axis=1).astype(np.float64)
    s1 = np.einsum("nk,nki->ni", keep, disp)
    s2 = np.einsum("nk,nki,nkj->nij", keep, disp, disp)
    overflow = np.flatnonzero(keep[:, -1] & (extra < n))
    if len(overflow):
        balls = tree.query_ball_point(pts[overflow], np.sqrt(kth[overflow]) * (1 + 1e-9) + 1e-9)
        for row, cand in zip(overflow, balls):
            dd = pts[np.asarray(cand)] - pts[row]
            dd = dd[(dd**2).sum(axis=1) <= kth[row]]
            cnt[row], s1[row], s2[row] = len(dd), dd.sum(axis=0), dd.T @ dd
    mean = s1 / cnt[:, None]
    cov = s2 / cnt[:, None, None] - mean[:, :, None] * mean[:, None, :]
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, -1], 1e-12)
    valid = evals[:, 1] > 1e-9 * scale
    normals = np.where(valid[:, None], evecs[:, :, 0], 0.0)
    return normals, valid


def plane_normal(neighbourhood: np.ndarray):
    """Smallest-eigenvalue eigenvector of the neighbourhood covariance."""
    if len(neighbourhood) < 3:
        return np.zeros(3), False
    centred = neighbourhood - neighbourhood.mean(axis=0)
    cov = centred.T @ centred / len(neighbourhood)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[-1], 1e-12)
    if evals[1] <= 1e-9 * scale:
        return np.zeros(3), False
    return evecs[:, 0], True


def _d2_direction(src, dst, ref_normals, ref_valid, src_is_ref: bool) -> float:
    nb = nearest(dst, src, with_ties=True)
    counts = np.diff(nb.offsets)
    owner = np.repeat(np.arange(len(src)), counts)
    disp = dst[nb.index] - src[owner]
    if src_is_ref:
        normals, valid = ref_normals[owner], ref_valid[owner]
    else:
        normals, valid = ref_normals[nb.index], ref_valid[nb.index]
    proj = np.einsum("ij,ij->i", disp, normals) ** 2
    err = np.where(valid, proj, (disp**2).sum(axis=1))
    per_query = np.zeros(len(src))
    np.add.at(per_query, owner, err)
    return float((per_query / counts).mean())


def d2_mse(ref, test, normals=None) -> float:
    a, b = _points(ref), _points(test)
    if normals is None:
        normals = estimate_normals(a)
    n, valid = normals
    return max(_d2_direction(a, b, n, valid, True), _d2_direction(b, a, n, valid, False))


def psnr_d2(ref, test, precision: int, normals=None) -> float:
    """Symmetric point-to-plane PSNR with reference normals."""
    return psnr(d2_mse(ref, test, normals), geometry_peak(precision))


def rgb_to_yuv(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ _RGB2YUV.T + _YUV_OFFSET


def _color_direction(src_pts, src_cols, dst_pts, dst_cols) -> np.ndarray:
    nb = nearest(dst_pts, src_pts, with_ties=True)
    matched = nb.mean_over_ties(dst_cols)
    return ((src_cols - matched) ** 2).mean(axis=0)


def color_mse(ref: PointCloud, test: PointCloud, space: str = "yuv") -> np.ndarray:
    """Per-channel symmetric colour MSE (max over the two directions)."""
    if not (ref.has_colors and test.has_colors):
        raise ValueError("colour metric needs colours on both clouds")
    a, b = _points(ref), _points(test)
    ca = ref.colors.astype(np.float64)
    cb = test.colors.astype(np.float64)
    if space == "yuv":
        ca, cb = rgb_to_yuv(ca), rgb_to_yuv(cb)
    elif space != "rgb":
        raise ValueError(f"unknown colour space {space!r}")
    return np.maximum(_color_direction(a, ca, b, cb), _color_direction(b, cb, a, ca))


def psnr_color(ref: PointCloud, test: PointCloud, space: str = "yuv") -> dict[str, float]:
    """Colour PSNRs (peak 255) per channel and combined.

    ``space="yuv"`` yields keys y, u, v and yuv (MSE weighted 6:1:1);
    ``space="rgb"`` yields r, g, b and rgb (plain channel mean).
    """
    mse = color_mse(ref, test, space)
    peak = 255.0**2
    if space == "yuv":
        out = dict(zip("yuv", (psnr(m, peak) for m in mse)))
        out["yuv"] = psnr((6 * mse[0] + mse[1] + mse[2]) / 8.0, peak)
    else:
        out = dict(zip("rgb", (psnr(m, peak) for m in mse)))
        out["rgb"] = psnr(float(mse.mean()), peak)
    return out


def bpp(bitstream_bytes: int, n_input_points: int) -> float:
    if n_input_points <= 0:
        raise ValueError("bpp needs a positive point count")
    return 8.0 * bitstream_bytes / n_input_points
