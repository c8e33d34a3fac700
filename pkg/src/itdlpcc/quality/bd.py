"""Bjontegaard delta rate / quality between two RD curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RdPoint:
    rate: float
    quality: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")


def _arrays(curve) -> tuple[np.ndarray, np.ndarray]:
    pts = [p if isinstance(p, RdPoint) else RdPoint(*p) for p in curve]
    if len(pts) < 4:
        raise ValueError(f"BD metrics need at least 4 points, got {len(pts)}")
    pts.sort(key=lambda p: p.rate)
    rate = np.array([p.rate for p in pts], dtype=np.float64)
    quality = np.array([p.quality for p in pts], dtype=np.float64)
    return rate, quality


def _avg_poly(x, y, lo, hi) -> float:
    poly = np.polyint(np.polyfit(x, y, 3))
    return (np.polyval(poly, hi) - np.polyval(poly, lo)) / (hi - lo)


def bd_quality(curve_a: Sequence, curve_b: Sequence) -> float:
    """Average quality gain of B over A across the shared log-rate interval."""
    ra, qa = _arrays(curve_a)
    rb, qb = _arrays(curve_b)
    la, lb = np.log10(ra), np.log10(rb)
    lo, hi = max(la.min(), lb.min()), min(la.max(), lb.max())
    if hi <= lo:
        raise ValueError("RD curves do not overlap in rate")
    return float(_avg_poly(lb, qb, lo, hi) - _avg_poly(la, qa, lo, hi))


def bd_rate(curve_a: Sequence, curve_b: Sequence) -> float:
    """Average rate change of B relative to A in percent (negative = saving)."""
    ra, qa = _arrays(curve_a)
    rb, qb = _arrays(curve_b)
    lo, hi = max(qa.min(), qb.min()), min(qa.max(), qb.max())
    if hi <= lo:
        raise ValueError("RD curves do not overlap in quality")
    diff = _avg_poly(qb, np.log10(rb), lo, hi) - _avg_poly(qa, np.log10(ra), lo, hi)
    return float((10.0**diff - 1.0) * 100.0)


def bd_metrics(curve_a: Sequence, curve_b: Sequence) -> tuple[float, float]:
    """(BD-rate %, BD-quality) of curve B against reference curve A."""
    return bd_rate(curve_a, curve_b), bd_quality(curve_a, curve_b)
