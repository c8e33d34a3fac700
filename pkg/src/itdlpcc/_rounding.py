import numpy as np


def round_half_away(x):
    """Round to nearest integer, ties away from zero (2.5 -> 3, -2.5 -> -3)."""
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    frac = x - whole
    return whole + np.where(np.abs(frac) >= 0.5, np.sign(frac), 0.0)


def round_half_away_int(x) -> np.ndarray:
    return round_half_away(x).astype(np.int64)
