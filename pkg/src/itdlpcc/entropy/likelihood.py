"""Continuous-parameter likelihoods of integer symbols (numpy, float64)."""

import numpy as np
from scipy.special import expit, ndtr

LIKELIHOOD_FLOOR = 2.0**-64


def gaussian_likelihood(q, mu, sigma):
    """P(q) = Phi((q - mu + 1/2) / sigma) - Phi((q - mu - 1/2) / sigma), floored."""
    v = np.abs(np.asarray(q, dtype=np.float64) - mu)
    sigma = np.asarray(sigma, dtype=np.float64)
    p = ndtr((0.5 - v) / sigma) - ndtr((-0.5 - v) / sigma)
    return np.maximum(p, LIKELIHOOD_FLOOR)


def logistic_likelihood(q, loc, scale):
    v = np.abs(np.asarray(q, dtype=np.float64) - loc)
    scale = np.asarray(scale, dtype=np.float64)
    p = expit((0.5 - v) / scale) - expit((-0.5 - v) / scale)
    return np.maximum(p, LIKELIHOOD_FLOOR)


def bits(p) -> float:
    return float(-np.log2(np.asarray(p, dtype=np.float64)).sum())
