"""Central finite-difference checks for the autograd engine."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300)


def check_gradients(fn, tensors: list[Tensor], n_probes: int = 10, eps: float = 1e-6, seed: int = 0) -> float:
    """Worst relative error between analytic and numeric directional derivatives.

    ``fn`` must return a scalar Tensor built from ``tensors`` (float64). Each
    probe draws a random direction over all tensors jointly and compares
    <grad, d> with a central difference along d.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    originals = [t.data.copy() for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        dirs = [rng.standard_normal(t.shape) for t in tensors]
        expected = sum(float((a * d).sum()) for a, d in zip(analytic, dirs))
        values = []
        for sign in (1.0, -1.0):
            for t, o, d in zip(tensors, originals, dirs):
                t.data = o + sign * eps * d
            values.append(float(fn().data))
        for t, o in zip(tensors, originals):
            t.data = o.copy()
        numeric = (values[0] - values[1]) / (2 * eps)
        worst = max(worst, relative_error(expected, numeric))
    return worst
