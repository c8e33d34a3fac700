"""Compiled vs interpreted kernels: range coding and nearest-neighbour search.

    python benchmarks/bench_kernels.py [--symbols N] [--points N] [--repeat R] [--json out.json]

Both paths run the same kernel source; the script checks that their outputs
agree before reporting times. The first compiled call (numba JIT or cache
load) is timed separately.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from itdlpcc import _accel
from itdlpcc.entropy import _kernels as EK
from itdlpcc.quality import _nn_kernels as NK
from itdlpcc.quality.nearest import RING_BUDGET, GridIndex


def _time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_range_coder(n: int, repeat: int, rng) -> dict:
    mu = rng.normal(0, 3, n)
    sigma = rng.uniform(0.2, 6, n)
    sym = np.round(rng.normal(mu, sigma)).astype(np.int64)
    out_py = np.zeros(6 * n + 16, np.uint8)
    out_jit = np.zeros_like(out_py)
    t0 = time.perf_counter()
    n_jit = EK.encode_parametric.jit(sym, mu, sigma, EK.GAUSSIAN, out_jit)
    first = time.perf_counter() - t0
    n_py = EK.encode_parametric.py(sym, mu, sigma, EK.GAUSSIAN, out_py)
    if n_py != n_jit or not np.array_equal(out_py[:n_py], out_jit[:n_jit]):
        raise AssertionError("compiled and interpreted range coders disagree")
    dec = np.zeros(n, np.int64)
    EK.decode_parametric.jit(out_jit[1:n_jit], mu, sigma, EK.GAUSSIAN, dec)
    if not np.array_equal(dec, sym):
        raise AssertionError("range coder round trip failed")
    return {
        "kernel": "range_encode", "n": n, "first_call_s": first,
        "py_s": _time(lambda: EK.encode_parametric.py(sym, mu, sigma, EK.GAUSSIAN, out_py), repeat),
        "jit_s": _time(lambda: EK.encode_parametric.jit(sym, mu, sigma, EK.GAUSSIAN, out_jit), repeat),
    }


def bench_nearest(n: int, repeat: int, rng) -> dict:
    side = int(np.sqrt(n))
    u, v = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    ref = np.stack([u.ravel(), v.ravel(), (0.3 * u + 0.2 * v).round().ravel()], 1).astype(np.float64)
    queries = ref + rng.integers(-2, 3, ref.shape)
    index = GridIndex(ref)
    args = (index.origin, index.cell, index.dims, index.ukeys, index.starts, index.ref, RING_BUDGET)
    d_py, c_py = np.empty(len(queries)), np.empty(len(queries), np.int64)
    d_jit, c_jit = np.empty_like(d_py), np.empty_like(c_py)
    t0 = time.perf_counter()
    NK.nn_best.jit(queries, *args, d_jit, c_jit)
    first = time.perf_counter() - t0
    NK.nn_best.py(queries, *args, d_py, c_py)
    if not (np.array_equal(d_py, d_jit) and np.array_equal(c_py, c_jit)):
        raise AssertionError("compiled and interpreted nearest-neighbour kernels disagree")
    return {
        "kernel": "nn_best", "n": len(queries), "first_call_s": first,
        "py_s": _time(lambda: NK.nn_best.py(queries, *args, d_py, c_py), repeat),
        "jit_s": _time(lambda: NK.nn_best.jit(queries, *args, d_jit, c_jit), repeat),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=20_000)
    ap.add_argument("--points", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    rows = [bench_range_coder(args.symbols, args.repeat, rng), bench_nearest(args.points, args.repeat, rng)]
    print(f"{'kernel':<14}{'n':>10}{'python s':>12}{'numba s':>12}{'speed-up':>10}{'first call s':>14}")
    for r in rows:
        r["speedup"] = r["py_s"] / r["jit_s"]
        print(f"{r['kernel']:<14}{r['n']:>10}{r['py_s']:>12.4f}{r['jit_s']:>12.4f}"
              f"{r['speedup']:>10.1f}{r['first_call_s']:>14.3f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return rows


if __name__ == "__main__":
    main()
