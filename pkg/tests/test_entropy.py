import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from itdlpcc import _accel
from itdlpcc.entropy import (
    EntropyCodingError,
    build_factorized,
    build_symbol_model,
    decode_parametric,
    encode_parametric,
    gaussian_likelihood,
    logistic_likelihood,
    model_from_pmf,
    parametric_cost_bits,
    range_decode,
    range_encode,
    table_cost_bits,
)
from itdlpcc.entropy import _kernels as K


def gaussian_stream(rng, n, mu_range=20.0, log_sigma=(-3, 4)):
    mu = rng.uniform(-mu_range, mu_range, n)
    sigma = np.exp(rng.uniform(*log_sigma, n))
    sym = np.round(rng.normal(mu, sigma)).astype(np.int64)
    return sym, mu, sigma


# likelihoods

def test_gaussian_likelihood_value():
    p = gaussian_likelihood(0, 0.0, 0.5)
    assert p == pytest.approx(norm.cdf(1) - norm.cdf(-1), rel=1e-12)
    assert p == pytest.approx(0.682689, abs=1e-6)


def test_likelihood_symmetry_and_floor(rng):
    k = np.arange(-20, 21)
    np.testing.assert_array_equal(gaussian_likelihood(k, 0.0, 2.3), gaussian_likelihood(-k, 0.0, 2.3))
    np.testing.assert_array_equal(logistic_likelihood(k, 0.0, 1.7), logistic_likelihood(-k, 0.0, 1.7))
    assert gaussian_likelihood(1000, 0.0, 0.1) == 2.0**-64


@pytest.mark.parametrize("mu,sigma", [(0.0, 0.5), (3.3, 2.0), (-7.1, 11.0), (0.49, 0.05)])
def test_likelihood_sums_to_one(mu, sigma):
    support = np.arange(math.floor(mu - 12 * sigma) - 2, math.ceil(mu + 12 * sigma) + 3)
    assert gaussian_likelihood(support, mu, sigma).sum() == pytest.approx(1.0, abs=1e-6)
    assert logistic_likelihood(support, mu, sigma / 2).sum() == pytest.approx(1.0, abs=1e-4)


# symbol models

@pytest.mark.parametrize("mu,sigma", [(0.0, 1.0), (12.4, 0.001), (-3.0, 300.0), (0.0, 5000.0)])
def test_symbol_model_invariants(mu, sigma):
    m = build_symbol_model(mu, sigma)
    assert m.freqs.sum() == K.TOTAL
    assert m.freqs.min() >= 1
    assert np.all(np.diff(m.cdf()) > 0)
    assert m == build_symbol_model(mu, sigma)


def test_narrow_model_concentrates():
    m = build_symbol_model(0.0, 1e-3)
    assert m.prob(0) > 0.99
    assert m.low <= 0 <= m.high


def test_window_is_mu_pm_8_sigma():
    m = build_symbol_model(10.0, 2.0)
    assert m.low == pytest.approx(10 - 16, abs=1)
    assert m.high == pytest.approx(10 + 16, abs=1)


def test_build_symbol_model_rejects_bad_params():
    for mu, s in [(0.0, 0.0), (np.nan, 1.0), (0.0, -1.0), (0.0, np.inf)]:
        with pytest.raises(ValueError):
            build_symbol_model(mu, s)


def test_model_from_pmf():
    m = model_from_pmf([0.5, 0.25, 0.25], low=-1)
    assert m.freqs.sum() == K.TOTAL
    assert m.prob(-1) == pytest.approx(0.5, abs=1e-3)


# range coder

def test_empty_stream_is_framing_only():
    payload = range_encode([], [])
    assert len(payload) <= 8
    assert range_decode(payload, []).size == 0
    assert decode_parametric(encode_parametric([], [], []), [], []).size == 0


def test_parametric_round_trip_large(rng):
    sym, mu, sigma = gaussian_stream(rng, 100_000)
    payload = encode_parametric(sym, mu, sigma)
    np.testing.assert_array_equal(decode_parametric(payload, mu, sigma), sym)


def test_table_round_trip_random_models(rng):
    models = [model_from_pmf(rng.dirichlet(np.ones(n)), low=int(rng.integers(-50, 50)))
              for n in rng.integers(1, 40, 30)]
    index = rng.integers(0, len(models), 100_000)
    sym = np.array([models[i].low + rng.integers(-2, models[i].n_regular + 2) for i in index])
    payload = range_encode(sym, models, index)
    np.testing.assert_array_equal(range_decode(payload, models, index), sym)
    assert len(payload) * 8 <= table_cost_bits(sym, models, index) + 32 * 8


def test_escapes_round_trip():
    mu = np.zeros(6)
    sigma = np.full(6, 0.5)
    sym = np.array([0, 10_000, -10_000, 2**31 - 1, -(2**31), 7])
    np.testing.assert_array_equal(decode_parametric(encode_parametric(sym, mu, sigma), mu, sigma), sym)


def test_uniform_bytes_cost_about_one_byte_each(rng):
    model = model_from_pmf(np.ones(256))
    sym = rng.integers(0, 256, 10_000)
    payload = range_encode(sym, [model], np.zeros(len(sym), np.int64))
    assert abs(len(payload) - 10_000) <= 0.01 * 10_000
    np.testing.assert_array_equal(range_decode(payload, [model], np.zeros(len(sym), np.int64)), sym)


def test_logistic_factorized_round_trip(rng):
    loc = rng.normal(0, 2, 8)
    scale = rng.uniform(0.2, 4, 8)
    models = build_factorized(loc, scale)
    index = np.repeat(np.arange(8), 500)
    sym = np.round(rng.logistic(loc[index], scale[index])).astype(np.int64)
    np.testing.assert_array_equal(range_decode(range_encode(sym, models, index), models, index), sym)
    payload = encode_parametric(sym, loc[index], scale[index], "logistic")
    np.testing.assert_array_equal(decode_parametric(payload, loc[index], scale[index], "logistic"), sym)


def test_payload_close_to_information_content(rng):
    sym, mu, sigma = gaussian_stream(rng, 50_000)
    payload = encode_parametric(sym, mu, sigma)
    table_bits = parametric_cost_bits(sym, mu, sigma)
    ideal = -np.log2(gaussian_likelihood(sym, mu, sigma)).sum()
    assert len(payload) * 8 <= table_bits + 32 * 8
    assert abs(len(payload) * 8 - ideal) <= 0.01 * ideal + 64


def test_table_and_parametric_paths_agree(rng):
    sym, mu, sigma = gaussian_stream(rng, 2000)
    models = [build_symbol_model(m, s) for m, s in zip(mu, sigma)]
    assert range_encode(sym, models) == encode_parametric(sym, mu, sigma)
    assert table_cost_bits(sym, models) == pytest.approx(parametric_cost_bits(sym, mu, sigma), rel=1e-9)


def test_count_mismatch_and_truncation_detected(rng):
    sym, mu, sigma = gaussian_stream(rng, 500)
    payload = encode_parametric(sym, mu, sigma)
    with pytest.raises(EntropyCodingError):
        decode_parametric(payload, mu[:-1], sigma[:-1])
    with pytest.raises(EntropyCodingError):
        decode_parametric(payload[:3], mu, sigma)
    with pytest.raises(EntropyCodingError):
        decode_parametric(payload[: len(payload) // 2], mu, sigma)


def test_symbols_must_be_integers():
    with pytest.raises(ValueError):
        encode_parametric([0.5], [0.0], [1.0])
    with pytest.raises(ValueError):
        encode_parametric([2**40], [0.0], [1.0])
    with pytest.raises(ValueError):
        encode_parametric([1, 2], [0.0], [1.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 400), st.floats(-3, 6), st.sampled_from(["gaussian", "logistic"]))
def test_round_trip_property(seed, n, log_sigma, dist):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(-100, 100, n)
    sigma = np.exp(log_sigma + rng.uniform(-1, 1, n))
    sym = np.round(mu + sigma * rng.standard_normal(n) * rng.choice([1, 3, 20], n)).astype(np.int64)
    payload = encode_parametric(sym, mu, sigma, dist)
    np.testing.assert_array_equal(decode_parametric(payload, mu, sigma, dist), sym)


@pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")
def test_compiled_and_interpreted_coders_are_bit_identical(rng):
    sym, mu, sigma = gaussian_stream(rng, 3000)
    out_py = np.zeros(6 * len(sym) + 16, np.uint8)
    out_jit = np.zeros_like(out_py)
    n_py = K.encode_parametric.py(sym, mu, sigma, K.GAUSSIAN, out_py)
    n_jit = K.encode_parametric.jit(sym, mu, sigma, K.GAUSSIAN, out_jit)
    assert n_py == n_jit
    np.testing.assert_array_equal(out_py[:n_py], out_jit[:n_jit])
    dec_py, dec_jit = np.zeros(len(sym), np.int64), np.zeros(len(sym), np.int64)
    K.decode_parametric.py(out_py[1:n_py], mu, sigma, K.GAUSSIAN, dec_py)
    K.decode_parametric.jit(out_jit[1:n_jit], mu, sigma, K.GAUSSIAN, dec_jit)
    np.testing.assert_array_equal(dec_py, sym)
    np.testing.assert_array_equal(dec_jit, sym)
    assert K.cost_parametric.py(sym, mu, sigma, K.GAUSSIAN) == K.cost_parametric.jit(sym, mu, sigma, K.GAUSSIAN)
