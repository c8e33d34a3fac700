"""Range-coded payloads over quantized discrete models.

A payload is ``[u32 little-endian symbol count][range-coded body]``. The
decoder is told how many symbols to expect (one model per symbol, or one
model index per symbol) and rejects payloads whose count disagrees. The
body omits the coder's constant leading zero byte and up to four zero bytes
of its final flush; the decoder reads zeros past the end of the body.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K


class EntropyCodingError(ValueError):
    """Raised on corrupt, truncated or mis-framed payloads."""


@dataclass(frozen=True, eq=False)
class SymbolModel:
    """Quantized model over integers ``low .. low + n_regular - 1`` plus an escape.

    ``freqs`` has ``n_regular + 1`` entries (escape last), each >= 1, summing
    to 2**16. Values outside the regular range are coded as the escape symbol
    followed by the raw 32-bit value.
    """

    low: int
    freqs: np.ndarray

    @property
    def n_regular(self) -> int:
        return len(self.freqs) - 1

    @property
    def high(self) -> int:
        return self.low + self.n_regular - 1

    def cdf(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.freqs)]).astype(np.int64)

    def prob(self, q: int) -> float:
        idx = q - self.low
        if 0 <= idx < self.n_regular:
            return self.freqs[idx] / K.TOTAL
        return self.freqs[-1] / K.TOTAL * 2.0**-32

    def __eq__(self, other):
        return (isinstance(other, SymbolModel) and self.low == other.low
                and np.array_equal(self.freqs, other.freqs))


def _dist_code(dist: str) -> int:
    if dist == "gaussian":
        return K.GAUSSIAN
    if dist == "logistic":
        return K.LOGISTIC
    raise ValueError(f"unknown distribution {dist!r}")


def build_symbol_model(mu: float, sigma: float, dist: str = "gaussian") -> SymbolModel:
    """Discretized Gaussian (or logistic) model on the window mu +- 8 std."""
    if not (np.isfinite(mu) and np.isfinite(sigma) and sigma > 0):
        raise ValueError(f"invalid model parameters mu={mu}, sigma={sigma}")
    mass = np.empty(K.MAX_SYMBOLS, np.float64)
    freq = np.empty(K.MAX_SYMBOLS, np.int64)
    lo, n_reg = K.build_parametric(_dist_code(dist), float(mu), float(sigma), mass, freq)
    return SymbolModel(int(lo), freq[: int(n_reg) + 1].copy())


def model_from_pmf(pmf, low: int = 0) -> SymbolModel:
    """Quantize an explicit pmf over ``low .. low + len(pmf) - 1``."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or len(pmf) == 0 or len(pmf) + 1 > K.TOTAL // 2:
        raise ValueError("pmf must be a non-empty 1-D array of moderate length")
    if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
        raise ValueError("pmf entries must be finite and non-negative")
    pmf = pmf / max(pmf.sum(), 1.0)
    freq = np.empty(len(pmf) + 1, np.int64)
    K.quantize_masses(pmf, freq)
    return SymbolModel(int(low), freq)


def build_factorized(loc, scale) -> list[SymbolModel]:
    """One discretized logistic model per channel."""
    loc = np.asarray(loc, dtype=np.float64).ravel()
    scale = np.asarray(scale, dtype=np.float64).ravel()
    return [build_symbol_model(m, s, "logistic") for m, s in zip(loc, scale)]


@dataclass(frozen=True)
class _Tables:
    lows: np.ndarray
    starts: np.ndarray
    cdf: np.ndarray


def _pack(models: Sequence[SymbolModel]) -> _Tables:
    cdfs = [m.cdf() for m in models]
    starts = np.zeros(len(cdfs) + 1, np.int64)
    starts[1:] = np.cumsum([len(c) for c in cdfs])
    cdf = np.concatenate(cdfs) if cdfs else np.zeros(0, np.int64)
    lows = np.array([m.low for m in models], dtype=np.int64)
    return _Tables(lows, starts, cdf)


def _as_symbols(symbols) -> np.ndarray:
    s = np.asarray(symbols)
    if s.size and not np.issubdtype(s.dtype, np.integer):
        if not np.all(np.equal(np.mod(s, 1), 0)):
            raise ValueError("symbols must be integers")
    s = s.astype(np.int64).ravel()
    if s.size and (s.min() < -(2**31) or s.max() >= 2**31):
        raise ValueError("symbols must fit in 32 bits")
    return s


# trailing zero bytes the decoder may read past the end of a body
FLUSH_SLACK = 4


def _frame(count: int, out: np.ndarray, nbytes: int) -> bytes:
    """Header plus body; drops the always-zero lead byte and zero flush bytes."""
    body = out[1:nbytes]
    end = len(body)
    while end > 0 and len(body) - end < FLUSH_SLACK and body[end - 1] == 0:
        end -= 1
    return struct.pack("<I", count) + body[:end].tobytes()


def _unframe(payload: bytes, expected: int) -> np.ndarray:
    if len(payload) < 4:
        raise EntropyCodingError("payload shorter than its 4-byte header")
    (count,) = struct.unpack_from("<I", payload)
    if count != expected:
        raise EntropyCodingError(f"payload holds {count} symbols, decoder expects {expected}")
    return np.frombuffer(payload, dtype=np.uint8, offset=4)


def _check_consumed(consumed: int, available: int):
    if consumed > available + FLUSH_SLACK:
        raise EntropyCodingError(f"truncated payload: needed {consumed} bytes, have {available}")


def range_encode(symbols, models: Sequence[SymbolModel], index=None) -> bytes:
    """Encode with explicit models: one per symbol, or ``models[index[i]]``."""
    s = _as_symbols(symbols)
    if index is None:
        if len(models) != len(s):
            raise ValueError(f"{len(models)} models for {len(s)} symbols")
        index = np.arange(len(s), dtype=np.int64)
    else:
        index = np.asarray(index, dtype=np.int64).ravel()
        if len(index) != len(s):
            raise ValueError("index length differs from symbol count")
        if len(index) and (index.min() < 0 or index.max() >= len(models)):
            raise ValueError("model index out of range")
    t = _pack(models)
    out = np.zeros(6 * len(s) + 16, np.uint8)
    n = K.encode_tables(s, index, t.lows, t.starts, t.cdf, out)
    return _frame(len(s), out, int(n))


def range_decode(payload: bytes, models: Sequence[SymbolModel], index=None) -> np.ndarray:
    if index is None:
        index = np.arange(len(models), dtype=np.int64)
    else:
        index = np.asarray(index, dtype=np.int64).ravel()
    body = _unframe(payload, len(index))
    t = _pack(models)
    out = np.zeros(len(index), np.int64)
    consumed = K.decode_tables(body, index, t.lows, t.starts, t.cdf, out)
    _check_consumed(int(consumed), len(body))
    return out


def _check_params(mu, scale, n):
    mu = np.ascontiguousarray(mu, dtype=np.float64).ravel()
    scale = np.ascontiguousarray(scale, dtype=np.float64).ravel()
    if len(mu) != n or len(scale) != n:
        raise ValueError("parameter arrays must match the symbol count")
    if n and (not np.all(np.isfinite(mu)) or not np.all(scale > 0) or not np.all(np.isfinite(scale))):
        raise ValueError("model parameters must be finite with positive scale")
    return mu, scale


def encode_parametric(symbols, mu, scale, dist: str = "gaussian") -> bytes:
    """Encode each symbol under its own discretized distribution."""
    s = _as_symbols(symbols)
    mu, scale = _check_params(mu, scale, len(s))
    out = np.zeros(6 * len(s) + 16, np.uint8)
    n = K.encode_parametric(s, mu, scale, _dist_code(dist), out)
    return _frame(len(s), out, int(n))


def decode_parametric(payload: bytes, mu, scale, dist: str = "gaussian") -> np.ndarray:
    n = np.size(mu)
    mu, scale = _check_params(mu, scale, n)
    body = _unframe(payload, n)
    out = np.zeros(n, np.int64)
    consumed = K.decode_parametric(body, mu, scale, _dist_code(dist), out)
    _check_consumed(int(consumed), len(body))
    return out


def encode_gaussian(symbols, mu, sigma) -> bytes:
    return encode_parametric(symbols, mu, sigma, "gaussian")


def decode_gaussian(payload: bytes, mu, sigma) -> np.ndarray:
    return decode_parametric(payload, mu, sigma, "gaussian")


def parametric_cost_bits(symbols, mu, scale, dist: str = "gaussian") -> float:
    """Sum of -log2 P over the quantized tables the coder actually uses."""
    s = _as_symbols(symbols)
    mu, scale = _check_params(mu, scale, len(s))
    return float(K.cost_parametric(s, mu, scale, _dist_code(dist)))


def table_cost_bits(symbols, models: Sequence[SymbolModel], index=None) -> float:
    s = _as_symbols(symbols)
    if index is None:
        index = range(len(s))
    return float(-sum(np.log2(models[m].prob(int(q))) for q, m in zip(s, index)))
