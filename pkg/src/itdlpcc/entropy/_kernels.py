"""Range coder inner loops.

Carry-propagating byte-oriented range coder (33-bit ``low`` held in an int64,
32-bit ``range``) over 16-bit frequency tables. Every function here runs
either compiled by numba or interpreted, with identical integer results.

Coder state lives in small int64 arrays so helpers can mutate it in both
modes: encoder ``st = [low, range, cache, cache_size, pos]`` and decoder
``st = [code, range, pos]``.
"""

import math

import numpy as np

from .._accel import jitable, kernel

PRECISION = 16
TOTAL = 1 << PRECISION
TOP = 1 << 24
MASK32 = 0xFFFFFFFF
# per-element support clamp; out-of-window values go through the escape symbol
MAX_HALF = 4096
QMIN = -32768
QMAX = 32767
TAIL = 8.0
GAUSSIAN = 0
LOGISTIC = 1
LOGISTIC_STD = math.pi / math.sqrt(3.0)
SQRT1_2 = 1.0 / math.sqrt(2.0)
MAX_SYMBOLS = 2 * MAX_HALF + 2


@jitable
def _shift_low(st, out):
    low = st[0]
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        temp = st[2]
        while True:
            out[st[4]] = (temp + carry) & 0xFF
            st[4] += 1
            temp = 0xFF
            st[3] -= 1
            if st[3] == 0:
                break
        st[2] = (low >> 24) & 0xFF
    st[3] += 1
    st[0] = (low & 0x00FFFFFF) << 8


@jitable
def _enc_init(st):
    st[0] = 0
    st[1] = MASK32
    st[2] = 0
    st[3] = 1
    st[4] = 0


@jitable
def _enc_put(st, out, cum, freq):
    r = st[1] >> PRECISION
    st[0] += r * cum
    st[1] = r * freq
    while st[1] < TOP:
        st[1] <<= 8
        _shift_low(st, out)


@jitable
def _enc_flush(st, out):
    # settle on the value in [low, low + range) with the most trailing zero
    # bits, so the final bytes are zeros the framing can drop
    low = st[0]
    high = low + st[1] - 1
    k = 32
    while k > 0:
        mask = (np.int64(1) << k) - 1
        v = (low + mask) & ~mask
        if v <= high:
            st[0] = v
            break
        k -= 1
    for _ in range(5):
        _shift_low(st, out)


@jitable
def _next_byte(st, data):
    pos = st[2]
    st[2] = pos + 1
    if pos < data.shape[0]:
        return np.int64(data[pos])
    return np.int64(0)


@jitable
def _dec_init(st, data):
    st[0] = 0
    st[1] = MASK32
    st[2] = 0
    # the encoder's first byte is always 0 and is not stored
    for _ in range(4):
        st[0] = ((st[0] << 8) | _next_byte(st, data)) & MASK32


@jitable
def _dec_target(st):
    r = st[1] >> PRECISION
    v = st[0] // r
    if v >= TOTAL:
        v = TOTAL - 1
    return v


@jitable
def _dec_consume(st, data, cum, freq):
    r = st[1] >> PRECISION
    st[0] -= r * cum
    st[1] = r * freq
    while st[1] < TOP:
        st[0] = ((st[0] << 8) | _next_byte(st, data)) & MASK32
        st[1] <<= 8


@jitable
def _put_raw32(st, out, value):
    u = value & MASK32
    _enc_put(st, out, u >> 16, 1)
    _enc_put(st, out, u & 0xFFFF, 1)


@jitable
def _get_raw32(st, data):
    hi = _dec_target(st)
    _dec_consume(st, data, hi, 1)
    lo = _dec_target(st)
    _dec_consume(st, data, lo, 1)
    u = (hi << 16) | lo
    if u >= (1 << 31):
        u -= 1 << 32
    return u


@jitable
def _bin_mass(dist, x, mu, scale):
    """Probability of the unit bin centred on integer x."""
    v = abs(x - mu)
    hi = (0.5 - v) / scale
    lo = (-0.5 - v) / scale
    if dist == GAUSSIAN:
        return 0.5 * (math.erfc(-hi * SQRT1_2) - math.erfc(-lo * SQRT1_2))
    return 1.0 / (1.0 + math.exp(-hi)) - 1.0 / (1.0 + math.exp(-lo))


@jitable
def _round_half_away(x):
    a = abs(x)
    r = float(math.floor(a))
    if a - r >= 0.5:
        r += 1.0
    return r if x >= 0 else -r


@jitable
def _window(dist, mu, scale):
    """First symbol and number of regular symbols of an element's model."""
    half = TAIL * scale
    if dist == LOGISTIC:
        half = TAIL * LOGISTIC_STD * scale
    centre = _round_half_away(mu)
    lo = max(float(math.floor(mu - half)), centre - MAX_HALF, float(QMIN))
    hi = min(float(math.ceil(mu + half)), centre + MAX_HALF, float(QMAX))
    if hi < lo:
        c = min(max(centre, float(QMIN)), float(QMAX))
        lo = c
        hi = c
    return np.int64(lo), np.int64(hi - lo + 1)


@jitable
def _quantize_masses(mass, n_reg, freq):
    """Map n_reg regular masses (+ implied escape) to frequencies summing to TOTAL.

    Each symbol gets floor(p * budget) + 1 with budget = TOTAL - n_symbols; the
    remainder goes to the most probable regular symbol (first on ties).
    """
    budget = TOTAL - (n_reg + 1)
    total_mass = 0.0
    best = 0
    best_mass = -1.0
    acc = 0
    for i in range(n_reg):
        m = mass[i]
        if m < 0.0:
            m = 0.0
        total_mass += m
        if m > best_mass:
            best_mass = m
            best = i
        f = np.int64(math.floor(m * budget)) + 1
        freq[i] = f
        acc += f
    esc = 1.0 - total_mass
    if esc < 0.0:
        esc = 0.0
    f = np.int64(math.floor(esc * budget)) + 1
    freq[n_reg] = f
    acc += f
    freq[best] += TOTAL - acc


@jitable
def _build_parametric(dist, mu, scale, mass, freq):
    lo, n_reg = _window(dist, mu, scale)
    for i in range(n_reg):
        mass[i] = _bin_mass(dist, float(lo + i), mu, scale)
    _quantize_masses(mass, n_reg, freq)
    return lo, n_reg


@kernel
def quantize_masses(mass, freq):
    _quantize_masses(mass, mass.shape[0], freq)


@kernel
def build_parametric(dist, mu, scale, mass, freq):
    return _build_parametric(dist, mu, scale, mass, freq)


@kernel
def encode_parametric(symbols, mus, scales, dist, out):
    st = np.zeros(5, dtype=np.int64)
    _enc_init(st)
    mass = np.empty(MAX_SYMBOLS, dtype=np.float64)
    freq = np.empty(MAX_SYMBOLS, dtype=np.int64)
    for i in range(symbols.shape[0]):
        lo, n_reg = _build_parametric(dist, mus[i], scales[i], mass, freq)
        q = symbols[i]
        idx = q - lo
        if idx < 0 or idx >= n_reg:
            idx = n_reg
        cum = 0
        for j in range(idx):
            cum += freq[j]
        _enc_put(st, out, cum, freq[idx])
        if idx == n_reg:
            _put_raw32(st, out, q)
    _enc_flush(st, out)
    return st[4]


@kernel
def decode_parametric(data, mus, scales, dist, symbols):
    st = np.zeros(3, dtype=np.int64)
    _dec_init(st, data)
    mass = np.empty(MAX_SYMBOLS, dtype=np.float64)
    freq = np.empty(MAX_SYMBOLS, dtype=np.int64)
    for i in range(symbols.shape[0]):
        lo, n_reg = _build_parametric(dist, mus[i], scales[i], mass, freq)
        v = _dec_target(st)
        cum = 0
        j = 0
        while j < n_reg:
            if v < cum + freq[j]:
                break
            cum += freq[j]
            j += 1
        _dec_consume(st, data, cum, freq[j])
        if j == n_reg:
            symbols[i] = _get_raw32(st, data)
        else:
            symbols[i] = lo + j
    return st[2]


@kernel
def cost_parametric(symbols, mus, scales, dist):
    """Ideal code length in bits under the quantized tables (escapes included)."""
    mass = np.empty(MAX_SYMBOLS, dtype=np.float64)
    freq = np.empty(MAX_SYMBOLS, dtype=np.int64)
    bits = 0.0
    for i in range(symbols.shape[0]):
        lo, n_reg = _build_parametric(dist, mus[i], scales[i], mass, freq)
        idx = symbols[i] - lo
        if idx < 0 or idx >= n_reg:
            bits += 32.0 - math.log2(freq[n_reg] / TOTAL)
        else:
            bits -= math.log2(freq[idx] / TOTAL)
    return bits


@kernel
def encode_tables(symbols, index, lows, starts, cdf, out):
    st = np.zeros(5, dtype=np.int64)
    _enc_init(st)
    for i in range(symbols.shape[0]):
        m = index[i]
        s = starts[m]
        n_reg = starts[m + 1] - s - 2
        q = symbols[i]
        idx = q - lows[m]
        if idx < 0 or idx >= n_reg:
            idx = n_reg
        _enc_put(st, out, cdf[s + idx], cdf[s + idx + 1] - cdf[s + idx])
        if idx == n_reg:
            _put_raw32(st, out, q)
    _enc_flush(st, out)
    return st[4]


@kernel
def decode_tables(data, index, lows, starts, cdf, symbols):
    st = np.zeros(3, dtype=np.int64)
    _dec_init(st, data)
    for i in range(symbols.shape[0]):
        m = index[i]
        s = starts[m]
        n_reg = starts[m + 1] - s - 2
        v = _dec_target(st)
        a = 0
        b = n_reg + 1
        while b - a > 1:
            mid = (a + b) // 2
            if cdf[s + mid] <= v:
                a = mid
            else:
                b = mid
        _dec_consume(st, data, cdf[s + a], cdf[s + a + 1] - cdf[s + a])
        if a == n_reg:
            symbols[i] = _get_raw32(st, data)
        else:
            symbols[i] = lows[m] + a
    return st[2]
