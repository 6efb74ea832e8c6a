"""Iterative and polynomial approximations over the engine surface.

Each function carries a (domain, tolerance) contract verified by the grid
sweeps in the test suite; outside the stated domain values are unspecified.
Magnitude-dependent initial guesses come from the highest-set-bit indicator
(msb_onehot), so round counts depend only on the configured iteration counts,
never on the data.

    exp        [-16, 8]      abs err <= 1e-2   (run at frac_bits >= 24)
    reciprocal [2^-6, 2^12]  rel err <= 1e-3
    rsqrt      [2^-6, 2^10]  rel err <= 1e-2
    sigmoid    [-16, 16]     abs err <= 2e-2
    silu       [-16, 16]     abs err <= 2e-2
    elu        [-16, 8]      abs err <= 2e-2
    log        [2^-6, 2^6]   abs err <= 2e-2
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import e_repeat, e_sum, tournament_max
from .ring import WORD_BITS, encode


@dataclass(frozen=True)
class ApproxConfig:
    exp_iters: int = 8  # squarings of the limit-form exponential core
    newton_iters_recip: int = 10
    newton_iters_rsqrt: int = 10
    exp_frac_degree: int = 10  # Taylor degree of the fractional exponential core
    exp_int_bits: int = 5  # integer bits consumed by range reduction (|x| < 32)

    def replace(self, **kv) -> "ApproxConfig":
        import dataclasses

        return dataclasses.replace(self, **kv)


DEFAULT_APPROX = ApproxConfig()

# power-basis fit of ln on [1, 2] (Chebyshev nodes, degree 6; max err ~3.5e-6)
_LN_MANTISSA_COEFFS = [
    -2.099126686928,
    4.204731361853,
    -3.649145745425,
    2.231405954187,
    -0.855653159860,
    0.185002419179,
    -0.017210670016,
]

_LN2 = math.log(2.0)


def _horner(e, z, coeffs):
    """Evaluate a power-basis polynomial highest-degree-first."""
    acc = e.const(z.shape, coeffs[-1])
    for c in reversed(coeffs[:-1]):
        acc = e.add_const(e.fmul(acc, z), c)
    return acc


def _onehot_dot(e, onehot, values: np.ndarray):
    """Sum of per-position public constants selected by a one-hot bit tensor.
    onehot is unscaled 0/1 on the last axis; the result is fixed-point."""
    enc = encode(values, e.cfg).data
    raw = e.raw(onehot)
    with np.errstate(over="ignore"):
        out = np.add.reduce(raw.data * enc, axis=-1, dtype=np.uint64)
    return e.wrap_like(onehot, out)


def _magnitude_table(e, fn):
    """values[j] = fn(exponent of a word whose leading one sits at bit j)."""
    f = e.cfg.frac_bits
    out = np.zeros(WORD_BITS)
    for j in range(WORD_BITS):
        e2 = j - f  # floor(log2 value) for positive fixed-point words
        out[j] = fn(e2)
    return out


def _clip_encodable(e, v: float) -> float:
    lim = e.cfg.max_abs
    return min(max(v, -lim * 0.99), lim * 0.99)


def sec_reciprocal(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    """Newton-Raphson y <- y(2 - xy) from a magnitude-normalized start."""
    onehot = e.msb_onehot(x)
    y = _onehot_dot(e, onehot, _magnitude_table(e, lambda e2: _clip_encodable(e, 0.75 * 2.0 ** (-e2))))
    for _ in range(cfg.newton_iters_recip):
        t = e.fmul(x, y)
        y = e.fmul(y, e.add_const(e.neg(t), 2.0))
    return y


def sec_rsqrt(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    """Newton-Raphson y <- y(3 - x y^2)/2 from a magnitude-normalized start."""
    onehot = e.msb_onehot(x)
    y = _onehot_dot(e, onehot, _magnitude_table(e, lambda e2: _clip_encodable(e, 2.0 ** (-e2 / 2.0))))
    for _ in range(cfg.newton_iters_rsqrt):
        t = e.fmul(x, e.fmul(y, y))
        h = e.add_const(e.neg(t), 3.0)
        y = e.trunc(e.mul_raw(y, h), e.cfg.frac_bits + 1)  # the /2 rides the rescale shift
    return y


def _exp_limit(e, x, cfg: ApproxConfig):
    """(1 + x/2^n)^(2^n) by n squarings; cheap core for non-positive inputs."""
    base = e.add_const(e.trunc(x, cfg.exp_iters), 1.0)
    for _ in range(cfg.exp_iters):
        base = e.fmul(base, base)
    return base


def sec_exp(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    """Range-reduced exponential: sign via comparison, integer bits via share
    conversion selecting table factors, Taylor core on the fractional part."""
    s = e.gtz(x)
    ax = e.mux(s, x, e.neg(x))
    bits = e.int_bits(ax, cfg.exp_int_bits)  # (..., n) unscaled 0/1
    f = e.cfg.frac_bits
    # integer part in fixed point: sum b_j * encode(2^j)
    raw_bits = e.raw(bits).data
    with np.errstate(over="ignore"):
        ipart_words = np.add.reduce(
            raw_bits << (np.arange(cfg.exp_int_bits, dtype=np.uint64) + np.uint64(f)),
            axis=-1,
            dtype=np.uint64,
        )
    ipart = e.wrap_like(x, ipart_words)
    frac = e.sub(ax, ipart)  # in [0, 1)
    z = e.mux(s, frac, e.neg(frac))
    taylor = [1.0 / math.factorial(k) for k in range(cfg.exp_frac_degree + 1)]
    core = _horner(e, z, taylor)
    out = core
    for j in range(cfg.exp_int_bits):
        up = _clip_encodable(e, math.exp(2.0**j))
        down = math.exp(-(2.0**j))
        b = e.wrap_like(x, raw_bits[..., j])
        # factor = 1 + b * (E - 1), E = down + s * (up - down); all selects local
        ej = e.add_const(e.bit_scale(s, up - down), down)
        delta = e.add_const(ej, -1.0)
        out = e.fmul(out, e.add_const(e.mul_bit(delta, b), 1.0))
    return out


def sec_sigmoid(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    """1/(1 + exp(-x)) computed on the non-positive side and mirrored, so the
    exponential core never leaves its domain and the reciprocal sits in [1,2]."""
    s = e.gtz(x)
    a = e.mux(s, e.neg(x), x)  # -|x|
    den = e.add_const(_exp_limit(e, a, cfg), 1.0)
    y = e.const(den.shape, 0.75)
    for _ in range(cfg.newton_iters_recip):
        t = e.fmul(den, y)
        y = e.fmul(y, e.add_const(e.neg(t), 2.0))
    return e.mux(s, y, e.add_const(e.neg(y), 1.0))


def sec_silu(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    return e.fmul(x, sec_sigmoid(e, x, cfg))


def sec_elu(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    s = e.gtz(x)
    return e.mux(s, x, e.add_const(sec_exp(e, x, cfg), -1.0))


def sec_log(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    """ln via mantissa/exponent split: normalize by the leading-one position,
    fit polynomial on [1, 2), add back e2 * ln 2."""
    onehot = e.msb_onehot(x)
    norm = _onehot_dot(e, onehot, _magnitude_table(e, lambda e2: _clip_encodable(e, 2.0 ** (-e2))))
    m = e.fmul(x, norm)
    ln_m = _horner(e, m, _LN_MANTISSA_COEFFS)
    ln_e2 = _onehot_dot(e, onehot, _magnitude_table(e, lambda e2: _clip_encodable(e, e2 * _LN2)))
    return e.add(ln_m, ln_e2)


def sec_max(e, x, axis: int = -1):
    """Tournament maximum along an axis; gtz+mux pairs, log-depth."""
    ax = axis % e.raw(x).data.ndim
    return tournament_max(e, x, axis=ax)


def sec_log_softmax(e, x, cfg: ApproxConfig = DEFAULT_APPROX):
    """x - max(x) - log(sum exp(x - max(x))) along the last axis. The shift and
    the final subtraction are exact share ops, so the argmax of the output is
    the argmax of the input by construction."""
    n = x.shape[-1]
    m = sec_max(e, x, axis=-1)
    m_tiled = _tile_last(e, m, n)
    xs = e.sub(x, m_tiled)
    exps = sec_exp(e, xs, cfg)
    total = e_sum(e, exps, axis=-1)
    log_total = sec_log(e, total, cfg)
    return e.sub(xs, _tile_last(e, log_total, n))


def _tile_last(e, v, n: int):
    data = e.raw(v).data[..., None]
    return e.wrap_like(v, np.repeat(data, n, axis=-1))
