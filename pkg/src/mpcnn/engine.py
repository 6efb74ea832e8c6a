"""One numeric surface, two executors.

PlainEngine runs on raw ring tensors and is the fixed-point oracle;
SecureEngine runs the interactive protocols over shares. Approximations and
network layers are written once against this surface, so the oracle executes
exactly the same formulas, truncations and iteration counts as the secure
path; they differ only by the local-truncation noise of shared products.
"""

from __future__ import annotations

import numpy as np

from . import arith
from .arith import ProtocolCtx
from .ring import (
    ConvGeometry,
    FixedPointConfig,
    RingTensor,
    WORD_BITS,
    conv2d_ring,
    encode,
    gtz_plain,
    matmul_ring,
    ring_mul_trunc,
    trunc,
    zeros,
)
from .ring import POOL_SENTINEL, pool_windows as _ring_pool_windows
from .sharing import ArithShare, add_public, mul_public, share_public
from .transport import Role


class PlainEngine:
    """Fixed-point reference executor on public ring tensors."""

    secure = False

    def __init__(self, cfg: FixedPointConfig | None = None):
        self.cfg = cfg or FixedPointConfig()

    # representation plumbing
    def raw(self, v: RingTensor) -> RingTensor:
        return v

    def wrap_like(self, v, data: np.ndarray):
        return RingTensor(data)

    def const(self, shape, value: float) -> RingTensor:
        return encode(np.full(shape, value, dtype=np.float64), self.cfg)

    def lift(self, t: RingTensor) -> RingTensor:
        """Adopt a public tensor as an engine value."""
        return t

    # arithmetic
    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def neg(self, a):
        return -a

    def mul_raw(self, a, b):
        return a * b

    def trunc(self, a, bits: int | None = None):
        return trunc(a, self.cfg.frac_bits if bits is None else bits)

    def fmul(self, a, b):
        return ring_mul_trunc(a, b, self.cfg)

    def mul_bit(self, a, bit):
        return a * bit  # bit is unscaled 0/1: raw product, no rescale

    def add_const(self, a, value: float):
        return a + self.const(a.shape, value)

    def mul_const(self, a, value: float):
        return self.fmul(a, self.const(a.shape, value))

    def mul_const_int(self, a, value: int):
        with np.errstate(over="ignore"):
            return RingTensor(a.data * np.uint64(value & ((1 << WORD_BITS) - 1)))

    # comparison / selection
    def gtz(self, a):
        return gtz_plain(a)

    def mux(self, c, a, b):
        return b + c * (a - b)

    def msb_onehot(self, a) -> RingTensor:
        v = a.data.copy()
        for k in range(6):
            v |= v >> np.uint64(1 << k)
        onehot = v ^ (v >> np.uint64(1))
        bit_axis = np.arange(WORD_BITS, dtype=np.uint64)
        return RingTensor((onehot[..., None] >> bit_axis) & np.uint64(1))

    # linear layers (raw products; callers rescale)
    def conv2d(self, x, w, geom: ConvGeometry):
        return conv2d_ring(x, w, geom)

    def matmul(self, x, w):
        return matmul_ring(x, w)

    def pool_windows(self, x, k: int, stride: int, padding: int):
        return _ring_pool_windows(x, k, stride, padding)


class SecureEngine:
    """Protocol executor over one party's shares."""

    secure = True

    def __init__(self, ctx: ProtocolCtx):
        self.ctx = ctx
        self.cfg = ctx.cfg

    def raw(self, v: ArithShare) -> RingTensor:
        return v.t

    def wrap_like(self, v: ArithShare, data: np.ndarray):
        return ArithShare(v.owner, RingTensor(data))

    def const(self, shape, value: float) -> ArithShare:
        return share_public(encode(np.full(shape, value, dtype=np.float64), self.cfg), self.ctx.role)

    def lift(self, t: RingTensor) -> ArithShare:
        return share_public(t, self.ctx.role)

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def neg(self, a):
        return -a

    def mul_raw(self, a, b):
        return arith.beaver_mul(self.ctx, a, b)

    def trunc(self, a, bits: int | None = None):
        return arith.trunc_share(self.ctx, a, bits)

    def fmul(self, a, b):
        return arith.mul_trunc(self.ctx, a, b)

    def mul_bit(self, a, bit):
        return arith.beaver_mul(self.ctx, a, bit, tag="mux.open")

    def add_const(self, a, value: float):
        return add_public(a, encode(np.full(a.shape, value, dtype=np.float64), self.cfg))

    def mul_const(self, a, value: float):
        # public-constant products are local; only the rescale shift follows
        c = encode(np.full(a.shape, value, dtype=np.float64), self.cfg)
        return self.trunc(mul_public(a, c))

    def mul_const_int(self, a, value: int):
        return mul_public(a, value)

    def gtz(self, a):
        return arith.gtz(self.ctx, a)

    def mux(self, c, a, b):
        return arith.mux(self.ctx, c, a, b)

    def msb_onehot(self, a) -> ArithShare:
        return arith.msb_onehot(self.ctx, a)

    def conv2d(self, x, w, geom: ConvGeometry):
        return arith.conv2d(self.ctx, x, w, geom)

    def matmul(self, x, w):
        return arith.matmul(self.ctx, x, w)

    def pool_windows(self, x, k: int, stride: int, padding: int):
        # the public sentinel must reconstruct once, not twice
        fill = POOL_SENTINEL if self.ctx.role is Role.P0 else 0
        win, oh, ow = _ring_pool_windows(x.t, k, stride, padding, fill=fill)
        return ArithShare(x.owner, win), oh, ow


# ---------------------------------------------------------------------------
# engine-generic data movement


def e_stack(e, values, axis=0):
    return e.wrap_like(values[0], np.stack([e.raw(v).data for v in values], axis=axis))


def e_concat(e, values, axis):
    return e.wrap_like(values[0], np.concatenate([e.raw(v).data for v in values], axis=axis))


def e_split(e, v, sizes, axis):
    bounds = np.cumsum(sizes)[:-1]
    return [e.wrap_like(v, p) for p in np.split(e.raw(v).data, bounds, axis=axis)]


def e_reshape(e, v, shape):
    return e.wrap_like(v, e.raw(v).data.reshape(shape))


def e_repeat(e, v, n, axis):
    return e.wrap_like(v, np.repeat(e.raw(v).data, n, axis=axis))


def e_sum(e, v, axis):
    with np.errstate(over="ignore"):
        return e.wrap_like(v, np.add.reduce(e.raw(v).data, axis=axis, dtype=np.uint64))


def e_take(e, v, index, axis):
    return e.wrap_like(v, np.take(e.raw(v).data, index, axis=axis))


def e_upsample2x(e, v):
    return e.wrap_like(v, np.repeat(np.repeat(e.raw(v).data, 2, axis=1), 2, axis=2))


# ---------------------------------------------------------------------------
# tournament maximum: the one comparison pattern every pooling op shares


def tournament_max(e, v, axis: int):
    """Pairwise max tree along `axis` via gtz + mux; ceil(log2(n)) comparison
    phases, each a single batched round pair regardless of width."""
    data = np.moveaxis(e.raw(v).data, axis, 0)
    cur = e.wrap_like(v, data)
    while cur.shape[0] > 1:
        n = cur.shape[0]
        half = n // 2
        a = e.wrap_like(v, e.raw(cur).data[:half])
        b = e.wrap_like(v, e.raw(cur).data[half : 2 * half])
        s = e.gtz(e.sub(a, b))
        m = e.mux(s, a, b)
        if n % 2:
            m = e_concat(e, [m, e.wrap_like(v, e.raw(cur).data[-1:])], axis=0)
        cur = m
    return e.wrap_like(v, e.raw(cur).data[0])


def maxpool2d(e, x, k: int, stride: int, padding: int):
    """Plaintext-equivalent max pooling over C x H x W; padded cells hold the
    most negative word and can never win."""
    c = x.shape[0]
    win, oh, ow = e.pool_windows(x, k, stride, padding)
    flat = tournament_max(e, win, axis=1)  # (C, oh*ow)
    return e_reshape(e, flat, (c, oh, ow))
