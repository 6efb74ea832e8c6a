"""Interactive protocols over shares: Beaver multiplication, convolution,
share conversions, comparison, and the non-interactive tensor ops.

Round structure (one round = one parallel phase, independent of tensor size):

  beaver_mul / conv2d / matmul   1   (e and d open together)
  and_gate                       1
  b2a                            1   (all masked bits open together)
  a2b                            7   (1 masked-word opening + 6 AND phases
                                      of the carry-lookahead prefix tree)
  gtz                            8   (a2b of -x, free msb extract, 1-bit b2a)
  relu                           9   (gtz + one multiplication)
  mux                            1

The a2b conversion masks the arithmetic value with a word assembled from 64
dealer bit pairs, opens the difference (uniform, so it reveals nothing), and
adds the public difference back onto the XOR-shared mask inside a
carry-lookahead adder; only the adder's AND gates are interactive, giving
exactly log2(64) = 6 AND phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dealer import TripleSource
from .ring import (
    ConvGeometry,
    FixedPointConfig,
    RingTensor,
    ShapeMismatch,
    WORD_BITS,
    conv2d_ring,
    matmul_ring,
    zeros,
)
from .sharing import ArithShare, BinShare, PrzsStream, bytes_to_words, words_to_bytes
from .transport import Role, Session


@dataclass
class ProtocolCtx:
    """Party-local context threading one session's channels, randomness and
    fixed-point configuration through every op."""

    session: Session
    triples: TripleSource
    przs: PrzsStream
    cfg: FixedPointConfig = field(default_factory=FixedPointConfig)

    @property
    def role(self) -> Role:
        return self.session.role

    def arith(self, t: RingTensor) -> ArithShare:
        return ArithShare(self.role, t)

    def bin(self, t: RingTensor) -> BinShare:
        return BinShare(self.role, t)


def open_values(ctx: ProtocolCtx, tag: str, tensors: list) -> list:
    """Open several share tensors in one phase; returns public RingTensors."""
    payload = b"".join(words_to_bytes(t.t) for t in tensors)
    got = ctx.session.exchange(tag, payload)
    out, off = [], 0
    for t in tensors:
        n = 8 * t.t.size
        other = bytes_to_words(got[off : off + n], t.shape)
        if isinstance(t, BinShare):
            out.append(t.t ^ other)
        else:
            out.append(t.t + other)
        off += n
    return out


# ---------------------------------------------------------------------------
# multiplication family: z = c + e*b + a*d (+ e*d at P0), e = x-a, d = y-b


def beaver_mul(ctx: ProtocolCtx, x: ArithShare, y: ArithShare, tag: str = "mul.open") -> ArithShare:
    """Elementwise ring product of two shared tensors (no truncation)."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    t = ctx.triples.arith(x.shape)
    e, d = open_values(ctx, tag, [x - ctx.arith(t.a), y - ctx.arith(t.b)])
    z = t.c + (e * t.b) + (t.a * d)
    if ctx.role is Role.P0:
        z = z + (e * d)
    return ctx.arith(z)


def conv2d(ctx: ProtocolCtx, x: ArithShare, w: ArithShare, geom: ConvGeometry,
           tag: str = "conv.open") -> ArithShare:
    """Shared 2D convolution via a geometry-matched triple (no truncation)."""
    t = ctx.triples.conv(x.shape, geom)
    if t.b.shape != w.shape:
        raise ShapeMismatch(f"kernel {w.shape} vs dealt {t.b.shape}")
    e, d = open_values(ctx, tag, [x - ctx.arith(t.a), w - ctx.arith(t.b)])
    z = t.c + conv2d_ring(e, t.b, geom) + conv2d_ring(t.a, d, geom)
    if ctx.role is Role.P0:
        z = z + conv2d_ring(e, d, geom)
    return ctx.arith(z)


def matmul(ctx: ProtocolCtx, x: ArithShare, w: ArithShare, tag: str = "matmul.open") -> ArithShare:
    """Shared matrix product via a matmul triple (no truncation)."""
    m, k = x.shape
    k2, n = w.shape
    if k != k2:
        raise ShapeMismatch(f"matmul {x.shape} @ {w.shape}")
    t = ctx.triples.matmul(m, k, n)
    e, d = open_values(ctx, tag, [x - ctx.arith(t.a), w - ctx.arith(t.b)])
    z = t.c + matmul_ring(e, t.b) + matmul_ring(t.a, d)
    if ctx.role is Role.P0:
        z = z + matmul_ring(e, d)
    return ctx.arith(z)


def trunc_share(ctx: ProtocolCtx, x: ArithShare, bits: int | None = None) -> ArithShare:
    """Local fixed-point rescale: each party arithmetic-shifts its own share.
    Known additive error of at most 1 LSB per party; a wrap-scale error occurs
    with probability |value| / 2^64 and is accepted (documented)."""
    s = ctx.cfg.frac_bits if bits is None else bits
    return ctx.arith(x.t.shift_right_arith(s))


def mul_trunc(ctx: ProtocolCtx, x: ArithShare, y: ArithShare, tag: str = "mul.open") -> ArithShare:
    return trunc_share(ctx, beaver_mul(ctx, x, y, tag))


# ---------------------------------------------------------------------------
# boolean ops


def and_gate(ctx: ProtocolCtx, x: BinShare, y: BinShare, tag: str = "and.open") -> BinShare:
    """Bitwise AND over XOR shares with a boolean triple; one opening phase."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    t = ctx.triples.bool_(x.shape)
    e, f = open_values(ctx, tag, [x ^ ctx.bin(t.a), y ^ ctx.bin(t.b)])
    z = t.c ^ (t.b & e) ^ (t.a & f)
    if ctx.role is Role.P0:
        z = z ^ (e & f)
    return ctx.bin(z)


def _stack_bin(parts: list) -> BinShare:
    owner = parts[0].owner
    return BinShare(owner, RingTensor(np.stack([p.t.data for p in parts])))


def _carry_add_public(ctx: ProtocolCtx, r: BinShare, d: RingTensor, tag: str) -> BinShare:
    """r + d mod 2^64 over XOR shares of r with d public: carry-lookahead with
    local generate/propagate and exactly log2(64) interactive AND levels."""
    g = r.and_public(d)  # generate: r & d, local against a public word
    p = r.xor_public(d)  # propagate: r ^ d
    G, P = g, p
    for k in range(6):  # Kogge-Stone distances 1, 2, 4, 8, 16, 32
        dist = 1 << k
        pair = and_gate(
            ctx,
            _stack_bin([P, P]),
            _stack_bin([G.shift_left(dist), P.shift_left(dist)]),
            tag=tag,
        )
        pg = BinShare(pair.owner, RingTensor(pair.t.data[0]))
        pp = BinShare(pair.owner, RingTensor(pair.t.data[1]))
        G = G ^ pg
        P = pp
    carry = G.shift_left(1)
    return p ^ carry


def _assemble_mask(pairs) -> tuple:
    """Build (arith share of word r, XOR share of word r) from 64 bit pairs
    laid out on the last axis."""
    weights = np.arange(WORD_BITS, dtype=np.uint64)
    with np.errstate(over="ignore"):
        arith_word = np.add.reduce(pairs.arith.data << weights, axis=-1, dtype=np.uint64)
    bin_word = np.bitwise_xor.reduce(pairs.bin.data << weights, axis=-1)
    return RingTensor(arith_word), RingTensor(bin_word)


def a2b(ctx: ProtocolCtx, x: ArithShare, tag_prefix: str = "a2b") -> BinShare:
    """Arithmetic share -> XOR share of the same 64-bit pattern.

    Opens x - r for a dealer-issued word r known in both sharings (uniform, so
    the opening is noise), then adds the public difference onto the XOR-shared
    r in the boolean adder. 1 opening round + 6 AND phases."""
    pairs = ctx.triples.bitpairs(tuple(x.shape) + (WORD_BITS,))
    r_arith, r_bin = _assemble_mask(pairs)
    (diff,) = open_values(ctx, f"{tag_prefix}.mask", [x - ctx.arith(r_arith)])
    return _carry_add_public(ctx, ctx.bin(r_bin), diff, tag=f"{tag_prefix}.and")


def _bits_to_arith(ctx: ProtocolCtx, bits: BinShare, tag: str) -> ArithShare:
    """Single-bit B2A: mask each bit with a dealer pair, open, unmask locally.
    <b> = <r> + z - 2 z <r> with z = b xor r public."""
    pairs = ctx.triples.bitpairs(bits.shape)
    (z,) = open_values(ctx, tag, [bits ^ ctx.bin(pairs.bin)])
    zb = z.data  # 0/1 words
    with np.errstate(over="ignore"):
        share = pairs.arith.data * (np.uint64(1) - np.uint64(2) * zb)
    if ctx.role is Role.P0:
        share = share + zb
    return ctx.arith(RingTensor(share))


def b2a(ctx: ProtocolCtx, x: BinShare, tag_prefix: str = "b2a") -> ArithShare:
    """XOR share -> arithmetic share: sum of 2^b times the b-th bit, all 64
    masked bits opened together in one round."""
    bit_axis = np.arange(WORD_BITS, dtype=np.uint64)
    bits = BinShare(x.owner, RingTensor((x.t.data[..., None] >> bit_axis) & np.uint64(1)))
    arith_bits = _bits_to_arith(ctx, bits, f"{tag_prefix}.open")
    with np.errstate(over="ignore"):
        word = np.add.reduce(arith_bits.t.data << bit_axis, axis=-1, dtype=np.uint64)
    return ctx.arith(RingTensor(word))


# ---------------------------------------------------------------------------
# comparison and selection


def gtz(ctx: ProtocolCtx, x: ArithShare) -> ArithShare:
    """1 iff the shared value is strictly positive (gtz(0) = 0), as the msb of
    -x. Unscaled 0/1 output; exact. 8 rounds."""
    bx = a2b(ctx, -x, tag_prefix="gtz.a2b")
    msb = bx.shift_right(WORD_BITS - 1)
    return _bits_to_arith(ctx, msb, "gtz.b2a")


def mux(ctx: ProtocolCtx, cond: ArithShare, x: ArithShare, y: ArithShare) -> ArithShare:
    """Oblivious select cond*x + (1-cond)*y; cond holds exact 0/1 words."""
    return y + beaver_mul(ctx, cond, x - y, tag="mux.open")


def relu(ctx: ProtocolCtx, x: ArithShare) -> ArithShare:
    """max(x, 0) as x * (x > 0); exact (the bit is unscaled, no truncation)."""
    return beaver_mul(ctx, x, gtz(ctx, x), tag="relu.open")


def extract_bits(ctx: ProtocolCtx, x: ArithShare, positions) -> ArithShare:
    """Unscaled 0/1 arithmetic shares of selected bit positions (last axis):
    one a2b plus one batched single-bit B2A."""
    v = a2b(ctx, x, tag_prefix="bits.a2b")
    pos = np.asarray(positions, dtype=np.uint64)
    bits = BinShare(v.owner, RingTensor((v.t.data[..., None] >> pos) & np.uint64(1)))
    return _bits_to_arith(ctx, bits, "bits.b2a")


def msb_onehot(ctx: ProtocolCtx, x: ArithShare) -> ArithShare:
    """Indicator vector (last axis, 64 wide) of the highest set bit of each
    word: a2b, a downward prefix-OR tree, then per-bit B2A. Drives the
    magnitude-normalized initial guesses of the Newton iterations."""
    v = a2b(ctx, x, tag_prefix="msb.a2b")
    for k in range(6):
        shifted = v.shift_right(1 << k)
        v = v ^ shifted ^ and_gate(ctx, v, shifted, tag="msb.or")
    onehot = v ^ v.shift_right(1)
    bit_axis = np.arange(WORD_BITS, dtype=np.uint64)
    bits = BinShare(onehot.owner, RingTensor((onehot.t.data[..., None] >> bit_axis) & np.uint64(1)))
    return _bits_to_arith(ctx, bits, "msb.b2a")


# ---------------------------------------------------------------------------
# non-interactive tensor ops


def concat(shares: list, axis: int) -> ArithShare:
    owner = shares[0].owner
    return ArithShare(owner, RingTensor(np.concatenate([s.t.data for s in shares], axis=axis)))


def split(share: ArithShare, sizes, axis: int) -> list:
    if int(np.sum(sizes)) != share.shape[axis]:
        raise ShapeMismatch(f"split {sizes} does not cover axis {axis} of {share.shape}")
    bounds = np.cumsum(sizes)[:-1]
    return [ArithShare(share.owner, RingTensor(p)) for p in np.split(share.t.data, bounds, axis=axis)]


def upsample_nearest2x(share: ArithShare) -> ArithShare:
    if share.t.data.ndim != 3:
        raise ShapeMismatch(f"expected rank-3 C,H,W tensor, got {share.shape}")
    return ArithShare(share.owner, RingTensor(np.repeat(np.repeat(share.t.data, 2, axis=1), 2, axis=2)))


def const_floor(ctx: ProtocolCtx, x: ArithShare, d: int) -> ArithShare:
    """floor(value / d) * scale for public power-of-two d, exact: clears the
    fraction through the binary domain where the arithmetic shift is local
    over XOR shares (sign bits of the shares xor to the secret's sign)."""
    if d <= 0 or d & (d - 1):
        raise ValueError(f"divisor must be a positive power of two, got {d}")
    if d == 1:
        return x
    k = d.bit_length() - 1
    bx = a2b(ctx, x, tag_prefix="floor.a2b")
    q = BinShare(bx.owner, bx.t.shift_right_arith(k + ctx.cfg.frac_bits))
    q_arith = b2a(ctx, q, tag_prefix="floor.b2a")
    return ArithShare(x.owner, q_arith.t.shift_left(ctx.cfg.frac_bits))
