"""Fixed-point tensors over the ring Z_2^64.

Every value that moves through a protocol is a RingTensor: an n-dimensional
array of 64-bit words, wrapping modulo 2^64, with reals embedded by scaling
with 2^frac_bits and negatives in two's complement. All operations here are
plaintext; they double as the reference semantics for the secure protocols.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 64
MASK = (1 << 64) - 1

_RTF1_MAGIC = b"RTF1"


class RingRangeError(ValueError):
    """Raised when a real value does not fit the fixed-point range."""


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass(frozen=True)
class FixedPointConfig:
    """Fixed-point encoding parameters: x is stored as round(x * 2**frac_bits)."""

    frac_bits: int = 16

    def __post_init__(self):
        if not 1 <= self.frac_bits <= 32:
            raise ValueError(f"frac_bits must be in [1, 32], got {self.frac_bits}")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def max_abs(self) -> float:
        # |x| must stay below 2^(63 - frac_bits) so the word keeps its sign bit
        return float(1 << (63 - self.frac_bits))


DEFAULT_CFG = FixedPointConfig()


@dataclass
class RingTensor:
    """Row-major tensor of Z_2^64 words. No broadcasting: shapes must match."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.data.dtype != np.uint64:
            self.data = self.data.astype(np.uint64)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "RingTensor":
        return RingTensor(self.data.copy())

    def reshape(self, *shape) -> "RingTensor":
        return RingTensor(self.data.reshape(*shape))

    def signed(self) -> np.ndarray:
        return self.data.view(np.int64)

    # -- ring arithmetic (elementwise, wrapping) --

    def _check(self, other: "RingTensor"):
        if self.shape != other.shape:
            raise ShapeMismatch(f"{self.shape} vs {other.shape}")

    def __add__(self, other: "RingTensor") -> "RingTensor":
        self._check(other)
        with np.errstate(over="ignore"):
            return RingTensor(self.data + other.data)

    def __sub__(self, other: "RingTensor") -> "RingTensor":
        self._check(other)
        with np.errstate(over="ignore"):
            return RingTensor(self.data - other.data)

    def __neg__(self) -> "RingTensor":
        with np.errstate(over="ignore"):
            return RingTensor(np.uint64(0) - self.data)

    def __mul__(self, other: "RingTensor") -> "RingTensor":
        self._check(other)
        with np.errstate(over="ignore"):  # wrap-around is the ring semantics
            return RingTensor(self.data * other.data)

    # -- bitwise (used by binary sharing) --

    def __xor__(self, other: "RingTensor") -> "RingTensor":
        self._check(other)
        return RingTensor(self.data ^ other.data)

    def __and__(self, other: "RingTensor") -> "RingTensor":
        self._check(other)
        return RingTensor(self.data & other.data)

    def shift_left(self, k: int) -> "RingTensor":
        _check_shift(k)
        return RingTensor(self.data << np.uint64(k))

    def shift_right_logical(self, k: int) -> "RingTensor":
        _check_shift(k)
        return RingTensor(self.data >> np.uint64(k))

    def shift_right_arith(self, k: int) -> "RingTensor":
        _check_shift(k)
        return RingTensor((self.signed() >> np.int64(k)).view(np.uint64))

    def __eq__(self, other) -> bool:
        return isinstance(other, RingTensor) and self.shape == other.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"RingTensor(shape={self.shape})"


def _check_shift(k: int):
    if not 0 <= k < WORD_BITS:
        raise ValueError(f"shift out of range: {k}")


def zeros(shape) -> RingTensor:
    return RingTensor(np.zeros(shape, dtype=np.uint64))


def from_words(words) -> RingTensor:
    return RingTensor(np.asarray(words, dtype=np.uint64))


def encode(x, cfg: FixedPointConfig = DEFAULT_CFG) -> RingTensor:
    """Embed reals into the ring: round(x * scale) mod 2^64."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(arr) >= cfg.max_abs):
        raise RingRangeError(
            f"value exceeds representable range +-{cfg.max_abs} at frac_bits={cfg.frac_bits}"
        )
    scaled = np.rint(arr * cfg.scale).astype(np.int64)
    return RingTensor(scaled.view(np.uint64).reshape(arr.shape))


def decode(t: RingTensor, cfg: FixedPointConfig = DEFAULT_CFG) -> np.ndarray:
    """Exact inverse of encode on the representable range."""
    return t.signed().astype(np.float64) / cfg.scale


def trunc(t: RingTensor, bits: int) -> RingTensor:
    """Arithmetic right shift: the fixed-point rescale after a product."""
    return t.shift_right_arith(bits)


def ring_mul_trunc(a: RingTensor, b: RingTensor, cfg: FixedPointConfig = DEFAULT_CFG) -> RingTensor:
    """Fixed-point product: ring product then arithmetic shift by frac_bits."""
    return trunc(a * b, cfg.frac_bits)


def msb(t: RingTensor) -> RingTensor:
    """Top bit per word; 1 iff the signed interpretation is negative."""
    return t.shift_right_logical(WORD_BITS - 1)


def gtz_plain(t: RingTensor) -> RingTensor:
    """1 iff the signed value is strictly positive (reference semantics: msb(-x))."""
    return msb(-t)


# ---------------------------------------------------------------------------
# convolution / matmul / pooling geometry


@dataclass(frozen=True)
class ConvGeometry:
    """2D convolution geometry over C x H x W tensors."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def out_hw(self, h: int, w: int) -> tuple:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ShapeMismatch(f"conv geometry {self} yields empty output for {h}x{w}")
        return oh, ow

    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)


def _window_indices(h, w, kh, kw, stride, padding):
    """Index arrays mapping a padded C x H x W image to (kh*kw, oh*ow) patches."""
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    ky, kx = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    oy, ox = np.meshgrid(np.arange(oh) * stride, np.arange(ow) * stride, indexing="ij")
    rows = ky.reshape(-1, 1) + oy.reshape(1, -1)
    cols = kx.reshape(-1, 1) + ox.reshape(1, -1)
    return rows, cols, oh, ow


def _pad_chw(data: np.ndarray, padding: int, fill: int) -> np.ndarray:
    if padding == 0:
        return data
    c, h, w = data.shape
    out = np.full((c, h + 2 * padding, w + 2 * padding), np.uint64(fill), dtype=np.uint64)
    out[:, padding : padding + h, padding : padding + w] = data
    return out


def im2col(x: RingTensor, kh: int, kw: int, stride: int, padding: int, fill: int = 0) -> tuple:
    """Unfold C x H x W into (C*kh*kw, oh*ow) columns. fill pads the border."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"expected rank-3 C,H,W tensor, got {x.shape}")
    c, h, w = x.shape
    padded = _pad_chw(x.data, padding, fill)
    rows, cols, oh, ow = _window_indices(h, w, kh, kw, stride, padding)
    patches = padded[:, rows, cols]  # (C, kh*kw, oh*ow)
    return patches.reshape(c * kh * kw, oh * ow), oh, ow


def conv2d_ring(x: RingTensor, w: RingTensor, geom: ConvGeometry) -> RingTensor:
    """Raw ring convolution (no truncation, no bias); output OC x OH x OW."""
    if x.data.ndim != 3 or x.shape[0] != geom.in_channels:
        raise ShapeMismatch(f"input {x.shape} does not match geometry {geom}")
    if w.shape != geom.weight_shape():
        raise ShapeMismatch(f"kernel {w.shape} does not match geometry {geom}")
    cols, oh, ow = im2col(x, geom.kernel_h, geom.kernel_w, geom.stride, geom.padding)
    kmat = w.data.reshape(geom.out_channels, -1)
    out = kmat @ cols  # uint64 matmul wraps mod 2^64
    return RingTensor(out.reshape(geom.out_channels, oh, ow))


def matmul_ring(a: RingTensor, b: RingTensor) -> RingTensor:
    """Raw ring matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    return RingTensor(a.data @ b.data)


# Pad value for max pooling: deeply negative but with 2^62 of headroom so the
# ring difference against any realistic activation keeps its sign bit honest.
POOL_SENTINEL = (1 << 64) - (1 << 62)  # two's-complement -2^62


def pool_windows(x: RingTensor, k: int, stride: int, padding: int,
                 fill: int = POOL_SENTINEL) -> tuple:
    """Unfold each channel into (C, k*k, oh*ow) windows; padded cells hold a
    sentinel that never wins a comparison."""
    c, h, w = x.shape
    padded = _pad_chw(x.data, padding, fill)
    rows, cols, oh, ow = _window_indices(h, w, k, k, stride, padding)
    return RingTensor(padded[:, rows, cols]), oh, ow


def upsample_nearest2x_ring(x: RingTensor) -> RingTensor:
    if x.data.ndim != 3:
        raise ShapeMismatch(f"expected rank-3 C,H,W tensor, got {x.shape}")
    return RingTensor(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2))


def concat_ring(xs, axis: int) -> RingTensor:
    return RingTensor(np.concatenate([x.data for x in xs], axis=axis))


def split_ring(x: RingTensor, sizes, axis: int):
    bounds = np.cumsum(sizes)[:-1]
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ShapeMismatch(f"split sizes {sizes} do not cover axis {axis} of {x.shape}")
    return [RingTensor(part) for part in np.split(x.data, bounds, axis=axis)]


# ---------------------------------------------------------------------------
# RTF1 tensor container: magic, u8 rank, rank x u64 LE dims, f32 LE payload


def write_rtf1(path, values: np.ndarray):
    arr = np.asarray(values, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(_RTF1_MAGIC)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.astype("<f4").tobytes())


def read_rtf1(path, cfg: FixedPointConfig = DEFAULT_CFG) -> RingTensor:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _RTF1_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (rank,) = struct.unpack("<B", f.read(1))
        dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return encode(arr.astype(np.float64), cfg)
