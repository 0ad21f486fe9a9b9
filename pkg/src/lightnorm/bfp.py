"""Block floating point: shared-exponent groups for storing tensors.

A block of up to ``k`` values shares one exponent ``e_s`` (floor of log2 of
the largest magnitude). Every element keeps a sign and an integer aligned
mantissa ``M`` on the grid ``2**(e_s - m)``, so it decodes to
``(-1)**sign * M * 2**(e_s - m)``. Alignment rounds to nearest even;
elements more than ``m + 1`` binades below ``e_s`` encode as zero.

Tensors are grouped per channel (axis 1 for ndim >= 2) in raster order over
the remaining axes; ragged channel tails are zero padded to a full block.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .minifloat import FpFormat, parse_format, quantize

__all__ = [
    "BfpBlock",
    "BfpTensor",
    "shared_exponent",
    "encode_block",
    "decode_block",
    "bfp_bit_size",
    "pack_tensor",
    "unpack_tensor",
    "bfp_align",
    "channel_major",
    "from_channel_major",
    "dumps",
    "loads",
    "save",
    "load",
]


@dataclass
class BfpBlock:
    shared_exponent: int
    signs: np.ndarray  # uint8, 1 = negative
    mantissas: np.ndarray  # int64 aligned magnitudes, 0 <= M < 2**(m + 1)
    fmt: FpFormat
    k: int

    @property
    def payloads(self) -> list[tuple[int, int]]:
        return list(zip(self.signs.tolist(), self.mantissas.tolist()))


def _block_exponents(absmax: np.ndarray, fmt: FpFormat) -> np.ndarray:
    _, exp = np.frexp(absmax)
    es = np.where(absmax > 0, exp - 1, fmt.emin)
    return np.clip(es, fmt.emin, fmt.emax).astype(np.int64)


def shared_exponent(xs, fmt: FpFormat) -> int:
    """floor(log2(max|x|)) over the block, or ``emin`` for an all-zero block."""
    arr = np.asarray(xs, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("empty block")
    return int(_block_exponents(np.max(np.abs(arr)), fmt))


def _align(blocks: np.ndarray, es: np.ndarray, fmt: FpFormat):
    """Aligned (signs, mantissas) for a (..., k) array with per-block exponents."""
    step_exp = (es - fmt.mantissa_bits)[..., None]
    mant = np.rint(np.ldexp(np.abs(blocks), -step_exp)).astype(np.int64)
    signs = (np.signbit(blocks) & (mant != 0)).astype(np.uint8)
    return signs, mant


def encode_block(xs, fmt: FpFormat, k: int) -> BfpBlock:
    arr = np.asarray(xs, dtype=np.float64).reshape(-1)
    if arr.size > k:
        raise ValueError(f"block of {arr.size} values exceeds group size {k}")
    arr = quantize(arr, fmt)
    padded = np.zeros(k)
    padded[: arr.size] = arr
    es = shared_exponent(padded, fmt)
    signs, mant = _align(padded, np.asarray(es), fmt)
    return BfpBlock(es, signs, mant, fmt, k)


def _decode(signs, mant, es, fmt):
    step_exp = (np.asarray(es) - fmt.mantissa_bits)[..., None]
    vals = np.ldexp(mant.astype(np.float64), step_exp)
    return np.where(signs.astype(bool), -vals, vals)


def decode_block(b: BfpBlock) -> np.ndarray:
    return _decode(b.signs, b.mantissas, b.shared_exponent, b.fmt)


def bfp_bit_size(n: int, fmt: FpFormat, k: int) -> int:
    """Storage bits for ``n`` elements: sign+mantissa each, one exponent per group."""
    if n < 0 or k < 1:
        raise ValueError("need n >= 0 and k >= 1")
    return n * (fmt.sign_bits + fmt.mantissa_bits) + math.ceil(n / k) * fmt.exponent_bits


# --------------------------------------------------------------------------
# tensors


def channel_major(x: np.ndarray) -> np.ndarray:
    """(C, n) view: channel axis 1 moved to the front, the rest flattened in raster order."""
    x = np.asarray(x)
    if x.ndim <= 1:
        return x.reshape(1, -1)
    return np.moveaxis(x, 1, 0).reshape(x.shape[1], -1)


def from_channel_major(cm: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) <= 1:
        return cm.reshape(shape)
    moved = (shape[1], shape[0]) + tuple(shape[2:])
    return np.moveaxis(cm.reshape(moved), 0, 1)


@dataclass
class BfpTensor:
    shape: tuple[int, ...]
    fmt: FpFormat
    k: int
    exponents: np.ndarray  # (C, nblocks) int64
    signs: np.ndarray  # (C, nblocks, k) uint8
    mantissas: np.ndarray  # (C, nblocks, k) int64

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def n_blocks(self) -> int:
        return int(self.exponents.size)

    @property
    def total_bits(self) -> int:
        # per-channel grouping: a ragged channel tail still costs a full exponent
        f = self.fmt
        return self.size * (f.sign_bits + f.mantissa_bits) + self.n_blocks * f.exponent_bits

    @property
    def blocks(self) -> list[BfpBlock]:
        out = []
        for c in range(self.exponents.shape[0]):
            for j in range(self.exponents.shape[1]):
                out.append(
                    BfpBlock(int(self.exponents[c, j]), self.signs[c, j], self.mantissas[c, j], self.fmt, self.k)
                )
        return out


def pack_tensor(t, fmt: FpFormat, k: int) -> BfpTensor:
    """Quantize into ``fmt`` and group per channel into blocks of ``k``."""
    if k < 1:
        raise ValueError("group size must be >= 1")
    t = np.asarray(t, dtype=np.float64)
    q = quantize(t, fmt)
    cm = channel_major(q)
    n_ch, n = cm.shape
    nb = -(-n // k)
    padded = np.zeros((n_ch, nb * k))
    padded[:, :n] = cm
    blocks = padded.reshape(n_ch, nb, k)
    es = _block_exponents(np.max(np.abs(blocks), axis=-1), fmt) if nb else np.zeros((n_ch, 0), np.int64)
    signs, mant = _align(blocks, es, fmt)
    return BfpTensor(tuple(t.shape), fmt, k, es, signs, mant)


def unpack_tensor(bt: BfpTensor) -> np.ndarray:
    n_ch, nb = bt.exponents.shape
    if bt.signs.shape != (n_ch, nb, bt.k) or bt.mantissas.shape != (n_ch, nb, bt.k):
        raise ValueError("payload shape does not match exponents and group size")
    shape = tuple(bt.shape)
    n_expected = channel_major(np.empty(shape)).shape
    if n_expected[0] != n_ch or -(-n_expected[1] // bt.k) != nb:
        raise ValueError(f"block layout does not match shape {shape}")
    vals = _decode(bt.signs, bt.mantissas, bt.exponents, bt.fmt).reshape(n_ch, nb * bt.k)
    return from_channel_major(vals[:, : n_expected[1]], shape)


def bfp_align(t, fmt: FpFormat, k: int) -> np.ndarray:
    """Round trip through BFP storage (the values a consumer reads back)."""
    return unpack_tensor(pack_tensor(t, fmt, k))


# --------------------------------------------------------------------------
# binary container
#
# header: b"BFPT", u8 version, u8 ndim, ndim x u32 dims, u8 s, u8 e, u8 m,
#         u32 k, u64 element count, u64 payload byte length
# payload: per block (channel-major, then raster) the biased shared exponent
#          in e bits followed by k payloads of 1 sign bit + (m + 1) magnitude
#          bits; every field is written LSB first into a little-endian bit
#          stream.

_MAGIC = b"BFPT"
_VERSION = 1


def _field_bits(values: np.ndarray, width: int) -> np.ndarray:
    values = values.astype(np.uint64)
    shifts = np.arange(width, dtype=np.uint64)
    return ((values[..., None] >> shifts) & np.uint64(1)).astype(np.uint8)


def dumps(bt: BfpTensor) -> bytes:
    f = bt.fmt
    n_ch, nb = bt.exponents.shape
    e_bits = _field_bits(bt.exponents + f.bias, f.exponent_bits)  # (C, nb, e)
    sign_bits = bt.signs[..., None].astype(np.uint8)  # (C, nb, k, 1)
    mag_bits = _field_bits(bt.mantissas, f.mantissa_bits + 1)  # (C, nb, k, m+1)
    payload = np.concatenate([sign_bits, mag_bits], axis=-1).reshape(n_ch, nb, -1)
    stream = np.concatenate([e_bits, payload], axis=-1).reshape(-1)
    packed = np.packbits(stream, bitorder="little").tobytes()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<BB", _VERSION, len(bt.shape)))
    buf.write(struct.pack(f"<{len(bt.shape)}I", *bt.shape))
    buf.write(struct.pack("<BBBIQQ", f.sign_bits, f.exponent_bits, f.mantissa_bits, bt.k, bt.size, len(packed)))
    buf.write(packed)
    return buf.getvalue()


def loads(data: bytes) -> BfpTensor:
    if data[:4] != _MAGIC:
        raise ValueError("not a BFP container")
    off = 4
    version, ndim = struct.unpack_from("<BB", data, off)
    off += 2
    if version != _VERSION:
        raise ValueError(f"unsupported container version {version}")
    shape = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    s, e, m, k, count, nbytes = struct.unpack_from("<BBBIQQ", data, off)
    off += struct.calcsize("<BBBIQQ")
    fmt = parse_format(f"{{{s},{e},{m}}}")
    if int(np.prod(shape, dtype=np.int64)) != count:
        raise ValueError("element count does not match shape")
    n_ch, n = channel_major(np.empty(shape)).shape
    nb = -(-n // k)
    block_bits = e + k * (m + 2)
    total = n_ch * nb * block_bits
    if len(data) - off != nbytes or nbytes * 8 < total:
        raise ValueError("truncated BFP payload")
    stream = np.unpackbits(np.frombuffer(data, np.uint8, nbytes, off), bitorder="little")[:total]
    blocks = stream.reshape(n_ch, nb, block_bits).astype(np.int64)
    weights_e = 1 << np.arange(e, dtype=np.int64)
    exps = blocks[..., :e] @ weights_e - fmt.bias
    pay = blocks[..., e:].reshape(n_ch, nb, k, m + 2)
    signs = pay[..., 0].astype(np.uint8)
    mant = pay[..., 1:] @ (1 << np.arange(m + 1, dtype=np.int64))
    return BfpTensor(tuple(shape), fmt, int(k), exps, signs, mant)


def save(path, bt: BfpTensor) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(bt))


def load(path) -> BfpTensor:
    with open(path, "rb") as fh:
        return loads(fh.read())


def describe(bt: BfpTensor) -> str:
    return json.dumps(
        {"shape": list(bt.shape), "format": list(bt.fmt.triple), "k": bt.k, "total_bits": bt.total_bits}
    )
