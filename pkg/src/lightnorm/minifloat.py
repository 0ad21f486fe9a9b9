"""Configurable minifloat formats and emulated arithmetic.

Values are carried as float64 arrays constrained to a format's grid. The
grid has normals only (no subnormals, no inf/NaN codes): underflow flushes
to zero, overflow saturates to the largest finite magnitude, and rounding
is round-to-nearest-even everywhere.

Arithmetic is "exact result, then round once". For formats with at most 24
mantissa bits the float64 result of +, *, / and sqrt on representable
operands rounds innocuously a second time (53 >= 2p + 2), so the fast
numpy paths are bit-exact. Wider formats fall back to exact integer
arithmetic, except the native float64 format which is used as-is.
"""
from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

__all__ = [
    "FpFormat",
    "FP32",
    "BFLOAT16",
    "FP16",
    "FP10A",
    "FP10B",
    "FP8",
    "FP64",
    "CATALOG",
    "parse_format",
    "dynamic_range",
    "representable_range",
    "quantize",
    "is_representable",
    "ulp",
    "fp_add",
    "fp_sub",
    "fp_mul",
    "fp_div",
    "fp_sqrt",
    "fp_sum",
    "fp_add_bits",
    "fp_add_detailed",
]


@dataclass(frozen=True)
class FpFormat:
    """A {sign, exponent, mantissa} bit-width triple."""

    exponent_bits: int
    mantissa_bits: int
    name: str = ""
    sign_bits: int = 1

    def __post_init__(self):
        if self.sign_bits != 1:
            raise ValueError("sign_bits must be 1")
        if self.exponent_bits < 2:
            raise ValueError(f"exponent_bits must be >= 2, got {self.exponent_bits}")
        if self.mantissa_bits < 1:
            raise ValueError(f"mantissa_bits must be >= 1, got {self.mantissa_bits}")
        if self.exponent_bits > 11 or self.mantissa_bits > 52:
            raise ValueError("formats wider than float64 cannot be carried")
        if not self.name:
            object.__setattr__(self, "name", f"{{1,{self.exponent_bits},{self.mantissa_bits}}}")

    @property
    def total_bits(self) -> int:
        return self.sign_bits + self.exponent_bits + self.mantissa_bits

    @property
    def bias(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        return self.bias

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, self.emin)

    @property
    def max_value(self) -> float:
        m = self.mantissa_bits
        return math.ldexp(2.0 ** (m + 1) - 1.0, self.emax - m)

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.sign_bits, self.exponent_bits, self.mantissa_bits)

    @property
    def is_native64(self) -> bool:
        return self.exponent_bits == 11 and self.mantissa_bits == 52

    def __str__(self):
        return self.name


FP32 = FpFormat(8, 23, "FP32")
BFLOAT16 = FpFormat(8, 7, "bfloat16")
FP16 = FpFormat(5, 10, "FP16")
FP10A = FpFormat(5, 4, "FP10-A")
FP10B = FpFormat(6, 3, "FP10-B")
FP8 = FpFormat(5, 2, "FP8")
# reference format: float64 carried natively
FP64 = FpFormat(11, 52, "FP64")

CATALOG: dict[str, FpFormat] = {
    "fp32": FP32,
    "bfloat16": BFLOAT16,
    "fp16": FP16,
    "fp10a": FP10A,
    "fp10b": FP10B,
    "fp8": FP8,
}

_ALIASES = {
    "bf16": "bfloat16",
    "fp10-a": "fp10a",
    "fp10-b": "fp10b",
    "fp10_a": "fp10a",
    "fp10_b": "fp10b",
}

_TRIPLE_RE = re.compile(r"^\{?\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\}?$")


def parse_format(spec: str | FpFormat) -> FpFormat:
    """Resolve a preset name ("fp10a", "FP10-A", ...) or an "{s,e,m}" triple."""
    if isinstance(spec, FpFormat):
        return spec
    key = spec.strip().lower()
    key = _ALIASES.get(key, key)
    if key in CATALOG:
        return CATALOG[key]
    if key == "fp64":
        return FP64
    match = _TRIPLE_RE.match(key)
    if match is None:
        raise ValueError(f"unknown format {spec!r}")
    s, e, m = (int(g) for g in match.groups())
    if s != 1:
        raise ValueError(f"sign bits must be 1 in {spec!r}")
    for fmt in list(CATALOG.values()) + [FP64]:
        if fmt.triple == (s, e, m):
            return fmt
    return FpFormat(e, m)


def dynamic_range(fmt: FpFormat) -> tuple[int, int]:
    return fmt.emin, fmt.emax


def representable_range(fmt: FpFormat) -> tuple[float, float]:
    """Smallest positive normal and largest finite magnitude."""
    return fmt.min_normal, fmt.max_value


# --------------------------------------------------------------------------
# rounding


def _flush_threshold(fmt: FpFormat) -> float:
    # below this magnitude the nearest grid point (extended downward) is < min_normal
    return math.ldexp(1.0, fmt.emin) - math.ldexp(1.0, fmt.emin - fmt.mantissa_bits - 1)


@functools.lru_cache(maxsize=None)
def _limits(fmt: FpFormat) -> tuple[int, float, float, float]:
    return fmt.mantissa_bits, fmt.min_normal, fmt.max_value, _flush_threshold(fmt)


def _quantize_array(x: np.ndarray, fmt: FpFormat) -> np.ndarray:
    m, lo, hi, thr = _limits(fmt)
    _, exp = np.frexp(x)
    shift = exp - 1 - m
    q = np.ldexp(np.rint(np.ldexp(x, -shift)), shift)
    a = np.abs(q)
    small = a < lo
    if small.any():
        lifted = np.where(np.abs(x) >= thr, np.copysign(lo, x), 0.0)
        q = np.where(small, lifted, q)
    big = a > hi
    if big.any():
        q = np.where(big, np.copysign(hi, x), q)
    return q


def _quantize_scalar(x: float, fmt: FpFormat) -> float:
    if x == 0.0:
        return 0.0
    m, lo, hi, thr = _limits(fmt)
    _, exp = math.frexp(x)
    shift = exp - 1 - m
    q = math.ldexp(round(math.ldexp(x, -shift)), shift)
    a = abs(q)
    if a < lo:
        return math.copysign(lo, x) if abs(x) >= thr else 0.0
    if a > hi:
        return math.copysign(hi, x)
    return q


def quantize(x, fmt: FpFormat):
    """Round to the nearest value of ``fmt`` (ties to even), flushing and saturating.

    Accepts scalars or arrays; scalars come back as Python floats.
    """
    if np.isscalar(x):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("quantize requires finite input")
        return _quantize_scalar(x, fmt)
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("quantize requires finite input")
    return _quantize_array(arr, fmt)


def is_representable(x, fmt: FpFormat):
    arr = np.asarray(x, dtype=np.float64)
    return np.isfinite(arr) & (_quantize_array(np.where(np.isfinite(arr), arr, 0.0), fmt) == arr)


def _check_representable(*operands, fmt: FpFormat):
    for op in operands:
        if not np.all(is_representable(op, fmt)):
            raise ValueError(f"operand not representable in {fmt}")


def ulp(x, fmt: FpFormat):
    """Spacing of the ``fmt`` grid at the magnitude of ``x`` (min-normal spacing below)."""
    a = np.maximum(np.abs(np.asarray(x, dtype=np.float64)), fmt.min_normal)
    _, exp = np.frexp(a)
    return np.ldexp(1.0, exp - 1 - fmt.mantissa_bits)


# --------------------------------------------------------------------------
# exact rational fallback for formats between 25 and 51 mantissa bits


def _round_fraction(v: Fraction, fmt: FpFormat) -> float:
    if v == 0:
        return 0.0
    sign = -1.0 if v < 0 else 1.0
    v = abs(v)
    e = v.numerator.bit_length() - v.denominator.bit_length()
    if Fraction(2) ** e > v:
        e -= 1
    shift = e - fmt.mantissa_bits
    scaled = v / (Fraction(2) ** shift)
    n = round(scaled)  # Fraction.__round__ is ties-to-even
    q = math.ldexp(float(n), shift)
    return _quantize_scalar(sign * q, fmt)


def _exact_op(op, a, b, fmt):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    for idx in np.ndindex(a.shape):
        out[idx] = _round_fraction(op(Fraction(float(a[idx])), Fraction(float(b[idx]))), fmt)
    return out


def _wants_fast(fmt: FpFormat) -> bool:
    return fmt.mantissa_bits <= 24


def _finish(result, scalar: bool):
    if scalar:
        return float(result)
    return result


def fp_add(a, b, fmt: FpFormat, check: bool = False):
    """Emulated addition in ``fmt``; operands must already be representable."""
    if check:
        _check_representable(a, b, fmt=fmt)
    scalar = np.isscalar(a) and np.isscalar(b)
    if fmt.is_native64:
        return _finish(np.add(a, b), scalar)
    if _wants_fast(fmt):
        if scalar:
            return _quantize_scalar(float(a) + float(b), fmt)
        return _quantize_array(np.add(a, b, dtype=np.float64), fmt)
    return _finish(_exact_op(lambda x, y: x + y, a, b, fmt), scalar)


def fp_sub(a, b, fmt: FpFormat, check: bool = False):
    return fp_add(a, -np.asarray(b) if not np.isscalar(b) else -b, fmt, check=check)


def fp_mul(a, b, fmt: FpFormat, check: bool = False):
    """Exact product rounded once into ``fmt``."""
    if check:
        _check_representable(a, b, fmt=fmt)
    scalar = np.isscalar(a) and np.isscalar(b)
    if fmt.is_native64:
        return _finish(np.multiply(a, b), scalar)
    if _wants_fast(fmt):
        if scalar:
            return _quantize_scalar(float(a) * float(b), fmt)
        return _quantize_array(np.multiply(a, b, dtype=np.float64), fmt)
    return _finish(_exact_op(lambda x, y: x * y, a, b, fmt), scalar)


def fp_div(a, b, fmt: FpFormat):
    """Correctly rounded quotient. The divisor may be an exact integer count."""
    scalar = np.isscalar(a) and np.isscalar(b)
    if np.any(np.asarray(b) == 0):
        raise ZeroDivisionError("fp_div by zero")
    if fmt.is_native64:
        return _finish(np.divide(a, b), scalar)
    if _wants_fast(fmt):
        if scalar:
            return _quantize_scalar(float(a) / float(b), fmt)
        return _quantize_array(np.divide(a, b, dtype=np.float64), fmt)
    return _finish(_exact_op(lambda x, y: x / y, a, b, fmt), scalar)


def fp_sqrt(a, fmt: FpFormat):
    scalar = np.isscalar(a)
    if np.any(np.asarray(a) < 0):
        raise ValueError("fp_sqrt of a negative value")
    # float64 sqrt is correctly rounded; a second rounding to <= 25 bits is innocuous
    r = np.sqrt(np.asarray(a, dtype=np.float64))
    if fmt.is_native64:
        return _finish(r, scalar)
    return _finish(_quantize_array(r, fmt), scalar)


def fp_sum(xs, fmt: FpFormat, axis: int | None = None):
    """Strict left-to-right fold of ``fp_add`` starting from 0.

    With ``axis`` given, every 1-D lane along that axis is folded
    independently (all lanes advance one element per step).
    """
    arr = np.asarray(xs, dtype=np.float64)
    if axis is None:
        arr = arr.reshape(-1)
        if arr.size == 0:
            return 0.0
        if fmt.is_native64:
            return float(np.cumsum(arr)[-1])
        acc = 0.0
        if _wants_fast(fmt):
            q = _quantize_scalar
            for v in arr.tolist():
                acc = q(acc + v, fmt)
            return acc
        for v in arr.tolist():
            acc = fp_add(acc, v, fmt)
        return acc
    arr = np.moveaxis(arr, axis, 0)
    if arr.shape[0] == 0:
        return np.zeros(arr.shape[1:])
    if fmt.is_native64:
        return np.cumsum(arr, axis=0)[-1]
    acc = np.zeros(arr.shape[1:])
    if _wants_fast(fmt):
        for row in arr:
            acc = _quantize_array(acc + row, fmt)
        return acc
    for row in arr:
        acc = fp_add(acc, row, fmt)
    return acc


# --------------------------------------------------------------------------
# bit-level adder (integer significands with guard/round/sticky)


def _decompose(x: float, fmt: FpFormat) -> tuple[int, int, int]:
    """Split a representable nonzero value into (sign, exponent, integer significand)."""
    sign = 1 if x < 0 else 0
    mant, exp = math.frexp(abs(x))
    e = exp - 1
    sig = int(math.ldexp(mant, fmt.mantissa_bits + 1))
    return sign, e, sig


def fp_add_detailed(a: float, b: float, fmt: FpFormat) -> tuple[float, bool]:
    """Bit-level addition of two representable scalars.

    Returns ``(result, zse)`` where ``zse`` is True when the operand with the
    smaller magnitude was nonzero yet the rounded result equals the larger
    operand, i.e. it was shifted out entirely.
    """
    a = float(a)
    b = float(b)
    if a == 0.0:
        return b, False
    if b == 0.0:
        return a, False
    if abs(a) < abs(b):
        a, b = b, a
    m = fmt.mantissa_bits
    sa, ea, ma = _decompose(a, fmt)
    sb, eb, mb = _decompose(b, fmt)
    # three extra low bits: guard, round, sticky
    ma <<= 3
    mb <<= 3
    d = ea - eb
    if d > 0:
        if d >= mb.bit_length():
            mb = 1  # only the sticky bit survives
        else:
            sticky = 1 if mb & ((1 << d) - 1) else 0
            mb = (mb >> d) | sticky
    s = ma - mb if sa != sb else ma + mb
    if s == 0:
        return 0.0, False
    sign = -1.0 if sa else 1.0
    # s holds the significand scaled so that bit (m + 3) is the unit place at ea
    width = s.bit_length()
    shift = width - (m + 1)
    if shift > 0:
        kept = s >> shift
        rem = s & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and kept & 1):
            kept += 1
    else:
        kept = s << (-shift)
    exp_of_lsb = ea - m - 3 + shift
    result = _quantize_scalar(sign * math.ldexp(kept, exp_of_lsb), fmt)
    return result, result == a


def fp_add_bits(a: float, b: float, fmt: FpFormat) -> float:
    return fp_add_detailed(a, b, fmt)[0]


def iter_formats(names: Iterable[str]) -> list[FpFormat]:
    return [parse_format(n) for n in names]
