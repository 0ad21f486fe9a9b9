"""Numerical-quality diagnostics: zero-setting errors, normalization distortion, dynamic range."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bfp import channel_major
from .minifloat import CATALOG, FpFormat, dynamic_range, fp_add_detailed, quantize
from .norm import AffineParams, NormConfig, bn_forward

__all__ = [
    "DistortionReport",
    "RangeProbe",
    "zse_count",
    "zse_trace",
    "distortion_sweep",
    "gaussian_batch",
    "range_probe",
    "DEFAULT_SWEEP_SHAPE",
]

# 10^5 samples laid out as a mini-batch of 16 over 6250 channels
DEFAULT_SWEEP_SHAPE = (16, 6250)


def zse_trace(xs, fmt: FpFormat) -> list[bool]:
    """Per-step zero-setting flags of the left-to-right fold starting at 0."""
    acc = 0.0
    flags = []
    for v in np.asarray(xs, dtype=np.float64).reshape(-1).tolist():
        acc, lost = fp_add_detailed(acc, v, fmt)
        flags.append(lost)
    return flags


def zse_count(xs, fmt: FpFormat) -> int:
    """Fold steps whose nonzero smaller operand left the larger one unchanged."""
    return sum(zse_trace(xs, fmt))


def _lane_zse(cm: np.ndarray, fmt: FpFormat) -> int:
    """ZSE count of the per-channel mean accumulation of a (C, n) array."""
    acc = np.zeros(cm.shape[0])
    total = 0
    for col in quantize(cm, fmt).T:
        s = quantize(acc + col, fmt)
        small = np.where(np.abs(acc) >= np.abs(col), col, acc)
        large = np.where(np.abs(acc) >= np.abs(col), acc, col)
        total += int(np.count_nonzero((small != 0) & (s == large)))
        acc = s
    return total


@dataclass
class DistortionReport:
    format: str
    mean: float
    stdev: float
    count: int
    # mean over channels of |per-channel output mean|; the pooled mean above
    # averages signed channel biases and largely cancels
    channel_bias: float = 0.0
    zse: int = 0

    def as_dict(self) -> dict:
        return {
            "format": self.format,
            "mean": self.mean,
            "stdev": self.stdev,
            "count": self.count,
            "channel_bias": self.channel_bias,
            "zse": self.zse,
        }


def gaussian_batch(seed: int = 0, shape=DEFAULT_SWEEP_SHAPE, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).normal(loc, scale, size=shape)


def distortion_sweep(x, formats, variant: str = "conventional", epsilon: float = 1e-12) -> list[DistortionReport]:
    """Normalize the same data in each format and measure the pre-affine output.

    ``x`` is (B, C, ...) with statistics per channel. The normalized values
    are read back as float64; mean and stdev are pooled over all elements.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        x = x.reshape(-1, 1)
    n_ch = x.shape[1]
    p = AffineParams.identity(n_ch)
    out = []
    for fmt in formats:
        cfg = NormConfig(variant=variant, fw_format=fmt, bw_format=fmt, epsilon=epsilon)
        _, cache = bn_forward(x, p, cfg)
        xhat = cache.xhat
        zse = 0 if fmt.is_native64 else _lane_zse(channel_major(x), fmt)
        out.append(
            DistortionReport(
                format=fmt.name,
                mean=float(np.mean(xhat)),
                stdev=float(np.std(xhat)),
                count=int(xhat.size),
                channel_bias=float(np.mean(np.abs(np.mean(xhat, axis=1)))),
                zse=zse,
            )
        )
    return out


@dataclass
class RangeProbe:
    min_log2: float
    max_log2: float
    fits: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"min_log2": self.min_log2, "max_log2": self.max_log2, "fits": dict(self.fits)}


def range_probe(stream, formats: dict | None = None) -> RangeProbe:
    """log2-magnitude extent of the nonzero elements of a tensor stream.

    A format fits when every exponent floor(log2|x|) lies in its dynamic range.
    """
    if isinstance(stream, np.ndarray):
        stream = [stream]
    parts = [np.abs(np.asarray(t, dtype=np.float64)).reshape(-1) for t in stream]
    mags = np.concatenate(parts) if parts else np.zeros(0)
    mags = mags[mags > 0]
    if mags.size == 0:
        raise ValueError("range_probe needs at least one nonzero element")
    lo = float(np.log2(mags.min()))
    hi = float(np.log2(mags.max()))
    formats = CATALOG if formats is None else formats
    fits = {}
    for name, fmt in formats.items():
        emin, emax = dynamic_range(fmt)
        fits[name] = math.floor(lo) >= emin and math.floor(hi) <= emax
    return RangeProbe(lo, hi, fits)
