"""Batch normalization variants with operation-level precision emulation.

Tensors are (N, C) feature matrices or (B, C, H, W) maps; statistics are
per channel (axis 1) over all other axes in raster order. Every
intermediate result is rounded into the active format: the forward
format for ``*_forward`` and the backward format for ``*_backward``.
Reductions are strict left-to-right folds (see ``minifloat.fp_sum``);
divisions by an element count use the exact integer count.

Variants:

* ``conventional``: two-pass variance E[(X - E[X])^2]
* ``restructured``: one-pass variance E[X^2] - E[X]^2
* ``range``: range normalization, sigma ~ C(B) * (max - min)
* ``lightnorm``: range normalization in FP10-A forward / FP10-B backward
  with block-floating-point storage of outputs and gradients
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bfp
from .bfp import BfpTensor
from .minifloat import BFLOAT16, FP10A, FP10B, FP32, FpFormat, fp_add, fp_div, fp_mul, fp_sqrt, fp_sum, quantize

__all__ = [
    "VARIANTS",
    "C_OF_B_LUT",
    "NormConfig",
    "NormStats",
    "NormCache",
    "AffineParams",
    "AccessCounter",
    "c_of_b",
    "c_of_b_exact",
    "bn_forward",
    "bn_backward",
    "rn_forward",
    "rn_backward",
    "rn_backward_exact",
    "lightnorm_forward",
    "lightnorm_backward",
    "forward",
    "backward",
]

VARIANTS = ("conventional", "restructured", "range", "lightnorm")
LUT_BATCH_SIZES = (16, 32, 64, 128, 256, 1024)
# the constant table holds 16-bit words
LUT_FORMAT = BFLOAT16


def c_of_b_exact(batch: float) -> float:
    """1 / sqrt(2 ln B) in float64."""
    if batch < 2:
        raise ValueError(f"C(B) needs B >= 2, got {batch}")
    return 1.0 / math.sqrt(2.0 * math.log(batch))


C_OF_B_LUT = {b: quantize(c_of_b_exact(b), LUT_FORMAT) for b in LUT_BATCH_SIZES}


def c_of_b(batch: float) -> float:
    """Range-to-sigma scale C(B).

    Table sizes return the stored bfloat16 word (C(128) = 0.3203125); other
    sizes fall back to the exact expression.
    """
    if batch in C_OF_B_LUT:
        return C_OF_B_LUT[batch]
    return c_of_b_exact(batch)


@dataclass(frozen=True)
class NormConfig:
    variant: str = "conventional"
    fw_format: FpFormat = FP32
    bw_format: FpFormat = FP32
    epsilon: float = 1e-5
    group_size: int = 4
    batch_size: int | None = None
    # "batch": C(B) of the mini-batch size; "elements": C of the per-channel element count
    c_basis: str = "batch"
    # "literal": range-norm gradients exactly as printed; "exact": derivative of the forward
    rn_grad: str = "literal"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.group_size < 1:
            raise ValueError("group size must be >= 1")
        if self.c_basis not in ("batch", "elements"):
            raise ValueError(f"unknown c_basis {self.c_basis!r}")
        if self.rn_grad not in ("literal", "exact"):
            raise ValueError(f"unknown rn_grad {self.rn_grad!r}")

    @classmethod
    def lightnorm(cls, **kw) -> "NormConfig":
        kw.setdefault("fw_format", FP10A)
        kw.setdefault("bw_format", FP10B)
        kw.setdefault("group_size", 4)
        return cls(variant="lightnorm", **kw)

    def with_(self, **kw) -> "NormConfig":
        return replace(self, **kw)


@dataclass
class AffineParams:
    gamma: np.ndarray
    beta: np.ndarray

    @classmethod
    def identity(cls, channels: int) -> "AffineParams":
        return cls(np.ones(channels), np.zeros(channels))

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if self.gamma.shape != self.beta.shape:
            raise ValueError("gamma and beta must have the same shape")
        if not (np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.beta))):
            raise ValueError("affine parameters must be finite")


@dataclass
class NormStats:
    mu: np.ndarray
    sigma: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    argmin_mask: np.ndarray | None = None  # (C, n) channel-major
    argmax_mask: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "min": self.x_min.tolist(),
            "max": self.x_max.tolist(),
        }


@dataclass
class NormCache:
    shape: tuple[int, ...]
    variant: str
    stats: NormStats
    xhat: np.ndarray  # (C, n) pre-affine normalized values
    centered: np.ndarray  # (C, n) x - mu
    denom: np.ndarray  # (C,) sqrt(var + eps) or C(B) * range + eps
    gamma: np.ndarray
    c_value: float | None = None
    config: NormConfig | None = None


@dataclass
class AccessCounter:
    """Counts element reads of the input per named pass."""

    reads: dict = field(default_factory=dict)

    def touch(self, name: str, count: int) -> None:
        self.reads[name] = self.reads.get(name, 0) + count


def _split(x: np.ndarray, p: AffineParams):
    x = np.asarray(x, dtype=np.float64)
    cm = bfp.channel_major(x)
    if cm.shape[1] == 0:
        raise ValueError("empty channel")
    if p.gamma.shape[0] != cm.shape[0]:
        raise ValueError(f"affine params have {p.gamma.shape[0]} channels, input has {cm.shape[0]}")
    return x.shape, cm


def _affine(xhat, p: AffineParams, fmt: FpFormat):
    g = quantize(p.gamma, fmt)[:, None]
    b = quantize(p.beta, fmt)[:, None]
    return fp_add(fp_mul(xhat, g, fmt), b, fmt)


def _eps(cfg: NormConfig, fmt: FpFormat) -> float:
    # the epsilon register cannot hold less than the smallest normal
    return max(quantize(cfg.epsilon, fmt), fmt.min_normal)


def _mini_batch(shape, cfg: NormConfig) -> int:
    if cfg.batch_size is not None:
        return cfg.batch_size
    return shape[0] if len(shape) >= 2 else int(np.prod(shape))


# --------------------------------------------------------------------------
# conventional / restructured


def bn_forward(x, p: AffineParams, cfg: NormConfig):
    """Standard batch norm; returns (Y, cache)."""
    if cfg.variant not in ("conventional", "restructured"):
        raise ValueError(f"bn_forward handles conventional/restructured, got {cfg.variant!r}")
    f = cfg.fw_format
    shape, cm = _split(x, p)
    n = cm.shape[1]
    xq = quantize(cm, f)
    mu = fp_div(fp_sum(xq, f, axis=1), n, f)
    centered = fp_add(xq, -mu[:, None], f)
    if cfg.variant == "conventional":
        var = fp_div(fp_sum(fp_mul(centered, centered, f), f, axis=1), n, f)
    else:
        ex2 = fp_div(fp_sum(fp_mul(xq, xq, f), f, axis=1), n, f)
        var = np.maximum(fp_add(ex2, -fp_mul(mu, mu, f), f), 0.0)
    denom = fp_sqrt(fp_add(var, _eps(cfg, f), f), f)
    xhat = fp_div(centered, denom[:, None], f)
    y = _affine(xhat, p, f)
    stats = NormStats(mu, denom, xq.min(axis=1), xq.max(axis=1))
    cache = NormCache(shape, cfg.variant, stats, xhat, centered, denom, p.gamma.copy(), config=cfg)
    return bfp.from_channel_major(y, shape), cache


def _bn_sums(dy, xhat, f):
    dbeta = fp_sum(dy, f, axis=1)
    dgamma = fp_sum(fp_mul(dy, xhat, f), f, axis=1)
    return dgamma, dbeta


def bn_backward(dy, cache: NormCache, cfg: NormConfig):
    """Shared backward of conventional and restructured BN; returns (dX, dgamma, dbeta)."""
    f = cfg.bw_format
    dy = np.asarray(dy, dtype=np.float64)
    if tuple(dy.shape) != tuple(cache.shape):
        raise ValueError(f"gradient shape {dy.shape} does not match cache {cache.shape}")
    dyq = quantize(bfp.channel_major(dy), f)
    n = dyq.shape[1]
    xhat = quantize(cache.xhat, f)
    dgamma, dbeta = _bn_sums(dyq, xhat, f)
    scale = fp_div(quantize(cache.gamma, f), quantize(cache.denom, f), f)
    mean_b = fp_div(dbeta, n, f)
    mean_g = fp_div(dgamma, n, f)
    inner = fp_add(fp_add(dyq, -mean_b[:, None], f), -fp_mul(xhat, mean_g[:, None], f), f)
    dx = fp_mul(scale[:, None], inner, f)
    return bfp.from_channel_major(dx, cache.shape), dgamma, dbeta


# --------------------------------------------------------------------------
# range normalization


def _extreme_masks(xq: np.ndarray):
    xmin = xq.min(axis=1)
    xmax = xq.max(axis=1)
    return xmin, xmax, xq == xmin[:, None], xq == xmax[:, None]


def _stream_stats(xq: np.ndarray, f: FpFormat, counter: AccessCounter | None):
    """Running sum, min and max in one traversal of the elements."""
    # min/max comparisons are exact, so only the sum needs the ordered fold
    acc = fp_sum(xq, f, axis=1)
    lo = xq.min(axis=1)
    hi = xq.max(axis=1)
    if counter is not None:
        counter.touch("stats", xq.size)
    return acc, lo, hi


def rn_forward(x, p: AffineParams, cfg: NormConfig, counter: AccessCounter | None = None):
    """Range normalization; returns (Y, cache)."""
    f = cfg.fw_format
    shape, cm = _split(x, p)
    n = cm.shape[1]
    xq = quantize(cm, f)
    total, xmin, xmax = _stream_stats(xq, f, counter)
    mu = fp_div(total, n, f)
    batch = n if cfg.c_basis == "elements" else _mini_batch(shape, cfg)
    c_val = quantize(c_of_b(batch), f)
    rng = fp_add(xmax, -xmin, f)
    sigma = fp_mul(c_val, rng, f)
    denom = fp_add(sigma, _eps(cfg, f), f)
    centered = fp_add(xq, -mu[:, None], f)
    xhat = fp_div(centered, denom[:, None], f)
    y = _affine(xhat, p, f)
    if counter is not None:
        counter.touch("normalize", xq.size)
    stats = NormStats(mu, sigma, xmin, xmax, xq == xmin[:, None], xq == xmax[:, None])
    cache = NormCache(shape, "range", stats, xhat, centered, denom, p.gamma.copy(), c_val, cfg)
    return bfp.from_channel_major(y, shape), cache


def _rn_prepare(dy, cache: NormCache, f: FpFormat):
    dy = np.asarray(dy, dtype=np.float64)
    if tuple(dy.shape) != tuple(cache.shape):
        raise ValueError(f"gradient shape {dy.shape} does not match cache {cache.shape}")
    st = cache.stats
    if st.argmin_mask is None or st.argmax_mask is None:
        raise ValueError("cache lacks argmin/argmax masks; run rn_forward first")
    return quantize(bfp.channel_major(dy), f)


def _tie_weights(mask: np.ndarray) -> np.ndarray:
    counts = mask.sum(axis=1, keepdims=True)
    return np.where(mask, 1.0 / np.maximum(counts, 1), 0.0)


def rn_backward(dy, cache: NormCache, cfg: NormConfig):
    """Range-norm backward; returns (dX, dgamma, dbeta).

    Follows the hardware formulation: a numerator term for every element,

        g1_i = -gamma / (sigma + eps) * (mean(dy) + dy_i)

    and one per-channel denominator term,

        g2 = gamma * C(B) / 2 * sigma**(-3/2) * sum(dy_i * (x_i - mu)),

    added at the channel minimum and subtracted at the maximum. Tied
    extrema share the correction equally. With ``cfg.rn_grad == "exact"``
    the analytic derivative of the forward pass is used instead.
    """
    if cfg.rn_grad == "exact":
        return rn_backward_exact(dy, cache, cfg)
    f = cfg.bw_format
    dyq = _rn_prepare(dy, cache, f)
    n = dyq.shape[1]
    st = cache.stats
    gamma = quantize(cache.gamma, f)
    sigma = quantize(st.sigma, f)
    centered = quantize(cache.centered, f)
    xhat = quantize(cache.xhat, f)
    c_val = quantize(cache.c_value, f)

    # scalar unit
    neg_scale = fp_div(-gamma, fp_add(sigma, _eps(cfg, f), f), f)
    safe = np.where(sigma > 0, sigma, 1.0)
    pow_term = fp_div(1.0, fp_mul(safe, fp_sqrt(safe, f), f), f)
    half_gc = fp_div(fp_mul(gamma, c_val, f), 2, f)
    den_scale = np.where(sigma > 0, fp_mul(pow_term, half_gc, f), 0.0)

    dbeta = fp_sum(dyq, f, axis=1)
    mean_dy = fp_div(dbeta, n, f)
    g1 = fp_mul(neg_scale[:, None], fp_add(mean_dy[:, None], dyq, f), f)
    s2 = fp_sum(fp_mul(dyq, centered, f), f, axis=1)
    g2 = fp_mul(den_scale, s2, f)

    w_min = _tie_weights(st.argmin_mask)
    w_max = _tie_weights(st.argmax_mask)
    corr_min = fp_mul(g2[:, None], w_min, f)
    corr_max = fp_mul(g2[:, None], w_max, f)
    dx = np.where(st.argmin_mask, fp_add(g1, corr_min, f), g1)
    dx = np.where(st.argmax_mask, fp_add(dx, -corr_max, f), dx)
    dgamma = fp_sum(fp_mul(dyq, xhat, f), f, axis=1)
    return bfp.from_channel_major(dx, cache.shape), dgamma, dbeta


def rn_backward_exact(dy, cache: NormCache, cfg: NormConfig):
    """Analytic derivative of the range-norm forward pass, same precision policy.

    With s = C * (max - min) + eps and xhat = (x - mu) / s:

        dx_i = gamma / s * (dy_i - mean(dy))  +/-  gamma * C / s**2 * sum(dy * (x - mu))

    where the second term is added at the minimum and subtracted at the maximum.
    """
    f = cfg.bw_format
    dyq = _rn_prepare(dy, cache, f)
    n = dyq.shape[1]
    st = cache.stats
    gamma = quantize(cache.gamma, f)
    denom = quantize(cache.denom, f)
    centered = quantize(cache.centered, f)
    xhat = quantize(cache.xhat, f)
    c_val = quantize(cache.c_value, f)

    scale = fp_div(gamma, denom, f)
    den_scale = fp_div(fp_mul(gamma, c_val, f), fp_mul(denom, denom, f), f)

    dbeta = fp_sum(dyq, f, axis=1)
    mean_dy = fp_div(dbeta, n, f)
    g1 = fp_mul(scale[:, None], fp_add(dyq, -mean_dy[:, None], f), f)
    s2 = fp_sum(fp_mul(dyq, centered, f), f, axis=1)
    g2 = fp_mul(den_scale, s2, f)

    w_min = _tie_weights(st.argmin_mask)
    w_max = _tie_weights(st.argmax_mask)
    dx = np.where(st.argmin_mask, fp_add(g1, fp_mul(g2[:, None], w_min, f), f), g1)
    dx = np.where(st.argmax_mask, fp_add(dx, -fp_mul(g2[:, None], w_max, f), f), dx)
    dgamma = fp_sum(fp_mul(dyq, xhat, f), f, axis=1)
    return bfp.from_channel_major(dx, cache.shape), dgamma, dbeta


# --------------------------------------------------------------------------
# LightNorm


def lightnorm_forward(x, p: AffineParams, cfg: NormConfig, counter: AccessCounter | None = None):
    """Range norm in the forward format, output stored as BFP; returns (BfpTensor, cache)."""
    if cfg.variant != "lightnorm":
        raise ValueError(f"lightnorm_forward needs variant 'lightnorm', got {cfg.variant!r}")
    y, cache = rn_forward(x, p, cfg, counter)
    cache.variant = "lightnorm"
    return bfp.pack_tensor(y, cfg.fw_format, cfg.group_size), cache


def lightnorm_backward(dy: BfpTensor, cache: NormCache, cfg: NormConfig):
    """Unpack dY, range-norm backward in the backward format, pack dX.

    Returns (BfpTensor dX, dgamma, dbeta); the per-channel parameter
    gradients stay unpacked.
    """
    if cfg.variant != "lightnorm":
        raise ValueError(f"lightnorm_backward needs variant 'lightnorm', got {cfg.variant!r}")
    grad = bfp.unpack_tensor(dy) if isinstance(dy, BfpTensor) else np.asarray(dy, dtype=np.float64)
    dx, dgamma, dbeta = rn_backward(grad, cache, cfg)
    return bfp.pack_tensor(dx, cfg.bw_format, cfg.group_size), dgamma, dbeta


# --------------------------------------------------------------------------
# dispatch on cfg.variant; LightNorm results come back unpacked


def forward(x, p: AffineParams, cfg: NormConfig):
    if cfg.variant in ("conventional", "restructured"):
        return bn_forward(x, p, cfg)
    if cfg.variant == "range":
        return rn_forward(x, p, cfg)
    packed, cache = lightnorm_forward(x, p, cfg)
    return bfp.unpack_tensor(packed), cache


def backward(dy, cache: NormCache, cfg: NormConfig):
    if cfg.variant in ("conventional", "restructured"):
        return bn_backward(dy, cache, cfg)
    if cfg.variant == "range":
        return rn_backward(dy, cache, cfg)
    packed_dy = bfp.pack_tensor(dy, cfg.bw_format, cfg.group_size)
    dx, dgamma, dbeta = lightnorm_backward(packed_dy, cache, cfg)
    return bfp.unpack_tensor(dx), dgamma, dbeta
