"""Bit-exact emulation of low-precision, range-based, block-floating-point batch normalization."""
from .minifloat import (
    CATALOG,
    BFLOAT16,
    FP8,
    FP10A,
    FP10B,
    FP16,
    FP32,
    FP64,
    FpFormat,
    dynamic_range,
    fp_add,
    fp_mul,
    fp_sum,
    parse_format,
    quantize,
    representable_range,
)
from .bfp import BfpBlock, BfpTensor, bfp_bit_size, pack_tensor, unpack_tensor
from .norm import AffineParams, NormConfig, c_of_b

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "BFLOAT16",
    "FP8",
    "FP10A",
    "FP10B",
    "FP16",
    "FP32",
    "FP64",
    "FpFormat",
    "dynamic_range",
    "fp_add",
    "fp_mul",
    "fp_sum",
    "parse_format",
    "quantize",
    "representable_range",
    "BfpBlock",
    "BfpTensor",
    "bfp_bit_size",
    "pack_tensor",
    "unpack_tensor",
    "AffineParams",
    "NormConfig",
    "c_of_b",
    "__version__",
]
