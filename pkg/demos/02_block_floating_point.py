"""
Block floating point
====================

Groups of k values share one exponent, so each element keeps only its
sign and mantissa. Small neighbours of a large value lose precision.
"""
import numpy as np

from lightnorm.bfp import bfp_align, bfp_bit_size, decode_block, encode_block, pack_tensor, unpack_tensor
from lightnorm.minifloat import FP10A, FP10B

block = encode_block([3.0, 0.25, -0.1, 0.01], FP10A, 4)
print("shared exponent", block.shared_exponent, "mantissas", block.mantissas, "signs", block.signs)
print("decoded", decode_block(block))

# Storage: N (1 + m) + ceil(N / k) e bits.
for k in (1, 4, 8, 16):
    bits = bfp_bit_size(1024, FP10A, k)
    print(f"k={k:>2}: {bits} bits for 1024 FP10-A values ({1 - bits / (1024 * 10):.1%} below unpacked)")

# Bigger groups mean more elements aligned to a larger neighbour.
rng = np.random.default_rng(0)
x = rng.standard_normal((128, 16, 4, 4))
for fmt in (FP10A, FP10B):
    for k in (4, 16):
        err = np.abs(bfp_align(x, fmt, k) - x).mean()
        print(f"{fmt.name} k={k:>2}: mean abs alignment error {err:.4f}")

bt = pack_tensor(x, FP10A, 4)
assert np.array_equal(unpack_tensor(bt), bfp_align(x, FP10A, 4))
print("packed tensor:", bt.exponents.shape, "exponent blocks,", bt.total_bits, "bits")
