"""
Minifloat formats and round-to-nearest-even
===========================================

Walks through the format catalog, shows where rounding flushes and
saturates, and why a running sum in a short format stops growing.
"""
import numpy as np

from lightnorm.minifloat import CATALOG, FP8, FP10A, dynamic_range, fp_sum, quantize, representable_range, ulp

# The catalog: every format is {sign, exponent, mantissa} with no
# subnormals and no Inf/NaN codes.
for fmt in CATALOG.values():
    lo, hi = representable_range(fmt)
    print(f"{fmt.name:>9} {fmt.triple}  exponents {dynamic_range(fmt)}  values [{lo:.4E}, {hi:.4E}]")

# Rounding is to nearest, ties to an even mantissa.
xs = np.array([0.32, 1.03125, 1.09375, 1e-6, 7e4])
print("\nx        ", xs)
print("FP10-A   ", quantize(xs, FP10A))
print("FP8      ", quantize(xs, FP8))

# Spacing grows with magnitude. At 16 the FP8 grid is 4 apart, so adding 1
# does nothing.
print("\nFP8 ulp at 1, 16, 1024:", [float(ulp(v, FP8)) for v in (1.0, 16.0, 1024.0)])

# A left-to-right sum of 10 000 copies of 2^-10 stalls after 8 terms.
terms = np.full(10_000, 2.0**-10)
print("exact sum", terms.sum(), " FP8 fold", fp_sum(terms, FP8), " FP10-A fold", fp_sum(terms, FP10A))
