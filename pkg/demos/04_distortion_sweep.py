"""
Distortion of normalized outputs
================================

The same Gaussian batch is normalized with its statistics accumulated in
different formats. Short formats drop small addends, which inflates the
output spread and biases each channel's mean.
"""
from lightnorm.minifloat import FP8, FP10A, FP16, FP32, FP64
from lightnorm.stats import distortion_sweep, gaussian_batch, range_probe

x = gaussian_batch(0)  # 10^5 samples as 16 rows x 6250 channels
print(f"{'format':>7} {'stdev':>9} {'|bias|':>10} {'zse':>7}")
for r in distortion_sweep(x, [FP64, FP32, FP16, FP10A, FP8]):
    print(f"{r.format:>7} {r.stdev:9.5f} {r.channel_bias:10.2e} {r.zse:7d}")

# Gradients often sit far below 1; only a 6-bit exponent reaches them.
probe = range_probe(gaussian_batch(1, (64, 64)) * 2.0**-13)
print(f"\nlog2 range [{probe.min_log2:.2f}, {probe.max_log2:.2f}]")
print({k: v for k, v in probe.fits.items()})
