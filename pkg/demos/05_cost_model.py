"""
Hardware cost model
===================

Cycles, DRAM traffic and energy of conventional, restructured and
LightNorm units over the BN layers of four CIFAR-style networks.
"""
from lightnorm import costmodel as cm

hw = cm.HwParams.from_calibration()
for name, suite in cm.bundled_suites().items():
    t = cm.benchmark_compare(suite, hw=hw)
    conv, ln = t["conventional"], t["lightnorm"]
    print(
        f"{name:>12}: {len(suite):3d} layers  FW restr/conv {t['restructured']['fw_cycles'] / conv['fw_cycles']:.3f}"
        f"  FW conv/LN {conv['fw_cycles'] / ln['fw_cycles']:.2f}  BW conv/LN {conv['bw_cycles'] / ln['bw_cycles']:.2f}"
        f"  module energy conv/LN {conv['compute_energy_j'] / ln['compute_energy_j']:.1f}x"
    )

# One memory-heavy layer: the range unit skips a full read of X.
layer = cm.LayerSpec(256, 144, 32, 32, name="expand")
bn = cm.energy_report("conventional", layer, hw)
rn = cm.energy_report("range", layer, hw)
print(f"\nFW energy {bn.fw_joules * 1e3:.3f} mJ -> {rn.fw_joules * 1e3:.3f} mJ ({1 - rn.fw_joules / bn.fw_joules:.1%} less)")
for p in bn.fw:
    print(f"  conventional {p.name:<9} compute {p.compute_cycles} stall {p.stall_cycles}")
