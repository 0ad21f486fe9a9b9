"""Analytical cycle, DRAM-traffic and energy model of BN hardware units.

Every pass is one streaming sweep of ``lanes`` parallel units over the
N = B*C*H*W elements of a layer. A pass costs ``ceil(N / lanes)`` compute
cycles; when the DRAM reads it needs exceed what the bus delivers in that
time, the surplus shows up as stall cycles (reads are on the critical
path, writes are posted). The first forward pass consumes the producer's
output stream directly and reads nothing from DRAM.

Energy is DRAM traffic times a per-bit energy, plus on-chip statistic
traffic times an SRAM per-bit energy, plus the unit's power times its busy
time. All constants come from a calibration file.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

from .bfp import bfp_bit_size
from .minifloat import FP10A, FP10B, FP32, FpFormat, parse_format

__all__ = [
    "VARIANTS",
    "HwParams",
    "LayerSpec",
    "PassCost",
    "CostReport",
    "CalibrationError",
    "load_calibration",
    "load_suite",
    "bundled_suites",
    "pass_plan",
    "fw_cycles",
    "bw_cycles",
    "memory_bits",
    "energy_report",
    "benchmark_compare",
]

VARIANTS = ("conventional", "restructured", "range", "lightnorm")
_DATA = "lightnorm.data"
SUITE_NAMES = ("resnet50", "mobilenetv1", "mobilenetv2", "densenet121")


class CalibrationError(KeyError):
    """A calibration constant needed by the model is missing."""


def load_calibration(path=None) -> dict:
    if path is None:
        text = resources.files(_DATA).joinpath("calibration.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


@dataclass(frozen=True)
class HwParams:
    lanes: int = 32
    clock_hz: float = 150e6
    dram_bandwidth: float = 1024.0  # bits per cycle
    dram_energy_per_bit: float = 20e-12
    sram_energy_per_bit: float = 0.1e-12
    # power of the BN unit per "variant/format" key, watts
    module_power: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lanes < 1 or not self.clock_hz > 0 or not self.dram_bandwidth > 0:
            raise ValueError("lanes, clock and bandwidth must be positive")
        if self.dram_energy_per_bit < 0 or self.sram_energy_per_bit < 0:
            raise ValueError("per-bit energies must be nonnegative")

    @classmethod
    def from_calibration(cls, cal: dict | None = None, **overrides) -> "HwParams":
        cal = load_calibration() if cal is None else cal
        kw = dict(
            lanes=cal.get("lanes", 32),
            clock_hz=cal.get("clock_hz", 150e6),
            dram_bandwidth=cal.get("dram_bandwidth_bits_per_cycle", 1024.0),
            dram_energy_per_bit=cal["dram_energy_per_bit_j"],
            sram_energy_per_bit=cal["sram_energy_per_bit_j"],
            module_power=dict(cal["module_power_w"]),
        )
        kw.update(overrides)
        return cls(**kw)

    def with_(self, **kw) -> "HwParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class LayerSpec:
    B: int
    C: int
    H: int = 1
    W: int = 1
    name: str = ""
    fw_format: FpFormat | None = None  # None: the variant's own format
    bw_format: FpFormat | None = None
    k: int = 4

    def __post_init__(self):
        if min(self.B, self.C, self.H, self.W) < 0:
            raise ValueError("layer dimensions must be nonnegative")
        if self.k < 1:
            raise ValueError("group size must be >= 1")

    @property
    def elements(self) -> int:
        return self.B * self.C * self.H * self.W

    def formats(self, variant: str) -> tuple[FpFormat, FpFormat]:
        if variant == "lightnorm":
            return self.fw_format or FP10A, self.bw_format or FP10B
        return self.fw_format or FP32, self.bw_format or FP32


def load_suite(name_or_path) -> list[LayerSpec]:
    """Layer list from a bundled suite name or a JSON file path."""
    if name_or_path in SUITE_NAMES:
        data = json.loads(resources.files(_DATA).joinpath(f"{name_or_path}.json").read_text())
    else:
        with open(name_or_path) as fh:
            data = json.load(fh)
    out = []
    for entry in data["layers"]:
        kw = {}
        for key in ("fw_format", "bw_format"):
            if key in entry:
                kw[key] = parse_format(entry[key])
        out.append(
            LayerSpec(entry["B"], entry["C"], entry.get("H", 1), entry.get("W", 1), entry.get("name", ""), k=entry.get("k", 4), **kw)
        )
    return out


def bundled_suites() -> dict[str, list[LayerSpec]]:
    return {n: load_suite(n) for n in SUITE_NAMES}


# --------------------------------------------------------------------------
# traffic


def memory_bits(variant: str, layer: LayerSpec, pass_: str = "fw") -> int:
    """Bits to store one full tensor of the layer in the format of the given pass."""
    _check_variant(variant)
    fw, bw = layer.formats(variant)
    fmt = fw if pass_ == "fw" else bw
    n = layer.elements
    if variant == "lightnorm":
        return bfp_bit_size(n, fmt, layer.k)
    return n * fmt.total_bits


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class PassCost:
    name: str
    compute_cycles: int
    stall_cycles: int
    dram_read_bits: int
    dram_write_bits: int

    @property
    def cycles(self) -> int:
        return self.compute_cycles + self.stall_cycles


def pass_plan(variant: str, layer: LayerSpec, direction: str = "fw") -> list[tuple[str, int, int]]:
    """(pass name, DRAM read bits, DRAM write bits) in schedule order."""
    _check_variant(variant)
    x_fw = memory_bits(variant, layer, "fw")  # X or Y in the forward format
    g_bw = memory_bits(variant, layer, "bw")  # dY or dX in the backward format
    if direction == "fw":
        if variant == "conventional":
            return [("mean", 0, 0), ("variance", x_fw, 0), ("normalize", x_fw, x_fw)]
        # restructured, range and lightnorm fuse the statistics into one sweep
        return [("stats", 0, 0), ("normalize", x_fw, x_fw)]
    if direction == "bw":
        if variant == "lightnorm":
            # the reduction needs dY and X; the apply pass only dY, since the
            # range correction touches the cached extreme positions alone
            return [("reduce", g_bw + x_fw, 0), ("apply", g_bw, g_bw)]
        return [("reduce", g_bw + x_fw, 0), ("apply", g_bw + x_fw, g_bw)]
    raise ValueError(f"direction must be 'fw' or 'bw', got {direction!r}")


def _passes(variant: str, layer: LayerSpec, hw: HwParams, direction: str) -> list[PassCost]:
    n = layer.elements
    compute = math.ceil(n / hw.lanes)
    out = []
    for name, rd, wr in pass_plan(variant, layer, direction):
        fetch = math.ceil(rd / hw.dram_bandwidth)
        out.append(PassCost(name, compute, max(0, fetch - compute), rd, wr))
    return out


def fw_cycles(variant: str, layer: LayerSpec, hw: HwParams | None = None) -> int:
    hw = hw or HwParams()
    return sum(p.cycles for p in _passes(variant, layer, hw, "fw"))


def bw_cycles(variant: str, layer: LayerSpec, hw: HwParams | None = None) -> int:
    hw = hw or HwParams()
    return sum(p.cycles for p in _passes(variant, layer, hw, "bw"))


# --------------------------------------------------------------------------
# energy


@dataclass
class CostReport:
    variant: str
    layer: str
    fw: list
    bw: list
    fw_energy: dict  # {"dram": J, "sram": J, "compute": J}
    bw_energy: dict

    @property
    def fw_cycles(self) -> int:
        return sum(p.cycles for p in self.fw)

    @property
    def bw_cycles(self) -> int:
        return sum(p.cycles for p in self.bw)

    @property
    def fw_joules(self) -> float:
        return sum(self.fw_energy.values())

    @property
    def bw_joules(self) -> float:
        return sum(self.bw_energy.values())

    @property
    def joules(self) -> float:
        return self.fw_joules + self.bw_joules

    @property
    def compute_joules(self) -> float:
        return self.fw_energy["compute"] + self.bw_energy["compute"]

    def dram_bits(self, direction: str = "fw") -> tuple[int, int]:
        passes = self.fw if direction == "fw" else self.bw
        return sum(p.dram_read_bits for p in passes), sum(p.dram_write_bits for p in passes)

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "layer": self.layer,
            "fw_cycles": self.fw_cycles,
            "bw_cycles": self.bw_cycles,
            "fw_stall_cycles": sum(p.stall_cycles for p in self.fw),
            "bw_stall_cycles": sum(p.stall_cycles for p in self.bw),
            "fw_dram_read_bits": self.dram_bits("fw")[0],
            "fw_dram_write_bits": self.dram_bits("fw")[1],
            "bw_dram_read_bits": self.dram_bits("bw")[0],
            "bw_dram_write_bits": self.dram_bits("bw")[1],
            "fw_energy_j": self.fw_joules,
            "bw_energy_j": self.bw_joules,
            "compute_energy_j": self.compute_joules,
            "energy_j": self.joules,
            "passes": {"fw": [asdict(p) for p in self.fw], "bw": [asdict(p) for p in self.bw]},
        }


def _power(variant: str, fmt: FpFormat, hw: HwParams) -> float:
    key = f"{variant}/{fmt.name}"
    if key not in hw.module_power:
        raise CalibrationError(f"no module power calibrated for {key!r}")
    return hw.module_power[key]


def _stat_bits(variant: str, layer: LayerSpec, fmt: FpFormat, direction: str) -> int:
    # per-channel registers spilled to on-chip memory: mu, sigma, gamma, beta
    # (+ min, max for the range variants; dgamma, dbeta in the backward pass)
    per_channel = 4 + (2 if variant in ("range", "lightnorm") else 0) + (2 if direction == "bw" else 0)
    return layer.C * per_channel * fmt.total_bits if layer.elements else 0


def energy_report(variant: str, layer: LayerSpec, hw: HwParams | None = None) -> CostReport:
    hw = hw or HwParams.from_calibration()
    fw_fmt, bw_fmt = layer.formats(variant)
    fw = _passes(variant, layer, hw, "fw")
    bw = _passes(variant, layer, hw, "bw")

    def energy(passes, fmt, direction):
        bits = sum(p.dram_read_bits + p.dram_write_bits for p in passes)
        cycles = sum(p.cycles for p in passes)
        return {
            "dram": bits * hw.dram_energy_per_bit,
            "sram": _stat_bits(variant, layer, fmt, direction) * hw.sram_energy_per_bit,
            "compute": _power(variant, fmt, hw) * cycles / hw.clock_hz,
        }

    return CostReport(variant, layer.name, fw, bw, energy(fw, fw_fmt, "fw"), energy(bw, bw_fmt, "bw"))


def benchmark_compare(suite, variants=VARIANTS, hw: HwParams | None = None) -> dict:
    """Aggregate FW/BW cycles and energy of a layer list for each variant.

    Returns ``{variant: {"layers": [CostReport, ...], "fw_cycles": ..., ...}}``.
    """
    suite = list(suite)
    if not suite:
        raise ValueError("empty suite")
    hw = hw or HwParams.from_calibration()
    table = {}
    for v in variants:
        reps = [energy_report(v, layer, hw) for layer in suite]
        table[v] = {
            "layers": reps,
            "fw_cycles": sum(r.fw_cycles for r in reps),
            "bw_cycles": sum(r.bw_cycles for r in reps),
            "fw_energy_j": sum(r.fw_joules for r in reps),
            "bw_energy_j": sum(r.bw_joules for r in reps),
            "compute_energy_j": sum(r.compute_joules for r in reps),
            "energy_j": sum(r.joules for r in reps),
        }
    return table
