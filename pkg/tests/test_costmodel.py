import json
import math
from fractions import Fraction
from importlib import resources

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lightnorm import costmodel as cm
from lightnorm.bfp import bfp_bit_size
from lightnorm.costmodel import HwParams, LayerSpec
from lightnorm.minifloat import FP10A, FP10B, FP32
from lightnorm.networks import suite_dict


@pytest.fixture(scope="module")
def hw():
    return HwParams.from_calibration()


@pytest.fixture(scope="module")
def suites():
    return cm.bundled_suites()


def test_memory_bits_examples():
    layer = LayerSpec(1, 4)
    assert cm.memory_bits("lightnorm", layer) == 25
    unpacked = 4 * FP10A.total_bits
    assert 1 - cm.memory_bits("lightnorm", layer) / unpacked == 0.375
    assert cm.memory_bits("conventional", LayerSpec(10, 100)) == 32000
    assert cm.memory_bits("lightnorm", LayerSpec(1, 1024), "bw") == 5632


@given(st.integers(0, 64), st.integers(0, 64), st.integers(0, 8), st.sampled_from([1, 2, 4, 8, 16]))
def test_memory_bits_agrees_with_bfp(b, c, hw_, k):
    layer = LayerSpec(b, c, hw_, hw_, k=k)
    assert cm.memory_bits("lightnorm", layer, "fw") == bfp_bit_size(layer.elements, FP10A, k)
    assert cm.memory_bits("lightnorm", layer, "bw") == bfp_bit_size(layer.elements, FP10B, k)
    assert cm.memory_bits("restructured", layer) == layer.elements * 32


def test_pass_counts_structural():
    layer = LayerSpec(8, 16, 4, 4)
    assert len(cm.pass_plan("conventional", layer, "fw")) == 3
    for v in ("restructured", "range", "lightnorm"):
        assert len(cm.pass_plan(v, layer, "fw")) == 2
    for v in cm.VARIANTS:
        assert len(cm.pass_plan(v, layer, "bw")) == 2
    with pytest.raises(ValueError):
        cm.pass_plan("layer", layer)
    with pytest.raises(ValueError):
        cm.pass_plan("range", layer, "sideways")


def test_single_element_and_zero_layers(hw):
    one = LayerSpec(1, 1)
    assert cm.fw_cycles("conventional", one, hw) == 3
    assert cm.fw_cycles("restructured", one, hw) == 2
    assert cm.bw_cycles("lightnorm", one, hw) == 2
    zero = LayerSpec(0, 16, 8, 8)
    for v in cm.VARIANTS:
        assert cm.fw_cycles(v, zero, hw) == 0 and cm.bw_cycles(v, zero, hw) == 0
        assert cm.energy_report(v, zero, hw).joules == 0
    with pytest.raises(ValueError):
        LayerSpec(-1, 2)


def test_cycles_lower_bound_and_bw_equality(hw, suites):
    for layer in suites["resnet50"]:
        floor = math.ceil(layer.elements / hw.lanes)
        for v in cm.VARIANTS:
            assert cm.fw_cycles(v, layer, hw) >= 2 * floor
        assert cm.bw_cycles("conventional", layer, hw) == cm.bw_cycles("restructured", layer, hw)


def test_linearity_in_spatial_size(hw):
    base = LayerSpec(256, 64, 8, 8)
    big = LayerSpec(256, 64, 16, 16)
    for v in cm.VARIANTS:
        assert cm.fw_cycles(v, big, hw) == 4 * cm.fw_cycles(v, base, hw)
        assert cm.bw_cycles(v, big, hw) == 4 * cm.bw_cycles(v, base, hw)


def test_doubling_lanes_halves_compute(hw):
    layer = LayerSpec(256, 64, 8, 8)
    wide = hw.with_(lanes=64)
    for v in cm.VARIANTS:
        for d in ("fw", "bw"):
            a = cm.energy_report(v, layer, hw)
            b = cm.energy_report(v, layer, wide)
            pa, pb = (a.fw, b.fw) if d == "fw" else (a.bw, b.bw)
            assert [p.compute_cycles for p in pa] == [2 * p.compute_cycles for p in pb]


def test_reference_ratios(hw, suites):
    layer = LayerSpec(256, 144, 32, 32)
    assert Fraction(cm.fw_cycles("restructured", layer, hw), cm.fw_cycles("conventional", layer, hw)) == Fraction(2, 3)
    fw = [
        sum(cm.fw_cycles("conventional", l, hw) for l in s) / sum(cm.fw_cycles("lightnorm", l, hw) for l in s)
        for s in suites.values()
    ]
    bw = [
        sum(cm.bw_cycles("conventional", l, hw) for l in s) / sum(cm.bw_cycles("lightnorm", l, hw) for l in s)
        for s in suites.values()
    ]
    assert 1.35 <= sum(fw) / 4 <= 1.65
    assert 1.8 <= sum(bw) / 4 <= 2.2


def test_rn_saves_one_tensor_read(hw):
    layer = LayerSpec(256, 144, 32, 32, name="block2.expand")
    bn = cm.energy_report("conventional", layer, hw)
    rn = cm.energy_report("range", layer, hw)
    assert bn.dram_bits("fw")[0] - rn.dram_bits("fw")[0] == layer.elements * 32
    saving = 1 - rn.fw_joules / bn.fw_joules
    assert 0.25 <= saving <= 0.40


def test_lightnorm_module_energy_ratio(hw, suites):
    for name, suite in suites.items():
        t = cm.benchmark_compare(suite, ("conventional", "lightnorm"), hw)
        assert t["conventional"]["compute_energy_j"] / t["lightnorm"]["compute_energy_j"] >= 10, name
        assert t["conventional"]["energy_j"] > t["lightnorm"]["energy_j"]


def test_zero_dram_energy_is_compute_only(hw):
    free = hw.with_(dram_energy_per_bit=0.0, sram_energy_per_bit=0.0)
    r = cm.energy_report("lightnorm", LayerSpec(32, 16, 4, 4), free)
    assert r.joules == r.compute_joules > 0


def test_energy_decomposition(hw):
    layer = LayerSpec(16, 8, 4, 4)
    r = cm.energy_report("conventional", layer, hw)
    rd, wr = r.dram_bits("fw")
    assert r.fw_energy["dram"] == pytest.approx((rd + wr) * hw.dram_energy_per_bit)
    assert r.fw_energy["compute"] == pytest.approx(hw.module_power["conventional/FP32"] * r.fw_cycles / hw.clock_hz)
    d = r.as_dict()
    assert d["energy_j"] == pytest.approx(r.joules) and d["fw_cycles"] == r.fw_cycles


def test_missing_calibration_raises(hw):
    layer = LayerSpec(4, 4, fw_format=FP10A, bw_format=FP10A)
    with pytest.raises(cm.CalibrationError):
        cm.energy_report("conventional", layer, hw)
    cal = cm.load_calibration()
    del cal["dram_energy_per_bit_j"]
    with pytest.raises(KeyError):
        HwParams.from_calibration(cal)


def test_hw_params_validation():
    with pytest.raises(ValueError):
        HwParams(lanes=0)
    with pytest.raises(ValueError):
        HwParams(dram_energy_per_bit=-1.0)


def test_benchmark_single_layer_and_empty(hw):
    layer = LayerSpec(8, 8, 2, 2, name="only")
    t = cm.benchmark_compare([layer], hw=hw)
    for v in cm.VARIANTS:
        rep = cm.energy_report(v, layer, hw)
        assert t[v]["fw_cycles"] == rep.fw_cycles and t[v]["energy_j"] == rep.joules
    with pytest.raises(ValueError):
        cm.benchmark_compare([], hw=hw)


def test_bundled_suites_match_generator():
    counts = {"resnet50": 53, "mobilenetv1": 27, "mobilenetv2": 57, "densenet121": 120}
    for name, n in counts.items():
        data = json.loads(resources.files("lightnorm.data").joinpath(f"{name}.json").read_text())
        assert data == suite_dict(name)
        assert len(cm.load_suite(name)) == n


def test_suite_from_path(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"layers": [{"B": 2, "C": 3, "fw_format": "fp32", "k": 8}]}))
    (layer,) = cm.load_suite(p)
    assert layer.elements == 6 and layer.fw_format is FP32 and layer.k == 8
