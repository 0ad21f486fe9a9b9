"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run under pytest (the lines are repeated in the terminal summary) or directly
with ``python3 tests/test_acceptance.py``.
"""
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402
from oracles import rn_backward_literal  # noqa: E402

from lightnorm import bfp, cli, costmodel, norm, stats, toytrain  # noqa: E402
from lightnorm.minifloat import (  # noqa: E402
    BFLOAT16,
    FP8,
    FP10A,
    FP10B,
    FP16,
    FP32,
    FP64,
    dynamic_range,
    fp_add,
    fp_div,
    fp_mul,
    fp_sqrt,
    quantize,
    representable_range,
)
from lightnorm.norm import AffineParams, NormConfig  # noqa: E402

ARTIFACTS = Path(__file__).parent / "artifacts"


def _record(n: int, title: str, ok: bool, detail: str, elapsed: float, budget: float):
    in_time = elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    line = f"criterion {n:>2} {status}  {title}: {detail} [{elapsed:.1f}s / {budget:.0f}s]"
    acceptance_log.LINES.append(line)
    print(line)
    assert ok, line
    assert in_time, line


# --------------------------------------------------------------------------
# 1


def test_criterion_01_format_fidelity():
    t0 = time.perf_counter()
    table = {
        FP32: (-126, 127),
        BFLOAT16: (-126, 127),
        FP16: (-14, 15),
        FP10A: (-14, 15),
        FP10B: (-30, 31),
        FP8: (-14, 15),
    }
    bad = [f.name for f, want in table.items() if dynamic_range(f) != want]
    a_max = f"{representable_range(FP10A)[1]:.4E}"
    h_max = f"{representable_range(FP16)[1]:.4E}"
    ok = not bad and a_max == "6.3488E+04" and h_max == "6.5504E+04"
    detail = f"ranges mismatched={bad or 'none'}, FP10-A max {a_max}, FP16 max {h_max}"
    _record(1, "format fidelity", ok, detail, time.perf_counter() - t0, 1)


# --------------------------------------------------------------------------
# 2


def test_criterion_02_fp32_emulation_matches_ieee():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 100_000
    # exponents kept within +-60 so sums and products stay normal and finite
    a = (rng.uniform(1, 2, n) * np.exp2(rng.integers(-30, 31, n)) * rng.choice([-1, 1], n)).astype(np.float32)
    b = (rng.uniform(1, 2, n) * np.exp2(rng.integers(-30, 31, n)) * rng.choice([-1, 1], n)).astype(np.float32)
    add_ref = (a + b).astype(np.float64)
    mul_ref = (a * b).astype(np.float64)
    keep = (np.abs(add_ref) >= 2.0**-126) | (add_ref == 0)
    add_ok = np.array_equal(fp_add(a.astype(float), b.astype(float), FP32)[keep], add_ref[keep])
    mul_ok = np.array_equal(fp_mul(a.astype(float), b.astype(float), FP32), mul_ref)
    detail = f"add bit-exact={add_ok} ({int(keep.sum())} cases), mul bit-exact={mul_ok} ({n} cases)"
    _record(2, "FP32 emulation vs IEEE single", add_ok and mul_ok, detail, time.perf_counter() - t0, 10)


# --------------------------------------------------------------------------
# 3


def test_criterion_03_bfp_accounting():
    t0 = time.perf_counter()
    size_ok = bfp.bfp_bit_size(4, FP10A, 4) == 25
    rng = np.random.default_rng(3)
    k, n_blocks = 4, 10_000
    x = quantize(rng.standard_normal((n_blocks, k)) * np.exp2(rng.integers(-8, 8, (n_blocks, k))), FP10A)
    bt = bfp.pack_tensor(x.T, FP10A, k)  # one channel per block row
    back = bfp.unpack_tensor(bt).T
    es = bt.exponents.reshape(-1)
    half_ulp = np.exp2(es - FP10A.mantissa_bits - 1)
    worst = float(np.max(np.abs(back - x) / half_ulp[:, None]))
    same = quantize(rng.uniform(1.0, 1.9, (n_blocks, k)) * np.exp2(rng.integers(-6, 6, (n_blocks, 1))), FP10A)
    exact = np.array_equal(bfp.unpack_tensor(bfp.pack_tensor(same.T, FP10A, k)).T, same)
    ok = size_ok and worst <= 1.0 and exact
    detail = f"size(4, FP10-A, 4)={bfp.bfp_bit_size(4, FP10A, 4)}, worst error {worst:.3f} half-ulps, equal-exponent blocks exact={exact}"
    _record(3, "BFP accounting", ok, detail, time.perf_counter() - t0, 10)


# --------------------------------------------------------------------------
# 4


def _fd_relative_error(num, ana, floor=1e-8):
    return float(np.max(np.abs(num - ana) / np.maximum(np.maximum(np.abs(num), np.abs(ana)), floor)))


def test_criterion_04_bn_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    n, c, h = 32, 100, 1e-5
    x = rng.normal(rng.uniform(-2, 2, c), rng.uniform(0.5, 3, c), (n, c))
    dy = rng.standard_normal((n, c))
    p = AffineParams(rng.uniform(0.5, 2, c), rng.standard_normal(c))
    cfg = NormConfig(fw_format=FP64, bw_format=FP64)
    _, cache = norm.bn_forward(x, p, cfg)
    dx, dg, db = norm.bn_backward(dy, cache, cfg)

    def per_channel_loss(xx, pp=p):
        return np.sum(norm.bn_forward(xx, pp, cfg)[0] * dy, axis=0)

    # channels are independent, so one perturbed row serves all 100 at once
    num_dx = np.zeros_like(x)
    for i in range(n):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        num_dx[i] = (per_channel_loss(xp) - per_channel_loss(xm)) / (2 * h)
    num_dg = (per_channel_loss(x, AffineParams(p.gamma + h, p.beta)) - per_channel_loss(x, AffineParams(p.gamma - h, p.beta))) / (2 * h)
    num_db = (per_channel_loss(x, AffineParams(p.gamma, p.beta + h)) - per_channel_loss(x, AffineParams(p.gamma, p.beta - h))) / (2 * h)
    err = max(_fd_relative_error(num_dx, dx), _fd_relative_error(num_dg, dg), _fd_relative_error(num_db, db))
    _record(4, "BN gradient check", err < 1e-5, f"max relative error {err:.2e} over {c} channels, N={n}", time.perf_counter() - t0, 30)


# --------------------------------------------------------------------------
# 5


def _literal(x, dy, gamma, cfg):
    _, cache = norm.rn_forward(x, AffineParams(gamma, np.zeros_like(gamma)), cfg)
    f = cfg.bw_format
    ops = (
        lambda a, b: fp_add(a, b, f),
        lambda a, b: fp_mul(a, b, f),
        lambda a, b: fp_div(a, b, f),
        lambda a: fp_sqrt(a, f),
        lambda a: quantize(float(a), f),
    )
    eps = max(quantize(cfg.epsilon, f), f.min_normal)
    xq = quantize(x, cfg.fw_format)
    dx = np.zeros_like(x)
    dg = np.zeros(x.shape[1])
    db = np.zeros(x.shape[1])
    for c in range(x.shape[1]):
        d, g, b = rn_backward_literal(
            dy[:, c].tolist(),
            xq[:, c].tolist(),
            cache.centered[c].tolist(),
            cache.xhat[c].tolist(),
            float(cache.stats.sigma[c]),
            float(gamma[c]),
            float(cache.c_value),
            eps,
            ops,
        )
        dx[:, c], dg[c], db[c] = d, g, b
    return cache, dx, dg, db


def _rn_diagnostic(rng):
    """Printed rule vs analytic derivative vs finite differences, all in FP64."""
    n, c, h = 32, 20, 1e-5
    x = rng.standard_normal((n, c))
    dy = rng.standard_normal((n, c))
    gamma = rng.uniform(0.5, 1.5, c)
    p = AffineParams(gamma, np.zeros(c))
    out = {}
    for rule in ("literal", "exact"):
        cfg = NormConfig(variant="range", fw_format=FP64, bw_format=FP64, epsilon=1e-12, rn_grad=rule)
        _, cache = norm.rn_forward(x, p, cfg)
        out[rule] = norm.backward(dy, cache, cfg)[0]
    cfg = NormConfig(variant="range", fw_format=FP64, bw_format=FP64, epsilon=1e-12)
    num = np.zeros_like(x)
    for i in range(n):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        num[i] = (np.sum(norm.rn_forward(xp, p, cfg)[0] * dy, axis=0) - np.sum(norm.rn_forward(xm, p, cfg)[0] * dy, axis=0)) / (2 * h)
    interior = (x != x.min(axis=0)) & (x != x.max(axis=0))

    def rel(a):
        return _fd_relative_error(num[interior], a[interior])

    sign = float(np.mean(np.sign(out["literal"][interior]) == np.sign(num[interior])))
    return {
        "channels": c,
        "batch": n,
        "interior_points": int(interior.sum()),
        "printed_rule_max_rel_error": rel(out["literal"]),
        "analytic_rule_max_rel_error": rel(out["exact"]),
        "printed_rule_sign_agreement": sign,
        "mismatch_flagged": rel(out["literal"]) > 1e-3,
    }


def test_criterion_05_rn_literal_transcription():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    mismatches = 0
    for fw, bw in ((FP10A, FP10B), (FP32, FP32)):
        x = rng.normal(0, 1.5, (32, 100))
        dy = rng.standard_normal(x.shape) * 0.1
        gamma = rng.uniform(0.5, 1.5, 100)
        cfg = NormConfig(variant="range", fw_format=fw, bw_format=bw)
        cache, dx_ref, dg_ref, db_ref = _literal(x, dy, gamma, cfg)
        dx, dg, db = norm.rn_backward(dy, cache, cfg)
        mismatches += int(np.sum(dx != dx_ref) + np.sum(dg != dg_ref) + np.sum(db != db_ref))
    diag = _rn_diagnostic(rng)
    ARTIFACTS.mkdir(exist_ok=True)
    (ARTIFACTS / "rn_grad_diagnostic.json").write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
    detail = (
        f"{mismatches} mismatching values over 2 x 100 channels; diagnostic archived "
        f"(printed rule vs finite differences {diag['printed_rule_max_rel_error']:.2e}, "
        f"analytic {diag['analytic_rule_max_rel_error']:.2e})"
    )
    _record(5, "RN literal transcription", mismatches == 0, detail, time.perf_counter() - t0, 30)


# --------------------------------------------------------------------------
# 6


def test_criterion_06_distortion_ordering():
    t0 = time.perf_counter()
    x = stats.gaussian_batch(0)
    r = {d.format: d for d in stats.distortion_sweep(x, [FP8, FP10A, FP16, FP32])}
    s = {k: v.stdev for k, v in r.items()}
    b = {k: v.channel_bias for k, v in r.items()}
    close = abs(s["FP16"] - s["FP32"]) < 1e-3 and abs(b["FP16"] - b["FP32"]) < 1e-3
    ordered = s["FP8"] > s["FP10-A"] > max(s["FP16"], s["FP32"]) and b["FP8"] > b["FP10-A"] > max(b["FP16"], b["FP32"])
    band = 1.005 <= s["FP8"] <= 1.05
    detail = (
        f"stdev FP8 {s['FP8']:.4f} / FP10-A {s['FP10-A']:.4f} / FP16 {s['FP16']:.5f} / FP32 {s['FP32']:.5f}; "
        f"|bias| {b['FP8']:.2e} / {b['FP10-A']:.2e} / {b['FP16']:.2e} / {b['FP32']:.2e}; "
        f"ordered={ordered}, FP16~FP32={close}, FP8 stdev in [1.005, 1.05]={band}"
    )
    _record(6, "distortion ordering", ordered and close and band, detail, time.perf_counter() - t0, 60)


# --------------------------------------------------------------------------
# 7


def test_criterion_07_c_of_b():
    t0 = time.perf_counter()
    c = norm.c_of_b(128)
    covered = all(b in norm.C_OF_B_LUT for b in (16, 32, 64, 128, 256, 1024))
    ok = 0.3196 <= c <= 0.3204 and covered
    _record(7, "C(B)", ok, f"C(128) = {c:.7f}, LUT covers all six sizes={covered}", time.perf_counter() - t0, 1)


# --------------------------------------------------------------------------
# 8


def test_criterion_08_cost_ratios():
    t0 = time.perf_counter()
    hw = costmodel.HwParams.from_calibration()
    suites = costmodel.bundled_suites()
    restructured_exact = True
    fw, bw = [], []
    for suite in suites.values():
        t = costmodel.benchmark_compare(suite, ("conventional", "restructured", "lightnorm"), hw)
        restructured_exact &= Fraction(t["restructured"]["fw_cycles"], t["conventional"]["fw_cycles"]) == Fraction(2, 3)
        fw.append(t["conventional"]["fw_cycles"] / t["lightnorm"]["fw_cycles"])
        bw.append(t["conventional"]["bw_cycles"] / t["lightnorm"]["bw_cycles"])
    fw_avg, bw_avg = sum(fw) / len(fw), sum(bw) / len(bw)
    # the largest BN layer of MobileNetV2 (expansion to 144 channels at 32x32)
    layer = max(suites["mobilenetv2"], key=lambda l: l.elements)
    saving = 1 - costmodel.energy_report("range", layer, hw).fw_joules / costmodel.energy_report("conventional", layer, hw).fw_joules
    ok = restructured_exact and 1.35 <= fw_avg <= 1.65 and 1.8 <= bw_avg <= 2.2 and 0.25 <= saving <= 0.40
    detail = (
        f"restructured/conventional FW = 2/3 exactly: {restructured_exact}; conventional/LightNorm FW {fw_avg:.3f}, "
        f"BW {bw_avg:.3f}; RN FW energy saving on {layer.name} {saving:.1%}"
    )
    _record(8, "cost ratios", ok, detail, time.perf_counter() - t0, 30)


# --------------------------------------------------------------------------
# 9


def _ablation_configs():
    ln = NormConfig.lightnorm().with_(rn_grad="exact")
    return {
        "fp64-bn": NormConfig(fw_format=FP64, bw_format=FP64),
        "lightnorm-k4": ln,
        "lightnorm-k8": ln.with_(group_size=8),
        "lightnorm-k16": ln.with_(group_size=16),
        "fw-fp10b-bw-fp10a": ln.with_(fw_format=FP10B, bw_format=FP10A),
    }


def _mean_accuracy(cfg, seeds):
    accs = []
    for seed in seeds:
        data = toytrain.make_dataset("gaussian-clusters", 2000, seed)
        model = toytrain.ToyModel.init(data.n_features, data.n_classes, cfg, seed=seed)
        accs.append(toytrain.train(model, data, cfg, epochs=50, seed=seed).final_test_acc)
    return accs


def test_criterion_09_toy_ablations():
    t0 = time.perf_counter()
    seeds = range(5)
    accs = {name: _mean_accuracy(cfg, seeds) for name, cfg in _ablation_configs().items()}
    mean = {k: float(np.mean(v)) for k, v in accs.items()}
    ARTIFACTS.mkdir(exist_ok=True)
    (ARTIFACTS / "toy_ablation.json").write_text(json.dumps({"seeds": list(seeds), "test_acc": accs, "mean": mean}, indent=2) + "\n")
    near = mean["fp64-bn"] - mean["lightnorm-k4"] <= 0.02
    mono = mean["lightnorm-k4"] >= mean["lightnorm-k8"] >= mean["lightnorm-k16"]
    gap = mean["lightnorm-k4"] - mean["lightnorm-k16"]
    pairing = mean["lightnorm-k4"] >= mean["fw-fp10b-bw-fp10a"]
    ok = near and mono and gap >= 0.03 and pairing
    detail = (
        "mean test acc "
        + ", ".join(f"{k} {v:.4f}" for k, v in mean.items())
        + f"; k4 within 2 pts of FP64={near}, k4>=k8>=k16={mono}, k16 gap {100 * gap:.2f} pts (need >= 3), pairing={pairing}"
    )
    _record(9, "toy ablations", ok, detail, time.perf_counter() - t0, 600)


# --------------------------------------------------------------------------
# 10


def _cli_runs(inputs: Path, out: Path) -> list[list[str]]:
    o = str(out)
    return [
        ["formats", "--out-dir", f"{o}/formats"],
        ["quantize", str(inputs / "x.f32"), "--format", "fp8", "--out-dir", f"{o}/quantize"],
        ["bfp", "pack", str(inputs / "x.f32"), "--format", "fp10a", "--k", "4", "--out-dir", f"{o}/pack"],
        ["bfp", "unpack", str(inputs / "ref.bfp"), "--out-dir", f"{o}/unpack"],
        ["norm", "run", str(inputs / "x.f32"), "--grad", str(inputs / "dy.f32"), "--variant", "lightnorm", "--out-dir", f"{o}/norm"],
        ["--seed", "3", "stats", "sweep", "--out-dir", f"{o}/stats"],
        ["cost", "report", "--out-dir", f"{o}/cost"],
        ["train-toy", "--variant", "lightnorm", "--epochs", "3", "--n", "400", "--seeds", "0", "1", "--out-dir", f"{o}/train"],
    ]


def _snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_cli_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    inputs = tmp_path / "in"
    inputs.mkdir()
    rng = np.random.default_rng(10)
    cli.write_tensor(inputs / "x.f32", rng.standard_normal((32, 8, 2, 2)).astype(np.float32))
    cli.write_tensor(inputs / "dy.f32", rng.standard_normal((32, 8, 2, 2)).astype(np.float32))
    bfp.save(inputs / "ref.bfp", bfp.pack_tensor(rng.standard_normal((16, 4)), FP10B, 4))
    codes = []
    for run in ("a", "b"):
        for argv in _cli_runs(inputs, tmp_path / run):
            codes.append(cli.main(argv))
    capsys.readouterr()
    a, b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = all(c == 0 for c in codes) and not differing and len(a) > 0
    detail = f"{len(_cli_runs(inputs, tmp_path))} commands, {len(a)} output files, exit codes {sorted(set(codes))}, differing files: {differing or 'none'}"
    _record(10, "CLI determinism", ok, detail, time.perf_counter() - t0, 600)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
