"""Command-line tools for low-precision batch-normalization emulation.

Tensors are raw little-endian float32 files with a JSON sidecar
(``<file>.json``) holding ``{"shape": [...]}``. Reports are JSON/CSV. Each
command writes ``manifest.json`` next to its outputs with the resolved
configuration and a SHA-256 of every output file.

Exit codes: 0 success, 2 usage error, 3 unreadable or malformed input
file, 4 invalid value, 5 missing calibration entry, 6 failed internal check.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import struct
import sys
from pathlib import Path

import numpy as np

from . import __version__, bfp, costmodel, norm, stats, toytrain
from .minifloat import CATALOG, FP32, FpFormat, dynamic_range, parse_format, quantize, representable_range

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_VALUE = 4
EXIT_CALIBRATION = 5
EXIT_INVARIANT = 6


class InputError(Exception):
    """Input file missing or malformed."""


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# tensor files


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    side = Path(str(path) + ".json")
    try:
        meta = json.loads(side.read_text())
        shape = tuple(int(d) for d in meta["shape"])
        raw = path.read_bytes()
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read tensor {path}: {exc}") from exc
    n = int(np.prod(shape, dtype=np.int64))
    if len(raw) != 4 * n:
        raise InputError(f"{path}: {len(raw)} bytes does not match shape {list(shape)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def write_tensor(path, t: np.ndarray) -> list[Path]:
    path = Path(path)
    t = np.asarray(t)
    path.write_bytes(np.ascontiguousarray(t, dtype="<f4").tobytes())
    side = Path(str(path) + ".json")
    side.write_text(json.dumps({"shape": list(t.shape), "dtype": "float32", "byteorder": "little"}) + "\n")
    return [path, side]


def _dump_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(o):
    if isinstance(o, FpFormat):
        return o.name
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _dump_csv(path: Path, rows: list[dict]) -> Path:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    path.write_text(buf.getvalue())
    return path


def _manifest(out_dir: Path, command: str, config: dict, outputs: list[Path]) -> Path:
    files = {}
    for p in sorted(set(outputs)):
        files[os.path.relpath(p, out_dir)] = hashlib.sha256(p.read_bytes()).hexdigest()
    return _dump_json(out_dir / "manifest.json", {"command": command, "version": __version__, "config": config, "outputs": files})


def _invariant(ok, msg: str) -> None:
    # explicit raise so the checks survive python -O
    if not ok:
        raise AssertionError(msg)


def _fmt(spec) -> FpFormat:
    try:
        return parse_format(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def format_row(fmt: FpFormat) -> dict:
    emin, emax = dynamic_range(fmt)
    lo, hi = representable_range(fmt)
    s, e, m = fmt.triple
    return {"name": fmt.name, "s": s, "e": e, "m": m, "emin": emin, "emax": emax, "min_pos": f"{lo:.4E}", "max": f"{hi:.4E}"}


def cmd_formats(args, out_dir):
    fmts = [_fmt(f) for f in args.format] if args.format else list(CATALOG.values())
    rows = [format_row(f) for f in fmts]
    for r in rows:
        print(f"{r['name']:>10}  {{{r['s']},{r['e']},{r['m']}}}  ({r['emin']}, {r['emax']})  {r['min_pos']}  {r['max']}")
    if out_dir is None:
        return [], {"formats": [r["name"] for r in rows]}
    return [_dump_csv(out_dir / "formats.csv", rows)], {"formats": [r["name"] for r in rows]}


def _one_format(args, default=FP32) -> FpFormat:
    if not args.format:
        return default
    if len(args.format) != 1:
        raise UsageError("this command takes a single --format")
    return _fmt(args.format[0])


def cmd_quantize(args, out_dir):
    fmt = _one_format(args)
    x = read_tensor(args.input)
    if not np.all(np.isfinite(x)):
        raise ValueError("input tensor has non-finite values")
    q = quantize(x, fmt) if x.size else x.copy()
    _invariant(np.array_equal(quantize(q, fmt), q) if q.size else True, "quantization is not idempotent")
    err = np.abs(q - x)
    report = {
        "format": fmt.name,
        "count": int(x.size),
        "max_abs_error": float(err.max()) if x.size else 0.0,
        "mean_abs_error": float(err.mean()) if x.size else 0.0,
    }
    print(json.dumps(report, sort_keys=True))
    outs = write_tensor(out_dir / "quantized.f32", q)
    outs.append(_dump_json(out_dir / "quantize_report.json", report))
    return outs, {"input": str(args.input), "format": fmt.name}


def cmd_bfp(args, out_dir):
    if args.bfp_command == "pack":
        fmt = _one_format(args, default=parse_format("fp10a"))
        x = read_tensor(args.input)
        bt = bfp.pack_tensor(x, fmt, args.k)
        _invariant(np.array_equal(bfp.unpack_tensor(bt), bfp.bfp_align(x, fmt, args.k)), "packed tensor does not round-trip")
        path = out_dir / "packed.bfp"
        bfp.save(path, bt)
        info = json.loads(bfp.describe(bt))
        print(json.dumps(info, sort_keys=True))
        return [path, _dump_json(out_dir / "packed.bfp.json", info)], {"input": str(args.input), "format": fmt.name, "k": args.k}
    try:
        bt = bfp.load(args.input)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    except (ValueError, struct.error) as exc:
        raise InputError(f"{args.input}: {exc}") from exc
    x = bfp.unpack_tensor(bt)
    return write_tensor(out_dir / "unpacked.f32", x), {"input": str(args.input)}


def _norm_config(args) -> norm.NormConfig:
    if args.variant not in norm.VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}; choose from {', '.join(norm.VARIANTS)}")
    kw = dict(epsilon=args.eps, group_size=args.k, batch_size=args.batch, rn_grad=args.rn_grad)
    if args.variant == "lightnorm":
        base = norm.NormConfig.lightnorm(**kw)
    else:
        base = norm.NormConfig(variant=args.variant, **kw)
    if args.fw_format:
        base = base.with_(fw_format=_fmt(args.fw_format))
    if args.bw_format:
        base = base.with_(bw_format=_fmt(args.bw_format))
    return base


def cmd_norm(args, out_dir):
    cfg = _norm_config(args)
    x = read_tensor(args.input)
    n_ch = x.shape[1] if x.ndim >= 2 else 1
    p = norm.AffineParams(np.full(n_ch, args.gamma), np.full(n_ch, args.beta))
    y, cache = norm.forward(x, p, cfg)
    outs = write_tensor(out_dir / "y.f32", y)
    report = {"stats": cache.stats.as_dict()}
    if args.grad:
        dy = read_tensor(args.grad)
        if dy.shape != x.shape:
            raise InputError(f"gradient shape {list(dy.shape)} does not match input {list(x.shape)}")
        dx, dgamma, dbeta = norm.backward(dy, cache, cfg)
        outs += write_tensor(out_dir / "dx.f32", dx)
        report["dgamma"] = np.asarray(dgamma).tolist()
        report["dbeta"] = np.asarray(dbeta).tolist()
    outs.append(_dump_json(out_dir / "norm_report.json", report))
    config = {
        "input": str(args.input),
        "grad": str(args.grad) if args.grad else None,
        "variant": cfg.variant,
        "fw_format": cfg.fw_format.name,
        "bw_format": cfg.bw_format.name,
        "epsilon": cfg.epsilon,
        "k": cfg.group_size,
        "batch": cfg.batch_size,
        "rn_grad": cfg.rn_grad,
        "gamma": args.gamma,
        "beta": args.beta,
    }
    return outs, config


def cmd_stats(args, out_dir):
    fmts = [_fmt(f) for f in args.format] if args.format else [parse_format(n) for n in ("fp8", "fp10a", "fp16", "fp32")]
    shape = tuple(args.shape)
    x = read_tensor(args.input) if args.input else stats.gaussian_batch(args.seed, shape)
    reports = stats.distortion_sweep(x, fmts, epsilon=args.eps)
    probe = stats.range_probe(x)
    rows = []
    for r in reports:
        row = r.as_dict()
        row.update({f"fits_{k}": v for k, v in probe.fits.items()})
        rows.append(row)
    for r in rows:
        print(f"{r['format']:>8}  mean {r['mean']:+.3e}  stdev {r['stdev']:.5f}  |bias| {r['channel_bias']:.3e}  zse {r['zse']}")
    outs = [
        _dump_csv(out_dir / "sweep.csv", rows),
        _dump_json(out_dir / "sweep.json", {"reports": rows, "range": probe.as_dict()}),
    ]
    config = {"input": str(args.input) if args.input else None, "shape": list(x.shape), "formats": [f.name for f in fmts], "epsilon": args.eps}
    return outs, config


def cmd_cost(args, out_dir):
    try:
        cal = costmodel.load_calibration(args.calibration)
    except OSError as exc:
        raise InputError(f"cannot read calibration: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"bad calibration file: {exc}") from exc
    try:
        hw = costmodel.HwParams.from_calibration(cal, **({"lanes": args.lanes} if args.lanes else {}))
    except KeyError as exc:
        raise costmodel.CalibrationError(f"calibration file lacks {exc}") from exc
    names = args.suite or list(costmodel.SUITE_NAMES)
    layer_rows = []
    agg_rows = []
    summary = {}
    for name in names:
        try:
            suite = costmodel.load_suite(name)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read suite {name}: {exc}") from exc
        label = Path(name).stem
        table = costmodel.benchmark_compare(suite, costmodel.VARIANTS, hw)
        for v, t in table.items():
            for layer, rep in zip(suite, t["layers"]):
                _invariant(rep.fw_cycles >= 2 * -(-layer.elements // hw.lanes), f"{layer.name}: cycles below the streaming bound")
                d = rep.as_dict()
                d.pop("passes")
                layer_rows.append({"suite": label, **d})
            agg_rows.append({"suite": label, "variant": v, **{k: t[k] for k in t if k != "layers"}})
        conv = table["conventional"]
        summary[label] = {
            "restructured_over_conventional_fw": table["restructured"]["fw_cycles"] / conv["fw_cycles"],
            "conventional_over_lightnorm_fw": conv["fw_cycles"] / table["lightnorm"]["fw_cycles"],
            "conventional_over_lightnorm_bw": conv["bw_cycles"] / table["lightnorm"]["bw_cycles"],
            "conventional_over_lightnorm_compute_energy": conv["compute_energy_j"] / table["lightnorm"]["compute_energy_j"],
            "conventional_over_lightnorm_energy": conv["energy_j"] / table["lightnorm"]["energy_j"],
        }
        s = summary[label]
        print(
            f"{label:>12}  FW restr/conv {s['restructured_over_conventional_fw']:.4f}  "
            f"FW conv/LN {s['conventional_over_lightnorm_fw']:.3f}  BW conv/LN {s['conventional_over_lightnorm_bw']:.3f}"
        )
    outs = [
        _dump_csv(out_dir / "cost_layers.csv", layer_rows),
        _dump_csv(out_dir / "cost_aggregate.csv", agg_rows),
        _dump_json(out_dir / "cost_summary.json", {"suites": summary, "aggregate": agg_rows}),
    ]
    return outs, {"suites": names, "calibration": str(args.calibration) if args.calibration else "bundled", "calibration_version": cal.get("version")}


def cmd_train(args, out_dir):
    cfg = _norm_config(args)
    seeds = args.seeds if args.seeds else [args.seed]
    trace = []
    finals = []
    for seed in seeds:
        data = toytrain.make_dataset(args.dataset, args.n, seed)
        model = toytrain.ToyModel.init(data.n_features, data.n_classes, cfg, seed=seed)
        run = toytrain.train(model, data, cfg, epochs=args.epochs, seed=seed, lr=args.lr, batch=args.batch_size)
        for row in run.as_rows():
            trace.append({"seed": seed, **row})
        finals.append({"seed": seed, "test_acc": run.final_test_acc, "final_loss": run.final_loss, "diverged": run.diverged})
        print(f"seed {seed}: test acc {run.final_test_acc:.4f} loss {run.final_loss:.4f}{' (diverged)' if run.diverged else ''}")
    accs = [f["test_acc"] for f in finals]
    summary = {"runs": finals, "mean_test_acc": float(np.mean(accs))}
    outs = [_dump_csv(out_dir / "train_trace.csv", trace), _dump_json(out_dir / "train_summary.json", summary)]
    config = {
        "dataset": args.dataset,
        "n": args.n,
        "seeds": seeds,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "variant": cfg.variant,
        "fw_format": cfg.fw_format.name,
        "bw_format": cfg.bw_format.name,
        "k": cfg.group_size,
        "epsilon": cfg.epsilon,
        "rn_grad": cfg.rn_grad,
    }
    return outs, config


# --------------------------------------------------------------------------
# parser


def _norm_flags(p, rn_grad_default="literal"):
    p.add_argument("--variant", default="conventional", help="conventional, restructured, range or lightnorm")
    p.add_argument("--fw-format", help="forward format (preset name or {s,e,m})")
    p.add_argument("--bw-format", help="backward format")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--k", type=int, default=4, help="BFP group size")
    p.add_argument("--batch", type=int, default=None, help="mini-batch size used for C(B)")
    p.add_argument("--rn-grad", choices=("literal", "exact"), default=rn_grad_default)


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from resetting
    # values given before the subcommand name
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, **(kw or {"default": 0}))
    p.add_argument("--config", help="JSON file of option defaults", **kw)
    p.add_argument("--out-dir", help="directory for outputs and manifest", **kw)
    p.add_argument("--format", action="append", help="format name or {s,e,m}; repeatable", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="lightnorm", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("formats", parents=[common], help="print the format catalog with ranges")

    q = sub.add_parser("quantize", parents=[common], help="quantize a tensor file")
    q.add_argument("input")

    b = sub.add_parser("bfp", parents=[common], help="block floating point containers")
    bsub = b.add_subparsers(dest="bfp_command", required=True)
    bp = bsub.add_parser("pack", parents=[common])
    bp.add_argument("input")
    bp.add_argument("--k", type=int, default=4)
    bu = bsub.add_parser("unpack", parents=[common])
    bu.add_argument("input")

    n = sub.add_parser("norm", parents=[common], help="normalization layers")
    nsub = n.add_subparsers(dest="norm_command", required=True)
    nr = nsub.add_parser("run", parents=[common])
    nr.add_argument("input")
    nr.add_argument("--grad", help="upstream gradient tensor; runs the backward pass too")
    nr.add_argument("--gamma", type=float, default=1.0)
    nr.add_argument("--beta", type=float, default=0.0)
    _norm_flags(nr)

    s = sub.add_parser("stats", parents=[common], help="numerical diagnostics")
    ssub = s.add_subparsers(dest="stats_command", required=True)
    sw = ssub.add_parser("sweep", parents=[common])
    sw.add_argument("--input", help="tensor file; default is seeded Gaussian data")
    sw.add_argument("--shape", type=int, nargs="+", default=list(stats.DEFAULT_SWEEP_SHAPE))
    sw.add_argument("--eps", type=float, default=1e-12)

    c = sub.add_parser("cost", parents=[common], help="hardware cost model")
    csub = c.add_subparsers(dest="cost_command", required=True)
    cr = csub.add_parser("report", parents=[common])
    cr.add_argument("--suite", action="append", help="bundled suite name or JSON path; repeatable")
    cr.add_argument("--calibration", help="calibration JSON (default: bundled)")
    cr.add_argument("--lanes", type=int)

    t = sub.add_parser("train-toy", parents=[common], help="toy MLP training")
    t.add_argument("--dataset", default="gaussian-clusters")
    t.add_argument("--n", type=int, default=2000)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--seeds", type=int, nargs="+")
    t.add_argument("--lr", type=float, default=toytrain.DEFAULT_LR)
    t.add_argument("--batch-size", type=int, default=toytrain.DEFAULT_BATCH)
    _norm_flags(t, rn_grad_default="exact")
    return parser


_COMMANDS = {
    "formats": cmd_formats,
    "quantize": cmd_quantize,
    "bfp": cmd_bfp,
    "norm": cmd_norm,
    "stats": cmd_stats,
    "cost": cmd_cost,
    "train-toy": cmd_train,
}


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    try:
        defaults = json.loads(Path(known.config).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(defaults, dict):
        raise InputError("config file must hold a JSON object")
    args = parser.parse_args(argv)
    explicit = set()
    for tok in argv:
        if tok.startswith("--"):
            explicit.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in defaults.items():
        dest = key.replace("-", "_")
        if dest not in explicit and hasattr(args, dest):
            setattr(args, dest, value)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out_dir = None
    if args.out_dir or args.command != "formats":
        out_dir = Path(args.out_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        outputs, config = _COMMANDS[args.command](args, out_dir)
        if out_dir is not None:
            sub = next((getattr(args, a) for a in ("bfp_command", "norm_command", "stats_command", "cost_command") if getattr(args, a, None)), None)
            name = args.command + (f" {sub}" if sub else "")
            config = {"seed": args.seed, **config}
            _manifest(out_dir, name, config, outputs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except costmodel.CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except AssertionError as exc:
        print(f"internal check failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, ZeroDivisionError) as exc:
        print(f"invalid value: {exc}", file=sys.stderr)
        return EXIT_VALUE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
