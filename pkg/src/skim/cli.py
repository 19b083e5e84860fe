"""``skim`` command line interface.

Exit codes: 0 success, 1 validation or oracle failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from skim import oracles
from skim.allocation import ErrorMatrix, KMeansConfig, record_error_matrix
from skim.calibration import (
    CalibSample,
    HessianProxy,
    accumulate_hessian_proxy,
    accumulate_sensitivity,
)
from skim.fixtures import OutlierSpec, generate_fixture
from skim.packing import PackError, dequantize, pack, size_report, unpack
from skim.pipeline import PRESETS, PipelineConfig, quantize_layer
from skim.tensor_store import BundleError, Matrix, read_bundle_full, write_bundle

log = logging.getLogger("skim")


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _samples_from_bundle(bundle):
    names = set(bundle.names())
    samples = []
    d = 0
    while f"X.{d}" in names:
        if f"Gy.{d}" not in names:
            raise BundleError(f"bundle has X.{d} but no Gy.{d}")
        samples.append(CalibSample(bundle.get(f"X.{d}").data, bundle.get(f"Gy.{d}").data))
        d += 1
    if not samples:
        raise BundleError("bundle holds no calibration samples (X.0 / Gy.0)")
    return samples


def _load_calibration(path):
    b = read_bundle_full(path)
    names = set(b.names())
    W = b.get("W").data
    if {"G", "H"} <= names:
        return W, b.get("G").data, HessianProxy.from_matrix(b.get("H").data)
    samples = _samples_from_bundle(b)
    return W, accumulate_sensitivity(samples), accumulate_hessian_proxy(samples)


def _load_errors(path):
    b = read_bundle_full(path)
    meta = b.meta
    E = ErrorMatrix(b.get("E").data, int(meta["b_min"]), int(meta["b_max"]))
    if "seed" in meta and "restarts" in meta:
        E.kmeans = KMeansConfig(int(meta["seed"]), int(meta["restarts"]))
    return E


# ---------------------------------------------------------------- subcommands

def cmd_fixture(args):
    W, samples = generate_fixture(args.seed, args.n, args.m, args.k, args.samples,
                                  OutlierSpec.parse(args.outliers), args.row_sigma)
    tensors = [Matrix("W", W)]
    for d, s in enumerate(samples):
        tensors += [Matrix(f"X.{d}", s.X), Matrix(f"Gy.{d}", s.Gy)]
    meta = {"seed": args.seed, "outliers": args.outliers or "none", "row_sigma": args.row_sigma}
    write_bundle(args.out, tensors, meta)
    print(f"wrote fixture {args.n}x{args.m} with {args.samples} samples to {args.out}")
    return 0


def cmd_calibrate(args):
    b = read_bundle_full(args.inp)
    samples = _samples_from_bundle(b)
    G = accumulate_sensitivity(samples)
    H = accumulate_hessian_proxy(samples)
    tensors = [Matrix("G", G), Matrix("H", H.H), Matrix("diagH", H.diagH[None, :])]
    if "W" in b.names():
        tensors.insert(0, b.get("W"))
    write_bundle(args.out, tensors, {"samples": len(samples)})
    print(f"wrote G, H, diagH from {len(samples)} samples to {args.out}")
    return 0


def cmd_record_errors(args):
    W, G, H = _load_calibration(args.inp)
    km = KMeansConfig(args.seed, args.restarts)
    E = record_error_matrix(W, G, H, args.bmin, args.bmax, km, keep_clusterings=False)
    meta = {"b_min": args.bmin, "b_max": args.bmax, "seed": args.seed, "restarts": args.restarts}
    write_bundle(args.out, [Matrix("E", E.E)], meta)
    print(f"wrote {E.n}x{E.E.shape[1]} error matrix (bits {args.bmin}..{args.bmax}) to {args.out}")
    return 0


_FLAG_KEYS = {
    "bit": "target_bit", "bmin": "b_min", "bmax": "b_max", "iters": "iters",
    "seed": "seed", "restarts": "restarts", "preset": "preset",
}


def build_config(args) -> PipelineConfig:
    d = {}
    if args.config:
        d.update(json.loads(Path(args.config).read_text()))
    for flag, key in _FLAG_KEYS.items():
        if getattr(args, flag) is not None:
            d[key] = getattr(args, flag)
    if args.no_mixed:
        d["mixed_precision"] = False
    if args.no_scale:
        d["scaling"] = False
    if args.alloc_init is not None:
        d["allocation_init"] = args.alloc_init
    if args.oracle:
        d["oracle"] = True
    return PipelineConfig.from_dict(d)


def cmd_quantize(args, parser):
    try:
        cfg = build_config(args)
    except (ValueError, TypeError) as exc:
        parser.error(str(exc))
    W, G, H = _load_calibration(args.inp)
    errors = _load_errors(args.errors) if args.errors else None
    layer, report = quantize_layer(W, G, H, cfg, errors=errors, name=args.name)
    blob = pack(layer)
    Path(args.out).write_bytes(blob)
    report_path = args.report or str(Path(args.out).with_suffix(".json"))
    _dump_json(report.to_dict(), report_path)
    if args.trace:
        print("step,loss,lr")
        for _, step, loss, lr in report.trace:
            print(f"{step},{loss!r},{lr!r}")
    size = size_report(layer)
    print(
        f"{args.name}: {report.avg_bits:.4f} bits/channel, "
        f"label bits/weight {size.label_bits_per_weight:.4f}, effective {size.effective_bits:.4f}; "
        f"loss {report.loss_grouping:.6g} -> {report.loss_final:.6g}; "
        f"wrote {len(blob)} bytes to {args.out}, report {report_path}"
    )
    return 0


def cmd_dequantize(args):
    layer = unpack(Path(args.inp).read_bytes())
    tensors = [
        Matrix("Wq", dequantize(layer)),
        Matrix("alpha", layer.alpha.astype(np.float64)[None, :]),
        Matrix("bits", layer.bits.astype(np.float64)[None, :]),
    ]
    write_bundle(args.out, tensors, {"b_min": layer.b_min, "b_max": layer.b_max})
    print(f"wrote {layer.n}x{layer.m} dequantized weights to {args.out}")
    return 0


def write_report_tables(report: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = report["layer"]
    b_min = report["b_min"]
    E = report["error_matrix"]
    paths = []

    p = out_dir / f"{stem}_rows.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "bits", "final_error"] + [f"err_{b_min + c}bit" for c in range(len(E[0]) if E else 0)])
        for i, (b, e) in enumerate(zip(report["row_bits"], report["row_errors"])):
            w.writerow([i, b, repr(e)] + [repr(x) for x in E[i]])
    paths.append(p)

    p = out_dir / f"{stem}_bits.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bits", "channels"])
        for b in sorted(report["bit_histogram"], key=int):
            w.writerow([b, report["bit_histogram"][b]])
    paths.append(p)

    if report.get("trace"):
        p = out_dir / f"{stem}_trace.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "step", "loss", "lr"])
            for row in report["trace"]:
                w.writerow([int(row[0]), int(row[1]), repr(row[2]), repr(row[3])])
        paths.append(p)
    return paths


def cmd_report(args):
    report = json.loads(Path(args.inp).read_text())
    out_dir = Path(args.out) if args.out else Path(args.inp).parent
    print(f"layer            {report['layer']} ({report['n']}x{report['m']})")
    print(f"target bit       {report['target_bit']}")
    print(f"average bits     {report['avg_bits']:.4f}")
    print(f"effective bits   {report['size']['effective_bits']:.4f}")
    print(f"loss (alpha=1)   {report['loss_grouping']:.6g}")
    print(f"loss (final)     {report['loss_final']:.6g}")
    print(f"loss (packed)    {report['loss_packed']:.6g}")
    hist = ", ".join(f"{b}: {c}" for b, c in sorted(report["bit_histogram"].items(), key=lambda t: int(t[0])))
    print(f"bit histogram    {hist}")
    if report.get("oracle"):
        o = report["oracle"]
        print(f"greedy vs DP     {o['greedy_error']:.6g} vs {o['dp_error']:.6g} "
              f"(relative gap {o['relative_gap']:+.4%})")
    written = write_report_tables(report, out_dir)
    if not args.no_plots:
        from skim.plotting import render_report
        written += render_report(report, out_dir)
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_oracle_check(args):
    t = args.trials
    ok = True

    eq = oracles.objective_equivalence(args.seed, t)
    good = eq["max_rel_l_full"] < 1e-10 and eq["max_scaled_s_full"] < 1e-10
    ok &= good
    print(f"objective equivalence  {'PASS' if good else 'FAIL'}  "
          f"l_full rel {eq['max_rel_l_full']:.2e}, s_full scaled {eq['max_scaled_s_full']:.2e}")

    km = oracles.kmeans_oracle(args.seed, t)
    good = (km["dominance_violations"] == 0 and km["exact_fraction"] >= 0.95
            and km["max_rel_gap"] <= 0.05)
    ok &= good
    print(f"kmeans lloyd vs dp     {'PASS' if good else 'FAIL'}  "
          f"exact {km['exact_fraction']:.1%}, worst gap {km['max_rel_gap']:.2%}")

    al = oracles.allocation_oracle(args.seed, t)
    good = al["convex_mismatches"] == 0 and al["dominance_violations"] == 0 and al["budget_violations"] == 0
    ok &= good
    print(f"allocation greedy/dp   {'PASS' if good else 'FAIL'}  "
          f"gap mean {al['gap_mean']:.2%}, median {al['gap_median']:.2%}, "
          f"p95 {al['gap_p95']:.2%}, max {al['gap_max']:.2%}, zero {al['gap_zero_fraction']:.0%}")

    gc = oracles.gradient_check(args.seed, t)
    good = gc["max_rel_error"] < 1e-4
    ok &= good
    print(f"scaling gradient       {'PASS' if good else 'FAIL'}  max rel error {gc['max_rel_error']:.2e}")
    return 0 if ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fixture", help="write a synthetic layer + calibration bundle")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=128)
    s.add_argument("--m", type=int, default=256)
    s.add_argument("--k", type=int, default=32, help="tokens per sample")
    s.add_argument("--samples", type=int, default=4)
    s.add_argument("--outliers", default="none", help="e.g. 4x100, or none")
    s.add_argument("--row-sigma", type=float, default=1.0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("calibrate", help="samples bundle -> G, H, diagH bundle")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("record-errors", help="pre-record the per-row, per-bit error matrix")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bmin", type=int, default=2)
    s.add_argument("--bmax", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--restarts", type=int, default=3)

    s = sub.add_parser("quantize", help="run the full pipeline, write SKQ1 + report JSON")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--errors", help="cached error-matrix bundle from record-errors")
    s.add_argument("--report", help="report JSON path (default: <out>.json)")
    s.add_argument("--config", help="JSON config; flags override it")
    s.add_argument("--name", default="layer")
    s.add_argument("--bit", type=float)
    s.add_argument("--bmin", type=int)
    s.add_argument("--bmax", type=int)
    s.add_argument("--no-mixed", action="store_true")
    s.add_argument("--alloc-init", choices=["min", "floor"])
    s.add_argument("--no-scale", action="store_true")
    s.add_argument("--iters", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--restarts", type=int)
    s.add_argument("--preset", choices=PRESETS)
    s.add_argument("--trace", action="store_true", help="print step,loss,lr lines")
    s.add_argument("--oracle", action="store_true", help="also solve the allocation exactly")

    s = sub.add_parser("dequantize", help="SKQ1 -> dense bundle")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("report", help="summarize a report JSON; write CSV tables and figures")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", help="output directory (default: next to the report)")
    s.add_argument("--no-plots", action="store_true")

    s = sub.add_parser("oracle-check", help="randomized checks against exact oracles")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=100)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        if args.command == "quantize":
            return cmd_quantize(args, parser)
        handler = {
            "fixture": cmd_fixture,
            "calibrate": cmd_calibrate,
            "record-errors": cmd_record_errors,
            "dequantize": cmd_dequantize,
            "report": cmd_report,
            "oracle-check": cmd_oracle_check,
        }[args.command]
        return handler(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (BundleError, PackError, ValueError, KeyError, OSError, ArithmeticError) as exc:
        print(f"skim: error: {exc}", file=sys.stderr)
        return 1


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
