"""Command line entry point: ``onestep <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import statistics
import sys
from pathlib import Path

import numpy as np

from ..ridge import DEFAULT_TEST_SAMPLES
from ..rmt_theory import MAX_ELL, TheoryInputs, evaluate, staircase
from ..spectra import HISTOGRAM_BINS
from . import report
from .config import PRESETS, ConfigError, load_config
from .runner import OUTPUTS, SweepSpec, aggregate, compare, derive_seed, ge_check, run_single, run_sweep

DEFAULT_SWEEP_ALPHAS = "0.05,0.1,0.15,0.2,0.3,0.35,0.42"


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="start from a shipped preset")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field; repeatable")
    parser.add_argument("--seed", type=int, help="run seed, or master seed for replicated commands")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for replicated commands")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onestep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="single run with all diagnostics")
    _common(p)
    p.add_argument("--n-test", type=int, default=DEFAULT_TEST_SAMPLES)
    p.add_argument("--outputs", default=",".join(sorted(OUTPUTS - {"ge_check"})))

    p = sub.add_parser("sweep", help="replicated runs over an alpha grid")
    _common(p)
    p.add_argument("--alphas", default=DEFAULT_SWEEP_ALPHAS, help="comma separated step-size exponents")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--n-test", type=int, default=20_000)
    p.add_argument("--outputs", default="train_gap,test_gap,alignment,spectrum")

    p = sub.add_parser("spectrum", help="histogram of scaled singular values of F")
    _common(p)
    p.add_argument("--bins", type=int, default=HISTOGRAM_BINS)

    p = sub.add_parser("theory", help="TheoryPoint table and staircase over alpha")
    _common(p)
    p.add_argument("--alphas", default=",".join(f"{a:.2f}" for a in np.arange(0.01, 0.495, 0.01)))
    p.add_argument("--max-ell", type=int, default=MAX_ELL)

    p = sub.add_parser("ge-check", help="Gaussian-equivalence and spiked-surrogate comparisons")
    _common(p)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--n-test", type=int, default=20_000)

    p = sub.add_parser("compare", help="measured gaps and alignment against the closed forms")
    _common(p)
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--n-test", type=int, default=20_000)
    return parser


def _config(args, seed=None):
    return load_config(args.config, args.preset, args.overrides, seed=seed)


def _print_rows(rows: list[dict], columns: list[str]) -> None:
    print("  ".join(f"{c:>14}" for c in columns))
    for row in rows:
        print("  ".join(f"{report.format_float(row.get(c)):>14}" for c in columns))


def cmd_simulate(args) -> int:
    config = _config(args, args.seed)
    outputs = {o.strip() for o in args.outputs.split(",") if o.strip()}
    rec = run_single(config, n_test=args.n_test, outputs=outputs)
    report.write_runs_csv([rec], args.out / "runs.csv")
    report.write_runs_json([rec], args.out / "runs.json")
    for name, m in rec.measured.items():
        print(f"{name:>22} = {m['value']:.6g} +/- {m['std_err']:.2g}")
    return 0


def cmd_sweep(args) -> int:
    base = _config(args)
    outputs = {o.strip() for o in args.outputs.split(",") if o.strip()}
    spec = SweepSpec(base=base, alpha_grid=_float_list(args.alphas), replicates=args.replicates,
                     outputs=outputs, n_test=args.n_test)
    master = base.seed if args.seed is None else args.seed
    records = run_sweep(spec, master_seed=master, workers=args.workers)
    rows = aggregate(records)
    if records:
        report.write_runs_csv(records, args.out / "runs.csv")
        report.write_runs_json(records, args.out / "runs.json")
    report.write_sweep_csv(rows, args.out / "sweep.csv")
    failed = sum(not r.ok for r in records)
    _print_rows(rows, ["alpha", "ell", "n_ok", "train_gap_mean", "train_gap_se", "test_gap_mean", "test_gap_se"])
    if failed:
        print(f"{failed} cell(s) failed; see the error column of runs.csv", file=sys.stderr)
    return 0


def cmd_spectrum(args) -> int:
    config = _config(args, args.seed)
    rec = run_single(config, outputs={"spectrum"}, keep_spectrum=True)
    path = report.write_spectrum_csv(rec.spectrum, config.alpha, args.out, bins=args.bins)
    report.write_runs_csv([rec], args.out / "runs.csv")
    report.write_runs_json([rec], args.out / "runs.json")
    m = rec.measured
    print(f"spikes: {int(m['spike_count']['value'])}  bulk edge: {m['bulk_edge']['value']:.4f}  "
          f"top: {m['top_singular_value']['value']:.4f}  -> {path}")
    return 0


def cmd_theory(args) -> int:
    config = _config(args, args.seed)
    inputs = TheoryInputs.from_config(config)
    point = evaluate(inputs)
    row = dict(point.row())
    row["lambda_1_rescaled"] = point.lambda_gap_rescaled[1]
    row["lambda_2_rescaled"] = point.lambda_gap_rescaled[2]
    report.write_theory_csv([row], args.out / "theory.csv")
    steps = staircase(inputs, _float_list(args.alphas), max_ell=args.max_ell)
    report.write_staircase_csv(steps, args.out / "staircase.csv")
    for k, v in row.items():
        print(f"{k:>18} = {v:.10g}")
    return 0


def cmd_ge_check(args) -> int:
    base = _config(args)
    master = base.seed if args.seed is None else args.seed
    rows = []
    for k in range(args.replicates):
        seed = master if args.replicates == 1 else derive_seed(master, 0, k)
        rep = ge_check(dataclasses.replace(base, seed=seed), n_test=args.n_test)
        flat = {"seed": seed, "ell": rep["ell"]}
        for key, val in rep.items():
            if isinstance(val, dict) and "value" in val:
                flat[key] = val["value"]
                flat[f"{key}_se"] = val["std_err"]
            elif isinstance(val, float):
                flat[key] = val
        rows.append(flat)
    report.write_table_csv(rows, args.out / "ge_check.csv")
    gaps = ["gap_ge_linear", "gap_spiked_train", "gap_spiked_test", "gap_ge_linear_test"]
    _print_rows(rows, ["seed"] + gaps)
    if len(rows) > 1:
        print("median  " + "  ".join(f"{g}={statistics.median(r[g] for r in rows):.4g}" for g in gaps))
    return 0


def cmd_compare(args) -> int:
    config = _config(args)
    master = config.seed if args.seed is None else args.seed
    rows, records = compare(config, replicates=args.replicates, master_seed=master, workers=args.workers,
                            n_test=args.n_test)
    report.write_table_csv(rows, args.out / "compare.csv")
    if records:
        report.write_runs_csv(records, args.out / "runs.csv")
        report.write_runs_json(records, args.out / "runs.json")
    _print_rows(rows, ["metric", "prediction", "measured_mean", "measured_se", "theory", "relative_error"])
    return 0


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "spectrum": cmd_spectrum, "theory": cmd_theory,
            "ge-check": cmd_ge_check, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
