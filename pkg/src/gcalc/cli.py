"""Command line runner: ``gcalc run config.yaml``.

Writes ``report.json`` (reproducible byte for byte), ``timings.json``,
one ``<suite>_cases.csv`` per suite and two-column plot CSVs.
Exit status: 0 when nothing failed, 2 on any failed case, 1 on a
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import SUITES, ExperimentConfig, load_config
from .errors import ConfigurationError, ContractError
from .scenarios import SeedPolicy, TimeGrid, VolatilityBand, default_controls, generate_ensemble
from .suites import SCHEMA_VERSION, run_suite, traceability_rows

OUT_DIR_ENV = "GCALC_OUT_DIR"
DEFAULT_OUT_DIR = "gcalc-out"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def build_report(cfg: ExperimentConfig, suite_reports) -> dict:
    counts = {"pass": 0, "warn": 0, "fail": 0}
    for rep in suite_reports:
        for c in rep.cases:
            counts[c["status"]] += 1
    status = "fail" if counts["fail"] else "warn" if counts["warn"] else "pass"
    echo = cfg.model_dump(mode="json", exclude={"output_dir"})
    return _clean({"schema_version": SCHEMA_VERSION, "seed": cfg.seed.master_seed,
                   "config": echo, "status": status, "counts": counts,
                   "suites": {r.suite: r.to_dict() for r in suite_reports}})


def dump_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _write_csv(path: Path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def emit_plot_data(report: dict, out_dir) -> list:
    """One two-column CSV per series in the report; returns the paths written."""
    out = Path(out_dir)
    written = []
    for suite, body in sorted((report or {}).get("suites", {}).items()):
        for name, ser in sorted(body.get("series", {}).items()):
            rows = ser["rows"]
            if suite == "stopping" and name == "dyadic_gap":
                T = ser["meta"]["horizon"]
                for n, gap in rows:
                    if gap > T / 2 ** n:
                        raise ContractError(f"dyadic gap {gap} exceeds 2^-{n:g} T at export")
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"{suite}_{name}.csv"
            _write_csv(path, [tuple(ser["columns"])] + [tuple(r) for r in rows])
            written.append(path)
    return written


def write_case_tables(report: dict, out_dir) -> list:
    out = Path(out_dir)
    written = []
    for suite, body in sorted(report.get("suites", {}).items()):
        rows = [("case_id", "status", "kind", "anchor", "observed", "expected", "tolerance")]
        for c in body["cases"]:
            rows.append((c["case_id"], c["status"], c["kind"], c["anchor"],
                         json.dumps(c["observed"], sort_keys=True),
                         json.dumps(c["expected"], sort_keys=True),
                         json.dumps(c["tolerance"], sort_keys=True)))
        path = out / f"{suite}_cases.csv"
        _write_csv(path, rows)
        written.append(path)
    return written


def resolve_out_dir(cli_value, cfg: ExperimentConfig) -> Path:
    return Path(cli_value or cfg.output_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    data = cfg.model_dump()
    if args.seed is not None:
        data["seed"]["master_seed"] = args.seed
    if args.suite:
        data["suites"] = args.suite
    if args.paths is not None:
        # The axiom suite keeps its own power-of-two path count.
        for key in ("integrals", "stopping", "ito", "pde"):
            data[key]["n_paths"] = args.paths
        data["integrals"]["moment_paths"] = args.paths
    try:
        return ExperimentConfig.model_validate(data)
    except Exception as exc:
        raise ConfigurationError(f"invalid override: {exc}") from None


def cmd_run(args) -> int:
    try:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        cfg = apply_overrides(load_config(args.config), args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = resolve_out_dir(args.out_dir, cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory {out} is not writable: {exc}", file=sys.stderr)
        return 1

    reports = []
    for name in cfg.selected_suites():
        rep = run_suite(name, cfg, jobs=args.jobs)
        reports.append(rep)
        if not args.quiet:
            for c in rep.cases:
                print(f"{c['status'].upper():5s} {name:10s} {c['case_id']}")
    report = build_report(cfg, reports)
    (out / "report.json").write_text(dump_report(report))
    timings = {r.suite: round(r.wall_clock, 3) for r in reports}
    (out / "timings.json").write_text(json.dumps(timings, sort_keys=True, indent=2) + "\n")
    write_case_tables(report, out)
    emit_plot_data(report, out)
    c = report["counts"]
    print(f"{report['status']}: {c['pass']} pass, {c['warn']} warn, {c['fail']} fail -> {out}")
    return 2 if report["status"] == "fail" else 0


def cmd_list_suites(args) -> int:
    for s in SUITES:
        print(s)
    return 0


def cmd_print_traceability(args) -> int:
    w = csv.writer(sys.stdout)
    w.writerows(traceability_rows())
    return 0


def cmd_export_paths(args) -> int:
    """Write a few sample paths of one control as ``path_id,t,b,qv``."""
    try:
        cfg = load_config(args.config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    band = VolatilityBand(cfg.band.sigma_lo, cfg.band.sigma_hi)
    grid = TimeGrid.uniform(cfg.grid.horizon, cfg.grid.n_steps)
    controls = default_controls(band, cfg.controls.n_constant, cfg.controls.feedback)
    ids = [c.control_id for c in controls]
    if args.control not in ids:
        print(f"error: unknown control {args.control!r}; choose from {ids}", file=sys.stderr)
        return 1
    i = ids.index(args.control)
    policy = SeedPolicy(cfg.seed.master_seed, cfg.seed.common_random_numbers)
    ens = generate_ensemble(controls[i], grid, band, args.n, policy, control_index=i)
    out = resolve_out_dir(args.out_dir, cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = [("path_id", "t", "b", "qv")]
    for path in ens:
        rows += [(path.path_index, t, b, q) for t, b, q in path.to_csv_rows()[1:]]
    _write_csv(out / "paths.csv", rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gcalc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the verification suites of a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--out-dir", default=None,
                     help=f"output directory (default: config, then ${OUT_DIR_ENV}, "
                          f"then ./{DEFAULT_OUT_DIR})")
    run.add_argument("--paths", type=int, default=None,
                     help="override n_paths of the statistical suites")
    run.add_argument("--jobs", type=int, default=1,
                     help="worker threads; results do not depend on it")
    run.add_argument("--suite", action="append", default=None,
                     help="run only this suite (repeatable)")
    run.add_argument("-q", "--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    sub.add_parser("list-suites", help="print the suite names").set_defaults(
        func=cmd_list_suites)
    sub.add_parser("print-traceability", help="print the anchor table as CSV").set_defaults(
        func=cmd_print_traceability)

    exp = sub.add_parser("export-paths", help="write sample paths of one control as CSV")
    exp.add_argument("config")
    exp.add_argument("--control", default="const(2)")
    exp.add_argument("-n", type=int, default=5)
    exp.add_argument("--out-dir", default=None)
    exp.set_defaults(func=cmd_export_paths)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
