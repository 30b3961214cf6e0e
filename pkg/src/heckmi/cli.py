"""Command-line interface.

Exit codes: 0 success, 2 invalid input or configuration, 3 a computation
failed (for example pooling with too few estimable clusters).
"""

import argparse
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import config as cfgmod
from .errors import HeckmiError, ImputationError, SpecError
from .mice import impute_chained, impute_univariate
from .numerics import RngStream
from .sim.generate import ScenarioConfig, generate
from .sim.metrics import MetricsReport
from .sim.runner import default_workers, run_scenario

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
NA_VALUES = ["", "NA"]

logger = logging.getLogger("heckmi")


class UsageError(Exception):
    """Bad command-line input; maps to exit code 2."""


def read_csv(path):
    try:
        return pd.read_csv(path, na_values=NA_VALUES, keep_default_na=False, encoding="utf-8",
                           float_precision="round_trip")
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise UsageError(f"cannot read CSV {path}: {exc}") from exc


def write_csv(frame, path):
    frame.to_csv(path, index=False, na_rep="NA", lineterminator="\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _write_json(obj, path):
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n", encoding="utf-8")


def _out_dir(args, doc=None):
    out = args.out or (doc or {}).get("output_dir") or "."
    return Path(out)


def cmd_impute(args):
    doc = cfgmod.load(args.config)
    specs = cfgmod.imputation_specs(doc)
    data = read_csv(args.data)
    for s in specs:
        s.validate(data.columns)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    m = args.m if args.m is not None else doc.get("m", 5)
    iterations = doc.get("iterations", 10)
    psi = doc.get("meta", {}).get("psi_structure", "full")
    if m < 1:
        raise UsageError("--m must be at least 1")
    if args.dry_run:
        print(f"config valid: {len(specs)} spec(s), m={m}, seed={seed}")
        return EXIT_OK
    rng = RngStream(seed)
    if len(specs) == 1:
        result = impute_univariate(data, specs[0], m, rng, psi_structure=psi)
    else:
        result = impute_chained(data, specs, m, iterations=iterations, rng=rng, psi_structure=psi)
    out = _out_dir(args, doc)
    out.mkdir(parents=True, exist_ok=True)
    for k, table in enumerate(result.completed, start=1):
        write_csv(table, out / f"imp_{k}.csv")
    report = dict(result.provenance)
    report["m"] = m
    report["psi_structure"] = psi
    _write_json(report, out / "imputation_report.json")
    print(f"wrote {m} imputed datasets to {out}")
    return EXIT_OK


PLOT_FILES = {
    "rho_continuous": lambda s: s["family"] == "continuous" and s["error_model"] == "bvn",
    "rho_binary": lambda s: s["family"] == "binary",
    "size": lambda s: s["error_model"] == "bvn",
    "distribution": lambda s: s["family"] == "continuous",
}
PLOT_FIELDS = ("scenario", "family", "error_model", "rho", "n_clusters", "cluster_size",
               "method", "estimand", "measure", "value", "mcse")


def emit_plot_data(report, out):
    """One tidy CSV per figure panel family; only non-empty files are written."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, keep in PLOT_FILES.items():
        rows = []
        for r in report.rows:
            sc = report.scenarios[r["scenario"]]
            if keep(sc):
                rows.append({**{k: sc[k] for k in PLOT_FIELDS[1:6]}, **r})
        if rows:
            frame = pd.DataFrame(rows, columns=PLOT_FIELDS)
            frame["value"] = frame["value"].map(_fmt)
            frame["mcse"] = frame["mcse"].map(_fmt)
            path = out / f"plot_{name}.csv"
            frame.to_csv(path, index=False, lineterminator="\n")
            written.append(path)
    return written


def _fmt(v):
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def cmd_simulate(args):
    doc = cfgmod.load(args.config)
    scenarios = cfgmod.scenarios(doc, seed=args.seed, reps=args.reps, m=args.m)
    workers = args.workers or doc.get("workers") or default_workers()
    if args.dry_run:
        for sc in scenarios:
            print(f"scenario {sc.name}: {sc.n_reps} reps, methods {', '.join(sc.methods)}")
        return EXIT_OK
    report = MetricsReport()
    for sc in scenarios:
        logger.info("running scenario %s", sc.name)
        report.merge(run_scenario(sc, workers=workers))
    out = _out_dir(args, doc)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    if args.emit_plot_data:
        emit_plot_data(report, out)
    print(f"wrote metrics for {len(scenarios)} scenario(s) to {out}")
    return EXIT_OK


_IMP_RE = re.compile(r"^imp_(\d+)\.csv$")


def _imputation_files(directory, m=None):
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"imputation directory {directory} does not exist")
    found = {}
    for p in directory.iterdir():
        hit = _IMP_RE.match(p.name)
        if hit:
            found[int(hit.group(1))] = p
    if m is None:
        if not found:
            raise UsageError(f"no imp_<k>.csv files in {directory}")
        m = max(found)
    missing = [k for k in range(1, m + 1) if k not in found]
    if missing:
        raise UsageError(f"missing imputation file imp_{missing[0]}.csv (k={missing[0]})")
    return [found[k] for k in range(1, m + 1)]


def evaluate(truth, imputations, columns=None, mask=None, name="evaluate"):
    """Compare imputed tables with the true complete table.

    Columns are matched by name. With ``mask`` (a boolean frame marking
    the imputed cells) only those cells are scored; otherwise every cell.
    For each column, bias and RMSE are taken over all scored cells of all
    imputations; MC errors treat imputations as replicates.
    """
    if columns is None:
        columns = [c for c in truth.columns if pd.api.types.is_numeric_dtype(truth[c])]
    rows = []
    for k, imp in enumerate(imputations, start=1):
        absent = [c for c in columns if c not in imp.columns]
        if absent:
            raise UsageError(f"imputation {k} lacks columns {absent}")
        if len(imp) != len(truth):
            raise UsageError(f"imputation {k} has {len(imp)} rows, truth has {len(truth)}")
    for col in columns:
        t = pd.to_numeric(truth[col], errors="coerce").to_numpy(float)
        sel = mask[col].to_numpy(bool) if mask is not None else np.ones(t.size, bool)
        per_imp = []
        for k, imp in enumerate(imputations, start=1):
            v = pd.to_numeric(imp[col], errors="coerce").to_numpy(float)
            if np.isnan(v[sel]).any():
                raise UsageError(f"imputation {k} has missing values in scored cells of {col!r}")
            per_imp.append(v[sel] - t[sel])
        err = np.concatenate(per_imp) if per_imp else np.array([])
        imp_bias = np.array([e.mean() for e in per_imp]) if sel.any() else np.array([])
        if err.size:
            bias = float(err.mean())
            rmse = math.sqrt(float((err * err).mean()))
            mc = float(imp_bias.std(ddof=1) / math.sqrt(imp_bias.size)) if imp_bias.size > 1 else float("nan")
        else:
            bias = rmse = mc = float("nan")
        rows.append(dict(scenario=name, method="imputed", estimand=col, measure="bias", value=bias, mcse=mc))
        rows.append(dict(scenario=name, method="imputed", estimand=col, measure="rmse", value=rmse,
                         mcse=float("nan")))
        rows.append(dict(scenario=name, method="imputed", estimand=col, measure="n_cells",
                         value=float(sel.sum()), mcse=float("nan")))
    report = MetricsReport(rows=rows)
    report.scenarios[name] = {"m": len(imputations), "columns": list(columns)}
    return report


def cmd_evaluate(args):
    truth = read_csv(args.truth)
    files = _imputation_files(args.imputed_dir, args.m)
    columns = args.columns.split(",") if args.columns else None
    if columns:
        absent = [c for c in columns if c not in truth.columns]
        if absent:
            raise UsageError(f"truth file lacks columns {absent}")
    mask = None
    if args.incomplete:
        inc = read_csv(args.incomplete)
        cols = columns or [c for c in truth.columns if c in inc.columns]
        absent = [c for c in cols if c not in inc.columns]
        if absent or len(inc) != len(truth):
            raise UsageError("incomplete data does not match the truth file")
        mask = inc[cols].isna()
        columns = [c for c in cols if mask[c].any()]
    if args.dry_run:
        print(f"inputs valid: {len(files)} imputation file(s)")
        return EXIT_OK
    imps = [read_csv(p) for p in files]
    report = evaluate(truth, imps, columns=columns, mask=mask)
    out = Path(args.out) if args.out else Path(args.imputed_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"wrote evaluation of {len(files)} imputation(s) to {out}")
    return EXIT_OK


def cmd_generate(args):
    sc = ScenarioConfig(family=args.family, rho=args.rho, n_clusters=args.clusters,
                        cluster_size=args.size, error_model=args.error_model,
                        seed=args.seed if args.seed is not None else 2023)
    try:
        sc.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.dry_run:
        print(f"scenario {sc.name} valid")
        return EXIT_OK
    data, truth = generate(sc, RngStream(sc.seed, (args.rep, 0)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(data.drop(columns="r"), out / "data.csv")
    full = data.drop(columns="r").assign(y=truth["y_full"])
    write_csv(full, out / "truth.csv")
    print(f"wrote data.csv and truth.csv to {out}")
    return EXIT_OK


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    common.add_argument("--workers", type=_positive, help="worker processes (default: CPU count)")
    common.add_argument("--m", type=_positive, help="number of imputations")
    common.add_argument("--reps", type=_positive, help="simulation replicates per scenario")
    common.add_argument("--dry-run", action="store_true", help="validate inputs and stop")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="heckmi", description="Multilevel selection-model multiple imputation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("impute", parents=[common], help="impute an incomplete CSV")
    p.add_argument("data")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("simulate", parents=[common], help="run simulation scenarios")
    p.add_argument("--config", required=True)
    p.add_argument("--emit-plot-data", action="store_true", help="also write per-figure tidy CSVs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="score imputations against the true data")
    p.add_argument("truth")
    p.add_argument("imputed_dir")
    p.add_argument("--incomplete", help="incomplete CSV; restricts scoring to cells missing there")
    p.add_argument("--columns", help="comma-separated columns to score")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", parents=[common], help="write one simulated dataset")
    p.add_argument("--family", default="continuous", choices=["continuous", "binary"])
    p.add_argument("--rho", type=float, default=0.6)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--error-model", default="bvn", choices=["bvn", "skew_t", "explicit"])
    p.add_argument("--rep", type=int, default=0)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate" and not args.out:
        parser.error("generate requires --out")
    try:
        return args.func(args)
    except (UsageError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ImputationError as exc:
        print(f"imputation failed: {exc}", file=sys.stderr)
        if getattr(exc, "report", None):
            print(json.dumps(exc.report, default=_json_default), file=sys.stderr)
        return EXIT_RUNTIME
    except HeckmiError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
