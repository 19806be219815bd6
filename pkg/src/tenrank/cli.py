"""Command-line interface: ``tenrank {simulate,estimate,experiment,tune-c,diagnose}``.

Exit codes: 0 success, 2 malformed input or arguments, 3 numerical failure.
``TENRANK_THREADS`` caps the number of worker processes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .harness import (
    SCHEMA_VERSION,
    STAGES,
    EstimatorSpec,
    ExperimentConfig,
    demean,
    estimate_report,
    run_experiment,
    tune_c_report,
    write_table_csv,
)
from .io import InputError, read_series, write_csv_long, write_csv_wide, write_tfms
from .moment_stats import tau_diagnostic
from .simgen import MODELS, ModelSpec, generate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

DEFAULT_ESTIMATORS = ("IC2-TIPUP", "ER1-TIPUP", "IC2-TOPUP", "ER1-TOPUP")

log = logging.getLogger("tenrank")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2)
    if path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _estimators(labels, nu: float, c_mult: float):
    out = []
    for lab in labels:
        est = EstimatorSpec.parse(lab)
        if est.criterion == "IC":
            est = EstimatorSpec(est.method, est.criterion, est.variant, nu=nu, c_mult=c_mult)
        out.append(est)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    spec = ModelSpec(args.model, args.dims[0], args.dims[1], args.T,
                     noise_offdiag=args.rho, noise_scale=args.noise_scale)
    out = generate(spec, args.seed)
    fmt = args.format or ("tfms" if args.output.endswith(".tfms") else "csv-long")
    {"tfms": write_tfms, "csv-long": write_csv_long, "csv-wide": write_csv_wide}[fmt](args.output, out.series)
    log.info("wrote %s (%s, dims=%s, T=%d, true ranks %s)", args.output, fmt, out.series.dims,
             out.series.T, out.true_ranks)
    return EXIT_OK


def cmd_estimate(args) -> int:
    series = read_series(args.input)
    ests = _estimators(args.estimators, args.nu, args.c_mult)
    report = estimate_report(series, ests, h0=args.h0, m_star=args.m_star,
                             do_demean=not args.no_demean, tau_h0=range(1, args.tau_h0_max + 1),
                             tau_m=args.tau_m)
    report["input"] = str(args.input)
    if args.json:
        _write_json(report, args.json)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "stage"] + [f"r{k + 1}" for k in range(len(series.dims))])
            for e in report["estimates"]:
                for stage in STAGES:
                    w.writerow([e["estimator"], stage] + e[stage])
    for e in report["estimates"]:
        print(f"{e['estimator']:<12} initial={tuple(e['initial'])} one_step={tuple(e['one_step'])} "
              f"final={tuple(e['final'])} iterations={e['iterations']}"
              + ("" if e["converged"] else " (not converged)"))
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        doc = yaml.safe_load(Path(args.config).read_text())
    except yaml.YAMLError as exc:
        raise InputError(f"{args.config}: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{args.config}: expected a mapping at the top level")
    try:
        cfg = ExperimentConfig.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise InputError(f"{args.config}: invalid config ({exc})") from None
    if args.replications is not None:
        cfg.replications = args.replications
    if args.parallelism is not None:
        cfg.parallelism = args.parallelism
    table = run_experiment(cfg)
    csv_path = args.csv or cfg.outputs.get("csv")
    json_path = args.json or cfg.outputs.get("json")
    if csv_path:
        write_table_csv(table, csv_path)
    if json_path:
        _write_json({"schema_version": SCHEMA_VERSION, "config": doc, "rows": table.to_records()}, json_path)
    for r in table:
        print(f"{r.model} d=({r.d1},{r.d2}) T={r.T} {r.estimator:<12} {r.stage:<9} "
              f"correct={r.proportion_correct:.3f} rmse={r.rmse:.3f}" + (f" ERROR {r.error}" if r.error else ""))
    return EXIT_NUMERIC if any(r.error for r in table) else EXIT_OK


def _c_grid(spec):
    if spec is None:
        return None
    start, stop, step = spec
    if step <= 0 or stop < start:
        raise InputError("--c-grid expects START STOP STEP with STEP > 0 and STOP >= START")
    return np.round(np.arange(start, stop + step / 2, step), 10)


def cmd_tune_c(args) -> int:
    series = read_series(args.input)
    modes = None if args.mode is None else [m - 1 for m in args.mode]
    if modes is not None and any(not 0 <= m < series.order for m in modes):
        raise InputError(f"modes must lie in 1..{series.order}")
    results = tune_c_report(series, modes, do_demean=not args.no_demean, method=args.method,
                            variant=args.variant, c_grid=_c_grid(args.c_grid), h0=args.h0,
                            nu=args.nu, m_star=args.m_star)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "c", "subsample", "dims", "T", "rank", "stability"])
            for res in results:
                for i, c in enumerate(res.c_grid):
                    for j, (dims, T) in enumerate(res.schedule):
                        w.writerow([res.mode + 1, f"{c:g}", j + 1, "x".join(map(str, dims)), T,
                                    int(res.ranks[i, j]), f"{res.stability[i]:.6g}"])
    summary = [{
        "mode": res.mode + 1,
        "c_hat": res.c_hat,
        "rank": res.rank,
        "flagged": res.flagged,
        "m_star": res.m_star,
        "intervals": [[float(res.c_grid[a]), float(res.c_grid[b - 1])] for a, b in res.intervals],
        "c_grid": res.c_grid.tolist(),
        "stability": res.stability.tolist(),
        "full_sample_rank": res.ranks[:, -1].tolist(),
    } for res in results]
    if args.json:
        _write_json({"schema_version": SCHEMA_VERSION, "input": str(args.input), "modes": summary}, args.json)
    for s in summary:
        if s["flagged"]:
            print(f"mode {s['mode']}: no stability interval found")
        else:
            print(f"mode {s['mode']}: c={s['c_hat']:g} rank={s['rank']}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    series = read_series(args.input)
    x = series if args.no_demean else demean(series)
    h0s = list(range(1, args.h0_max + 1))
    if h0s[-1] >= x.T:
        raise InputError(f"--h0-max {args.h0_max} needs more than {x.T} observations")
    rows = []
    for k in range(x.order):
        for r in tau_diagnostic(x, k, args.m, h0s):
            rows.append([k + 1, r.method, r.h0] + [f"{v:.6g}" for v in r.normalized()])
    header = ["mode", "method", "h0"] + [f"tau{m + 1}" for m in range(args.m)]
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    print(",".join(header))
    for row in rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tenrank", description="Rank determination for tensor factor models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                         help="log progress to stderr")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, **kw):
        return sub.add_parser(name, parents=[verbose], **kw)

    s = add("simulate", help="generate a synthetic matrix series")
    s.add_argument("--model", default="M1", choices=[m for m in MODELS if m != "custom"])
    s.add_argument("--dims", type=int, nargs=2, default=(20, 20), metavar=("D1", "D2"))
    s.add_argument("--T", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rho", type=float, default=0.2, help="noise equicorrelation")
    s.add_argument("--noise-scale", type=float, default=1.0)
    s.add_argument("--format", choices=("tfms", "csv-long", "csv-wide"))
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    def common(q):
        q.add_argument("input", help="TFMS or CSV file")
        q.add_argument("--h0", type=int, default=1)
        q.add_argument("--m-star", type=int)
        q.add_argument("--nu", type=float, default=0.0)
        q.add_argument("--no-demean", action="store_true")
        q.add_argument("--json")
        q.add_argument("--csv")

    e = add("estimate", help="rank estimates, spectra and lag diagnostic for one series")
    common(e)
    e.add_argument("--estimators", nargs="+", default=list(DEFAULT_ESTIMATORS))
    e.add_argument("--c-mult", type=float, default=1.0)
    e.add_argument("--tau-h0-max", type=int, default=4)
    e.add_argument("--tau-m", type=int, default=3)
    e.set_defaults(func=cmd_estimate)

    x = add("experiment", help="run a Monte-Carlo configuration (YAML)")
    x.add_argument("config")
    x.add_argument("--replications", type=int)
    x.add_argument("--parallelism", type=int)
    x.add_argument("--json")
    x.add_argument("--csv")
    x.set_defaults(func=cmd_experiment)

    t = add("tune-c", help="stability scan of the IC penalty multiplier")
    common(t)
    t.add_argument("--method", default="TIPUP", type=str.upper, choices=("TOPUP", "TIPUP"))
    t.add_argument("--variant", type=int, default=2, choices=range(1, 6))
    t.add_argument("--mode", type=int, nargs="+", help="1-based modes (default: all)")
    t.add_argument("--c-grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    t.set_defaults(func=cmd_tune_c)

    d = add("diagnose", help="normalised singular values across maximal lags")
    d.add_argument("input")
    d.add_argument("--h0-max", type=int, default=4)
    d.add_argument("--m", type=int, default=3)
    d.add_argument("--no-demean", action="store_true")
    d.add_argument("--csv")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"tenrank: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"tenrank: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"tenrank: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
