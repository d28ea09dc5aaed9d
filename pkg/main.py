"""Command-line entry point: simulate -> fit -> validate -> sobol / hsic -> report.

    python main.py simulate -n 1000 --seed 7 --out runs/base
    python main.py fit --dataset runs/base/dataset.csv --seed 7 --out runs/base
    python main.py validate --dataset runs/base/dataset.csv --p 2 3 4 --q 0.5 1.0 --seed 7 --out runs/base
    python main.py sobol --surrogate runs/base/surrogate.json --out runs/base
    python main.py hsic --dataset runs/base/dataset.csv --variant target --bound 70 --seed 7 --out runs/base
    python main.py report --seed 7 --out runs/report

Exit codes: 0 success, 1 usage error, 2 data or numerical failure.
Set CLOGSA_LOG_LEVEL (DEBUG, INFO, WARNING, ...) to change log verbosity.
"""
import argparse
import logging
import os
import sys
import time
from pathlib import Path

import clogsim
import dataio
import hsic
import pce
import probmodel
import report
import sobol
from utils import ClogsaError, child_seed

logger = logging.getLogger("clogsa")

LOG_LEVEL_ENV = "CLOGSA_LOG_LEVEL"
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
DATASET_FILE = "dataset.csv"
SURROGATE_FILE = "surrogate.json"
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageExitParser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _model(args, required: bool = True):
    if args.model is None and not required:
        return None
    return probmodel.load_model(args.model or probmodel.DEFAULT_PRESET)


def _configure_logging():
    level = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format=LOG_FORMAT, stream=sys.stderr)


# ---------- Commands ----------

def cmd_simulate(args) -> int:
    schedule, constants, times = clogsim.load_config(args.config)
    model = _model(args)
    dataset = clogsim.monte_carlo(model, schedule, constants, args.n, args.seed, times=times, n_jobs=args.jobs)
    path, _ = dataio.save_dataset(dataset, Path(args.out) / DATASET_FILE)
    print(f"{path}\t{dataio.dataset_hash(path)}\t{len(dataset.failures)} failed rows")
    return 0


def cmd_fit(args) -> int:
    model = _model(args)
    dataset = dataio.load_dataset(args.dataset)
    train, test = dataio.split(dataset, pce.DEFAULT_TRAIN_FRACTION, child_seed(args.seed, 0))
    surrogate = pce.fit(train, model, args.p[0], args.q[0], n_jobs=args.jobs)
    fit_report = pce.q2(surrogate, test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_surrogate(surrogate, out / SURROGATE_FILE)
    fit_report.per_timestep.to_csv(out / "fit_report.csv", index=False, lineterminator="\n")
    print(f"mean Q2 {fit_report.q2_mean:.4f} on {test.n_samples} test rows; "
          f"{surrogate.basis.size} union terms -> {out / SURROGATE_FILE}")
    return 0


def cmd_validate(args) -> int:
    dataset = dataio.load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.surrogate:
        model = _model(args, required=False)
        surrogate = dataio.load_surrogate(args.surrogate, model)
        fit_report = pce.q2(surrogate, dataset)
        fit_report.per_timestep.to_csv(out / "q2_timeseries.csv", index=False, lineterminator="\n")
        print(f"mean Q2 {fit_report.q2_mean:.4f} on {dataset.valid().n_samples} rows")
        return 0

    model = _model(args)
    grid = pce.cross_validate(dataset, model, args.p, args.q, splits=pce.DEFAULT_SPLITS,
                              train_fraction=pce.DEFAULT_TRAIN_FRACTION, seed=args.seed, n_jobs=args.jobs)
    grid.to_csv(out / "cross_validation.csv", index=False, lineterminator="\n")
    summary = grid.groupby(["p", "q"], sort=True)["q2_mean"].mean()
    for (p, q), value in summary.items():
        print(f"p={p} q={q:g}\tmean Q2 {value:.4f}")
    return 0


def cmd_sobol(args) -> int:
    model = _model(args, required=False)
    surrogate = dataio.load_surrogate(args.surrogate, model)
    series = sobol.sobol_timeseries(surrogate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series.to_frame().to_csv(out / "sobol.csv", index=False, lineterminator="\n")
    report.variance_contribution_table(series).to_csv(out / "variance_contribution.csv", index=False,
                                                      lineterminator="\n")
    print(f"{int(series.defined.sum())} of {len(series.times)} timesteps defined -> {out / 'sobol.csv'}")
    return 0


def cmd_hsic(args) -> int:
    dataset = dataio.load_dataset(args.dataset)
    frame = hsic.hsic_timeseries(dataset, args.variant, bound=args.bound, method=args.pvalue,
                                 permutations=args.permutations, seed=args.seed, n_jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"hsic_{args.variant}.csv"
    frame.to_csv(path, index=False, lineterminator="\n")
    print(f"{len(frame)} cells -> {path}")
    return 0


def cmd_report(args) -> int:
    schedule, constants, times = clogsim.load_config(args.config)
    model = _model(args)
    out = Path(args.out)
    if args.dataset:
        dataset = dataio.load_dataset(args.dataset)
    else:
        dataset = clogsim.monte_carlo(model, schedule, constants, args.n, args.seed, times=times, n_jobs=args.jobs)
        dataio.save_dataset(dataset, out / DATASET_FILE)
    tables = report.build_report(dataset, model, schedule, args.seed, p=args.p[0], q=args.q[0], bound=args.bound,
                                 permutations=args.permutations, pvalue=args.pvalue, n_jobs=args.jobs)
    written = report.write_report(tables, out)
    checks_table = tables["checks"]
    failed = checks_table[checks_table["passed"] == False]  # noqa: E712
    print(f"{len(written)} files -> {out}; {len(failed)} of {len(checks_table)} checks flagged")
    for _, row in failed.iterrows():
        print(f"  {row['check_id']} [{row['severity']}] {row['description']}")
    return 0


# ---------- Parser ----------

def _add(parser, *flags):
    options = {
        "--model": dict(default=None, help=f"input model JSON or preset name (default {probmodel.DEFAULT_PRESET})"),
        "--config": dict(default=clogsim.DEFAULT_CONFIG, help="schedule/constants JSON or preset name"),
        "--dataset": dict(default=None, help="trajectory dataset CSV"),
        "--surrogate": dict(default=None, help="surrogate JSON"),
        "--out": dict(required=True, help="output directory"),
        "--seed": dict(type=int, required=True, help="random seed"),
        "--jobs": dict(type=int, default=1, help="worker processes (results do not depend on it)"),
        "-n": dict(type=int, default=clogsim.DEFAULT_N, help="number of Monte Carlo samples"),
        "--p": dict(type=int, nargs="+", default=[pce.DEFAULT_P], help="maximal total degree"),
        "--q": dict(type=float, nargs="+", default=[pce.DEFAULT_Q], help="hyperbolic quasi-norm in (0, 1]"),
        "--variant": dict(choices=hsic.VARIANTS, default=hsic.GLOBAL, help="HSIC variant"),
        "--bound": dict(type=float, default=hsic.DEFAULT_BOUND, help="critical clogging rate (%%)"),
        "--permutations": dict(type=int, default=hsic.DEFAULT_PERMUTATIONS, help="permutation count B"),
        "--pvalue": dict(choices=sorted(hsic.PVALUE_ALIASES), default=None,
                         help="p-value method (default: asymp for global HSIC, perm otherwise)"),
    }
    for flag in flags:
        parser.add_argument(flag, **options[flag])


def build_parser() -> argparse.ArgumentParser:
    parser = UsageExitParser(prog="clogsa", description="Given-data sensitivity analysis of clogging trajectories.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=UsageExitParser)

    simulate = commands.add_parser("simulate", help="run a Monte Carlo campaign of the clogging simulator")
    _add(simulate, "--config", "--model", "-n", "--seed", "--out", "--jobs")
    simulate.set_defaults(handler=cmd_simulate)

    fit = commands.add_parser("fit", help="fit a sparse PCE surrogate on a train split and score it")
    _add(fit, "--dataset", "--model", "--p", "--q", "--seed", "--out", "--jobs")
    fit.set_defaults(handler=cmd_fit)

    validate = commands.add_parser("validate", help="cross-validate (p, q) or score an existing surrogate")
    _add(validate, "--dataset", "--model", "--surrogate", "--p", "--q", "--out", "--jobs")
    validate.add_argument("--seed", type=int, default=None, help="random seed (required without --surrogate)")
    validate.set_defaults(handler=cmd_validate)

    sobol_cmd = commands.add_parser("sobol", help="time-dependent Sobol' indices of a surrogate")
    _add(sobol_cmd, "--surrogate", "--model", "--out")
    sobol_cmd.set_defaults(handler=cmd_sobol)

    hsic_cmd = commands.add_parser("hsic", help="HSIC indices and p-values per input and timestep")
    _add(hsic_cmd, "--dataset", "--variant", "--bound", "--pvalue", "--permutations", "--seed", "--out", "--jobs")
    hsic_cmd.set_defaults(handler=cmd_hsic)

    report_cmd = commands.add_parser("report", help="full pipeline: figure tables, workbook, SVG plots, checks")
    _add(report_cmd, "--dataset", "--config", "--model", "-n", "--p", "--q", "--bound", "--permutations",
         "--pvalue", "--seed", "--out", "--jobs")
    report_cmd.set_defaults(handler=cmd_report)
    return parser


def _check_usage(parser, args):
    needs_dataset = {"fit", "validate", "hsic"}
    if args.command in needs_dataset and not args.dataset:
        parser.error(f"{args.command}: --dataset is required")
    if args.command == "sobol" and not args.surrogate:
        parser.error("sobol: --surrogate is required")
    if args.command == "validate" and not args.surrogate and args.seed is None:
        parser.error("validate: --seed is required unless --surrogate is given")
    if args.command in ("fit", "report") and (len(args.p) != 1 or len(args.q) != 1):
        parser.error(f"{args.command}: --p and --q take a single value")
    if getattr(args, "jobs", 1) == 0:
        parser.error("--jobs must be nonzero")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_usage(parser, args)
    if getattr(args, "pvalue", None):
        args.pvalue = hsic.normalize_method(args.pvalue)
    started = time.perf_counter()
    try:
        status = args.handler(args)
    except ClogsaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    logger.info("%s finished in %.1fs", args.command, time.perf_counter() - started)
    return status


if __name__ == "__main__":
    sys.exit(main())
