"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 profile ingestion error,
4 divergence or infeasibility, 5 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import uncontrolled_voltage, variance_entry
from .config import ScenarioConfig
from .errors import (
    AbortedRunError,
    ConfigError,
    DivergenceError,
    InfeasibleError,
    IngestionError,
    ParameterError,
    ShapeError,
    TopologyError,
)
from .oracle import exact_relaxation_check, oracle_solve_P3
from .reports import emit_reports
from .scenario import build_problem, load_scenario, make_manifest, read_manifest, write_manifest
from .sim import run_two_timescale

__all__ = ["main", "execute_run", "EXIT_OK", "EXIT_CONFIG", "EXIT_INGEST", "EXIT_DIVERGENCE", "EXIT_IO"]

log = logging.getLogger("voltdual")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5


def execute_run(config: ScenarioConfig, out_dir, *, plot: bool = False, trace_every: int = 1, oracle: bool = True) -> dict:
    """Run one scenario and write its manifest and reports into ``out_dir``.

    The manifest (with input digests) is written before the run starts.  On
    a divergence abort the partial trace is still reported before the error
    propagates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(make_manifest(config, out), out / "manifest.json")
    problem = build_problem(config)
    bounds = config.bounds
    tightened = problem.with_model(problem.model.with_limits(bounds.v_lo, bounds.v_hi))
    unc = uncontrolled_voltage(problem, config.voltage_mode) if problem.topology is not None else None
    common = dict(problem=problem, bounds=bounds, uncontrolled_v=unc, trace_every=trace_every, plot=plot)
    try:
        trace = run_two_timescale(config, problem)
    except AbortedRunError as exc:
        if exc.trace is not None and len(exc.trace):
            from .sim import RunningStats

            emit_reports(exc.trace, RunningStats(problem.n_nodes), None, out, aborted=str(exc), **common)
        raise
    opt = dev = None
    if oracle:
        opt = oracle_solve_P3(tightened)
        dev = exact_relaxation_check(tightened, opt)
    return emit_reports(
        trace,
        trace.post_stats,
        opt,
        out,
        relaxation_deviation=dev,
        extra={"scenario": config.name, "preset": config.preset, "seed": config.seed, "version": __version__},
        **common,
    )


def _overrides(args) -> dict:
    ov = {}
    for attr, key in (("seed", "seed"), ("iterations", "K"), ("M", "M"), ("delta", "delta"),
                      ("voltage_mode", "voltage_mode"), ("mode", "preset"), ("window", "sample_window")):
        val = getattr(args, attr, None)
        if val is not None:
            ov[key] = val
    if args.stepsize is not None or args.stepsize_mode is not None:
        from .dual import StepsizeSchedule

        ov["stepsize"] = StepsizeSchedule(args.stepsize_mode or "constant", 0.1 if args.stepsize is None else args.stepsize)
    return ov


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="preset name (ieee37, toy2, toy1) or scenario JSON path")
    p.add_argument("--seed", type=int)
    p.add_argument("-K", "--iterations", type=int)
    p.add_argument("-M", type=int, help="fast iterations per slow update")
    p.add_argument("--stepsize", type=float, help="stepsize value (constant mode)")
    p.add_argument("--stepsize-mode", choices=("constant", "diminishing"))
    p.add_argument("--delta", type=float, help="robust voltage margin (p.u.)")
    p.add_argument("--voltage-mode", choices=("linear", "ac"))
    p.add_argument("--mode", choices=("1", "2", "3", "custom"), help="TCL aggregation preset")
    p.add_argument("--window", type=int, help="post-convergence sample window")
    p.add_argument("-o", "--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voltdual", description="Price-based voltage regulation simulator")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write reports")
    _scenario_args(run)
    run.add_argument("--plot", action="store_true", help="also render PNG figures")
    run.add_argument("--trace-every", type=int, default=1, help="keep every n-th iteration in trace.csv")
    run.add_argument("--no-oracle", action="store_true", help="skip the centralized reference solve")

    rerun = sub.add_parser("rerun", help="repeat a run from its manifest")
    rerun.add_argument("manifest")
    rerun.add_argument("-o", "--out", help="output directory (default: the manifest's)")
    rerun.add_argument("--plot", action="store_true")
    rerun.add_argument("--trace-every", type=int, default=1)

    var = sub.add_parser("variance-report", help="compare TCL aggregation presets 1-3")
    _scenario_args(var)
    var.add_argument("--plot", action="store_true")
    return parser


def _cmd_run(args) -> None:
    config = load_scenario(args.scenario, _overrides(args))
    paths = execute_run(config, args.out, plot=args.plot, trace_every=args.trace_every, oracle=not args.no_oracle)
    print(f"wrote {', '.join(sorted(p.name for p in paths.values()))} to {args.out}")


def _cmd_rerun(args) -> None:
    manifest = read_manifest(args.manifest)
    out = args.out or manifest.out_dir
    execute_run(manifest.config, out, plot=args.plot, trace_every=args.trace_every)
    print(f"re-ran {args.manifest} into {out}")


def _cmd_variance(args) -> None:
    base = load_scenario(args.scenario, _overrides(args))
    configs = [base.replace(preset=m) for m in ("1", "2", "3")]
    reports, runs = [], []
    for cfg in configs:
        problem = build_problem(cfg)
        trace = run_two_timescale(cfg, problem)
        reports.append(variance_entry(cfg, problem, trace))
        runs.append((problem, trace))
    # voltage figures use the independent-device run
    problem, trace = runs[1]
    emit_reports(
        trace,
        trace.post_stats,
        None,
        args.out,
        problem=problem,
        bounds=configs[1].bounds,
        variance_reports=reports,
        plot=args.plot,
    )
    for r in reports:
        print(f"preset {r.preset}: max variance {r.variance.max():.3e}, max bound {r.bound.max():.3e}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "rerun": _cmd_rerun, "variance-report": _cmd_variance}
    try:
        handlers[args.command](args)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (ConfigError, ParameterError, ShapeError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AbortedRunError, DivergenceError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
