"""Run artifacts: trace and figure CSVs, a JSON summary, optional plots.

All floats are written with 17 significant digits so identical runs give
byte-identical files.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import PresetVariance
from .errors import VoltDualError
from .oracle import OracleResult
from .problem import FeederProblem
from .recovery import RobustBounds
from .sim import FLAG_HULL_PINNED, RunningStats, Trace, detect_convergence

__all__ = ["ReportError", "emit_reports", "write_trace_csv", "write_dual_csv", "write_variance_csv", "FLOAT_FMT"]

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


class ReportError(VoltDualError, OSError):
    """Output directory or file could not be written."""


def _node_names(problem: FeederProblem | None, n: int) -> list[str]:
    if problem is not None and problem.topology is not None:
        return list(problem.topology.labels[1:])
    return [str(i) for i in range(1, n + 1)]


def _savetxt(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns else np.empty((0, 0))
    np.savetxt(path, data, fmt=FLOAT_FMT, delimiter=",", header=",".join(header), comments="")


def write_trace_csv(trace: Trace, path, names: Sequence[str], every: int = 1) -> Path:
    """Wide trace: scalar columns then one column per node per field."""
    path = Path(path)
    rows = slice(None, None, max(1, int(every)))
    header = ["k", "slow_update", "eps", "lagrangian", "h", "running_mean_h", "flags"]
    cols = [getattr(trace, f)[rows] for f in header]
    fields = ["p", "q", "v"]
    if not np.isnan(trace.v_ac[:1]).all():
        fields.append("v_ac")
    fields += ["c_relaxed", "c_realized", "mu_lo", "mu_hi", "alpha", "beta", "running_mean_v"]
    for f in fields:
        arr = getattr(trace, f)[rows]
        header += [f"{f}_{nm}" for nm in names]
        cols += list(arr.T)
    _savetxt(path, header, cols)
    return path


def write_dual_csv(trace: Trace, path, names: Sequence[str], every: int = 1) -> Path:
    """Long-format multipliers and prices: one row per iteration and node."""
    path = Path(path)
    rows = slice(None, None, max(1, int(every)))
    k = trace.k[rows]
    n = len(names)
    with path.open("w") as fh:
        fh.write("k,node,mu_lo,mu_hi,alpha,beta\n")
        block = np.stack([trace.mu_lo[rows], trace.mu_hi[rows], trace.alpha[rows], trace.beta[rows]], axis=-1)
        for i, kk in enumerate(k):
            for j in range(n):
                fh.write(f"{kk},{names[j]}," + ",".join(FLOAT_FMT % x for x in block[i, j]) + "\n")
    return path


def write_variance_csv(reports: Sequence[PresetVariance], path, names: Sequence[str]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("preset,node,variance,bound,device_bound,samples\n")
        for r in reports:
            for j, nm in enumerate(names):
                fh.write(
                    f"{r.preset},{nm},{FLOAT_FMT % r.variance[j]},{FLOAT_FMT % r.bound[j]},"
                    f"{FLOAT_FMT % r.device_bound[j]},{r.samples}\n"
                )
    return path


def _finite(x) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def emit_reports(
    trace: Trace,
    stats: RunningStats,
    oracle: OracleResult | None,
    out_dir,
    *,
    problem: FeederProblem | None = None,
    bounds: RobustBounds | None = None,
    uncontrolled_v=None,
    variance_reports: Sequence[PresetVariance] | None = None,
    relaxation_deviation: float | None = None,
    aborted: str | None = None,
    trace_every: int = 1,
    plot: bool = False,
    extra: dict | None = None,
) -> dict[str, Path]:
    """Write run artifacts into ``out_dir`` and return their paths.

    ``stats`` supplies the per-node mean, variance and 95% half-widths used
    in the voltage comparison (normally the post-convergence window).

    Raises
    ------
    ReportError
        If the directory cannot be created or a file cannot be written.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return _emit(trace, stats, oracle, out, problem, bounds, uncontrolled_v, variance_reports,
                     relaxation_deviation, aborted, trace_every, plot, extra or {})
    except ReportError:
        raise
    except OSError as exc:
        raise ReportError(f"cannot write reports to {out}: {exc}") from exc


def _emit(trace, stats, oracle, out, problem, bounds, uncontrolled_v, variance_reports,
          relaxation_deviation, aborted, trace_every, plot, extra):
    n = trace.n_nodes
    names = _node_names(problem, n)
    paths = {"trace": write_trace_csv(trace, out / "trace.csv", names, trace_every)}
    paths["dual"] = write_dual_csv(trace, out / "dual.csv", names, trace_every)

    # convergence of the running mean against the relaxed optimum
    v = trace.v_measured
    v_star = oracle.v if oracle is not None else np.full(n, np.nan)
    h_star = oracle.dual_value if oracle is not None else np.nan
    # columns without a reference value are left out rather than filled with NaN
    K = len(trace)
    header = ["k"] + [f"v_{nm}" for nm in names] + [f"mean_{nm}" for nm in names]
    cols = [trace.k] + list(v.T) + list(trace.running_mean_v.T)
    if oracle is not None:
        header += [f"vstar_{nm}" for nm in names]
        cols += [np.full(K, x) for x in v_star]
    header += ["h", "running_mean_h"]
    cols += [trace.h, trace.running_mean_h]
    if oracle is not None:
        header.append("h_star")
        cols.append(np.full(K, h_star))
    _savetxt(out / "fig2.csv", header, cols)
    paths["fig2"] = out / "fig2.csv"

    if variance_reports:
        paths["fig3"] = write_variance_csv(variance_reports, out / "fig3.csv", names)

    unc = np.full(n, np.nan) if uncontrolled_v is None else np.asarray(uncontrolled_v, dtype=float)
    hw = stats.half_width
    if bounds is not None:
        lims = [bounds.v_lo_orig, bounds.v_hi_orig, bounds.v_lo, bounds.v_hi]
    elif problem is not None:
        lims = [problem.model.v_lo, problem.model.v_hi] * 2
    else:
        lims = []
    lims = [np.broadcast_to(x, n) for x in lims]
    head = ["node"] + (["v_uncontrolled"] if uncontrolled_v is not None else []) + ["mean", "ci_low", "ci_high"]
    if lims:
        head += ["v_lo", "v_hi", "v_lo_robust", "v_hi_robust"]
    with (out / "fig4.csv").open("w") as fh:
        fh.write(",".join(head) + "\n")
        for j, nm in enumerate(names):
            vals = [unc[j]] if uncontrolled_v is not None else []
            vals += [stats.mean[j], stats.mean[j] - hw[j], stats.mean[j] + hw[j]] + [x[j] for x in lims]
            fh.write(nm + "," + ",".join(FLOAT_FMT % x for x in vals) + "\n")
    paths["fig4"] = out / "fig4.csv"

    flags = []
    if np.any(trace.flags & FLAG_HULL_PINNED):
        flags.append("hull_pinned")
    if aborted:
        flags.append("aborted")
    signal_max = float(np.max(np.abs(np.concatenate([trace.alpha, trace.beta], axis=1)))) if K else 0.0
    # largest constraint residual norm seen by the operator
    residual_max = None
    if lims and K:
        g = np.concatenate([lims[2] - v, v - lims[3]], axis=1)
        residual_max = float(np.max(np.linalg.norm(g, axis=1)))
    summary = {
        "iterations": K,
        "samples": stats.count,
        "converged_at": detect_convergence(trace.running_mean_v) if K else None,
        "nodes": names,
        "mean_v": [float(x) for x in stats.mean],
        "var_v": [float(x) for x in stats.variance],
        "ci_half_width": [float(x) for x in hw],
        "max_ci_high": float(np.max(stats.mean + hw)) if stats.count else None,
        "running_mean_h": float(stats.h_mean),
        "oracle_value": _finite(oracle.value) if oracle is not None else None,
        "oracle_h": _finite(h_star) if oracle is not None else None,
        "max_mean_gap_to_oracle": _finite(np.max(np.abs(stats.mean - v_star))) if oracle is not None else None,
        "relaxation_deviation": relaxation_deviation,
        "max_signal_magnitude": signal_max,
        "max_residual_norm": residual_max,
        "uncontrolled_max_v": _finite(np.nanmax(unc)) if uncontrolled_v is not None else None,
        "pinned_devices": [list(map(str, p)) if isinstance(p, (tuple, list)) else str(p) for p in trace.pinned],
        "flags": flags,
        "aborted": aborted,
    }
    if variance_reports:
        summary["variance"] = {
            r.preset: {
                "max_variance": float(r.variance.max()),
                "max_bound": float(r.bound.max()),
                "bound_holds": bool(np.all(r.variance <= r.bound)),
            }
            for r in variance_reports
        }
    summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = out / "summary.json"

    if plot:
        paths.update(_plot(out, trace, names, v_star, stats, unc, lims[1] if lims else None, variance_reports))
    return paths


def _plot(out, trace, names, v_star, stats, unc, hi_lim, variance_reports) -> dict[str, Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping plots")
        return {}
    paths = {}
    j = int(np.nanargmax(stats.mean)) if stats.count else 0
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(trace.k, trace.v_measured[:, j], lw=0.3, alpha=0.5, label="realized")
    ax.plot(trace.k, trace.running_mean_v[:, j], label="running mean")
    if np.isfinite(v_star[j]):
        ax.axhline(v_star[j], ls="--", color="k", label="relaxed optimum")
    ax.set(xlabel="iteration", ylabel=f"voltage at {names[j]} (p.u.)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "fig2.png", dpi=120)
    plt.close(fig)
    paths["fig2_png"] = out / "fig2.png"

    if variance_reports:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        x = np.arange(len(names))
        for r in variance_reports:
            ax.semilogy(x, r.variance, marker="o", ms=3, label=f"preset {r.preset}")
        ax.set(xlabel="node", ylabel="voltage variance (p.u.^2)")
        ax.set_xticks(x, names, rotation=90, fontsize=6)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "fig3.png", dpi=120)
        plt.close(fig)
        paths["fig3_png"] = out / "fig3.png"

    fig, ax = plt.subplots(figsize=(7, 3.5))
    x = np.arange(len(names))
    ax.plot(x, unc, "s", ms=3, label="uncontrolled")
    ax.errorbar(x, stats.mean, yerr=stats.half_width, fmt="o", ms=3, label="controlled mean, 95% CI")
    if hi_lim is not None:
        ax.plot(x, hi_lim, "k--", lw=0.8)
    ax.set_xticks(x, names, rotation=90, fontsize=6)
    ax.set(ylabel="voltage (p.u.)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "fig4.png", dpi=120)
    plt.close(fig)
    paths["fig4_png"] = out / "fig4.png"
    return paths
