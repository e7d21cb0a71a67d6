"""Post-run analysis: per-preset variance comparison and uncontrolled
snapshots."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ScenarioConfig
from .grid import ac_power_flow
from .problem import FeederProblem
from .recovery import bracket_rates, per_device_variance_bound, variance_upper_bound
from .sim import Trace, detect_convergence, run_two_timescale

__all__ = ["PresetVariance", "bracket_spans", "variance_entry", "scenario_variance_report", "uncontrolled_voltage"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PresetVariance:
    preset: str
    variance: np.ndarray
    mean: np.ndarray
    bound: np.ndarray
    device_bound: np.ndarray
    samples: int
    converged_at: int | None


def bracket_spans(problem: FeederProblem, relaxed_w) -> np.ndarray:
    """Width of the adjacent bracket around each slow device's setpoint (W)."""
    spans = np.empty(len(relaxed_w))
    for i, c in enumerate(relaxed_w):
        lo, hi = bracket_rates(float(c), problem.tcl.grids[i])
        spans[i] = hi - lo
    return spans


def variance_entry(config: ScenarioConfig, problem: FeederProblem, trace: Trace) -> PresetVariance:
    """Variance summary of a finished run of ``config``."""
    conv = detect_convergence(trace.running_mean_v)
    start = config.K - min(config.sample_window, config.K)
    if conv is None or conv > start:
        log.warning("preset %s: post-convergence window starts before convergence was detected (%s)", config.preset, conv)
    spans = bracket_spans(problem, trace.final_relaxed)
    stats = trace.post_stats
    return PresetVariance(
        preset=config.preset,
        variance=stats.variance.copy(),
        mean=stats.mean.copy(),
        bound=variance_upper_bound(problem.model, spans, problem.base_kva),
        device_bound=per_device_variance_bound(problem.model, spans, problem.base_kva),
        samples=stats.count,
        converged_at=conv,
    )


def scenario_variance_report(configs: Sequence[ScenarioConfig]) -> list[PresetVariance]:
    """Run each config and collect post-convergence nodal variances next to
    the aggregate and per-device variance bounds."""
    from .scenario import build_problem

    out = []
    for config in configs:
        problem = build_problem(config)
        trace = run_two_timescale(config, problem)
        out.append(variance_entry(config, problem, trace))
    return out


def uncontrolled_voltage(problem: FeederProblem, mode: str = "ac") -> np.ndarray:
    """Voltages with every device at its own cost minimizer (no prices).

    Slow devices sit at their relaxed optimum, which is what they consume
    on average.
    """
    z = problem.cost_minimizers()
    p, q = problem.injections(z)
    if mode == "ac":
        if problem.topology is None:
            raise ValueError("AC evaluation needs the feeder topology")
        return ac_power_flow(problem.topology, p, q)
    return problem.voltage(z)
