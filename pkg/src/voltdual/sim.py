"""Two-timescale closed loop between the network operator and customers.

The operator only sees nodal injections; customers only see their own
prices.  Every fast iteration the operator measures voltages, takes one
projected dual step and republishes prices.  Slow devices re-solve and
re-sample a discrete rate at the first iteration of each slow frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .config import ScenarioConfig
from .dual import (
    DUAL_SENTINEL,
    DualState,
    IncentiveSignal,
    SimClock,
    StepsizeSchedule,
    _dual_value_and_minimizer,
    compute_signals,
    dual_ascent_step,
    stepsize,
)
from .errors import AbortedRunError
from .grid import ac_power_flow_complex, constraint_residual
from .problem import DeviceSetpoints, FeederProblem
from .recovery import bracket_rates, device_rng, two_point_sample

__all__ = [
    "FLAG_HULL_PINNED",
    "TraceRecord",
    "Trace",
    "RunningStats",
    "update_running_stats",
    "Operator",
    "CustomerPool",
    "run_two_timescale",
    "run_problem",
    "detect_convergence",
]

log = logging.getLogger(__name__)

FLAG_HULL_PINNED = 1


@dataclass(frozen=True)
class TraceRecord:
    k: int
    slow_update: bool
    eps: float
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    v_ac: np.ndarray
    c_relaxed: np.ndarray
    c_realized: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    lagrangian: float
    h: float
    running_mean_v: np.ndarray
    running_mean_h: float
    flags: int

    @property
    def v_measured(self) -> np.ndarray:
        """Voltage the operator acted on (AC when available)."""
        return self.v if np.isnan(self.v_ac[0]) else self.v_ac


_NODE_FIELDS = ("p", "q", "v", "v_ac", "c_relaxed", "c_realized", "mu_lo", "mu_hi", "alpha", "beta", "running_mean_v")
_SCALAR_FIELDS = ("k", "slow_update", "eps", "lagrangian", "h", "running_mean_h", "flags")


class Trace:
    """Columnar storage of one run; indexing yields :class:`TraceRecord`.

    ``c_relaxed``/``c_realized`` are TCL consumptions summed per node (W).
    """

    def __init__(self, capacity: int, n_nodes: int):
        self.n_nodes = n_nodes
        self._len = 0
        for name in _NODE_FIELDS:
            setattr(self, name, np.full((capacity, n_nodes), np.nan))
        self.k = np.zeros(capacity, dtype=np.int64)
        self.slow_update = np.zeros(capacity, dtype=bool)
        self.eps = np.zeros(capacity)
        self.lagrangian = np.zeros(capacity)
        self.h = np.zeros(capacity)
        self.running_mean_h = np.zeros(capacity)
        self.flags = np.zeros(capacity, dtype=np.int64)
        self.stats: RunningStats | None = None
        self.post_stats: RunningStats | None = None
        self.final_dual: DualState | None = None
        self.final_setpoints: DeviceSetpoints | None = None
        self.final_relaxed: np.ndarray | None = None
        self.pinned: list = []

    def append(self, **values) -> None:
        i = self._len
        for name, val in values.items():
            getattr(self, name)[i] = val
        self._len += 1

    def truncate(self) -> "Trace":
        for name in _NODE_FIELDS + _SCALAR_FIELDS:
            setattr(self, name, getattr(self, name)[: self._len])
        return self

    def __len__(self):
        return self._len

    def __getitem__(self, i: int) -> TraceRecord:
        if i < 0:
            i += self._len
        if not 0 <= i < self._len:
            raise IndexError(i)
        vals = {name: getattr(self, name)[i].copy() for name in _NODE_FIELDS}
        vals.update(
            k=int(self.k[i]),
            slow_update=bool(self.slow_update[i]),
            eps=float(self.eps[i]),
            lagrangian=float(self.lagrangian[i]),
            h=float(self.h[i]),
            running_mean_h=float(self.running_mean_h[i]),
            flags=int(self.flags[i]),
        )
        return TraceRecord(**vals)

    def __iter__(self):
        for i in range(self._len):
            yield self[i]

    @property
    def v_measured(self) -> np.ndarray:
        return self.v if np.isnan(self.v_ac[:1]).all() else self.v_ac


@dataclass
class RunningStats:
    """Welford accumulators for nodal voltage and the dual function value.

    ``variance`` is the population variance of the samples seen;
    ``half_width`` is the 95% confidence half-width of the mean using the
    sample (ddof=1) standard deviation.
    """

    n_nodes: int
    count: int = 0
    mean: np.ndarray = field(default=None)
    m2: np.ndarray = field(default=None)
    h_mean: float = 0.0
    last_k: int | None = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.n_nodes)
        if self.m2 is None:
            self.m2 = np.zeros(self.n_nodes)

    def push(self, v, h: float = 0.0, k: int | None = None) -> None:
        if k is not None and self.last_k is not None and k <= self.last_k:
            raise ValueError(f"record k={k} is not newer than k={self.last_k}")
        self.count += 1
        delta = v - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (v - self.mean)
        self.h_mean += (h - self.h_mean) / self.count
        self.last_k = k

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.n_nodes)
        return self.m2 / self.count

    @property
    def sample_std(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros(self.n_nodes)
        return np.sqrt(self.m2 / (self.count - 1))

    @property
    def half_width(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.n_nodes)
        return 1.96 * self.sample_std / np.sqrt(self.count)


def update_running_stats(stats: RunningStats, record: TraceRecord) -> RunningStats:
    """Fold one trace record (its measured voltage and ``h``) into ``stats``."""
    stats.push(record.v_measured, record.h, record.k)
    return stats


class Operator:
    """Holds the multipliers and publishes prices; sees only injections."""

    def __init__(self, problem: FeederProblem, schedule: StepsizeSchedule, voltage_mode="linear", ac_tolerance=1e-8):
        self.problem = problem
        self.model = problem.model
        self.schedule = schedule
        self.voltage_mode = voltage_mode
        self.ac_tolerance = ac_tolerance
        self.state = DualState.zeros(problem.n_nodes)
        self.signal = compute_signals(self.model, self.state)
        self._v_complex = None
        if voltage_mode == "ac" and problem.topology is None:
            raise ValueError("AC voltage evaluation needs the feeder topology")

    def publish(self) -> IncentiveSignal:
        return self.signal

    def measure(self, p, q):
        v_lin = self.model.R @ p + self.model.X @ q + self.model.a
        if self.voltage_mode == "ac":
            self._v_complex = ac_power_flow_complex(
                self.problem.topology, p, q, self.ac_tolerance, 1000, self._v_complex
            )
            return v_lin, np.abs(self._v_complex)
        return v_lin, None

    def step(self, v_measured, clock: SimClock) -> np.ndarray:
        g = constraint_residual(self.model, v_measured)
        eps = stepsize(self.schedule, clock)
        self.state = dual_ascent_step(self.state, g, eps)
        self.signal = compute_signals(self.model, self.state)
        return g, eps


class CustomerPool:
    """All customers, answering price signals with their nodal injections.

    Device computations are vectorized across customers; each device's
    random draws come from its own substream, so results do not depend on
    evaluation order.
    """

    def __init__(self, problem: FeederProblem, seed: int):
        self.problem = problem
        self.pv = problem.pv
        self.tcl = problem.tcl
        self.rngs = [
            device_rng(seed, int(node) + 1, int(idx))
            for node, idx in zip(self.tcl.node, self.tcl.local_index)
        ]
        z0 = problem.cost_minimizers()
        self.setpoints = DeviceSetpoints(z0.p, z0.q, z0.c.copy())
        self.relaxed = z0.c.copy()

    def respond(self, signal: IncentiveSignal, clock: SimClock) -> DeviceSetpoints:
        if clock.is_slow_update:
            self.relaxed = self.tcl.relaxed(signal.alpha, self.problem.base_kva)
            self.setpoints.c = self._sample(self.relaxed)
        self.setpoints.p, self.setpoints.q = self.pv.best_response(signal.alpha, signal.beta)
        return self.setpoints

    def _sample(self, relaxed) -> np.ndarray:
        out = np.empty_like(relaxed)
        for i, c in enumerate(relaxed):
            bracket = bracket_rates(c, self.tcl.grids[i])
            out[i] = two_point_sample(c, bracket, self.rngs[i]).realized
        return out

    def injections(self) -> tuple[np.ndarray, np.ndarray]:
        return self.problem.injections(self.setpoints)


def run_two_timescale(config: ScenarioConfig, problem: FeederProblem | None = None) -> Trace:
    """Execute ``config.K`` fast iterations of the closed loop.

    ``problem`` defaults to the instance described by ``config``; the
    operator enforces the limits tightened by ``config.delta``.
    """
    if problem is None:
        from .scenario import build_problem

        problem = build_problem(config)
    bounds = config.bounds
    problem = problem.with_model(problem.model.with_limits(bounds.v_lo, bounds.v_hi))
    return run_problem(
        problem,
        M=config.M,
        K=config.K,
        schedule=config.stepsize,
        seed=config.seed,
        voltage_mode=config.voltage_mode,
        sample_window=config.sample_window,
        ac_tolerance=config.ac_tolerance,
    )


def run_problem(
    problem: FeederProblem,
    M: int,
    K: int,
    schedule: StepsizeSchedule,
    seed: int = 0,
    voltage_mode: str = "linear",
    sample_window: int | None = None,
    ac_tolerance: float = 1e-8,
) -> Trace:
    """Closed loop on an explicit problem whose model already carries the
    operator's limits."""
    n = problem.n_nodes
    operator = Operator(problem, schedule, voltage_mode, ac_tolerance)
    customers = CustomerPool(problem, seed)
    trace = Trace(K, n)
    trace.pinned = list(problem.pinned_log)
    flags = FLAG_HULL_PINNED if problem.tcl.pinned else 0
    if flags:
        log.warning("%d TCL(s) pinned to a grid rate: comfort band unreachable", len(problem.tcl.pinned))
    stats = RunningStats(n)
    window = K if sample_window is None else min(sample_window, K)
    post = RunningStats(n)
    post_start = K - window
    wpu = problem.watts_per_pu
    tcl_node = problem.tcl.node

    clock = SimClock.start(M)
    for j in range(K):
        signal = operator.publish()
        mu_now = operator.state
        h_now, _ = _dual_value_and_minimizer(problem, mu_now)
        z = customers.respond(signal, clock)
        p, q = customers.injections()
        v_lin, v_ac = operator.measure(p, q)
        v_meas = v_lin if v_ac is None else v_ac
        costs = problem.total_cost(z)
        g, eps = operator.step(v_meas, clock)
        lag = costs + mu_now.stacked @ g
        state = operator.state
        if max(state.mu_lo.max(initial=0.0), state.mu_hi.max(initial=0.0)) > DUAL_SENTINEL:
            trace.append(**_row(clock, eps, p, q, v_lin, v_ac, customers, tcl_node, n, wpu, mu_now, signal, lag, h_now, stats, flags))
            trace.truncate()
            raise AbortedRunError(
                f"dual variable exceeded {DUAL_SENTINEL:g} at k={clock.k}; "
                "instance is likely infeasible or the stepsize is too large",
                trace,
            )
        stats.push(v_meas, h_now, clock.k)
        if j >= post_start:
            post.push(v_meas, h_now, clock.k)
        trace.append(**_row(clock, eps, p, q, v_lin, v_ac, customers, tcl_node, n, wpu, state, operator.signal, lag, h_now, stats, flags))
        clock.advance()

    trace.stats = stats
    trace.post_stats = post
    trace.final_dual = operator.state
    trace.final_setpoints = customers.setpoints.copy()
    trace.final_relaxed = customers.relaxed.copy()
    return trace


def _row(clock, eps, p, q, v_lin, v_ac, customers, tcl_node, n, wpu, state, signal, lag, h, stats, flags):
    return dict(
        k=clock.k,
        slow_update=clock.is_slow_update,
        eps=eps,
        p=p,
        q=q,
        v=v_lin,
        v_ac=np.nan if v_ac is None else v_ac,
        c_relaxed=np.bincount(tcl_node, weights=customers.relaxed, minlength=n),
        c_realized=np.bincount(tcl_node, weights=customers.setpoints.c, minlength=n),
        mu_lo=state.mu_lo,
        mu_hi=state.mu_hi,
        alpha=signal.alpha,
        beta=signal.beta,
        lagrangian=lag,
        h=h,
        running_mean_v=stats.mean,
        running_mean_h=stats.h_mean,
        flags=flags,
    )


def detect_convergence(running_mean: np.ndarray, window: int = 2000, rtol: float = 1e-4) -> int | None:
    """First index whose trailing ``window`` of running means varies by less
    than ``rtol`` (relative, max over columns); ``None`` if never."""
    x = np.asarray(running_mean, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) <= window:
        return None
    # trailing extrema over x[i - window : i + 1]
    hi = maximum_filter1d(x, window + 1, axis=0, origin=window // 2)
    lo = minimum_filter1d(x, window + 1, axis=0, origin=window // 2)
    scale = np.maximum(np.abs(x), 1e-300)
    change = np.max((hi - lo) / scale, axis=1)[window:]
    hit = np.flatnonzero(change < rtol)
    return int(hit[0]) + window if hit.size else None
