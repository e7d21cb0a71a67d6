"""Operator side of the stochastic dual algorithm."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClockError, ParameterError, ShapeError
from .grid import LinearGridModel, constraint_residual
from .problem import DeviceSetpoints, FeederProblem

__all__ = [
    "DUAL_SENTINEL",
    "DualState",
    "IncentiveSignal",
    "StepsizeSchedule",
    "SimClock",
    "dual_ascent_step",
    "compute_signals",
    "stepsize",
    "lagrangian_value",
    "dual_function_value",
]

DUAL_SENTINEL = 1e9


@dataclass(frozen=True)
class DualState:
    """Multipliers of the lower and upper voltage limits."""

    mu_lo: np.ndarray
    mu_hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.mu_lo, dtype=float)
        hi = np.asarray(self.mu_hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ShapeError("mu_lo and mu_hi must be equal-length vectors")
        if np.any(lo < 0) or np.any(hi < 0):
            raise ParameterError("dual variables must be nonnegative")
        object.__setattr__(self, "mu_lo", lo)
        object.__setattr__(self, "mu_hi", hi)

    @classmethod
    def zeros(cls, n: int) -> "DualState":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_stacked(cls, mu) -> "DualState":
        mu = np.asarray(mu, dtype=float)
        n = mu.size // 2
        return cls(mu[:n], mu[n:])

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.mu_lo, self.mu_hi])

    @property
    def net(self) -> np.ndarray:
        return self.mu_lo - self.mu_hi


@dataclass(frozen=True)
class IncentiveSignal:
    alpha: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class StepsizeSchedule:
    """``constant`` returns ``value``; ``diminishing`` returns ``1/t`` in
    slow frame ``t``."""

    mode: str = "constant"
    value: float = 0.1

    def __post_init__(self):
        if self.mode not in ("constant", "diminishing"):
            raise ParameterError(f"unknown stepsize mode {self.mode!r}")
        if self.mode == "constant" and not self.value > 0:
            raise ParameterError("constant stepsize must be positive")


@dataclass
class SimClock:
    """Fast iteration counter ``k = t M + m`` with ``0 <= m < M``."""

    k: int
    M: int = 1

    def __post_init__(self):
        if self.M < 1:
            raise ClockError("slow-to-fast ratio M must be at least 1")
        if self.k < 0:
            raise ClockError("iteration counter must be nonnegative")

    @classmethod
    def start(cls, M: int) -> "SimClock":
        """First iteration of slow frame ``t = 1``."""
        return cls(M, M)

    @property
    def t(self) -> int:
        return self.k // self.M

    @property
    def m(self) -> int:
        return self.k % self.M

    @property
    def is_slow_update(self) -> bool:
        return self.m == 0

    def advance(self) -> None:
        self.k += 1


def dual_ascent_step(state: DualState, residual, eps: float) -> DualState:
    """Projected step ``mu <- [mu + eps * g]_+`` on stacked multipliers."""
    if not eps > 0:
        raise ParameterError("stepsize must be positive")
    residual = np.asarray(residual, dtype=float)
    n = state.mu_lo.size
    if residual.shape != (2 * n,):
        raise ShapeError(f"residual must have length {2 * n}, got {residual.shape}")
    mu_lo = np.maximum(state.mu_lo + eps * residual[:n], 0.0)
    mu_hi = np.maximum(state.mu_hi + eps * residual[n:], 0.0)
    return DualState(mu_lo, mu_hi)


def compute_signals(model: LinearGridModel, state: DualState) -> IncentiveSignal:
    """``alpha = R (mu_lo - mu_hi)``, ``beta = X (mu_lo - mu_hi)``."""
    if state.mu_lo.shape != (model.n_nodes,):
        raise ShapeError(f"dual state has {state.mu_lo.size} nodes, model has {model.n_nodes}")
    net = state.net
    return IncentiveSignal(model.R @ net, model.X @ net)


def stepsize(schedule: StepsizeSchedule, clock: SimClock) -> float:
    if schedule.mode == "constant":
        return schedule.value
    if clock.t < 1:
        raise ClockError(f"diminishing stepsize undefined in frame t=0 (k={clock.k}, M={clock.M})")
    return 1.0 / clock.t


def lagrangian_value(costs, residual, state: DualState) -> float:
    """``sum(costs) + mu . g``."""
    residual = np.asarray(residual, dtype=float)
    mu = state.stacked
    if residual.shape != mu.shape:
        raise ShapeError("residual and dual state sizes differ")
    return float(np.sum(costs) + mu @ residual)


def dual_function_value(problem: FeederProblem, state: DualState, tolerance: float = 1e-8) -> float:
    """Minimized Lagrangian ``h(mu)``.

    Each device minimizes its own cost minus its payment under the signals
    derived from ``mu``; the multiplier terms that do not involve devices
    are assembled from the baseline injections.
    """
    value, _ = _dual_value_and_minimizer(problem, state, tolerance)
    return value


def _dual_value_and_minimizer(problem: FeederProblem, state: DualState, tolerance=1e-8):
    if not tolerance > 0:
        raise ParameterError("tolerance must be positive")
    model = problem.model
    sig = compute_signals(model, state)
    z = problem.best_response(sig.alpha, sig.beta, tolerance)
    pv, tcl = problem.pv, problem.tcl
    a_pv = sig.alpha[pv.node]
    b_pv = sig.beta[pv.node]
    a_tcl = sig.alpha[tcl.node]
    device_part = np.sum(pv.cost(z.p, z.q) - a_pv * z.p - b_pv * z.q)
    device_part += np.sum(tcl.cost(z.c) + a_tcl * z.c / problem.watts_per_pu)
    v_base = model.R @ problem.p_base + model.X @ problem.q_base + model.a
    const = state.mu_lo @ (model.v_lo - v_base) + state.mu_hi @ (v_base - model.v_hi)
    return float(device_part + const), z


def residual_at(problem: FeederProblem, z: DeviceSetpoints) -> np.ndarray:
    return constraint_residual(problem.model, problem.voltage(z))
