"""Deterministic reference solver for the relaxed problem.

The relaxed problem (continuous slow devices over their hulls) is solved by
projected gradient ascent on the dual function.  The dual gradient is the
constraint residual at the devices' best responses and is Lipschitz with
constant ``2 ||B D^{-1/2}||^2`` (``B`` the device-to-voltage
sensitivities, ``D`` the per-variable cost curvatures), so a fixed step
``1/L`` ascends monotonically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devices import customer_best_response
from .dual import DualState, _dual_value_and_minimizer, compute_signals
from .errors import DivergenceError
from .grid import constraint_residual
from .problem import DeviceSetpoints, FeederProblem

__all__ = ["OracleResult", "oracle_solve_P3", "exact_relaxation_check"]


@dataclass(frozen=True)
class OracleResult:
    z: DeviceSetpoints
    v: np.ndarray
    dual: DualState
    value: float
    dual_value: float
    iterations: int
    dual_residual: float
    max_violation: float


def oracle_solve_P3(
    problem: FeederProblem,
    tol: float = 1e-9,
    max_iter: int = 500_000,
    step: float | None = None,
) -> OracleResult:
    """Solve the relaxed problem centrally.

    Stops when the projected-gradient residual ``||mu - [mu + g]_+||_inf``
    and the largest voltage-limit violation are both below ``tol``.

    Raises
    ------
    DivergenceError
        If the tolerance is not reached within ``max_iter`` iterations,
        which signals an infeasible or badly conditioned instance.
    """
    n = problem.n_nodes
    L = problem.dual_smoothness()
    if step is None:
        step = 1.0 / L if L > 0 else 1.0
    model = problem.model
    mu = np.zeros(2 * n)
    for it in range(1, max_iter + 1):
        sig = compute_signals(model, DualState.from_stacked(mu))
        z = problem.best_response(sig.alpha, sig.beta, tolerance=1e-12)
        g = constraint_residual(model, problem.voltage(z))
        res = np.max(np.abs(mu - np.maximum(mu + g, 0.0)))
        viol = max(float(np.max(g)), 0.0)
        if res < tol and viol < tol:
            break
        mu = np.maximum(mu + step * g, 0.0)
    else:
        raise DivergenceError(
            f"dual ascent oracle stalled after {max_iter} iterations "
            f"(residual {res:.2e}, violation {viol:.2e})"
        )
    state = DualState.from_stacked(mu)
    h, _ = _dual_value_and_minimizer(problem, state, tolerance=1e-12)
    return OracleResult(
        z=z,
        v=problem.voltage(z),
        dual=state,
        value=problem.total_cost(z),
        dual_value=h,
        iterations=it,
        dual_residual=float(res),
        max_violation=viol,
    )


def exact_relaxation_check(problem: FeederProblem, oracle: OracleResult, z_star: DeviceSetpoints | None = None) -> float:
    """Largest gap between customers' best responses to the optimal signals
    and the relaxed optimum.

    The signals are built from the oracle's multipliers; every customer then
    answers through its own best-response routine.  ``z_star`` defaults to
    the oracle's primal point but can be any independently computed optimum.
    TCL gaps are measured in per-unit so all entries share a scale.
    """
    z_star = oracle.z if z_star is None else z_star
    sig = compute_signals(problem.model, oracle.dual)
    pv_p, pv_q, tcl_c = [], [], []
    for cust in problem.customers:
        i = cust.node - 1
        dec = customer_best_response(cust, sig.alpha[i], sig.beta[i], problem.base_kva, tolerance=1e-12)
        pv_p.extend(pq[0] for pq in dec.pv)
        pv_q.extend(pq[1] for pq in dec.pv)
        tcl_c.extend(dec.tcl_relaxed)
    # fleets enumerate devices in customer order, matching the loop above
    gaps = [
        np.abs(np.asarray(pv_p) - z_star.p),
        np.abs(np.asarray(pv_q) - z_star.q),
        np.abs(np.asarray(tcl_c) - z_star.c) / problem.watts_per_pu,
    ]
    flat = np.concatenate([g.ravel() for g in gaps])
    return float(flat.max()) if flat.size else 0.0
