"""Controllable devices and customer best responses.

Fast devices are PV inverters with continuous ``(p, q)`` setpoints in
per-unit.  Slow devices are thermostatically controlled loads (TCLs) with a
discrete grid of consumption rates in watts; a TCL consuming ``c`` W injects
``-c`` real power and no reactive power.

Prices ``alpha`` and ``beta`` arrive in currency per per-unit power.  TCL
routines take a price per watt; customer-level functions convert with the
power base.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InfeasibleError, ParameterError, ShapeError
from .recovery import RateGrid

__all__ = [
    "PvCost",
    "PvSpec",
    "TclSpec",
    "CustomerSpec",
    "CustomerDecision",
    "pv_best_response",
    "tcl_hull",
    "tcl_relaxed_best_response",
    "fast_conditional_best_response",
    "customer_best_response",
    "customer_cost",
    "project_pv",
    "PvFleet",
    "TclFleet",
]

_BISECT_ITERS = 80


class PvCost(Protocol):
    """Strongly convex, differentiable PV cost of ``(p, q)``.

    ``smoothness`` is a Lipschitz constant of the gradient and ``modulus`` a
    strong convexity constant.
    """

    smoothness: float
    modulus: float

    def value(self, p: float, q: float) -> float: ...

    def gradient(self, p: float, q: float) -> tuple[float, float]: ...


@dataclass(frozen=True)
class PvSpec:
    """PV inverter with cost ``c_p (p_av - p)^2 + c_q q^2`` unless ``cost``
    supplies a general convex cost."""

    p_av: float
    eta: float
    c_p: float = 3.0
    c_q: float = 1.0
    cost: PvCost | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.p_av >= 0:
            raise ParameterError(f"available power must be nonnegative, got {self.p_av}")
        if not self.eta > 0:
            raise ParameterError(f"inverter rating must be positive, got {self.eta}")
        if self.cost is None and not (self.c_p > 0 and self.c_q > 0):
            raise ParameterError("quadratic PV cost weights must be positive")

    def cost_value(self, p: float, q: float) -> float:
        if self.cost is not None:
            return float(self.cost.value(p, q))
        return self.c_p * (self.p_av - p) ** 2 + self.c_q * q**2

    def cost_gradient(self, p: float, q: float) -> tuple[float, float]:
        if self.cost is not None:
            gp, gq = self.cost.gradient(p, q)
            return float(gp), float(gq)
        return 2 * self.c_p * (p - self.p_av), 2 * self.c_q * q

    def is_feasible(self, p: float, q: float, tol: float = 1e-9) -> bool:
        return -tol <= p <= self.p_av + tol and p * p + q * q <= self.eta**2 + tol


@dataclass(frozen=True)
class TclSpec:
    """Air conditioner with one-step thermal model
    ``T_next = T_in + theta1 (T_out - T_in) + theta2 c`` and comfort cost
    ``c_T (T_next - T_nom)^2``.  ``theta2`` is in degF per watt (negative
    for cooling)."""

    T_in: float
    T_out: float
    rate_grid: RateGrid
    theta1: float = 0.1
    theta2: float = -0.001
    T_min: float = 70.0
    T_max: float = 80.0
    T_nom: float = 75.0
    c_T: float = 20.0

    def __post_init__(self):
        if not isinstance(self.rate_grid, RateGrid):
            object.__setattr__(self, "rate_grid", RateGrid(tuple(self.rate_grid)))
        if not self.T_min < self.T_max:
            raise ParameterError("comfort band requires T_min < T_max")
        if self.theta2 == 0:
            raise ParameterError("theta2 must be nonzero for a controllable TCL")
        if not self.c_T > 0:
            raise ParameterError("comfort weight must be positive")

    @property
    def T_drift(self) -> float:
        """Next-step temperature with zero consumption."""
        return self.T_in + self.theta1 * (self.T_out - self.T_in)

    def next_temperature(self, c):
        return self.T_drift + self.theta2 * np.asarray(c, dtype=float)

    def cost_value(self, c: float) -> float:
        return float(self.c_T * (self.next_temperature(c) - self.T_nom) ** 2)


@dataclass(frozen=True)
class CustomerSpec:
    node: int
    pvs: tuple[PvSpec, ...] = ()
    tcls: tuple[TclSpec, ...] = ()
    p_base: float = 0.0
    q_base: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pvs", tuple(self.pvs))
        object.__setattr__(self, "tcls", tuple(self.tcls))
        if self.node < 0:
            raise ParameterError("node index must be nonnegative")


@dataclass
class CustomerDecision:
    """Setpoints of one customer.

    ``pv`` holds ``(p, q)`` per PV.  ``tcl_relaxed`` holds continuous hull
    setpoints and ``tcl_realized`` the grid rates actually applied (W).
    """

    pv: list[tuple[float, float]]
    tcl_relaxed: list[float]
    tcl_realized: list[float] | None = None

    def tcl_applied(self) -> list[float]:
        return list(self.tcl_realized) if self.tcl_realized is not None else list(self.tcl_relaxed)

    def injection(self, base_kva: float, realized: bool = True) -> tuple[float, float]:
        """Net device injection ``(p, q)`` in per-unit."""
        p = sum(pq[0] for pq in self.pv)
        q = sum(pq[1] for pq in self.pv)
        slow = self.tcl_applied() if realized else self.tcl_relaxed
        p -= sum(slow) / (base_kva * 1e3)
        return p, q


def project_pv(p_target, q_target, p_max, eta, wp=1.0, wq=1.0):
    """Weighted projection onto ``{0 <= p <= p_max, p^2 + q^2 <= eta^2}``.

    Minimizes ``wp (p - p_target)^2 + wq (q - q_target)^2``.  Works
    elementwise on arrays.  When the disk constraint is active the
    multiplier is found by bisection on the monotone radius equation.
    """
    args = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p_target, q_target, p_max, eta, wp, wq)))
    shape = args[0].shape
    pt, qt, pm, eta, wp, wq = (np.atleast_1d(a) for a in args)
    p = np.clip(pt, 0.0, pm)
    q = qt.copy()
    outside = p * p + q * q > eta * eta
    if np.any(outside):
        a = (wp * pt)[outside]
        b = (wq * qt)[outside]
        wpo, wqo, pmo, eo = wp[outside], wq[outside], pm[outside], eta[outside]
        lam_lo = np.zeros_like(a)
        lam_hi = np.sqrt(2.0) * np.maximum(np.abs(a), np.abs(b)) / eo + 1.0
        for _ in range(_BISECT_ITERS):
            lam = 0.5 * (lam_lo + lam_hi)
            pp = np.clip(a / (wpo + lam), 0.0, pmo)
            qq = b / (wqo + lam)
            big = pp * pp + qq * qq > eo * eo
            lam_lo = np.where(big, lam, lam_lo)
            lam_hi = np.where(big, lam_hi, lam)
        pp = np.clip(a / (wpo + lam_hi), 0.0, pmo)
        qq = b / (wqo + lam_hi)
        # lam_hi is always on the feasible side; rescale absorbs any residue
        norm = np.hypot(pp, qq)
        scale = np.where(norm > eo, eo / np.maximum(norm, 1e-300), 1.0)
        p[outside] = pp * scale
        q[outside] = qq * scale
    return p.reshape(shape), q.reshape(shape)


def _pv_projected_gradient(spec: PvSpec, alpha, beta, tolerance, max_iter=10_000):
    cost = spec.cost
    step = 1.0 / cost.smoothness
    p, q = project_pv(spec.p_av, 0.0, spec.p_av, spec.eta)
    p, q = float(p), float(q)
    for _ in range(max_iter):
        gp, gq = cost.gradient(p, q)
        pn, qn = project_pv(p - step * (gp - alpha), q - step * (gq - beta), spec.p_av, spec.eta)
        pn, qn = float(pn), float(qn)
        if np.hypot(pn - p, qn - q) < tolerance:
            return pn, qn
        p, q = pn, qn
    return p, q


def pv_best_response(spec: PvSpec, alpha: float, beta: float, tolerance: float = 1e-8) -> tuple[float, float]:
    """Minimize ``C(p, q) - alpha p - beta q`` over the inverter's feasible set."""
    if not tolerance > 0:
        raise ParameterError("tolerance must be positive")
    if spec.cost is not None:
        return _pv_projected_gradient(spec, alpha, beta, tolerance)
    pt = spec.p_av + alpha / (2 * spec.c_p)
    qt = beta / (2 * spec.c_q)
    p, q = project_pv(pt, qt, spec.p_av, spec.eta, spec.c_p, spec.c_q)
    return float(p), float(q)


def tcl_hull(spec: TclSpec) -> tuple[float, float]:
    """Consumption interval inside the rate span that keeps the next-step
    temperature within the comfort band."""
    lo, hi = spec.rate_grid.low, spec.rate_grid.high
    drift = spec.T_drift
    a = (spec.T_max - drift) / spec.theta2
    b = (spec.T_min - drift) / spec.theta2
    lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    if lo > hi + 1e-9 * max(1.0, abs(hi)):
        raise InfeasibleError(
            f"comfort band [{spec.T_min}, {spec.T_max}] unreachable from drift temperature {drift:.3f}"
        )
    return lo, max(lo, hi)


def _tcl_stationary(T_drift, theta2, T_nom, c_T, alpha_w):
    return (T_nom - T_drift) / theta2 - alpha_w / (2.0 * c_T * theta2**2)


def tcl_relaxed_best_response(spec: TclSpec, alpha: float) -> float:
    """Minimize ``c_T (T_next(c) - T_nom)^2 + alpha c`` over the hull.

    ``alpha`` is the real-power price per watt; consumption pays ``+alpha c``
    because it is a negative injection.
    """
    lo, hi = tcl_hull(spec)
    c = _tcl_stationary(spec.T_drift, spec.theta2, spec.T_nom, spec.c_T, alpha)
    return float(min(max(c, lo), hi))


def pinned_rate(spec: TclSpec) -> float:
    """Grid rate with the smallest comfort-band violation, for devices whose
    hull is empty."""
    rates = spec.rate_grid.as_array()
    temps = spec.next_temperature(rates)
    violation = np.maximum(spec.T_min - temps, 0) + np.maximum(temps - spec.T_max, 0)
    return float(rates[int(np.argmin(violation))])


def fast_conditional_best_response(spec: CustomerSpec, alpha: float, beta: float, slow=None, tolerance: float = 1e-8):
    """Re-solve only the fast devices with slow decisions held fixed.

    Device costs are separable, so the slow decisions do not enter the fast
    problem; ``slow`` is accepted to mirror the conditional form.
    """
    return [pv_best_response(pv, alpha, beta, tolerance) for pv in spec.pvs]


def customer_best_response(spec: CustomerSpec, alpha: float, beta: float, base_kva: float = 1000.0, tolerance: float = 1e-8) -> CustomerDecision:
    """Joint relaxed best response: every PV and every TCL over its hull."""
    alpha_w = alpha / (base_kva * 1e3)
    pv = [pv_best_response(d, alpha, beta, tolerance) for d in spec.pvs]
    slow = [tcl_relaxed_best_response(d, alpha_w) for d in spec.tcls]
    return CustomerDecision(pv, slow)


def customer_cost(spec: CustomerSpec, decision: CustomerDecision, realized: bool = True) -> float:
    """Sum of device costs.  TCLs are charged at their realized rates when
    available (``realized=True``), otherwise at their relaxed setpoints."""
    if len(decision.pv) != len(spec.pvs) or len(decision.tcl_relaxed) != len(spec.tcls):
        raise ShapeError("decision does not match the customer's device inventory")
    total = sum(d.cost_value(p, q) for d, (p, q) in zip(spec.pvs, decision.pv))
    slow = decision.tcl_applied() if realized else decision.tcl_relaxed
    total += sum(d.cost_value(c) for d, c in zip(spec.tcls, slow))
    return float(total)


class PvFleet:
    """All PV inverters of a feeder, evaluated in one vectorized pass."""

    def __init__(self, customers: Sequence[CustomerSpec]):
        specs, nodes, owners = [], [], []
        for ci, cust in enumerate(customers):
            for d in cust.pvs:
                specs.append(d)
                nodes.append(cust.node)
                owners.append(ci)
        self.specs = specs
        self.node = np.asarray(nodes, dtype=int)
        self.owner = np.asarray(owners, dtype=int)
        self.p_av = np.array([d.p_av for d in specs], dtype=float)
        self.eta = np.array([d.eta for d in specs], dtype=float)
        self.c_p = np.array([d.c_p for d in specs], dtype=float)
        self.c_q = np.array([d.c_q for d in specs], dtype=float)
        self.custom = np.array([d.cost is not None for d in specs], dtype=bool)

    def __len__(self):
        return len(self.specs)

    def best_response(self, alpha_nodes, beta_nodes, tolerance=1e-8):
        a = np.asarray(alpha_nodes)[self.node]
        b = np.asarray(beta_nodes)[self.node]
        p, q = project_pv(self.p_av + a / (2 * self.c_p), b / (2 * self.c_q), self.p_av, self.eta, self.c_p, self.c_q)
        for i in np.flatnonzero(self.custom):
            p[i], q[i] = pv_best_response(self.specs[i], a[i], b[i], tolerance)
        return p, q

    def cost(self, p, q) -> np.ndarray:
        out = self.c_p * (self.p_av - p) ** 2 + self.c_q * q**2
        for i in np.flatnonzero(self.custom):
            out[i] = self.specs[i].cost_value(p[i], q[i])
        return out

    def curvatures(self) -> tuple[np.ndarray, np.ndarray]:
        """Strong-convexity moduli of the cost in ``p`` and in ``q``."""
        cp_, cq_ = 2 * self.c_p, 2 * self.c_q
        for i in np.flatnonzero(self.custom):
            cp_[i] = cq_[i] = self.specs[i].cost.modulus
        return cp_, cq_

    def min_curvature(self) -> float:
        if len(self) == 0:
            return np.inf
        cp_, cq_ = self.curvatures()
        return float(np.minimum(cp_, cq_).min())


class TclFleet:
    """All TCLs of a feeder with hulls resolved up front.

    Devices whose hull is empty are pinned to :func:`pinned_rate`; their
    indices are listed in ``pinned``.
    """

    def __init__(self, customers: Sequence[CustomerSpec], on_infeasible: Callable[[int, TclSpec, Exception], None] | None = None):
        specs, nodes, owners, local = [], [], [], []
        for ci, cust in enumerate(customers):
            for di, d in enumerate(cust.tcls):
                specs.append(d)
                nodes.append(cust.node)
                owners.append(ci)
                local.append(di)
        self.specs = specs
        self.node = np.asarray(nodes, dtype=int)
        self.owner = np.asarray(owners, dtype=int)
        self.local_index = np.asarray(local, dtype=int)
        self.drift = np.array([d.T_drift for d in specs], dtype=float)
        self.theta2 = np.array([d.theta2 for d in specs], dtype=float)
        self.T_nom = np.array([d.T_nom for d in specs], dtype=float)
        self.c_T = np.array([d.c_T for d in specs], dtype=float)
        lo, hi, pinned = [], [], []
        for i, d in enumerate(specs):
            try:
                a, b = tcl_hull(d)
            except InfeasibleError as exc:
                a = b = pinned_rate(d)
                pinned.append(i)
                if on_infeasible is not None:
                    on_infeasible(i, d, exc)
            lo.append(a)
            hi.append(b)
        self.hull_lo = np.asarray(lo, dtype=float)
        self.hull_hi = np.asarray(hi, dtype=float)
        self.pinned = pinned
        self.grids = [d.rate_grid for d in specs]

    def __len__(self):
        return len(self.specs)

    def relaxed(self, alpha_nodes, base_kva: float) -> np.ndarray:
        alpha_w = np.asarray(alpha_nodes)[self.node] / (base_kva * 1e3)
        c = _tcl_stationary(self.drift, self.theta2, self.T_nom, self.c_T, alpha_w)
        return np.clip(c, self.hull_lo, self.hull_hi)

    def cost(self, c) -> np.ndarray:
        return self.c_T * (self.drift + self.theta2 * c - self.T_nom) ** 2

    def curvatures(self, base_kva: float) -> np.ndarray:
        """Cost curvature in per-unit consumption."""
        return 2 * self.c_T * (self.theta2 * base_kva * 1e3) ** 2

    def min_curvature(self, base_kva: float) -> float:
        if len(self) == 0:
            return np.inf
        return float(np.min(self.curvatures(base_kva)))
