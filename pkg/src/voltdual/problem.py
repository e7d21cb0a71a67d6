"""A feeder instance: linear model, customers, and baseline injections."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .devices import CustomerSpec, PvFleet, TclFleet
from .errors import ShapeError
from .grid import FeederTopology, LinearGridModel

__all__ = ["FeederProblem", "DeviceSetpoints"]


@dataclass
class DeviceSetpoints:
    """Flat per-device setpoints: PV ``p``/``q`` in per-unit, TCL ``c`` in W."""

    p: np.ndarray
    q: np.ndarray
    c: np.ndarray

    def copy(self) -> "DeviceSetpoints":
        return DeviceSetpoints(self.p.copy(), self.q.copy(), self.c.copy())


@dataclass
class FeederProblem:
    """Everything needed to pose the relaxed social-welfare problem.

    ``model`` carries the voltage limits the operator enforces (possibly
    already tightened).  ``p_base``/``q_base`` are non-controllable nodal
    injections in per-unit.  ``topology`` is optional and only needed for
    AC voltage evaluation.
    """

    model: LinearGridModel
    customers: Sequence[CustomerSpec]
    p_base: np.ndarray
    q_base: np.ndarray
    base_kva: float = 1000.0
    topology: FeederTopology | None = None
    pinned_log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        n = self.model.n_nodes
        self.customers = tuple(self.customers)
        self.p_base = np.asarray(self.p_base, dtype=float)
        self.q_base = np.asarray(self.q_base, dtype=float)
        if self.p_base.shape != (n,) or self.q_base.shape != (n,):
            raise ShapeError(f"baseline injections must have length {n}")
        for c in self.customers:
            if not 1 <= c.node <= n:
                raise ShapeError(f"customer node {c.node} outside 1..{n}")

    @classmethod
    def from_customers(cls, model, customers, base_kva=1000.0, topology=None, p_extra=0.0, q_extra=0.0):
        """Baselines are the customers' own baselines plus optional extras."""
        n = model.n_nodes
        p = np.zeros(n) + p_extra
        q = np.zeros(n) + q_extra
        for c in customers:
            p[c.node - 1] += c.p_base
            q[c.node - 1] += c.q_base
        return cls(model, customers, p, q, base_kva, topology)

    @property
    def n_nodes(self) -> int:
        return self.model.n_nodes

    @property
    def watts_per_pu(self) -> float:
        return self.base_kva * 1e3

    @cached_property
    def pv(self) -> PvFleet:
        # customer nodes are 1-based; fleets index nodes 0-based
        return PvFleet([_zero_based(c) for c in self.customers])

    @cached_property
    def tcl(self) -> TclFleet:
        def log(i, spec, exc):
            self.pinned_log.append((i, str(exc)))

        return TclFleet([_zero_based(c) for c in self.customers], on_infeasible=log)

    def with_model(self, model: LinearGridModel) -> "FeederProblem":
        return FeederProblem(model, self.customers, self.p_base, self.q_base, self.base_kva, self.topology)

    # -- evaluation helpers ------------------------------------------------

    def injections(self, z: DeviceSetpoints) -> tuple[np.ndarray, np.ndarray]:
        """Total nodal injections for device setpoints ``z``."""
        n = self.n_nodes
        p = self.p_base + np.bincount(self.pv.node, weights=z.p, minlength=n)
        p = p - np.bincount(self.tcl.node, weights=z.c, minlength=n) / self.watts_per_pu
        q = self.q_base + np.bincount(self.pv.node, weights=z.q, minlength=n)
        return p, q

    def voltage(self, z: DeviceSetpoints) -> np.ndarray:
        p, q = self.injections(z)
        return self.model.R @ p + self.model.X @ q + self.model.a

    def total_cost(self, z: DeviceSetpoints) -> float:
        return float(np.sum(self.pv.cost(z.p, z.q)) + np.sum(self.tcl.cost(z.c)))

    def best_response(self, alpha, beta, tolerance=1e-8) -> DeviceSetpoints:
        """Every device's relaxed best response to nodal prices."""
        p, q = self.pv.best_response(alpha, beta, tolerance)
        c = self.tcl.relaxed(alpha, self.base_kva)
        return DeviceSetpoints(p, q, c)

    def cost_minimizers(self) -> DeviceSetpoints:
        zero = np.zeros(self.n_nodes)
        return self.best_response(zero, zero)

    def sensitivity_matrix(self) -> np.ndarray:
        """Columns map each device variable (PV p, PV q, TCL c in per-unit)
        to nodal voltage."""
        R, X = self.model.R, self.model.X
        cols = [R[:, self.pv.node], X[:, self.pv.node], -R[:, self.tcl.node]]
        return np.hstack(cols)

    def dual_smoothness(self) -> float:
        """Lipschitz constant ``2 ||B D^-1/2||^2`` of the dual gradient.

        ``D`` holds each device variable's cost curvature; the costs are
        separable, so best responses move by at most ``D^-1`` times the
        price change in each coordinate.
        """
        B = self.sensitivity_matrix()
        if B.size == 0:
            return 0.0
        cp_, cq_ = self.pv.curvatures()
        curv = np.concatenate([cp_, cq_, self.tcl.curvatures(self.base_kva)])
        sigma = np.linalg.norm(B / np.sqrt(curv), 2)
        return 2.0 * sigma**2


def _zero_based(c: CustomerSpec) -> CustomerSpec:
    return CustomerSpec(c.node - 1, c.pvs, c.tcls, c.p_base, c.q_base)
