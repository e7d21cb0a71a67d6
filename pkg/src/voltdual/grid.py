"""Radial feeder model: linearized voltage sensitivities and an AC sweep.

Voltages are magnitudes in per-unit.  Injections are positive when power
flows into the network (generation) and negative for consumption.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError, TopologyError

__all__ = [
    "Line",
    "FeederTopology",
    "LinearGridModel",
    "NetworkState",
    "build_linear_model",
    "linear_voltage",
    "ac_power_flow",
    "constraint_residual",
    "export_model_csv",
]


@dataclass(frozen=True)
class Line:
    """Series branch between two nodes, impedance in per-unit."""

    from_node: int
    to_node: int
    r: float
    x: float


@dataclass(frozen=True)
class FeederTopology:
    """Radial feeder rooted at node 0 (the substation).

    ``labels`` holds one display name per node, index 0 first.  Lines may be
    listed in either direction; orientation away from the root is derived.
    """

    labels: tuple[str, ...]
    lines: tuple[Line, ...]
    v0: float = 1.0
    base_kva: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        object.__setattr__(self, "lines", tuple(self.lines))
        if not self.v0 > 0:
            raise ParameterError(f"substation voltage must be positive, got {self.v0}")
        if not self.base_kva > 0:
            raise ParameterError(f"power base must be positive, got {self.base_kva}")
        for ln in self.lines:
            if not (np.isfinite(ln.r) and np.isfinite(ln.x)):
                raise ParameterError(f"non-finite impedance on line {ln}")
            if ln.r < 0:
                raise ParameterError(f"negative resistance on line {ln}")
        # Force the tree check eagerly so bad inputs fail at construction.
        self._orientation

    @property
    def n_nodes(self) -> int:
        """Number of load nodes N (the substation is excluded)."""
        return len(self.labels) - 1

    @cached_property
    def _orientation(self):
        n_total = len(self.labels)
        if n_total < 2:
            raise TopologyError("feeder needs at least one load node")
        if len(self.lines) != n_total - 1:
            raise TopologyError(
                f"a tree on {n_total} nodes has {n_total - 1} lines, got {len(self.lines)}"
            )
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n_total)]
        for idx, ln in enumerate(self.lines):
            for node in (ln.from_node, ln.to_node):
                if not 0 <= node < n_total:
                    raise TopologyError(f"line {idx} references unknown node {node}")
            if ln.from_node == ln.to_node:
                raise TopologyError(f"line {idx} is a self-loop")
            adj[ln.from_node].append((ln.to_node, idx))
            adj[ln.to_node].append((ln.from_node, idx))

        parent = np.full(n_total, -1, dtype=int)
        parent_line = np.full(n_total, -1, dtype=int)
        order = [0]
        seen = np.zeros(n_total, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v, idx in adj[u]:
                if seen[v]:
                    if parent[u] != v:
                        raise TopologyError("feeder graph contains a cycle")
                    continue
                seen[v] = True
                parent[v] = u
                parent_line[v] = idx
                order.append(v)
                queue.append(v)
        if not seen.all():
            missing = [self.labels[i] for i in np.flatnonzero(~seen)]
            raise TopologyError(f"nodes not connected to the substation: {missing}")
        return parent, parent_line, order

    @property
    def parent(self) -> np.ndarray:
        return self._orientation[0]

    @cached_property
    def path_matrix(self) -> np.ndarray:
        """N x N incidence: entry (i, j) is 1 if the line feeding node j+1
        lies on the path from the substation to node i+1."""
        parent = self.parent
        n = self.n_nodes
        P = np.zeros((n, n))
        for node in range(1, n + 1):
            u = node
            while u != 0:
                P[node - 1, u - 1] = 1.0
                u = parent[u]
        return P

    @cached_property
    def branch_impedance(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node (r, x) of the line feeding each load node."""
        _, parent_line, _ = self._orientation
        r = np.array([self.lines[parent_line[i]].r for i in range(1, self.n_nodes + 1)])
        x = np.array([self.lines[parent_line[i]].x for i in range(1, self.n_nodes + 1)])
        return r, x

    @cached_property
    def _zbus(self) -> np.ndarray:
        r, x = self.branch_impedance
        P = self.path_matrix
        return (P * (r + 1j * x)) @ P.T


@dataclass(frozen=True)
class LinearGridModel:
    """Affine voltage model ``v = R p + X q + a`` with per-node limits."""

    R: np.ndarray
    X: np.ndarray
    a: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = R.shape[0]
        a = _as_node_vector(self.a, n, "a")
        v_lo = _as_node_vector(self.v_lo, n, "v_lo")
        v_hi = _as_node_vector(self.v_hi, n, "v_hi")
        if R.shape != (n, n) or X.shape != (n, n):
            raise ShapeError(f"R and X must be square and equal-sized, got {R.shape}, {X.shape}")
        if not np.all(v_lo < v_hi):
            raise ParameterError("voltage limits require v_lo < v_hi at every node")
        for name, val in (("R", R), ("X", X), ("a", a), ("v_lo", v_lo), ("v_hi", v_hi)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_nodes(self) -> int:
        return self.R.shape[0]

    def with_limits(self, v_lo, v_hi) -> "LinearGridModel":
        return LinearGridModel(self.R, self.X, self.a, v_lo, v_hi)


@dataclass(frozen=True)
class NetworkState:
    """Net nodal injections; the voltage is always derived, never stored."""

    model: LinearGridModel = field(repr=False)
    p: np.ndarray
    q: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return linear_voltage(self.model, self.p, self.q)

    @classmethod
    def assemble(cls, model, p_base, q_base, p_dev, q_dev) -> "NetworkState":
        """Add controllable device injections (already summed per node) to
        the non-controllable baseline."""
        n = model.n_nodes
        p = _as_node_vector(p_base, n, "p_base") + _as_node_vector(p_dev, n, "p_dev")
        q = _as_node_vector(q_base, n, "q_base") + _as_node_vector(q_dev, n, "q_dev")
        return cls(model, p, q)


def _as_node_vector(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.size == 1:
        return np.full(n, float(arr.reshape(())))
    if arr.shape != (n,):
        raise ShapeError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr.copy()


def build_linear_model(topology: FeederTopology, limits=(0.95, 1.05)) -> LinearGridModel:
    """Common-path sensitivities of a radial feeder.

    ``R[i, j]`` is the total resistance shared by the substation-to-i and
    substation-to-j paths, divided by ``v0``; ``X`` likewise with reactance.
    The offset is ``v0`` at every node.  ``limits`` is a ``(v_lo, v_hi)``
    pair of scalars or per-node vectors.
    """
    if not topology.v0 > 0:
        raise ParameterError("substation voltage must be positive")
    P = topology.path_matrix
    r, x = topology.branch_impedance
    R = (P * r) @ P.T / topology.v0
    X = (P * x) @ P.T / topology.v0
    n = topology.n_nodes
    v_lo, v_hi = limits
    return LinearGridModel(R, X, np.full(n, topology.v0), v_lo, v_hi)


def linear_voltage(model: LinearGridModel, p, q) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = model.n_nodes
    if p.shape != (n,) or q.shape != (n,):
        raise ShapeError(f"injections must have length {n}, got {p.shape} and {q.shape}")
    return model.R @ p + model.X @ q + model.a


def ac_power_flow(
    topology: FeederTopology,
    p,
    q,
    tolerance: float = 1e-8,
    max_iter: int = 1000,
    v_init=None,
) -> np.ndarray:
    """Backward/forward sweep for constant-power injections.

    Returns voltage magnitudes at nodes 1..N.  ``v_init`` (complex) can
    warm-start the iteration from a previous solution.

    Raises
    ------
    DivergenceError
        If the successive-iterate change stays above ``tolerance`` after
        ``max_iter`` sweeps, or the iterate becomes non-finite.
    """
    if not tolerance > 0:
        raise ParameterError("tolerance must be positive")
    return np.abs(ac_power_flow_complex(topology, p, q, tolerance, max_iter, v_init))


def ac_power_flow_complex(topology, p, q, tolerance=1e-8, max_iter=1000, v_init=None):
    n = topology.n_nodes
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (n,) or q.shape != (n,):
        raise ShapeError(f"injections must have length {n}, got {p.shape} and {q.shape}")
    s_conj = p - 1j * q
    zbus = topology._zbus
    V = np.full(n, topology.v0, dtype=complex) if v_init is None else np.array(v_init, dtype=complex)
    for _ in range(max_iter):
        # backward: injected currents; forward: drops along common paths
        V_new = topology.v0 + zbus @ (s_conj / np.conj(V))
        if not np.all(np.isfinite(V_new)) or np.min(np.abs(V_new)) < 1e-3:
            raise DivergenceError("backward/forward sweep diverged (voltage collapse)")
        change = np.max(np.abs(V_new - V))
        V = V_new
        if change < tolerance:
            return V
    raise DivergenceError(
        f"backward/forward sweep did not converge in {max_iter} iterations (last change {change:.3e})"
    )


def constraint_residual(model: LinearGridModel, v) -> np.ndarray:
    """Stacked ``[v_lo - v; v - v_hi]``; positive entries are violations."""
    v = np.asarray(v, dtype=float)
    if v.shape != (model.n_nodes,):
        raise ShapeError(f"voltage must have length {model.n_nodes}, got {v.shape}")
    return np.concatenate([model.v_lo - v, v - model.v_hi])


def export_model_csv(model: LinearGridModel, directory, labels: Sequence[str] | None = None) -> list[Path]:
    """Write ``R.csv``, ``X.csv`` and ``a.csv`` for inspection."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = model.n_nodes
    names = list(labels) if labels is not None else [str(i + 1) for i in range(n)]
    paths = []
    for name, mat in (("R", model.R), ("X", model.X)):
        path = directory / f"{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", *names])
            for i in range(n):
                w.writerow([names[i], *(repr(float(v)) for v in mat[i])])
        paths.append(path)
    path = directory / "a.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "a", "v_lo", "v_hi"])
        for i in range(n):
            w.writerow([names[i], repr(float(model.a[i])), repr(float(model.v_lo[i])), repr(float(model.v_hi[i]))])
    paths.append(path)
    return paths
