"""Randomized recovery of discrete consumption rates.

A slow device solves its problem over the convex hull of its rate grid and
then realizes one of the two grid rates bracketing the relaxed setpoint, with
probabilities chosen so the expected realized rate equals the setpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError, RangeError, ShapeError

__all__ = [
    "RateGrid",
    "RoundingOutcome",
    "RobustBounds",
    "bracket_rates",
    "two_point_sample",
    "upper_probability",
    "device_rng",
    "variance_upper_bound",
    "per_device_variance_bound",
    "rounding_variance",
    "robust_limits",
]

# Relative slack for setpoints that land a rounding error outside the grid.
_SPAN_RTOL = 1e-9


@dataclass(frozen=True)
class RateGrid:
    """Strictly increasing finite set of feasible consumption rates (W)."""

    rates: tuple[float, ...]

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if not rates:
            raise ParameterError("rate grid needs at least one rate")
        arr = np.asarray(rates)
        if not np.all(np.isfinite(arr)):
            raise ParameterError("rate grid entries must be finite")
        if np.any(np.diff(arr) <= 0):
            raise ParameterError("rate grid must be strictly increasing without duplicates")
        object.__setattr__(self, "rates", rates)

    @classmethod
    def uniform(cls, low: float, high: float, count: int) -> "RateGrid":
        return cls(tuple(np.linspace(low, high, count)))

    @property
    def low(self) -> float:
        return self.rates[0]

    @property
    def high(self) -> float:
        return self.rates[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rates)

    def __len__(self):
        return len(self.rates)

    def __contains__(self, value):
        return float(value) in self.rates


@dataclass(frozen=True)
class RoundingOutcome:
    lo: float
    hi: float
    prob_upper: float
    realized: float
    substream: tuple[int, ...] | None = None

    @property
    def bracket(self) -> tuple[float, float]:
        return self.lo, self.hi


@dataclass(frozen=True)
class RobustBounds:
    """Voltage limits tightened by a margin ``delta`` on both sides."""

    delta: float
    v_lo: np.ndarray
    v_hi: np.ndarray
    v_lo_orig: np.ndarray
    v_hi_orig: np.ndarray

    def violation_bound(self, variance) -> np.ndarray:
        """One-sided violation probability guarantee ``Var / (2 delta^2)``
        for each of the original limits."""
        variance = np.asarray(variance, dtype=float)
        if self.delta == 0:
            return np.full(variance.shape, np.inf)
        return variance / (2.0 * self.delta**2)


def bracket_rates(c_star: float, grid: RateGrid) -> tuple[float, float]:
    """Adjacent grid rates ``(lo, hi)`` with ``lo <= c_star <= hi``."""
    rates = grid.as_array()
    slack = _SPAN_RTOL * max(1.0, abs(rates[0]), abs(rates[-1]))
    if not (rates[0] - slack <= c_star <= rates[-1] + slack):
        raise RangeError(f"setpoint {c_star} outside rate span [{rates[0]}, {rates[-1]}]")
    c = min(max(float(c_star), rates[0]), rates[-1])
    idx = int(np.searchsorted(rates, c, side="left"))
    if rates[idx] == c:
        return float(c), float(c)
    return float(rates[idx - 1]), float(rates[idx])


def upper_probability(c_star: float, lo: float, hi: float) -> float:
    if hi == lo:
        return 1.0
    return min(max((c_star - lo) / (hi - lo), 0.0), 1.0)


def two_point_sample(c_star: float, bracket, rng: np.random.Generator, substream=None) -> RoundingOutcome:
    """Realize ``hi`` with probability ``(c_star - lo) / (hi - lo)``, else ``lo``.

    A degenerate bracket returns its rate deterministically and consumes no
    random draw.
    """
    lo, hi = (float(b) for b in bracket)
    if lo > hi or not (lo <= c_star <= hi):
        raise RangeError(f"setpoint {c_star} not inside bracket ({lo}, {hi})")
    prob = upper_probability(c_star, lo, hi)
    if lo == hi:
        realized = lo
    else:
        realized = hi if rng.random() < prob else lo
    key = tuple(substream) if substream is not None else None
    return RoundingOutcome(lo, hi, prob, realized, key)


def device_rng(seed: int, node: int, index: int) -> np.random.Generator:
    """Independent generator for one slow device, keyed by (node, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0x5D0, int(node), int(index)]))


def _check_nodes(model, nodes, *arrays):
    nodes = np.asarray(nodes, dtype=int)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= model.n_nodes):
        raise ShapeError("slow-device node index out of range")
    out = [np.asarray(a, dtype=float) for a in arrays]
    for a in out:
        if a.shape != nodes.shape:
            raise ShapeError("per-device arrays must match the node index array")
    return nodes, out


def variance_upper_bound(model, spans_w: Sequence[float], base_kva: float = 1000.0) -> np.ndarray:
    """Per-node bound ``D/4 * sum_j R_ij^2 * max_d span_d^2``.

    ``spans_w`` lists the bracket width of every slow device in watts; D is
    the number of entries.  The result is in per-unit volts squared.
    """
    spans = np.asarray(spans_w, dtype=float) / (base_kva * 1e3)
    n_dev = spans.size
    if n_dev == 0:
        return np.zeros(model.n_nodes)
    row = np.sum(model.R**2, axis=1)
    return n_dev / 4.0 * row * np.max(spans**2)


def per_device_variance_bound(model, spans_w, base_kva: float = 1000.0) -> np.ndarray:
    """Tighter bound ``sum_j R_ij^2 * sum_d span_d^2 / 4``."""
    spans = np.asarray(spans_w, dtype=float) / (base_kva * 1e3)
    row = np.sum(model.R**2, axis=1)
    return row * np.sum(spans**2) / 4.0


def rounding_variance(model, nodes, lo_w, hi_w, c_star_w, base_kva: float = 1000.0) -> np.ndarray:
    """Exact voltage variance from independent two-point draws at fixed
    setpoints: ``sum_j R_ij^2 * sum_{d at j} (c - lo)(hi - c)``."""
    nodes, (lo, hi, c) = _check_nodes(model, nodes, lo_w, hi_w, c_star_w)
    scale = (base_kva * 1e3) ** 2
    per_dev = (c - lo) * (hi - c) / scale
    per_node = np.bincount(nodes, weights=per_dev, minlength=model.n_nodes)
    return (model.R**2) @ per_node


def robust_limits(limits, delta: float) -> RobustBounds:
    """Shrink ``(v_lo, v_hi)`` by ``delta`` on both sides."""
    if not delta >= 0:
        raise ParameterError(f"margin must be nonnegative, got {delta}")
    v_lo = np.atleast_1d(np.asarray(limits[0], dtype=float))
    v_hi = np.atleast_1d(np.asarray(limits[1], dtype=float))
    lo_t, hi_t = v_lo + delta, v_hi - delta
    if np.any(lo_t >= hi_t):
        raise ParameterError(f"margin {delta} leaves an empty voltage band")
    return RobustBounds(float(delta), lo_t, hi_t, v_lo, v_hi)
