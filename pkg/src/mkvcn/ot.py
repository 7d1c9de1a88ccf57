"""Transport distances between equal-size empirical measures.

Supports are plain arrays of shape ``(N,)`` or ``(N, d)`` with uniform
weights.  The minimum-cost assignment is delegated to
``scipy.optimize.linear_sum_assignment``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .metric import DistortedMetric, eval_f

W2_EXACT_CAP = 4096
DF_ASSIGNMENT_CAP = 512
OUTER_CAP = 256


class UseSlicedEstimateError(ValueError):
    """The exact solver would be too large; a sliced estimate is needed."""


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted point cloud."""

    support: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("support must be a non-empty (N, d) array")
        if not np.all(np.isfinite(s)):
            raise ValueError("support has non-finite entries")
        object.__setattr__(self, "support", s)

    @property
    def N(self) -> int:
        return self.support.shape[0]

    @property
    def d(self) -> int:
        return self.support.shape[1]

    def mean(self) -> np.ndarray:
        return self.support.mean(axis=0)


def as_support(x) -> np.ndarray:
    """Return the ``(N, d)`` support of a measure or array."""
    if isinstance(x, EmpiricalMeasure):
        return x.support
    s = np.asarray(x, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2:
        raise ValueError("expected an (N, d) array")
    return s


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    xa, xb = as_support(a), as_support(b)
    if xa.shape[0] != xb.shape[0]:
        raise ValueError(f"unequal sizes {xa.shape[0]} and {xb.shape[0]}")
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("dimension mismatch")
    return xa, xb


def assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching.

    Returns
    -------
    perm : ndarray
        ``perm[i]`` is the column matched to row ``i``.
    value : float
        Mean cost of the matching.
    """
    cost = np.asarray(cost, dtype=float)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=int)
    perm[rows] = cols
    return perm, float(cost[rows, cols].mean())


def exhaustive_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Brute force over all permutations; only for tiny problems."""
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if n > 9:
        raise ValueError("exhaustive search limited to N <= 9")
    best, best_perm = np.inf, None
    idx = np.arange(n)
    for p in itertools.permutations(range(n)):
        v = cost[idx, p].sum()
        if v < best:
            best, best_perm = v, np.array(p)
    return best_perm, float(best / n)


def w_p_1d(a, b, p: int = 1) -> float:
    """Exact Wasserstein-p distance on the line by sorting."""
    xa, xb = _pair(a, b)
    if xa.shape[1] != 1:
        raise ValueError("w_p_1d requires d = 1")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    diff = np.abs(np.sort(xa[:, 0]) - np.sort(xb[:, 0]))
    if p == 1:
        return float(diff.mean())
    return float(np.sqrt(np.mean(diff * diff)))


def w_p_1d_batch(a: np.ndarray, b: np.ndarray, p: int = 1) -> np.ndarray:
    """Sorted-pairing distance for stacked 1-D clouds of shape ``(R, N)``."""
    diff = np.abs(np.sort(a, axis=-1) - np.sort(b, axis=-1))
    if p == 1:
        return diff.mean(axis=-1)
    return np.sqrt(np.mean(diff * diff, axis=-1))


def w2_exact(a, b) -> float:
    """Exact W2 through an assignment on squared Euclidean cost."""
    xa, xb = _pair(a, b)
    n = xa.shape[0]
    if n > W2_EXACT_CAP:
        raise UseSlicedEstimateError(
            f"N = {n} exceeds the exact-solver cap {W2_EXACT_CAP}; use a sliced estimate")
    if xa.shape[1] == 1:
        return w_p_1d(xa, xb, p=2)
    _, value = assignment(cdist(xa, xb, "sqeuclidean"))
    return float(np.sqrt(max(value, 0.0)))


def w1_exact(a, b) -> float:
    """Exact W1 (sorting on the line, assignment otherwise)."""
    xa, xb = _pair(a, b)
    if xa.shape[1] == 1:
        return w_p_1d(xa, xb, p=1)
    if xa.shape[0] > W2_EXACT_CAP:
        raise UseSlicedEstimateError("N exceeds the exact-solver cap")
    _, value = assignment(cdist(xa, xb))
    return value


def df_paired(a, b, m: DistortedMetric) -> float:
    """Index-aligned coupling cost ``N^-1 sum f(|a_i - b_i|)``."""
    xa, xb = _pair(a, b)
    return float(np.mean(eval_f(m, np.linalg.norm(xa - xb, axis=1))))


@dataclass(frozen=True)
class DfEstimate:
    """Concave-cost transport value on the line.

    ``exact`` is False when only the monotone pairing was evaluated, in
    which case ``value`` is an upper estimate (label ``ESTIMATE``).
    """

    value: float
    monotone_cost: float
    assignment_cost: float | None
    exact: bool

    @property
    def label(self) -> str:
        return "EXACT" if self.exact else "ESTIMATE"


def df_1d_estimate(a, b, m: DistortedMetric) -> DfEstimate:
    """Transport cost with ground cost ``f(|x - y|)`` on the line."""
    xa, xb = _pair(a, b)
    if xa.shape[1] != 1:
        raise ValueError("df_1d_estimate requires d = 1")
    sa, sb = np.sort(xa[:, 0]), np.sort(xb[:, 0])
    monotone = float(np.mean(eval_f(m, np.abs(sa - sb))))
    if xa.shape[0] <= DF_ASSIGNMENT_CAP:
        cost = eval_f(m, np.abs(xa[:, 0][:, None] - xb[:, 0][None, :]))
        _, exact = assignment(cost)
        return DfEstimate(min(monotone, exact), monotone, exact, True)
    return DfEstimate(monotone, monotone, None, False)


@dataclass(frozen=True)
class OuterDistance:
    """Distance between two samples of random measures."""

    assignment_value: float
    aligned_value: float
    perm: np.ndarray


InnerDistance = Callable[[np.ndarray, np.ndarray], float]


def _inner(choice, metric: DistortedMetric | None) -> InnerDistance:
    if callable(choice):
        return choice
    if choice == "w1":
        return w1_exact
    if choice == "w2":
        return w2_exact
    if choice == "df":
        if metric is None:
            raise ValueError("inner distance 'df' needs a metric")
        return lambda x, y: df_1d_estimate(x, y, metric).value
    raise ValueError(f"unknown inner distance {choice!r}")


def outer_distance(realizations_a: Sequence, realizations_b: Sequence, inner="w2",
                   p: int = 1, metric: DistortedMetric | None = None) -> OuterDistance:
    """Transport distance between the empirical laws of random measures.

    The ground cost between realization ``i`` of the first sample and ``j`` of
    the second is ``inner(a_i, b_j)**p``; the reported values are
    ``(mean cost)**(1/p)`` for the optimal assignment and for the
    index-aligned pairing.
    """
    ma, mb = len(realizations_a), len(realizations_b)
    if ma != mb:
        raise ValueError("realization counts differ")
    if ma > OUTER_CAP:
        raise ValueError(f"at most {OUTER_CAP} realizations supported")
    dist = _inner(inner, metric)
    cost = np.empty((ma, mb))
    for i, x in enumerate(realizations_a):
        for j, y in enumerate(realizations_b):
            cost[i, j] = dist(x, y) ** p
    perm, value = assignment(cost)
    aligned = float(np.mean(np.diag(cost)))
    return OuterDistance(value ** (1.0 / p), aligned ** (1.0 / p), perm)
