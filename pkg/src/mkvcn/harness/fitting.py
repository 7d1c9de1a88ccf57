"""Exponential rate fits and floor scaling regressions."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats


class FitImpossibleError(ValueError):
    """No admissible window above the plateau."""


@dataclass
class RateFit:
    """Least-squares fit of ``log(value - plateau)`` against time.

    ``rate`` is minus the slope.  The window ``[t0, t1]`` only contains
    points whose value exceeds three times the plateau.
    """

    t0: float
    t1: float
    rate: float
    rate_se: float
    intercept: float
    r2: float
    plateau: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(times, values, floor_hint: float | None = None, window: str = "full",
             min_points: int = 10, tail_fraction: float = 0.2) -> RateFit:
    """Fit an exponential decay rate above the plateau.

    Parameters
    ----------
    times, values : array_like
        Time grid and positive series.
    floor_hint : float, optional
        Plateau level to use instead of the median of the final
        ``tail_fraction`` of the points.
    window : {"full", "late"}
        ``late`` keeps only the second half of the admissible window, which
        isolates the slowest mode of a multi-rate decay.

    Raises
    ------
    FitImpossibleError
        When fewer than ``min_points`` points lie above three times the plateau.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise ValueError("times and values must be 1-D arrays of equal length")
    if floor_hint is None:
        k = max(1, int(math.ceil(tail_fraction * v.size)))
        plateau = float(np.median(v[-k:]))
    else:
        plateau = float(floor_hint)
    plateau = max(plateau, 0.0)
    admissible = np.isfinite(v) & (v > 3.0 * plateau) & (v > 0)
    if not admissible.any():
        raise FitImpossibleError("no point above three times the plateau")
    start = int(np.argmax(admissible))
    rest = admissible[start:]
    stop = start + (int(np.argmin(rest)) if not rest.all() else rest.size)
    idx = np.arange(start, stop)
    if window == "late":
        idx = idx[idx.size // 2:]
    elif window != "full":
        raise ValueError("window must be 'full' or 'late'")
    if idx.size < min_points:
        raise FitImpossibleError(
            f"only {idx.size} admissible points above 3x plateau ({plateau:.3g}); need {min_points}")
    y = np.log(v[idx] - plateau)
    res = stats.linregress(t[idx], y)
    return RateFit(t0=float(t[idx[0]]), t1=float(t[idx[-1]]), rate=float(-res.slope),
                   rate_se=float(res.stderr), intercept=float(res.intercept),
                   r2=float(res.rvalue ** 2), plateau=plateau, n_points=int(idx.size))


def plateau_estimate(times, series, tail_fraction: float = 0.2) -> tuple[float, float]:
    """Plateau level and its standard error from per-realization tail means.

    ``series`` is ``(R, T)``.
    """
    x = np.atleast_2d(np.asarray(series, dtype=float))
    k = max(1, int(math.ceil(tail_fraction * x.shape[1])))
    per_real = x[:, -k:].mean(axis=1)
    se = per_real.std(ddof=1) / math.sqrt(per_real.size) if per_real.size > 1 else math.nan
    return float(per_real.mean()), float(se)


@dataclass
class ScalingReport:
    """Regression of ``log(plateau)`` on ``log(N)``."""

    Ns: list
    plateaus: list
    plateau_se: list
    slope: float
    slope_se: float
    ci_low: float
    ci_high: float
    intercept: float

    def to_dict(self) -> dict:
        return asdict(self)


def chaos_scaling(Ns, plateaus, plateau_se=None, confidence: float = 0.95) -> ScalingReport:
    """Slope of the floor against the particle number on log-log axes.

    Standard errors, when given, weight the regression by the inverse
    variance of ``log(plateau)``.
    """
    Ns = np.asarray(Ns, dtype=float)
    p = np.asarray(plateaus, dtype=float)
    if Ns.size != p.size:
        raise ValueError("Ns and plateaus differ in length")
    if np.unique(Ns).size < 3:
        raise ValueError("need at least three distinct particle numbers")
    if np.any(p <= 0):
        raise ValueError("plateaus must be positive")
    x, y = np.log(Ns), np.log(p)
    if plateau_se is not None:
        se = np.asarray(plateau_se, dtype=float)
        w = np.where(se > 0, p / se, 1.0)
    else:
        se = np.full(p.size, np.nan)
        w = np.ones_like(p)
    W = w * w
    X = np.stack([np.ones_like(x), x], axis=1)
    cov_unscaled = np.linalg.inv(X.T @ (W[:, None] * X))
    beta = cov_unscaled @ X.T @ (W * y)
    resid = y - X @ beta
    dof = max(1, x.size - 2)
    if plateau_se is not None:
        # inverse-variance weights: scale by the reduced chi-square only when it exceeds 1
        chi2 = float(np.sum(W * resid ** 2)) / dof
        cov = cov_unscaled * max(1.0, chi2)
        q = stats.norm.ppf(0.5 + confidence / 2.0) if x.size <= 3 else stats.t.ppf(
            0.5 + confidence / 2.0, dof)
    else:
        s2 = float(np.sum(resid ** 2)) / dof
        cov = cov_unscaled * s2
        q = stats.t.ppf(0.5 + confidence / 2.0, dof)
    slope_se = float(math.sqrt(cov[1, 1]))
    slope = float(beta[1])
    return ScalingReport(Ns.tolist(), p.tolist(), se.tolist(), slope, slope_se,
                         slope - q * slope_se, slope + q * slope_se, float(beta[0]))
