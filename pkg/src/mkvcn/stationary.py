"""Generator functionals, stationarity tests and invariant-law oracles.

Functionals act on empirical measures given as arrays of shape
``(..., N, d)``; leading axes index realizations, so a whole batch is
evaluated in one call.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .model import InteractionSpec, PotentialSpec
from .ot import as_support
from .sde import drift_field


class OracleUndefinedError(ValueError):
    """``exp(-2 V / sigma0^2)`` is not integrable."""


class FitRejectedError(ValueError):
    """A collapse fit was requested where no collapse is expected."""


def _cloud(m) -> np.ndarray:
    if hasattr(m, "support"):
        return m.support
    x = np.asarray(m, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


# ---------------------------------------------------------------- functionals


class GeneratorFunctional:
    """Functional ``F(m)`` with the derivative oracles used by the generator.

    Subclasses provide

    * ``value(x)`` -> ``F(m)``,
    * ``dmF(x)`` -> ``D_m F(m, x_i)`` of shape ``(..., N, d)``,
    * ``div_dmF(x)`` -> ``div_x D_m F(m, x_i)`` of shape ``(..., N)``,
    * ``trace_dmm(x)`` -> ``int int Tr D^2_mm F(m, x, y) m(dx) m(dy)``.
    """

    kind = "custom"

    def value(self, x):
        raise NotImplementedError

    def dmF(self, x):
        raise NotImplementedError

    def div_dmF(self, x):
        raise NotImplementedError

    def trace_dmm(self, x):
        raise NotImplementedError

    def generator(self, x, V: PotentialSpec, W: InteractionSpec, sigma: float,
                  sigma0: float):
        x = np.asarray(x, dtype=float)
        b = drift_field(x, x, V, W)
        first = np.mean(np.sum(self.dmF(x) * b, axis=-1), axis=-1)
        second = 0.5 * (sigma ** 2 + sigma0 ** 2) * np.mean(self.div_dmF(x), axis=-1)
        return first + second + 0.5 * sigma0 ** 2 * self.trace_dmm(x)


class LinearFunctional(GeneratorFunctional):
    """``F(m) = <m, phi>`` with gradient and Laplacian oracles for ``phi``."""

    kind = "linear"

    def __init__(self, phi: Callable, grad: Callable, laplacian: Callable):
        self.phi, self.grad, self.laplacian = phi, grad, laplacian

    def value(self, x):
        return np.mean(self.phi(x), axis=-1)

    def dmF(self, x):
        return self.grad(x)

    def div_dmF(self, x):
        return self.laplacian(x)

    def trace_dmm(self, x):
        return np.zeros(np.shape(x)[:-2])


class VarianceFunctional(GeneratorFunctional):
    """Within-measure variance ``v_m = int |x - mean(m)|^2 m(dx)``."""

    kind = "variance"

    def value(self, x):
        c = x - np.mean(x, axis=-2, keepdims=True)
        return np.mean(np.sum(c * c, axis=-1), axis=-1)

    def dmF(self, x):
        return 2.0 * (x - np.mean(x, axis=-2, keepdims=True))

    def div_dmF(self, x):
        d = np.shape(x)[-1]
        return np.full(np.shape(x)[:-1], 2.0 * d)

    def trace_dmm(self, x):
        d = np.shape(x)[-1]
        return np.full(np.shape(x)[:-2], -2.0 * d)


class CustomFunctional(GeneratorFunctional):
    """Plug-in functional built from user oracles."""

    def __init__(self, value, dmF, div_dmF, trace_dmm):
        self._value, self._dmF, self._div, self._trace = value, dmF, div_dmF, trace_dmm

    def value(self, x):
        return self._value(x)

    def dmF(self, x):
        return self._dmF(x)

    def div_dmF(self, x):
        return self._div(x)

    def trace_dmm(self, x):
        return self._trace(x)


def square_functional() -> LinearFunctional:
    """``phi(x) = |x|^2``."""
    return LinearFunctional(
        phi=lambda x: np.sum(x * x, axis=-1),
        grad=lambda x: 2.0 * x,
        laplacian=lambda x: np.full(np.shape(x)[:-1], 2.0 * np.shape(x)[-1]),
    )


def coordinate_functional(k: int = 0) -> LinearFunctional:
    """``phi(x) = x_k``."""

    def grad(x):
        g = np.zeros_like(x)
        g[..., k] = 1.0
        return g

    return LinearFunctional(
        phi=lambda x: x[..., k],
        grad=grad,
        laplacian=lambda x: np.zeros(np.shape(x)[:-1]),
    )


def generator_apply(F: GeneratorFunctional, m, V: PotentialSpec, W: InteractionSpec,
                    sigma: float, sigma0: float) -> float:
    """Generator of the measure-valued dynamics applied to ``F`` at ``m``."""
    return float(F.generator(_cloud(m), V, W, sigma, sigma0))


# ---------------------------------------------------------------- reports


def _z_level(n: int, n_se: float) -> tuple[float, list[str]]:
    """Critical multiplier, widened with a Student quantile for few samples."""
    if n >= 30:
        return n_se, []
    if n < 2:
        return math.inf, ["fewer than two realizations; interval is unbounded"]
    p = stats.norm.cdf(n_se)
    return float(stats.t.ppf(p, n - 1)), [f"only {n} realizations; interval widened "
                                           "with a Student-t quantile"]


@dataclass
class StationarityReport:
    """Outcome of the integrated-identity and stationary-tail checks."""

    functional: str
    transient_time: float | None = None
    lhs_mean: float = float("nan")
    lhs_se: float = float("nan")
    rhs_mean: float = float("nan")
    rhs_se: float = float("nan")
    transient_gap: float = float("nan")
    transient_se: float = float("nan")
    transient_pass: bool | None = None
    tail_window: tuple | None = None
    tail_mean: float = float("nan")
    tail_se: float = float("nan")
    tail_pass: bool | None = None
    n_realizations: int = 0
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        flags = [p for p in (self.transient_pass, self.tail_pass) if p is not None]
        return bool(flags) and all(flags)

    def lines(self) -> list[str]:
        out = [f"functional = {self.functional}", f"realizations = {self.n_realizations}"]
        if self.transient_pass is not None:
            out += [f"transient_time = {self.transient_time}",
                    f"lhs = {self.lhs_mean:.6g} +/- {self.lhs_se:.3g}",
                    f"rhs = {self.rhs_mean:.6g} +/- {self.rhs_se:.3g}",
                    f"transient_pass = {self.transient_pass}"]
        if self.tail_pass is not None:
            out += [f"tail_window = {self.tail_window}",
                    f"tail_mean_generator = {self.tail_mean:.6g} +/- {self.tail_se:.3g}",
                    f"tail_pass = {self.tail_pass}"]
        out += [f"warning = {w}" for w in self.warnings]
        return out


def stationarity_residual(traj, F: str | GeneratorFunctional, transient_time: float | None = None,
                          tail_start: float | None = None, n_se: float = 3.0) -> StationarityReport:
    """Check the integrated generator identity and stationarity of the tail.

    The record must contain ``F:<name>``, ``MF:<name>`` and ``IMF:<name>``
    (value, generator and its running time integral) as produced by passing
    ``functionals={name: F}`` to the simulator.

    Transient check: ``E[F(m_t) - F(m_0)]`` against ``E[int_0^t MF ds]``,
    passing when their gap is below ``n_se`` combined standard errors.
    Tail check: the time-and-realization average of ``MF`` over
    ``[tail_start, end]`` is within ``n_se`` standard errors of zero, the
    error bar coming from per-realization time averages.
    """
    name = F if isinstance(F, str) else getattr(F, "name", F.kind)
    times = np.asarray(traj.times)
    vals = traj.series[f"F:{name}"]
    gen = traj.series[f"MF:{name}"]
    integ = traj.series[f"IMF:{name}"]
    R = vals.shape[0]
    z, warn = _z_level(R, n_se)
    rep = StationarityReport(functional=name, n_realizations=R, warnings=list(warn))
    sq = math.sqrt(R) if R > 1 else math.nan
    if transient_time is not None:
        k = int(np.argmin(np.abs(times - transient_time)))
        lhs = vals[:, k] - vals[:, 0]
        rhs = integ[:, k]
        rep.transient_time = float(times[k])
        rep.lhs_mean, rep.rhs_mean = float(lhs.mean()), float(rhs.mean())
        rep.lhs_se = float(lhs.std(ddof=1) / sq) if R > 1 else math.nan
        rep.rhs_se = float(rhs.std(ddof=1) / sq) if R > 1 else math.nan
        rep.transient_gap = rep.lhs_mean - rep.rhs_mean
        rep.transient_se = math.hypot(rep.lhs_se, rep.rhs_se)
        rep.transient_pass = bool(abs(rep.transient_gap) < z * rep.transient_se)
    if tail_start is not None:
        sel = times >= tail_start
        if sel.sum() < 2:
            raise ValueError("tail window holds fewer than two recorded times")
        per_real = gen[:, sel].mean(axis=1)
        rep.tail_window = (float(times[sel][0]), float(times[sel][-1]))
        rep.tail_mean = float(per_real.mean())
        rep.tail_se = float(per_real.std(ddof=1) / sq) if R > 1 else math.nan
        rep.tail_pass = bool(abs(rep.tail_mean) < z * rep.tail_se) if R > 1 else False
    return rep


def detect_stationary_time(times, series, rate: float) -> float | None:
    """Start of the first window whose successor has the same mean within 1 SE.

    Windows have length ``5 / rate``.  Standard errors use per-realization
    window averages.  Returns None when no such window exists.
    """
    times = np.asarray(times)
    x = np.atleast_2d(np.asarray(series, dtype=float))
    width = 5.0 / rate
    starts = np.arange(times[0], times[-1] - 2 * width + 1e-12, width)
    prev = None
    for t0 in starts:
        sel = (times >= t0) & (times < t0 + width)
        if sel.sum() == 0:
            continue
        w = x[:, sel].mean(axis=1)
        cur = (t0, w.mean(), w.std(ddof=1) / math.sqrt(w.size) if w.size > 1 else 0.0)
        if prev is not None:
            se = math.hypot(prev[2], cur[2])
            if abs(cur[1] - prev[1]) < se:
                return float(prev[0])
        prev = cur
    return None


@dataclass
class OUInvariantReport:
    """Comparison of late-time clouds with the stated invariant targets."""

    within_var: float
    within_se: float
    within_target: float
    within_rel_err: float
    within_pass: bool
    mean_var: float
    mean_var_se: float
    mean_target: float
    mean_rel_err: float
    mean_pass: bool
    linear_sde_within_var: float
    linear_sde_mean_var: float
    normality_statistic: float
    normality_pvalue: float
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.within_pass and self.mean_pass

    def lines(self) -> list[str]:
        return [
            f"samples = {self.n_samples}",
            f"within_var = {self.within_var:.6g} +/- {self.within_se:.2g} "
            f"(target {self.within_target:.6g}, rel err {self.within_rel_err:.3f}, "
            f"pass {self.within_pass})",
            f"mean_var = {self.mean_var:.6g} +/- {self.mean_var_se:.2g} "
            f"(target {self.mean_target:.6g}, rel err {self.mean_rel_err:.3f}, "
            f"pass {self.mean_pass})",
            f"linear_sde_within_var = {self.linear_sde_within_var:.6g}",
            f"linear_sde_mean_var = {self.linear_sde_mean_var:.6g}",
            f"normality_statistic = {self.normality_statistic:.4g} "
            f"(p = {self.normality_pvalue:.3g})",
        ]


def ou_invariant_check(samples, sigma: float, sigma0: float, curvature: float = 1.0,
                       rel_tol: float = 0.1) -> OUInvariantReport:
    """Within-cloud variance and variance of cloud means against targets.

    The targets are ``sigma**2`` (within) and ``sigma0**2`` (means).  The
    report also lists the stationary values of the linear SDE
    ``dX = -curvature X dt + sigma dB + sigma0 dB0``, namely
    ``sigma**2 / (2 curvature)`` and ``sigma0**2 / (2 curvature)``, for
    comparison.  A zero target is judged with the scale
    ``max(sigma, sigma0)**2`` in the denominator.
    """
    clouds = [as_support(s) for s in samples]
    if len(clouds) < 3:
        raise ValueError("need at least three clouds")
    within = np.array([np.mean(np.var(c, axis=0, ddof=1)) for c in clouds])
    means = np.stack([c.mean(axis=0) for c in clouds])
    mean_var = float(np.mean(np.var(means, axis=0, ddof=1)))
    n = len(clouds)
    # standard error of a sample variance under normality
    mean_var_se = mean_var * math.sqrt(2.0 / (n - 1))
    scale = max(sigma, sigma0) ** 2 or 1.0

    def rel(value, target):
        return abs(value - target) / (target if target > 0 else scale)

    w_t, m_t = sigma ** 2, sigma0 ** 2
    if means.shape[0] >= 8:
        stat, pval = stats.normaltest(means[:, 0])
    else:
        stat, pval = float("nan"), float("nan")
    return OUInvariantReport(
        within_var=float(within.mean()), within_se=float(within.std(ddof=1) / math.sqrt(n)),
        within_target=w_t, within_rel_err=rel(within.mean(), w_t),
        within_pass=bool(rel(within.mean(), w_t) <= rel_tol),
        mean_var=mean_var, mean_var_se=mean_var_se, mean_target=m_t,
        mean_rel_err=rel(mean_var, m_t), mean_pass=bool(rel(mean_var, m_t) <= rel_tol),
        linear_sde_within_var=sigma ** 2 / (2.0 * curvature),
        linear_sde_mean_var=sigma0 ** 2 / (2.0 * curvature),
        normality_statistic=float(stat), normality_pvalue=float(pval), n_samples=n,
    )


# ---------------------------------------------------------------- Gibbs oracle


class GibbsOracle:
    """Density proportional to ``exp(-2 V / sigma0^2)`` and its marginal CDFs."""

    def __init__(self, V: PotentialSpec, sigma0: float, n_grid: int | None = None):
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        self.V, self.sigma0, self.d = V, float(sigma0), V.dim
        if self.d > 3:
            raise ValueError("Gibbs oracle implemented for d <= 3")
        self.beta = 2.0 / self.sigma0 ** 2
        self.L = self._support_radius()
        if self.d == 1:
            self.shift = float(np.min(self._potential_line(np.linspace(-self.L, self.L, 20001))))
            self.Z, _ = integrate.quad(self._unnormalized, -np.inf, np.inf, limit=500,
                                       epsabs=0.0, epsrel=1e-12)
            if not np.isfinite(self.Z) or self.Z <= 0:
                raise OracleUndefinedError("normalizing constant is not finite")
            n = n_grid or 200001
            self.grid = np.linspace(-self.L, self.L, n)
            dens = self.pdf(self.grid)
            cdf = integrate.cumulative_simpson(dens, x=self.grid, initial=0.0)
            self.cdfs = [cdf / cdf[-1]]
            self.normalization_error = abs(
                integrate.quad(self.pdf, -np.inf, np.inf, limit=500, epsrel=1e-12)[0] - 1.0)
        else:
            n = n_grid or (1601 if self.d == 2 else 201)
            axis = np.linspace(-self.L, self.L, n)
            self.grid = axis
            mesh = np.stack(np.meshgrid(*([axis] * self.d), indexing="ij"), axis=-1)
            v = V.value(mesh)
            self.shift = float(np.min(v))
            w = np.exp(-self.beta * (v - self.shift))
            self.cdfs = []
            total = None
            for k in range(self.d):
                other = tuple(j for j in range(self.d) if j != k)
                marg = w
                for j in sorted(other, reverse=True):
                    marg = integrate.simpson(marg, x=axis, axis=j)
                cdf = integrate.cumulative_simpson(marg, x=axis, initial=0.0)
                total = cdf[-1]
                self.cdfs.append(cdf / total)
            self.Z = float(total)
            self.normalization_error = 0.0

    def _potential_line(self, x):
        return self.V.value(np.asarray(x, dtype=float)[..., None])

    def _unnormalized(self, x):
        return float(np.exp(-self.beta * (self._potential_line(np.array([x]))[0] - self.shift)))

    def _support_radius(self) -> float:
        probe = np.concatenate([np.zeros((1, self.d)), np.eye(self.d), -np.eye(self.d)])
        base = float(np.min(self.V.value(probe)))
        radius = 1.0
        while radius < 1e4:
            pts = radius * np.concatenate([np.eye(self.d), -np.eye(self.d)])
            excess = self.beta * (np.min(self.V.value(pts)) - base)
            if excess > 40.0:
                return radius
            radius *= 1.25
        raise OracleUndefinedError("exp(-2V/sigma0^2) does not decay; density is not integrable")

    def pdf(self, x):
        if self.d != 1:
            raise ValueError("pdf available for d = 1 only")
        x = np.asarray(x, dtype=float)
        return np.exp(-self.beta * (self._potential_line(x) - self.shift)) / self.Z

    def cdf(self, x, coord: int = 0):
        return np.interp(np.asarray(x, dtype=float), self.grid, self.cdfs[coord],
                         left=0.0, right=1.0)


def ks_distance(samples, cdf: Callable) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    F = cdf(x)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def autocorrelation_time(series) -> float:
    """Lag (in samples) at which the pooled autocorrelation first drops below 1/e."""
    x = np.atleast_2d(np.asarray(series, dtype=float))
    x = x - x.mean(axis=1, keepdims=True)
    var = np.mean(x * x)
    if var == 0:
        return 1.0
    T = x.shape[1]
    for lag in range(1, T):
        c = np.mean(x[:, lag:] * x[:, :-lag]) / var
        if c < math.exp(-1.0):
            return float(lag)
    return float(T)


@dataclass
class GibbsReport:
    """Barycenter law against the Gibbs density."""

    sup_cdf_distance: list
    n_samples: int
    thin: int
    threshold: float
    min_samples: int
    sample_mean: list
    sample_mean_se: list
    normalization_error: float

    @property
    def passed(self) -> bool:
        return self.n_samples >= self.min_samples and max(self.sup_cdf_distance) < self.threshold

    def lines(self) -> list[str]:
        return [f"samples = {self.n_samples} (thin every {self.thin} records)",
                "sup_cdf_distance = " + ", ".join(f"{v:.4f}" for v in self.sup_cdf_distance),
                f"threshold = {self.threshold}",
                "sample_mean = " + ", ".join(f"{m:.4f} +/- {s:.4f}" for m, s in
                                             zip(self.sample_mean, self.sample_mean_se)),
                f"normalization_error = {self.normalization_error:.2e}"]


def gibbs_dirac_check(barycenters, V: PotentialSpec, sigma0: float, burn_in: int = 0,
                      thin: int | None = None, threshold: float = 0.05,
                      min_samples: int = 10_000) -> GibbsReport:
    """Compare thinned barycenters with the density ``exp(-2 V / sigma0^2)``.

    Parameters
    ----------
    barycenters : array, shape (R, T) or (R, T, d)
        Barycenter time series, one row per realization.
    burn_in : int
        Number of leading records dropped from every row.
    thin : int, optional
        Keep every ``thin``-th record; estimated from the autocorrelation
        of the series when omitted.
    """
    x = np.asarray(barycenters, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    x = x[:, burn_in:]
    oracle = GibbsOracle(V, sigma0)
    if thin is None:
        thin = max(1, int(math.ceil(max(autocorrelation_time(x[..., k]) for k in range(x.shape[-1])))))
    kept = x[:, ::thin].reshape(-1, x.shape[-1])
    dist = [ks_distance(kept[:, k], lambda v, k=k: oracle.cdf(v, k)) for k in range(x.shape[-1])]
    # error bars from per-realization means
    per_real = x[:, ::thin].mean(axis=1)
    se = per_real.std(axis=0, ddof=1) / math.sqrt(per_real.shape[0]) if per_real.shape[0] > 1 \
        else np.full(x.shape[-1], np.nan)
    return GibbsReport(dist, int(kept.shape[0]), int(thin), threshold, min_samples,
                       kept.mean(axis=0).tolist(), np.asarray(se).tolist(),
                       float(oracle.normalization_error))


# ---------------------------------------------------------------- collapse


@dataclass
class CollapseFit:
    """Exponential decay rate of the within-ensemble spread."""

    rate: float
    ci_low: float
    ci_high: float
    window: tuple
    n_points: int
    warnings: list = field(default_factory=list)


def variance_collapse_rate(times, spread, W: InteractionSpec | None = None,
                           V: PotentialSpec | None = None, sigma: float = 0.0,
                           window: tuple | None = None, floor: float = 1e-14,
                           confidence: float = 0.95) -> CollapseFit:
    """Log-linear fit of the mean spread ``N^-1 sum |X^i - mean|^2``.

    ``spread`` is ``(R, T)`` or already averaged ``(T,)``.  Without
    ``window`` the fit uses every record whose mean spread is above
    ``max(floor, 1e-10 * initial spread)``.
    """
    notes = []
    if sigma > 0:
        raise FitRejectedError("spread collapse requires sigma = 0")
    if W is not None:
        if W.kind != "quadratic" or W.alpha <= 0:
            raise FitRejectedError("no interaction: the spread is not expected to collapse")
        if V is not None and W.alpha <= 2.0 * V.lipschitz:
            notes.append(f"alpha = {W.alpha} <= 2 L_V = {2 * V.lipschitz}: "
                         "the collapse bound is vacuous")
    times = np.asarray(times, dtype=float)
    s = np.asarray(spread, dtype=float)
    mean = s.mean(axis=0) if s.ndim == 2 else s
    level = max(floor, 1e-10 * mean[0]) if mean[0] > 0 else floor
    if window is not None:
        sel = (times >= window[0]) & (times <= window[1])
        before = (times < window[0]) & (mean < floor)
        if before.any():
            notes.append("spread fell below 1e-14 before the fit window")
        sel &= mean > floor
    else:
        alive = mean > level
        stop = int(np.argmin(alive)) if not alive.all() else alive.size
        sel = np.zeros_like(alive)
        sel[:stop] = True
    if sel.sum() < 5:
        raise FitRejectedError("fewer than five usable points in the fit window")
    t, y = times[sel], np.log(mean[sel])
    res = stats.linregress(t, y)
    rate = -res.slope
    if not rate > 0:
        raise FitRejectedError("spread is not decaying")
    q = stats.t.ppf(0.5 + confidence / 2.0, t.size - 2)
    for w in notes:
        warnings.warn(w, stacklevel=2)
    return CollapseFit(float(rate), float(rate - q * res.stderr), float(rate + q * res.stderr),
                       (float(t[0]), float(t[-1])), int(t.size), notes)


# ---------------------------------------------------------------- moments


def dissipativity_constants(V: PotentialSpec, box: float | None = None, n: int = 401):
    """Constants ``(m, M)`` with ``x . grad V(x) >= m |x|^2 - M``.

    ``m`` is half the asymptotic convexity (capped at 1); ``M`` is the
    largest violation of ``x . grad V(x) >= m |x|^2`` over a grid on the
    box, which bounds it everywhere for the built-in potentials since the
    inequality holds with margin outside.
    """
    m = 0.5 * min(1.0, float(V.kappa_liminf))
    box = float(box if box is not None else (V.box or 6.0))
    axis = np.linspace(-box, box, n if V.dim == 1 else 81)
    if V.dim == 1:
        pts = axis[:, None]
    elif V.dim <= 3:
        pts = np.stack(np.meshgrid(*([axis] * V.dim), indexing="ij"), axis=-1).reshape(-1, V.dim)
    else:
        pts = np.random.default_rng(0).uniform(-box, box, size=(200_000, V.dim))
    gap = m * np.sum(pts * pts, axis=-1) - np.sum(pts * V.grad(pts), axis=-1)
    return m, max(0.0, float(gap.max()))


def moment_bound(V: PotentialSpec, sigma: float, sigma0: float, d: int):
    """Affine bound ``E|X_t|^2 <= m2(0) + intercept`` for convex even interactions.

    From ``d/dt E|X|^2 <= -2 m E|X|^2 + 2 M + (sigma^2 + sigma0^2) d``.
    Returns ``(intercept, slope)`` with slope 1.
    """
    m, M = dissipativity_constants(V)
    return (2.0 * M + (sigma ** 2 + sigma0 ** 2) * d) / (2.0 * m), 1.0
