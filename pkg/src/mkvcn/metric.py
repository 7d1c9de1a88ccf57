"""Distorted concave distance built from a convexity profile.

Given the profile ``kappa`` of a confinement potential and a diffusion
constant ``diff`` the construction is

* ``R0`` the last zero of ``kappa`` (beyond it ``kappa >= 0``),
* ``R1`` the smallest ``s >= R0`` with ``s (s - R0) kappa(r) >= 4 diff`` for
  every ``r >= s``,
* ``phi(r) = exp(-(1 / (2 diff)) int_0^r s kappa_-(s) ds)``,
  ``Phi = int phi``,
* ``ell = 1 / int_0^R1 Phi / phi``,
  ``g(r) = 1 - (ell / 2) int_0^{min(r, R1)} Phi / phi``,
* ``f(r) = int_0^r phi g``.

Everything is tabulated once with the composite trapezoid rule on a grid
that has ``R0`` and ``R1`` as nodes, and refined by halving the step until
``ell`` and ``phi(R0)`` stop moving.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .model import InteractionSpec, PotentialSpec


class NotConfiningError(ValueError):
    """The convexity profile stays negative on the whole search range."""


class IncreaseRMaxError(ValueError):
    """``R1`` lies beyond the requested table range."""


class NoThresholdError(ValueError):
    """``c(sigma0)`` does not change sign on the search interval."""


_SEARCH_STEP = 1e-3
_SEARCH_CAP = 1e4


@dataclass(frozen=True)
class DistortedMetric:
    """Tabulated concave distance and the constants derived from it.

    Attributes
    ----------
    R0, R1, ell, phi_R0 : float
        Constants of the construction.
    diff : float
        Diffusion constant in the exponent of ``phi`` and in the ``R1``
        threshold.
    sigma0 : float
        Common-noise intensity the metric was built for.
    rate_c : float
        ``ell sigma0^2 - 4 L_W / phi(R0)`` for the interaction passed to
        :func:`build_metric` (``L_W = 0`` when none was given).
    r, f, fprime, phi, Phi, g : ndarray
        Table on ``[0, r_max]``.
    step : float
        Final quadrature step inside each segment.
    """

    R0: float
    R1: float
    ell: float
    phi_R0: float
    diff: float
    sigma0: float
    rate_c: float
    r_max: float
    step: float
    quad_step: float
    r: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    fprime: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    Phi: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    kappa: object = field(repr=False, default=None)

    @property
    def tail_slope(self) -> float:
        return float(self.fprime[-1])

    def __call__(self, r):
        return eval_f(self, r)


def _scan_profile(kappa, r_hi: float) -> tuple[np.ndarray, np.ndarray]:
    n = int(math.ceil(r_hi / _SEARCH_STEP))
    grid = np.linspace(0.0, r_hi, n + 1)
    return grid, np.asarray(kappa(grid), dtype=float)


def _bisect(fun, lo: float, hi: float, tol: float = 1e-14) -> float:
    """Smallest point in ``[lo, hi]`` where the nondecreasing test turns true."""
    for _ in range(200):
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if fun(mid):
            hi = mid
        else:
            lo = mid
    return hi


def find_R0(kappa, r_hi: float = 16.0) -> float:
    """Last zero crossing of ``kappa``; 0 when ``kappa >= 0`` everywhere."""
    while True:
        grid, vals = _scan_profile(kappa, r_hi)
        neg = np.nonzero(vals < 0)[0]
        if neg.size == 0:
            return 0.0
        last = neg[-1]
        if last < grid.size - 1 and np.all(vals[-max(1, grid.size // 4):] > 0):
            lo, hi = grid[last], grid[last + 1]
            return _bisect(lambda s: float(kappa(np.array([s]))[0]) >= 0, lo, hi)
        r_hi *= 2.0
        if r_hi > _SEARCH_CAP:
            raise NotConfiningError("kappa stays negative up to r = %g" % _SEARCH_CAP)


def find_R1(kappa, R0: float, diff: float, r_hi: float = 16.0) -> float:
    """Smallest ``s >= R0`` with ``s (s - R0) inf_{r >= s} kappa(r) >= 4 diff``."""
    while True:
        grid, vals = _scan_profile(kappa, r_hi)
        suffix_min = np.minimum.accumulate(vals[::-1])[::-1]

        def holds(s: float) -> bool:
            j = min(int(np.searchsorted(grid, s, side="right")), grid.size - 1)
            k = min(float(kappa(np.array([s]))[0]), float(suffix_min[j]))
            return s * (s - R0) * k >= 4.0 * diff

        start = int(np.searchsorted(grid, R0, side="right"))
        ok = grid[start:] * (grid[start:] - R0) * suffix_min[start:] >= 4.0 * diff
        hit = start + int(np.argmax(ok)) if ok.any() else None
        if hit is not None and hit < grid.size - 1:
            lo = max(R0, grid[hit - 1]) if hit > start else R0
            return _bisect(holds, lo, grid[hit])
        r_hi *= 2.0
        if r_hi > _SEARCH_CAP:
            raise NotConfiningError("R1 not found below r = %g" % _SEARCH_CAP)


def _segment_grid(breaks: list[float], step: float) -> np.ndarray:
    pieces = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        n = max(1, int(math.ceil((b - a) / step)))
        pts = np.linspace(a, b, n + 1)
        pieces.append(pts if not pieces else pts[1:])
    return np.concatenate(pieces)


def _tabulate(kappa, R0: float, R1: float, r_max: float, step: float, diff: float) -> dict:
    r = _segment_grid([0.0, R0, R1, r_max], step)
    i1 = int(np.argmin(np.abs(r - R1)))
    i0 = int(np.argmin(np.abs(r - R0)))
    k = np.asarray(kappa(r), dtype=float)
    kminus = np.maximum(-k, 0.0)
    kminus[i0:] = 0.0
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        expo = cumulative_trapezoid(r * kminus, r, initial=0.0) / (2.0 * diff)
        phi = np.exp(-expo)
        Phi = cumulative_trapezoid(phi, r, initial=0.0)
        ratio = Phi / phi
        psi = cumulative_trapezoid(ratio[: i1 + 1], r[: i1 + 1], initial=0.0)
        ell = 1.0 / psi[-1]
        g = np.empty_like(r)
        g[: i1 + 1] = 1.0 - 0.5 * ell * psi
        g[i1 + 1:] = g[i1]
        fprime = phi * g
        f = cumulative_trapezoid(fprime, r, initial=0.0)
    return dict(r=r, phi=phi, Phi=Phi, g=g, fprime=fprime, f=f, ell=float(ell),
                phi_R0=float(phi[i0]), kappa=k)


def build_metric(V: PotentialSpec, sigma0: float, quad_step: float = 1e-3,
                 diff: float | None = None, r_max: float | None = None,
                 W: InteractionSpec | None = None, rtol: float = 1e-8,
                 max_halvings: int = 14) -> DistortedMetric:
    """Construct the distorted metric for ``V`` at common-noise level ``sigma0``.

    Parameters
    ----------
    V : PotentialSpec
    sigma0 : float
        Common-noise intensity, must be positive.
    quad_step : float
        Initial trapezoid step; halved until ``ell`` and ``phi(R0)`` change
        by less than ``rtol`` relative.
    diff : float, optional
        Diffusion constant, default ``sigma0**2``.
    r_max : float, optional
        Table range, default ``4 R1``.
    W : InteractionSpec, optional
        Used only to fill ``rate_c``.

    Returns
    -------
    DistortedMetric

    Raises
    ------
    NotConfiningError
        If ``liminf kappa <= 0`` or no zero crossing is found.
    IncreaseRMaxError
        If ``R1 > r_max``.
    """
    sigma0 = float(sigma0)
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    if quad_step <= 0:
        raise ValueError("quad_step must be positive")
    if not V.kappa_liminf > 0:
        raise NotConfiningError("kappa liminf must be positive")
    diff = sigma0 ** 2 if diff is None else float(diff)
    if diff <= 0:
        raise ValueError("diff must be positive")
    kappa = V.kappa
    R0 = find_R0(kappa)
    R1 = find_R1(kappa, R0, diff)
    if r_max is None:
        r_max = 4.0 * R1
    elif R1 > r_max:
        raise IncreaseRMaxError(f"R1 = {R1:.6g} exceeds r_max = {r_max:.6g}; increase r_max")
    r_max = float(r_max)

    step = float(quad_step)
    table = _tabulate(kappa, R0, R1, r_max, step, diff)
    for _ in range(max_halvings):
        finer = _tabulate(kappa, R0, R1, r_max, step / 2.0, diff)
        d_ell = abs(finer["ell"] - table["ell"]) / abs(finer["ell"]) if finer["ell"] else 0.0
        d_phi = abs(finer["phi_R0"] - table["phi_R0"]) / finer["phi_R0"] if finer["phi_R0"] else 0.0
        step /= 2.0
        table = finer
        if d_ell < rtol and d_phi < rtol:
            break

    lw = 0.0 if W is None else W.lipschitz
    c = _rate_value(table["ell"], table["phi_R0"], lw, sigma0)
    return DistortedMetric(
        R0=float(R0), R1=float(R1), ell=table["ell"], phi_R0=table["phi_R0"], diff=diff,
        sigma0=sigma0, rate_c=c, r_max=r_max, step=step, quad_step=float(quad_step),
        r=table["r"], f=table["f"], fprime=table["fprime"], phi=table["phi"],
        Phi=table["Phi"], g=table["g"], kappa=kappa,
    )


def _rate_value(ell: float, phi_R0: float, lw: float, sigma0: float) -> float:
    if lw == 0:
        return ell * sigma0 ** 2
    with np.errstate(divide="ignore"):
        return float(ell * sigma0 ** 2 - 4.0 * lw / np.float64(phi_R0))


def rate_c(m: DistortedMetric, W: InteractionSpec, sigma0: float | None = None) -> float:
    """Contraction rate ``ell sigma0^2 - 4 L_W / phi(R0)``; may be negative."""
    sigma0 = m.sigma0 if sigma0 is None else float(sigma0)
    if not math.isclose(sigma0, m.sigma0, rel_tol=1e-12):
        raise ValueError("metric was built for a different sigma0")
    return _rate_value(m.ell, m.phi_R0, W.lipschitz, sigma0)


def eval_f(m: DistortedMetric, r):
    """Evaluate the distance profile; linear extension past the table."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("distance must be non-negative")
    out = np.interp(r_arr, m.r, m.f)
    beyond = r_arr > m.r_max
    if np.any(beyond):
        out = np.where(beyond, m.f[-1] + m.tail_slope * (r_arr - m.r_max), out)
    if np.ndim(r) == 0:
        return float(out)
    return out


@dataclass
class ContractionReport:
    """Result of the differential-inequality check.

    ``max_excess`` is the largest value of
    ``f'' - r kappa f' / (2 diff) + ell f / 2`` over the checked points.
    """

    max_excess: float
    r_at_max: float
    scale: float
    tolerance: float
    n_points: int
    passed: bool

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} max_excess={self.max_excess:.3e} at r={self.r_at_max:.4f} "
                f"tolerance={self.tolerance:.3e} points={self.n_points}")


def check_contraction_inequality(m: DistortedMetric, V: PotentialSpec | None = None,
                                 r_grid=None, rel_tol: float = 1e-6) -> ContractionReport:
    """Check ``f'' - r kappa f' / (2 diff) <= -ell f / 2`` on a refined table.

    Second derivatives are central differences of ``f'`` at cell midpoints of
    a table with step ``quad_step / 4``; since ``R0`` and ``R1`` are grid
    nodes the midpoints never sit on the two kinks.  Without ``r_grid`` every
    midpoint in ``(0, 3 R1]`` is checked; otherwise the midpoint closest to
    each requested radius.
    """
    kappa = V.kappa if V is not None else m.kappa
    step = min(m.step, m.quad_step / 4.0)
    hi = 3.0 * m.R1 if r_grid is None else float(np.max(r_grid))
    r_top = max(m.r_max, hi + step)
    tab = _tabulate(kappa, m.R0, m.R1, r_top, step, m.diff)
    r, fp, f = tab["r"], tab["fprime"], tab["f"]
    ell = tab["ell"]
    mid = 0.5 * (r[1:] + r[:-1])
    fpp = np.diff(fp) / np.diff(r)
    f_mid = 0.5 * (f[1:] + f[:-1])
    fp_mid = 0.5 * (fp[1:] + fp[:-1])
    k_mid = np.asarray(kappa(mid), dtype=float)
    excess = fpp - mid * k_mid * fp_mid / (2.0 * m.diff) + 0.5 * ell * f_mid
    if r_grid is None:
        sel = np.nonzero((mid > 0) & (mid <= hi))[0]
    else:
        rq = np.asarray(r_grid, dtype=float)
        if np.any(rq <= 0):
            raise ValueError("r_grid must lie in (0, r_max]")
        sel = np.unique(np.clip(np.searchsorted(mid, rq), 0, mid.size - 1))
    scale = float(np.max(np.abs(fpp[sel])))
    j = sel[int(np.argmax(excess[sel]))]
    tol = rel_tol * scale
    worst = float(excess[j])
    return ContractionReport(max_excess=worst, r_at_max=float(mid[j]), scale=scale,
                             tolerance=tol, n_points=int(sel.size), passed=worst <= tol)


@dataclass
class ThresholdReport:
    """Critical common-noise level and the scanned rate curve."""

    sigma0_bar: float
    boundary: bool
    interval: tuple[float, float]
    grid_sigma0: np.ndarray
    grid_c: np.ndarray

    def summary(self) -> str:
        if self.boundary:
            return "sigma0_bar = 0+ (c > 0 for every sigma0 > 0)"
        return f"sigma0_bar = {self.sigma0_bar:.5f} on [{self.interval[0]}, {self.interval[1]}]"


def sigma0_threshold(V: PotentialSpec, W: InteractionSpec, search_interval=(0.1, 10.0),
                     tol: float = 1e-4, quad_step: float = 1e-3, extra_diff: float = 0.0,
                     n_grid: int = 25) -> ThresholdReport:
    """Root of ``sigma0 -> c(V, W, sigma0)`` by bisection.

    Each evaluation rebuilds the metric at the trial ``sigma0`` with
    ``diff = sigma0**2 + extra_diff``.  The report also carries ``c`` on a
    log-spaced grid over the interval; no monotonicity is assumed.
    """
    a, b = (float(x) for x in search_interval)
    if not 0 < a < b:
        raise ValueError("search interval must satisfy 0 < a < b")

    def c_of(s: float) -> float:
        m = build_metric(V, s, quad_step=quad_step, diff=s * s + extra_diff)
        return _rate_value(m.ell, m.phi_R0, W.lipschitz, s)

    grid = np.geomspace(a, b, n_grid)
    values = np.array([c_of(s) for s in grid])
    if W.lipschitz == 0:
        return ThresholdReport(0.0, True, (a, b), grid, values)
    ca, cb = c_of(a), c_of(b)
    if not (ca <= 0 < cb):
        raise NoThresholdError(f"no sign change of c on [{a}, {b}]: c(a)={ca:.4g}, c(b)={cb:.4g}")
    lo, hi = a, b
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if c_of(mid) > 0:
            hi = mid
        else:
            lo = mid
    return ThresholdReport(0.5 * (lo + hi), False, (a, b), grid, values)


def dump_csv(m: DistortedMetric, W: InteractionSpec | None = None, max_rows: int = 4000) -> str:
    """CSV text of ``(r, f, fprime, phi, g)`` preceded by a ``#`` header block."""
    c = m.rate_c if W is None else rate_c(m, W)
    stride = max(1, int(math.ceil(m.r.size / max_rows)))
    idx = np.arange(0, m.r.size, stride)
    if idx[-1] != m.r.size - 1:
        idx = np.append(idx, m.r.size - 1)
    buf = io.StringIO()
    buf.write(f"# R0={m.R0!r}\n# R1={m.R1!r}\n# ell={m.ell!r}\n# phi_R0={m.phi_R0!r}\n")
    buf.write(f"# c={c!r}\n# sigma0={m.sigma0!r}\n# diff={m.diff!r}\n")
    buf.write("r,f,fprime,phi,g\n")
    for i in idx:
        buf.write(f"{m.r[i]!r},{m.f[i]!r},{m.fprime[i]!r},{m.phi[i]!r},{m.g[i]!r}\n")
    return buf.getvalue()
