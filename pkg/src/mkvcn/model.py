"""Confinement and interaction potentials.

A potential is a bundle of pure functions (value, gradient, convexity
profile) together with the scalar constants consumed by the metric
construction and the rate formulas.  Positions are arrays whose last axis is
the spatial dimension, so every function broadcasts over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as npoly

DEFAULT_BOX = 6.0

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PotentialSpec:
    """Confinement potential V and its convexity data.

    Attributes
    ----------
    kind : str
        One of ``quadratic``, ``double_well_1d``, ``radial_double_well``,
        ``custom_polynomial``.
    dim : int
        Spatial dimension the potential acts on.
    value : callable
        ``V(x)`` for ``x`` of shape ``(..., dim)``; returns shape ``(...)``.
    grad : callable
        ``grad V(x)`` with the same shape as ``x``.
    kappa : callable
        Monotonicity profile ``r -> kappa(r)`` such that
        ``(grad V(x) - grad V(y)).(x - y) >= kappa(|x-y|) |x-y|^2``.
    kappa_liminf : float
        ``liminf kappa(r)`` as ``r -> inf``; ``np.inf`` for superquadratic
        growth.
    lipschitz : float
        Lipschitz constant of ``grad V`` (on ``[-box, box]^dim`` when a box
        is set).
    convexity_modulus : float or None
        Uniform convexity constant when V is uniformly convex.
    box : float or None
        Half-width of the working box on which ``lipschitz`` is valid.
    params : dict
        Constructor parameters, echoed into run manifests.
    """

    kind: str
    dim: int
    value: ArrayFn
    grad: ArrayFn
    kappa: ArrayFn
    kappa_liminf: float
    lipschitz: float
    convexity_modulus: float | None = None
    box: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.kappa_liminf > 0:
            raise ValueError(
                f"potential {self.kind!r} is not confining: liminf kappa = {self.kappa_liminf}")


@dataclass(frozen=True)
class InteractionSpec:
    """Interaction potential W, entering the drift through ``grad W * m``.

    Attributes
    ----------
    kind : str
        ``none``, ``quadratic`` or ``custom_even``.
    grad : callable
        Odd map ``grad W`` on arrays of shape ``(..., d)``.
    lipschitz : float
        Lipschitz constant ``L_W`` of ``grad W``.
    convex : bool
        Whether W is convex.
    alpha : float
        Strength for the quadratic kind, ``W(x) = alpha |x|^2 / 2``.
    """

    kind: str
    grad: ArrayFn
    lipschitz: float
    convex: bool
    alpha: float = 0.0
    params: dict = field(default_factory=dict)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


def _constant_profile(value: float) -> ArrayFn:
    def kappa(r):
        r = np.asarray(r, dtype=float)
        return np.full(r.shape, float(value))

    return kappa


def quadratic(center, curvature: float = 1.0) -> PotentialSpec:
    """Quadratic confinement ``V(x) = curvature |x - center|^2 / 2``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    curvature = float(curvature)
    if curvature <= 0:
        raise ValueError("quadratic curvature must be positive")

    def value(x):
        x = _as_points(x)
        return 0.5 * curvature * np.sum((x - center) ** 2, axis=-1)

    def grad(x):
        return curvature * (_as_points(x) - center)

    return PotentialSpec(
        kind="quadratic",
        dim=center.size,
        value=value,
        grad=grad,
        kappa=_constant_profile(curvature),
        kappa_liminf=curvature,
        lipschitz=curvature,
        convexity_modulus=curvature,
        box=None,
        params={"center": center.tolist(), "curvature": curvature},
    )


def _double_well_kappa(r):
    r = np.asarray(r, dtype=float)
    return r * r / 4.0 - 1.0


def builtin_double_well_1d(box: float = DEFAULT_BOX) -> PotentialSpec:
    """Symmetric double well ``V(x) = x^4/4 - x^2/2`` on the line.

    The convexity profile is ``kappa(r) = r^2/4 - 1``, attained at
    ``x = -y``.  The gradient is only locally Lipschitz, so ``lipschitz``
    refers to the box ``[-box, box]``: ``3 box^2 - 1``.
    """
    box = float(box)

    def value(x):
        x = _as_points(x)
        return np.sum(x ** 4 / 4.0 - x ** 2 / 2.0, axis=-1)

    def grad(x):
        x = _as_points(x)
        return x ** 3 - x

    return PotentialSpec(
        kind="double_well_1d",
        dim=1,
        value=value,
        grad=grad,
        kappa=_double_well_kappa,
        kappa_liminf=np.inf,
        lipschitz=3.0 * box ** 2 - 1.0,
        convexity_modulus=None,
        box=box,
        params={"box": box},
    )


def radial_double_well(d: int, box: float = DEFAULT_BOX) -> PotentialSpec:
    """Radial double well ``V(x) = |x|^4/4 - |x|^2/2`` in dimension ``d``.

    The Jacobian of the gradient is ``(|x|^2 - 1) Id + 2 x x^T`` whose
    largest eigenvalue on ``[-box, box]^d`` is ``3 d box^2 - 1``.  The
    quartic part satisfies ``(|x|^2 x - |y|^2 y).(x - y) >= |x - y|^4 / 4``
    so the profile matches the one-dimensional one.
    """
    d = int(d)
    if d < 1:
        raise ValueError("dimension must be at least 1")
    box = float(box)

    def value(x):
        sq = np.sum(_as_points(x) ** 2, axis=-1)
        return sq * sq / 4.0 - sq / 2.0

    def grad(x):
        x = _as_points(x)
        sq = np.sum(x * x, axis=-1, keepdims=True)
        return (sq - 1.0) * x

    return PotentialSpec(
        kind="radial_double_well",
        dim=d,
        value=value,
        grad=grad,
        kappa=_double_well_kappa,
        kappa_liminf=np.inf,
        lipschitz=3.0 * d * box ** 2 - 1.0,
        convexity_modulus=None,
        box=box,
        params={"d": d, "box": box},
    )


def custom_polynomial(coefficients, box: float = DEFAULT_BOX,
                      r_max: float | None = None, n_r: int = 400) -> PotentialSpec:
    """Separable polynomial potential ``V(x) = sum_k p_k(x_k)``.

    Parameters
    ----------
    coefficients : sequence of sequences
        ``coefficients[k][j]`` multiplies ``x_k**j``.
    box : float
        Working box for the Lipschitz constant and the numerical profile.
    r_max, n_r : float, int
        Range and resolution of the tabulated convexity profile.  Beyond the
        table the last value is held.
    """
    coeffs = [np.asarray(c, dtype=float) for c in coefficients]
    if not coeffs or any(c.ndim != 1 or c.size == 0 for c in coeffs):
        raise ValueError("coefficients must be a non-empty list of 1-D arrays")
    d = len(coeffs)
    box = float(box)
    first = [npoly.polyder(c) for c in coeffs]
    second = [npoly.polyder(c, 2) for c in coeffs]

    def value(x):
        x = _as_points(x)
        return sum(npoly.polyval(x[..., k], coeffs[k]) for k in range(d))

    def grad(x):
        x = _as_points(x)
        return np.stack([npoly.polyval(x[..., k], first[k]) for k in range(d)], axis=-1)

    grid = np.linspace(-box, box, 4001)
    lipschitz = max(float(np.max(np.abs(npoly.polyval(grid, s)))) for s in second)

    leading = []
    for c in coeffs:
        trimmed = np.trim_zeros(c, "b")
        deg = trimmed.size - 1
        leading.append((deg, trimmed[-1] if deg >= 0 else 0.0))
    if any(deg < 2 or lead <= 0 or deg % 2 for deg, lead in leading):
        raise ValueError("each coordinate polynomial must have even degree >= 2 "
                         "and positive leading coefficient")

    r_max = float(r_max) if r_max is not None else 2.0 * box * np.sqrt(d)
    r_tab = np.linspace(r_max / n_r, r_max, n_r)
    probe = PotentialSpec(kind="custom_polynomial", dim=d, value=value, grad=grad,
                          kappa=_constant_profile(0.0), kappa_liminf=1.0,
                          lipschitz=lipschitz, box=box)
    k_tab = np.asarray(kappa_from_grad(probe, r_tab))
    k0 = min(np.min([npoly.polyval(grid, s).min() for s in second]), k_tab[0])
    r_tab = np.concatenate([[0.0], r_tab])
    k_tab = np.concatenate([[k0], k_tab])

    def kappa(r):
        return np.interp(np.asarray(r, dtype=float), r_tab, k_tab)

    liminf = float(k_tab[-1])
    if all(deg == 2 for deg, _ in leading):
        liminf = float(min(2.0 * lead for _, lead in leading))

    return PotentialSpec(
        kind="custom_polynomial",
        dim=d,
        value=value,
        grad=grad,
        kappa=kappa,
        kappa_liminf=liminf,
        lipschitz=lipschitz,
        convexity_modulus=liminf if k0 > 0 and all(deg == 2 for deg, _ in leading) else None,
        box=box,
        params={"coefficients": [c.tolist() for c in coeffs], "box": box},
    )


def _directions(d: int, n_random: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.ones((1, 1))
    dirs = [np.eye(d)]
    diag = np.ones((1, d)) / np.sqrt(d)
    dirs.append(diag)
    if d >= 2:
        anti = np.ones((1, d))
        anti[0, 1::2] = -1.0
        dirs.append(anti / np.sqrt(d))
    g = rng.standard_normal((n_random, d))
    dirs.append(g / np.linalg.norm(g, axis=1, keepdims=True))
    return np.concatenate(dirs, axis=0)


def _centers(d: int, box: float, n_per_axis: int, n_random: int,
             rng: np.random.Generator) -> np.ndarray:
    axis = np.linspace(-box, box, n_per_axis)
    if d == 1:
        return np.concatenate([axis, [0.0]])[:, None]
    if d <= 3:
        mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    else:
        mesh = np.zeros((1, d))
    extra = rng.uniform(-box, box, size=(n_random, d))
    return np.concatenate([mesh, np.zeros((1, d)), extra], axis=0)


def kappa_from_grad(spec: PotentialSpec, r_grid, box: float | None = None,
                    seed: int = 0) -> list[float]:
    """Numerical convexity profile from the gradient oracle.

    For each ``r`` the ratio ``(grad(x) - grad(y)).(x - y) / r^2`` is
    minimised over pairs ``x = c + r u / 2``, ``y = c - r u / 2`` with centres
    ``c`` on a grid over the working box (always including the origin) and
    unit directions ``u`` made of coordinate axes, diagonals and random
    draws.

    Parameters
    ----------
    spec : PotentialSpec
    r_grid : sequence of float
        Strictly increasing positive distances.
    box : float, optional
        Half-width of the sampling region; defaults to ``spec.box`` or 6.
    seed : int
        Seed for the random centres and directions.

    Returns
    -------
    list of float
    """
    r_grid = np.asarray(r_grid, dtype=float).ravel()
    if r_grid.size == 0:
        raise ValueError("r_grid is empty")
    if np.any(r_grid <= 0) or np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be strictly increasing and positive")
    box = float(box if box is not None else (spec.box or DEFAULT_BOX))
    d = spec.dim
    rng = np.random.default_rng(seed)
    dirs = _directions(d, 64 if d > 1 else 0, rng)
    n_axis = 1601 if d == 1 else (41 if d == 2 else 15)
    centers = _centers(d, box, n_axis, 0 if d == 1 else 2000, rng)
    out = []
    for r in r_grid:
        half = 0.5 * r * dirs
        x = centers[:, None, :] + half[None, :, :]
        y = centers[:, None, :] - half[None, :, :]
        num = np.sum((spec.grad(x) - spec.grad(y)) * (x - y), axis=-1)
        out.append(float(np.min(num) / (r * r)))
    return out


def no_interaction() -> InteractionSpec:
    """Absent interaction, ``grad W = 0``."""

    def grad(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return InteractionSpec(kind="none", grad=grad, lipschitz=0.0, convex=True,
                           alpha=0.0, params={})


def quadratic_interaction(alpha: float) -> InteractionSpec:
    """Quadratic attraction ``W(x) = alpha |x|^2 / 2``, ``grad W(x) = alpha x``."""
    alpha = float(alpha)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")

    def grad(x):
        return alpha * np.asarray(x, dtype=float)

    return InteractionSpec(kind="quadratic", grad=grad, lipschitz=alpha, convex=True,
                           alpha=alpha, params={"alpha": alpha})


def custom_even(grad: ArrayFn, lipschitz: float, convex: bool = False) -> InteractionSpec:
    """User supplied even interaction given through its (odd) gradient."""
    zero = np.asarray(grad(np.zeros((1, 1))), dtype=float)
    if np.any(zero != 0):
        raise ValueError("interaction gradient must vanish at the origin")
    return InteractionSpec(kind="custom_even", grad=grad, lipschitz=float(lipschitz),
                           convex=bool(convex), alpha=0.0, params={"lipschitz": float(lipschitz)})


def potential_from_config(cfg: dict, d: int | None = None) -> PotentialSpec:
    """Build a potential from its ``kind`` plus parameters."""
    kind = cfg.get("kind")
    if kind == "quadratic":
        center = cfg.get("center")
        if center is None:
            center = [0.0] * (d or 1)
        return quadratic(center, cfg.get("curvature", 1.0))
    if kind == "double_well_1d":
        return builtin_double_well_1d(cfg.get("box", DEFAULT_BOX))
    if kind == "radial_double_well":
        return radial_double_well(cfg.get("d", d or 1), cfg.get("box", DEFAULT_BOX))
    if kind == "custom_polynomial":
        return custom_polynomial(cfg["coefficients"], cfg.get("box", DEFAULT_BOX))
    raise ValueError(f"unknown potential kind {kind!r}")


def interaction_from_config(cfg: dict | None) -> InteractionSpec:
    """Build an interaction from its ``kind`` plus parameters."""
    if cfg is None:
        return no_interaction()
    kind = cfg.get("kind", "none")
    if kind == "none":
        return no_interaction()
    if kind == "quadratic":
        return quadratic_interaction(cfg.get("alpha", 0.0))
    raise ValueError(f"interaction kind {kind!r} cannot be built from a config; "
                     "use model.custom_even from Python")
