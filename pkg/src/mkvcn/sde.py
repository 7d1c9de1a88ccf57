"""Euler-Maruyama integration of single and coupled particle ensembles.

Each realization owns a set of noise channels.  Channel increments for step
``s`` are read from a Philox stream whose key is derived from
``(seed, realization, channel)`` and whose counter is the block index
``s // BLOCK_STEPS``.  Increments are therefore a pure function of
``(seed, realization, channel, step, particle)``; batching realizations or
spreading them over worker processes never changes a single bit.

Internally all realizations of a chunk are advanced together on arrays of
shape ``(R, N, d)``.
"""
from __future__ import annotations

import math
import multiprocessing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import ot
from .metric import DistortedMetric, eval_f
from .model import InteractionSpec, PotentialSpec

BLOCK_STEPS = 32
BLOWUP_LIMIT = 1e3
PAIRING_CAP = 4096

CHANNELS = {
    "idiosyncratic": 0,
    "common": 1,
    "auxiliary-common": 2,
    "idiosyncratic-b": 3,
    "common-b": 4,
    "idiosyncratic-aux": 5,
    "initial": 6,
    "center": 7,
}


class BlowUpError(RuntimeError):
    """A coordinate left ``[-1e3, 1e3]`` or became non-finite.

    The partially filled record is attached as ``partial``.
    """

    def __init__(self, message: str, realization: int, particle: int, time: float,
                 ensemble: str, partial=None):
        super().__init__(message)
        self.realization = realization
        self.particle = particle
        self.time = time
        self.ensemble = ensemble
        self.partial = partial

    def __reduce__(self):
        return (type(self), (self.args[0], self.realization, self.particle, self.time,
                             self.ensemble, self.partial))


# ---------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoisePlan:
    """Time step, noise intensities and the seed of all random streams."""

    seed: int
    dt: float
    sigma: float
    sigma0: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sigma < 0 or self.sigma0 < 0:
            raise ValueError("noise intensities must be non-negative")

    def key(self, realization: int, channel: str, tag: int = 0) -> np.ndarray:
        ss = np.random.SeedSequence([int(self.seed) & (2 ** 64 - 1), int(realization),
                                     CHANNELS[channel], int(tag)])
        return ss.generate_state(2, dtype=np.uint64)

    def generator(self, realization: int, channel: str, tag: int = 0,
                  block: int = 0) -> np.random.Generator:
        counter = np.array([0, 0, 0, block], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self.key(realization, channel, tag),
                                                    counter=counter))

    def increments(self, realization: int, channel: str, step: int, shape,
                   tag: int = 0) -> np.ndarray:
        """Brownian increments of one channel at one step (scaled by sqrt(dt))."""
        block, offset = divmod(int(step), BLOCK_STEPS)
        draw = self.generator(realization, channel, tag, block).standard_normal(
            (BLOCK_STEPS,) + tuple(shape))
        return draw[offset] * math.sqrt(self.dt)


class _ChannelBank:
    """Block-cached increments for a batch of realizations and one channel."""

    def __init__(self, plan: NoisePlan, realizations: np.ndarray, channel: str,
                 shape: tuple, tag: int = 0):
        self.plan = plan
        self.realizations = realizations
        self.channel = channel
        self.shape = tuple(shape)
        self.tag = tag
        self.keys = [plan.key(r, channel, tag) for r in realizations]
        self.block = -1
        self.buf = None
        self.scale = math.sqrt(plan.dt)

    def __call__(self, step: int) -> np.ndarray:
        block, offset = divmod(step, BLOCK_STEPS)
        if block != self.block:
            counter = np.array([0, 0, 0, block], dtype=np.uint64)
            draws = [np.random.Generator(np.random.Philox(key=k, counter=counter))
                     .standard_normal((BLOCK_STEPS,) + self.shape) for k in self.keys]
            self.buf = np.stack(draws, axis=1) * self.scale
            self.block = block
        return self.buf[offset]


# ---------------------------------------------------------------- types


@dataclass
class Ensemble:
    """Particle positions of one system at one time."""

    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be an (N, d) array with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        self.positions = pos

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def mean(self) -> np.ndarray:
        return self.positions.mean(axis=0)


MODES = ("independent", "synchronous", "reflection_1d", "mean_reflection")


@dataclass(frozen=True)
class CouplingMode:
    """How the noise of two ensembles is wired together.

    ``delta`` is the regularisation scale of the reflection modes.  When it is
    None the scale is ``delta_factor`` times the RMS initial distance between
    index-aligned particles, computed per realization.
    """

    kind: str = "synchronous"
    delta: float | None = None
    delta_factor: float = 1e-3

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValueError(f"unknown coupling mode {self.kind!r}")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.delta_factor > 0:
            raise ValueError("delta_factor must be positive")

    @property
    def reflecting(self) -> bool:
        return self.kind in ("reflection_1d", "mean_reflection")


@dataclass
class CoupledEnsembles:
    """Two ensembles advanced with shared noise, plus an optional auxiliary one.

    When ``aux`` is present, ensemble ``a`` interacts with the empirical
    measure of ``aux`` instead of its own; ``aux`` receives the same common
    increments as ``a`` and its own idiosyncratic noise.
    """

    a: Ensemble
    b: Ensemble | None = None
    mode: CouplingMode = field(default_factory=CouplingMode)
    aux: Ensemble | None = None
    realization: int = 0
    step_index: int = 0
    delta: float | None = None

    def __post_init__(self):
        if self.b is not None:
            if self.a.N != self.b.N or self.a.d != self.b.d:
                raise ValueError("coupled ensembles must share N and d")
            if self.a.time != self.b.time:
                raise ValueError("coupled ensembles must share the time")
        _check_mode(self.mode, self.a.d, self.b is not None)
        if self.aux is not None and self.aux.d != self.a.d:
            raise ValueError("auxiliary ensemble dimension mismatch")


def _check_mode(mode: CouplingMode | None, d: int, coupled: bool):
    if mode is None:
        return
    if mode.kind == "reflection_1d" and d != 1:
        raise ValueError("reflection_1d requires d = 1")
    if mode.reflecting and not coupled:
        raise ValueError("reflection modes need two ensembles")


def ramp(u):
    """Mixing weight ``clamp(2u - 1, 0, 1)``."""
    return np.clip(2.0 * np.asarray(u, dtype=float) - 1.0, 0.0, 1.0)


# ---------------------------------------------------------------- drift


def interaction_term(x: np.ndarray, source: np.ndarray, W: InteractionSpec) -> np.ndarray:
    """``M^-1 sum_j grad W(x_i - s_j)`` for batched clouds.

    ``x`` has shape ``(..., N, d)`` and ``source`` ``(..., M, d)``.
    """
    if W.kind == "none":
        return np.zeros_like(x)
    if W.kind == "quadratic":
        return W.alpha * (x - source.mean(axis=-2, keepdims=True))
    out = np.empty_like(x)
    n = x.shape[-2]
    step = max(1, int(2e6 // max(1, source.shape[-2] * x.shape[-1] * max(1, x[..., 0, 0].size))))
    for lo in range(0, n, step):
        diff = x[..., lo:lo + step, None, :] - source[..., None, :, :]
        out[..., lo:lo + step, :] = W.grad(diff).mean(axis=-2)
    return out


def drift_field(x: np.ndarray, source: np.ndarray, V: PotentialSpec,
                W: InteractionSpec) -> np.ndarray:
    """Drift ``-grad V(x) - grad W * m_source(x)`` on batched clouds."""
    return -V.grad(x) - interaction_term(x, source, W)


def drift(x, ensemble: Ensemble, V: PotentialSpec, W: InteractionSpec) -> np.ndarray:
    """Drift at point(s) ``x`` under the empirical measure of ``ensemble``."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[-1] != ensemble.d:
        pts = pts.reshape(-1, ensemble.d)
    out = drift_field(pts, ensemble.positions, V, W)
    return out[0] if np.ndim(x) <= 1 else out


# ---------------------------------------------------------------- initial laws


@dataclass(frozen=True)
class InitialLaw:
    """Law of the initial particle cloud.

    Kinds: ``gaussian(mean, cov)``, ``two_point_mixture(points, weights,
    cov)``, ``dirac(mean)`` and ``gaussian_random_center(center_mean,
    center_cov, cov)``.  ``cov`` may be a scalar, a vector of variances or a
    full matrix.
    """

    kind: str
    mean: tuple = (0.0,)
    cov: object = 1.0
    points: tuple = ()
    weights: tuple = (0.5, 0.5)
    center_cov: object = 1.0

    @classmethod
    def from_config(cls, cfg: dict) -> "InitialLaw":
        kind = cfg["kind"]
        mean = tuple(np.atleast_1d(np.asarray(cfg.get("mean", cfg.get("center_mean", [0.0])),
                                              dtype=float)).tolist())
        points = tuple(tuple(np.atleast_1d(np.asarray(p, dtype=float)).tolist())
                       for p in cfg.get("points", ()))
        return cls(kind=kind, mean=mean, cov=cfg.get("cov", 1.0), points=points,
                   weights=tuple(cfg.get("weights", (0.5, 0.5))),
                   center_cov=cfg.get("center_cov", 1.0))


def _cholesky(cov, d: int) -> np.ndarray:
    c = np.asarray(cov, dtype=float)
    if c.ndim == 0:
        c = np.eye(d) * float(c)
    elif c.ndim == 1:
        if c.size != d:
            raise ValueError("covariance vector has wrong length")
        c = np.diag(c)
    if c.shape != (d, d):
        raise ValueError("covariance has wrong shape")
    if not np.allclose(c, c.T):
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc


def sample_initial(law: InitialLaw, N: int, plan: NoisePlan, realization: int = 0,
                   tag: int = 0, center_tag: int | None = None, d: int | None = None) -> Ensemble:
    """Draw an initial ensemble of ``N`` particles.

    Particles come from the ``initial`` channel with the given ``tag``.  The
    random centre of ``gaussian_random_center`` comes from the ``center``
    channel with ``center_tag`` (default: ``tag``), so two ensembles can
    share a centre by passing the same ``center_tag``.
    """
    if N < 1:
        raise ValueError("N must be positive")
    mean = np.asarray(law.mean, dtype=float)
    d = d or (mean.size if law.kind != "two_point_mixture" else len(law.points[0]))
    rng = plan.generator(realization, "initial", tag)
    if law.kind == "dirac":
        pos = np.broadcast_to(np.resize(mean, d), (N, d)).copy()
    elif law.kind == "gaussian":
        L = _cholesky(law.cov, d)
        pos = np.resize(mean, d) + rng.standard_normal((N, d)) @ L.T
    elif law.kind == "two_point_mixture":
        pts = np.asarray(law.points, dtype=float)
        if pts.shape[0] != 2:
            raise ValueError("two_point_mixture needs exactly two points")
        w = np.asarray(law.weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture weights must be non-negative")
        pick = rng.random(N) < w[0] / w.sum()
        pos = np.where(pick[:, None], pts[0], pts[1])
        if np.any(np.asarray(law.cov, dtype=float) != 0):
            L = _cholesky(law.cov, d)
            pos = pos + rng.standard_normal((N, d)) @ L.T
    elif law.kind == "gaussian_random_center":
        Lc = _cholesky(law.center_cov, d)
        L = _cholesky(law.cov, d)
        crng = plan.generator(realization, "center", tag if center_tag is None else center_tag)
        center = np.resize(mean, d) + Lc @ crng.standard_normal(d)
        pos = center + rng.standard_normal((N, d)) @ L.T
    else:
        raise ValueError(f"unknown initial law {law.kind!r}")
    return Ensemble(pos, 0.0)


def optimal_initial_pairing(a: Ensemble, b: Ensemble) -> np.ndarray:
    """Permutation ``perm`` such that ``b.positions[perm]`` is matched to ``a``.

    Sorting in one dimension, minimum-cost assignment on squared distances
    otherwise.
    """
    xa = a.positions if isinstance(a, Ensemble) else ot.as_support(a)
    xb = b.positions if isinstance(b, Ensemble) else ot.as_support(b)
    if xa.shape != xb.shape:
        raise ValueError("ensembles must have the same size and dimension")
    n = xa.shape[0]
    if xa.shape[1] == 1:
        perm = np.empty(n, dtype=int)
        perm[np.argsort(xa[:, 0], kind="stable")] = np.argsort(xb[:, 0], kind="stable")
        return perm
    if n > PAIRING_CAP:
        raise ValueError(f"assignment limited to N <= {PAIRING_CAP}")
    rows, cols = linear_sum_assignment(cdist(xa, xb, "sqeuclidean"))
    perm = np.empty(n, dtype=int)
    perm[rows] = cols
    return perm


# ---------------------------------------------------------------- batched state


@dataclass
class _Batch:
    ids: np.ndarray
    a: np.ndarray
    b: np.ndarray | None
    aux: np.ndarray | None
    step: int
    delta: np.ndarray | None
    pi: np.ndarray | None = None


def _default_delta(a: np.ndarray, b: np.ndarray, mode: CouplingMode) -> np.ndarray:
    if mode.delta is not None:
        return np.full(a.shape[0], float(mode.delta))
    if mode.kind == "mean_reflection":
        dist = np.linalg.norm(a.mean(axis=1) - b.mean(axis=1), axis=-1)
    else:
        dist = np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1), axis=-1))
    dist = np.where(dist > 0, dist, 1.0)
    return mode.delta_factor * dist


class _Integrator:
    """Advances a batch in place, one Euler-Maruyama step at a time."""

    def __init__(self, V: PotentialSpec, W: InteractionSpec, plan: NoisePlan,
                 mode: CouplingMode | None, batch: _Batch):
        self.V, self.W, self.plan, self.mode = V, W, plan, mode
        R, N, d = batch.a.shape
        ids = batch.ids
        sig, sig0 = plan.sigma, plan.sigma0
        kind = mode.kind if (mode is not None and batch.b is not None) else None
        self.kind = kind
        self.idio = _ChannelBank(plan, ids, "idiosyncratic", (N, d)) if sig > 0 else None
        self.common = _ChannelBank(plan, ids, "common", (1, d)) if sig0 > 0 else None
        self.idio_b = self.common_b = self.aux_common = self.idio_aux = None
        if kind == "independent":
            if sig > 0:
                self.idio_b = _ChannelBank(plan, ids, "idiosyncratic-b", (N, d))
            if sig0 > 0:
                self.common_b = _ChannelBank(plan, ids, "common-b", (1, d))
        if kind in ("reflection_1d", "mean_reflection") and sig0 > 0:
            self.aux_common = _ChannelBank(plan, ids, "auxiliary-common", (1, d))
        if batch.aux is not None and sig > 0:
            self.idio_aux = _ChannelBank(plan, ids, "idiosyncratic-aux", batch.aux.shape[1:])

    def mixing(self, batch: _Batch):
        """Reflection weight ``pi`` per realization and the unit mean difference."""
        if self.kind == "reflection_1d":
            u = np.mean(np.abs(batch.a - batch.b), axis=(1, 2)) / batch.delta
            return ramp(u), None
        if self.kind == "mean_reflection":
            diff = batch.a.mean(axis=1) - batch.b.mean(axis=1)
            norm = np.linalg.norm(diff, axis=-1)
            unit = np.divide(diff, norm[:, None], out=np.zeros_like(diff),
                             where=norm[:, None] > 0)
            return ramp(norm / batch.delta), unit
        return None, None

    def step(self, batch: _Batch):
        V, W, plan = self.V, self.W, self.plan
        dt, sig, sig0 = plan.dt, plan.sigma, plan.sigma0
        s = batch.step
        a, b, aux = batch.a, batch.b, batch.aux
        da = drift_field(a, aux if aux is not None else a, V, W)
        db = drift_field(b, b, V, W) if b is not None else None
        daux = drift_field(aux, aux, V, W) if aux is not None else None

        xi = self.idio(s) if self.idio is not None else None
        z0 = self.common(s) if self.common is not None else None
        za = zb = None
        xib = xi
        if z0 is not None:
            za = sig0 * z0
            zb = za
        pi, unit = self.mixing(batch)
        batch.pi = pi
        if self.kind == "independent":
            xib = self.idio_b(s) if self.idio_b is not None else None
            zb = sig0 * self.common_b(s) if self.common_b is not None else None
        elif self.kind == "reflection_1d" and z0 is not None:
            zt = self.aux_common(s)
            lam = np.sqrt(1.0 - pi * pi)[:, None, None]
            p = pi[:, None, None]
            za = sig0 * (p * z0 + lam * zt)
            zb = sig0 * (-p * z0 + lam * zt)
        elif self.kind == "mean_reflection" and z0 is not None:
            zt = self.aux_common(s)
            lam = np.sqrt(1.0 - pi * pi)[:, None, None]
            p = pi[:, None, None]
            e = unit[:, None, :]
            reflected = z0 - 2.0 * e * np.sum(e * z0, axis=-1, keepdims=True)
            za = sig0 * (p * z0 + lam * zt)
            zb = sig0 * (p * reflected + lam * zt)

        new_a = a + da * dt
        if xi is not None:
            new_a += sig * xi
        if za is not None:
            new_a += za
        batch.a = new_a
        if b is not None:
            new_b = b + db * dt
            if xib is not None:
                new_b += sig * xib
            if zb is not None:
                new_b += zb
            batch.b = new_b
        if aux is not None:
            new_aux = aux + daux * dt
            if self.idio_aux is not None:
                new_aux += sig * self.idio_aux(s)
            if za is not None:
                new_aux += za
            batch.aux = new_aux
        batch.step = s + 1


# ---------------------------------------------------------------- observers


@dataclass
class _Context:
    V: PotentialSpec
    W: InteractionSpec
    plan: NoisePlan
    metric: DistortedMetric | None
    functionals: dict


def _need_b(batch: _Batch, name: str) -> np.ndarray:
    if batch.b is None:
        raise ValueError(f"observer {name!r} needs two ensembles")
    return batch.b


def _spread(x: np.ndarray) -> np.ndarray:
    c = x - x.mean(axis=1, keepdims=True)
    return np.mean(np.sum(c * c, axis=-1), axis=-1)


def _wdist(batch: _Batch, p: int) -> np.ndarray:
    b = _need_b(batch, f"w{p}")
    if batch.a.shape[-1] == 1:
        return ot.w_p_1d_batch(batch.a[..., 0], b[..., 0], p)
    fn = ot.w2_exact if p == 2 else ot.w1_exact
    return np.array([fn(x, y) for x, y in zip(batch.a, b)])


def _paired_norm(batch: _Batch) -> np.ndarray:
    return np.linalg.norm(batch.a - _need_b(batch, "paired"), axis=-1)


def _need_metric(ctx: _Context) -> DistortedMetric:
    if ctx.metric is None:
        raise ValueError("this observer needs a metric")
    return ctx.metric


OBSERVERS: dict[str, Callable[[_Batch, _Context], np.ndarray]] = {
    "paired_rms": lambda bt, ctx: np.sqrt(np.mean(_paired_norm(bt) ** 2, axis=-1)),
    "paired_mean_abs": lambda bt, ctx: np.mean(_paired_norm(bt), axis=-1),
    "df_paired": lambda bt, ctx: np.mean(eval_f(_need_metric(ctx), _paired_norm(bt)), axis=-1),
    "w1": lambda bt, ctx: _wdist(bt, 1),
    "w2": lambda bt, ctx: _wdist(bt, 2),
    "spread_a": lambda bt, ctx: _spread(bt.a),
    "spread_b": lambda bt, ctx: _spread(_need_b(bt, "spread_b")),
    "m2_a": lambda bt, ctx: np.mean(np.sum(bt.a ** 2, axis=-1), axis=-1),
    "m2_b": lambda bt, ctx: np.mean(np.sum(_need_b(bt, "m2_b") ** 2, axis=-1), axis=-1),
    "mean_a": lambda bt, ctx: bt.a.mean(axis=1),
    "mean_b": lambda bt, ctx: _need_b(bt, "mean_b").mean(axis=1),
    "mean_distance": lambda bt, ctx: np.linalg.norm(
        bt.a.mean(axis=1) - _need_b(bt, "mean_distance").mean(axis=1), axis=-1),
    "mean_f_distance": lambda bt, ctx: eval_f(_need_metric(ctx), np.linalg.norm(
        bt.a.mean(axis=1) - _need_b(bt, "mean_f_distance").mean(axis=1), axis=-1)),
    "pi": lambda bt, ctx: (bt.pi if bt.pi is not None else np.zeros(bt.a.shape[0])),
}


# ---------------------------------------------------------------- records


@dataclass
class TrajectoryRecord:
    """Observer time series for a set of realizations.

    ``series[name]`` has shape ``(R, T)`` (scalar observers) or
    ``(R, T, k)`` (vector observers such as barycenters).
    """

    times: np.ndarray
    realizations: np.ndarray
    series: dict
    snapshots: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    complete: bool = True

    def mean(self, name: str) -> np.ndarray:
        return np.mean(self.series[name], axis=0)

    def se(self, name: str) -> np.ndarray:
        x = self.series[name]
        if x.shape[0] < 2:
            return np.full(x.shape[1:], np.nan)
        return np.std(x, axis=0, ddof=1) / math.sqrt(x.shape[0])

    @staticmethod
    def concat(records: Sequence["TrajectoryRecord"]) -> "TrajectoryRecord":
        first = records[0]
        series = {k: np.concatenate([r.series[k] for r in records], axis=0) for k in first.series}
        snaps = {}
        for t in first.snapshots:
            snaps[t] = {k: np.concatenate([r.snapshots[t][k] for r in records], axis=0)
                        for k in first.snapshots[t]}
        diag = {}
        for k in first.diagnostics:
            vals = [r.diagnostics[k] for r in records]
            diag[k] = np.concatenate([np.atleast_1d(v) for v in vals])
        return TrajectoryRecord(first.times.copy(),
                                np.concatenate([r.realizations for r in records]),
                                series, snaps, diag, all(r.complete for r in records))


def _integrate(batch: _Batch, V, W, plan: NoisePlan, mode, t_final: float,
               observers: Sequence[str], cadence: int, metric=None, functionals=None,
               snapshot_times: Sequence[float] = ()) -> TrajectoryRecord:
    n_steps = int(round(t_final / plan.dt))
    if t_final < 0 or abs(n_steps * plan.dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be a non-negative multiple of dt")
    if cadence < 1 or n_steps % cadence:
        raise ValueError("observer cadence must divide the step count")
    functionals = dict(functionals or {})
    ctx = _Context(V, W, plan, metric, functionals)
    for name in observers:
        if name not in OBSERVERS:
            raise ValueError(f"unknown observer {name!r}")
    if mode is not None and mode.kind == "mean_reflection" and plan.sigma > 0:
        warnings.warn("mean_reflection with sigma > 0 carries no contraction guarantee",
                      stacklevel=3)
    n_rec = n_steps // cadence + 1
    R = batch.a.shape[0]
    times = np.arange(n_rec) * cadence * plan.dt
    series: dict[str, np.ndarray] = {}
    snap_steps = {int(round(t / plan.dt)): float(t) for t in snapshot_times}
    snapshots: dict[float, dict] = {}
    running = {name: np.zeros(R) for name in functionals}
    box = V.box
    excursions = np.zeros(R, dtype=np.int64)
    max_abs = np.zeros(R)
    integ = _Integrator(V, W, plan, mode, batch)
    if batch.b is not None and mode is not None and mode.reflecting and batch.delta is None:
        batch.delta = _default_delta(batch.a, batch.b, mode)
    if mode is not None and mode.reflecting:
        batch.pi, _ = integ.mixing(batch)

    def record(k: int, gen_values: dict):
        for name in observers:
            val = np.asarray(OBSERVERS[name](batch, ctx), dtype=float)
            if name not in series:
                series[name] = np.full((R, n_rec) + val.shape[1:], np.nan)
            series[name][:, k] = val
        for name, fun in functionals.items():
            val = gen_values[name] if name in gen_values else fun.generator(batch.a, V, W,
                                                                           plan.sigma, plan.sigma0)
            for key, arr in ((f"F:{name}", fun.value(batch.a)), (f"MF:{name}", val),
                             (f"IMF:{name}", running[name])):
                if key not in series:
                    series[key] = np.full((R, n_rec), np.nan)
                series[key][:, k] = arr

    def snapshot(step: int):
        if step in snap_steps:
            snap = {"a": batch.a.copy()}
            if batch.b is not None:
                snap["b"] = batch.b.copy()
            snapshots[snap_steps[step]] = snap

    def partial(k_filled: int) -> TrajectoryRecord:
        cut = {k: v[:, :k_filled] for k, v in series.items()}
        return TrajectoryRecord(times[:k_filled], batch.ids.copy(), cut, snapshots,
                                {"box_excursions": excursions, "max_abs": max_abs}, False)

    gen_now = {name: fun.generator(batch.a, V, W, plan.sigma, plan.sigma0)
               for name, fun in functionals.items()}
    record(0, gen_now)
    snapshot(0)
    for s in range(n_steps):
        if functionals:
            for name, val in gen_now.items():
                running[name] = running[name] + plan.dt * val
        integ.step(batch)
        t = (s + 1) * plan.dt
        for label, arr in (("a", batch.a), ("b", batch.b), ("aux", batch.aux)):
            if arr is None:
                continue
            absmax = np.max(np.abs(arr), axis=(1, 2)) if arr.size else np.zeros(R)
            if not np.all(absmax <= BLOWUP_LIMIT):
                r = int(np.nonzero(~(absmax <= BLOWUP_LIMIT))[0][0])
                flat = np.abs(arr[r])
                bad = ~(flat <= BLOWUP_LIMIT)
                particle = int(np.nonzero(bad.any(axis=-1))[0][0])
                raise BlowUpError(
                    f"blow-up in ensemble {label}: realization {int(batch.ids[r])}, "
                    f"particle {particle}, t = {t:.6g}",
                    int(batch.ids[r]), particle, t, label, partial((s // cadence) + 1))
            if label == "a":
                np.maximum(max_abs, absmax, out=max_abs)
                if box is not None:
                    excursions += np.sum(np.any(np.abs(arr) > box, axis=-1), axis=-1)
        if functionals:
            gen_now = {name: fun.generator(batch.a, V, W, plan.sigma, plan.sigma0)
                       for name, fun in functionals.items()}
        if (s + 1) % cadence == 0:
            if mode is not None and mode.reflecting:
                batch.pi, _ = integ.mixing(batch)
            record((s + 1) // cadence, gen_now)
        snapshot(s + 1)
    diag = {"box_excursions": excursions, "max_abs": max_abs}
    if batch.delta is not None:
        diag["delta"] = batch.delta.copy()
    return TrajectoryRecord(times, batch.ids.copy(), series, snapshots, diag, True)


def _to_batch(ce: CoupledEnsembles) -> _Batch:
    return _Batch(
        ids=np.array([ce.realization]),
        a=ce.a.positions[None].copy(),
        b=None if ce.b is None else ce.b.positions[None].copy(),
        aux=None if ce.aux is None else ce.aux.positions[None].copy(),
        step=ce.step_index,
        delta=None if ce.delta is None else np.array([ce.delta]),
    )


def _resolve_delta(ce: CoupledEnsembles) -> CoupledEnsembles:
    if ce.b is not None and ce.mode.reflecting and ce.delta is None:
        d = _default_delta(ce.a.positions[None], ce.b.positions[None], ce.mode)
        return replace(ce, delta=float(d[0]))
    return ce


def step(ce: CoupledEnsembles, V: PotentialSpec, W: InteractionSpec,
         plan: NoisePlan) -> CoupledEnsembles:
    """Advance every ensemble of ``ce`` by one Euler-Maruyama step."""
    ce = _resolve_delta(ce)
    batch = _to_batch(ce)
    integ = _Integrator(V, W, plan, ce.mode, batch)
    integ.step(batch)
    t = ce.a.time + plan.dt
    for label, arr in (("a", batch.a), ("b", batch.b), ("aux", batch.aux)):
        if arr is not None and not np.all(np.abs(arr) <= BLOWUP_LIMIT):
            particle = int(np.nonzero(~np.all(np.abs(arr[0]) <= BLOWUP_LIMIT, axis=-1))[0][0])
            raise BlowUpError(f"blow-up in ensemble {label}: particle {particle}, t = {t:.6g}",
                              ce.realization, particle, t, label)
    return replace(
        ce,
        a=Ensemble(batch.a[0], t),
        b=None if batch.b is None else Ensemble(batch.b[0], t),
        aux=None if batch.aux is None else Ensemble(batch.aux[0], t),
        step_index=batch.step,
    )


def run(ce: CoupledEnsembles, V: PotentialSpec, W: InteractionSpec, plan: NoisePlan,
        t_final: float, observers: Sequence[str] = ("paired_rms",), cadence: int = 1,
        metric: DistortedMetric | None = None, functionals=None,
        snapshot_times: Sequence[float] = ()) -> TrajectoryRecord:
    """Integrate one realization to ``t_final`` recording observers every ``cadence`` steps."""
    if t_final < 0:
        raise ValueError("t_final must be non-negative")
    ce = _resolve_delta(ce)
    return _integrate(_to_batch(ce), V, W, plan, ce.mode if ce.b is not None else None,
                      t_final, list(observers), cadence, metric, functionals, snapshot_times)


# ---------------------------------------------------------------- many realizations


@dataclass
class RunSpec:
    """Everything needed to simulate a family of realizations."""

    V: PotentialSpec
    W: InteractionSpec
    plan: NoisePlan
    N: int
    d: int
    t_final: float
    law_a: InitialLaw
    law_b: InitialLaw | None = None
    mode: CouplingMode | None = None
    aux_size: int | None = None
    law_aux: InitialLaw | None = None
    pair_initial: bool = True
    share_center: bool = False
    cadence: int = 1
    observers: tuple = ()
    metric: DistortedMetric | None = None
    functionals: dict = field(default_factory=dict)
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.law_b is not None and self.mode is None:
            self.mode = CouplingMode("synchronous")
        _check_mode(self.mode if self.law_b is not None else None, self.d, self.law_b is not None)
        if self.aux_size is not None and self.aux_size < 1:
            raise ValueError("aux_size must be positive")


def initial_batch(spec: RunSpec, realizations: Sequence[int]) -> _Batch:
    """Sample and pair the initial clouds of the given realizations."""
    a_list, b_list, aux_list = [], [], []
    for r in realizations:
        a = sample_initial(spec.law_a, spec.N, spec.plan, r, tag=0, center_tag=0, d=spec.d)
        a_list.append(a.positions)
        if spec.law_b is not None:
            b = sample_initial(spec.law_b, spec.N, spec.plan, r, tag=1,
                               center_tag=0 if spec.share_center else 1, d=spec.d)
            pos = b.positions
            if spec.pair_initial:
                pos = pos[optimal_initial_pairing(a, b)]
            b_list.append(pos)
        if spec.aux_size is not None:
            law = spec.law_aux or spec.law_a
            aux = sample_initial(law, spec.aux_size, spec.plan, r, tag=2, center_tag=0, d=spec.d)
            aux_list.append(aux.positions)
    return _Batch(
        ids=np.asarray(realizations, dtype=np.int64),
        a=np.stack(a_list),
        b=np.stack(b_list) if b_list else None,
        aux=np.stack(aux_list) if aux_list else None,
        step=0,
        delta=None,
    )


def _run_chunk(spec: RunSpec, realizations: Sequence[int]) -> TrajectoryRecord:
    batch = initial_batch(spec, realizations)
    return _integrate(batch, spec.V, spec.W, spec.plan,
                      spec.mode if spec.law_b is not None else None, spec.t_final,
                      list(spec.observers), spec.cadence, spec.metric, spec.functionals,
                      spec.snapshot_times)


_FORK_JOB: dict = {}


def _run_forked_chunk(index: int):
    spec, chunks = _FORK_JOB["spec"], _FORK_JOB["chunks"]
    try:
        return _run_chunk(spec, chunks[index])
    except BlowUpError as exc:
        return exc


def run_batch(spec: RunSpec, realizations: Sequence[int] | int, workers: int = 1,
              chunk_size: int = 20) -> TrajectoryRecord:
    """Simulate many realizations.

    Realizations are split into fixed chunks of ``chunk_size`` which are
    advanced together; with ``workers > 1`` chunks run in forked worker
    processes.  The output does not depend on ``workers``.
    """
    if isinstance(realizations, int):
        realizations = list(range(realizations))
    realizations = list(realizations)
    if not realizations:
        raise ValueError("no realizations requested")
    chunk_size = max(1, int(chunk_size))
    chunks = [realizations[i:i + chunk_size] for i in range(0, len(realizations), chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        records = [_run_chunk(spec, c) for c in chunks]
    else:
        _FORK_JOB.update(spec=spec, chunks=chunks)
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                records = list(pool.map(_run_forked_chunk, range(len(chunks))))
        finally:
            _FORK_JOB.clear()
        for rec in records:
            if isinstance(rec, BlowUpError):
                raise rec
    return TrajectoryRecord.concat(records)
