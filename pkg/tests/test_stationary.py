from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from scipy import stats

from mkvcn import model, sde, stationary
from mkvcn.stationary import FitRejectedError, OracleUndefinedError

QUAD = model.quadratic([0.0], 1.0)
DW = model.builtin_double_well_1d()
NONE = model.no_interaction()


def _zero_potential(d: int = 1) -> model.PotentialSpec:
    return model.PotentialSpec(
        kind="zero", dim=d, value=lambda x: np.zeros(np.shape(x)[:-1]),
        grad=lambda x: np.zeros_like(x), kappa=lambda r: np.zeros_like(np.asarray(r, float)),
        kappa_liminf=1.0, lipschitz=0.0)


def test_generator_linear_examples():
    x = np.random.default_rng(0).normal(1.0, 2.0, size=(40, 1))
    F = stationary.coordinate_functional(0)
    assert stationary.generator_apply(F, x, QUAD, NONE, 0.3, 0.7) == pytest.approx(-x.mean())
    sq = stationary.square_functional()
    want = -2.0 * np.mean(x ** 2) + (0.3 ** 2 + 0.7 ** 2)
    assert stationary.generator_apply(sq, x, QUAD, NONE, 0.3, 0.7) == pytest.approx(want)


def test_generator_at_critical_point_is_zero():
    x = np.ones((10, 1))
    assert stationary.generator_apply(stationary.square_functional(), x, DW, NONE, 0.0, 0.0) == 0.0


def test_variance_generator_on_dirac_without_idiosyncratic_noise():
    x = np.full((12, 2), 0.4)
    F = stationary.VarianceFunctional()
    assert stationary.generator_apply(F, x, model.quadratic([0.0, 0.0]),
                                      model.quadratic_interaction(3.0), 0.0, 1.5) == 0.0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_variance_second_order_terms_cancel(d):
    F = stationary.VarianceFunctional()
    x = np.random.default_rng(d).normal(size=(17, d))
    s0 = 1.3
    second = 0.5 * s0 ** 2 * np.mean(F.div_dmF(x)) + 0.5 * s0 ** 2 * F.trace_dmm(x)
    assert second == 0.0


def test_linear_generator_matches_direct_pointwise_operator():
    rng = np.random.default_rng(1)
    V = model.radial_double_well(2)
    W = model.quadratic_interaction(0.8)
    phi = lambda x: np.sin(x[..., 0]) * np.cos(2 * x[..., 1])
    grad = lambda x: np.stack([np.cos(x[..., 0]) * np.cos(2 * x[..., 1]),
                               -2 * np.sin(x[..., 0]) * np.sin(2 * x[..., 1])], axis=-1)
    lap = lambda x: -5.0 * phi(x)
    F = stationary.LinearFunctional(phi, grad, lap)
    for _ in range(20):
        x = rng.normal(size=(30, 2))
        s, s0 = rng.random(), rng.random()
        total = 0.0
        for i in range(30):
            b = -V.grad(x[i][None])[0] - 0.8 * (x[i] - x.mean(axis=0))
            total += grad(x[i]) @ b + 0.5 * (s * s + s0 * s0) * lap(x[i])
        assert abs(stationary.generator_apply(F, x, V, W, s, s0) - total / 30) <= 1e-12


def test_gibbs_oracle_normalization_and_gaussian_case():
    for V in (QUAD, DW):
        assert stationary.GibbsOracle(V, 1.5).normalization_error < 1e-8
    s0 = 1.2
    oracle = stationary.GibbsOracle(QUAD, s0)
    xs = np.linspace(-3, 3, 13)
    assert np.allclose(oracle.cdf(xs), stats.norm.cdf(xs, scale=s0 / math.sqrt(2)), atol=1e-8)


def test_gibbs_double_well_modes():
    oracle = stationary.GibbsOracle(DW, 2.0)
    xs = np.linspace(-3, 3, 6001)
    dens = oracle.pdf(xs)
    peaks = xs[1:-1][(dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:])]
    assert np.allclose(sorted(peaks), [-1.0, 1.0], atol=2e-3)


def test_gibbs_oracle_undefined():
    with pytest.raises(OracleUndefinedError):
        stationary.GibbsOracle(_zero_potential(), 1.0)


def test_gibbs_check_accepts_exact_samples():
    s0 = 1.0
    rng = np.random.default_rng(2)
    samples = rng.normal(0.0, s0 / math.sqrt(2), size=(20, 1000))
    rep = stationary.gibbs_dirac_check(samples, QUAD, s0, thin=1)
    assert rep.passed
    assert abs(rep.sample_mean[0]) < 3 * rep.sample_mean_se[0] + 1e-3


def test_ou_invariant_check_on_exact_clouds():
    rng = np.random.default_rng(3)
    clouds = [rng.normal(-rng.normal(0, 0.5), 0.5, size=2000) for _ in range(600)]
    rep = stationary.ou_invariant_check(clouds, 0.5, 0.5)
    assert rep.passed
    no_common = [rng.normal(0.0, 0.5, size=2000) for _ in range(50)]
    rep = stationary.ou_invariant_check(no_common, 0.5, 0.0)
    assert rep.mean_var < 1e-3
    dirac = [np.full(100, rng.normal()) for _ in range(50)]
    assert stationary.ou_invariant_check(dirac, 0.0, 1.0).within_var < 1e-20


@pytest.fixture(scope="module")
def ou_record():
    F = stationary.square_functional()
    F.name = "square"
    spec = sde.RunSpec(V=QUAD, W=NONE, plan=sde.NoisePlan(5, 0.01, 0.5, 0.5), N=400, d=1,
                       t_final=8.0, law_a=sde.InitialLaw("dirac", (2.0,)), cadence=10,
                       observers=("m2_a",), functionals={"square": F})
    return sde.run_batch(spec, 60)


def test_transient_identity_and_tail(ou_record):
    rep = stationary.stationarity_residual(ou_record, "square", transient_time=2.0, tail_start=4.0)
    assert rep.transient_pass and rep.tail_pass
    # closed-form OU second moment: E<m, x^2>(t) = 4 e^{-2t} + (s^2 + s0^2)(1 - e^{-2t}) / 2
    t = 2.0
    exact = 4 * math.exp(-2 * t) + 0.25 * (1 - math.exp(-2 * t)) - 4.0
    assert abs(rep.lhs_mean - exact) < 4 * rep.lhs_se


def test_stationarity_warns_with_few_realizations(ou_record):
    sub = sde.TrajectoryRecord(ou_record.times, ou_record.realizations[:5],
                               {k: v[:5] for k, v in ou_record.series.items()})
    rep = stationary.stationarity_residual(sub, "square", tail_start=4.0)
    assert rep.warnings


def test_collapse_rate_pure_interaction():
    alpha = 1.5
    spec = sde.RunSpec(V=_zero_potential(2), W=model.quadratic_interaction(alpha),
                       plan=sde.NoisePlan(1, 0.001, 0.0, 1.0), N=50, d=2, t_final=2.0,
                       law_a=sde.InitialLaw("gaussian", (0.0, 0.0), 1.0), cadence=10,
                       observers=("spread_a",))
    rec = sde.run_batch(spec, 4)
    fit = stationary.variance_collapse_rate(rec.times, rec.series["spread_a"],
                                            W=model.quadratic_interaction(alpha))
    # Euler map contracts the spread by (1 - alpha dt)^2 per step
    exact = -2.0 * math.log(1 - alpha * 0.001) / 0.001
    assert fit.rate == pytest.approx(exact, rel=1e-9)
    assert fit.rate == pytest.approx(2 * alpha, rel=2e-3)


def test_collapse_rejections():
    t = np.linspace(0, 1, 20)
    s = np.exp(-t)
    with pytest.raises(FitRejectedError):
        stationary.variance_collapse_rate(t, s, W=NONE)
    with pytest.raises(FitRejectedError):
        stationary.variance_collapse_rate(t, s, W=model.quadratic_interaction(1.0), sigma=0.1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        stationary.variance_collapse_rate(t, s, W=model.quadratic_interaction(1.0), V=QUAD)
    assert any("vacuous" in str(w.message) for w in caught)


def test_detect_stationary_time():
    t = np.linspace(0, 40, 801)
    rng = np.random.default_rng(4)
    x = np.exp(-t) + 0.01 * rng.normal(size=(30, t.size))
    t0 = stationary.detect_stationary_time(t, x, rate=1.0)
    assert t0 is not None and t0 >= 5.0
