from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from mkvcn import model, ot, sde, stationary

QUAD = model.quadratic([0.0], 1.0)
DW = model.builtin_double_well_1d()
NONE = model.no_interaction()


def _zero_potential(d: int = 1) -> model.PotentialSpec:
    # V = 0 for drift-only checks; the convexity fields are placeholders
    return model.PotentialSpec(
        kind="zero", dim=d, value=lambda x: np.zeros(np.shape(x)[:-1]),
        grad=lambda x: np.zeros_like(x), kappa=lambda r: np.zeros_like(np.asarray(r, float)),
        kappa_liminf=1.0, lipschitz=0.0)


def test_drift_examples():
    ens = sde.Ensemble(np.array([[0.0], [1.0], [5.0]]))
    assert sde.drift([2.0], ens, QUAD, NONE) == pytest.approx([-2.0])
    assert sde.drift([1.0], ens, DW, NONE) == pytest.approx([0.0])
    W = model.quadratic_interaction(0.3)
    assert sde.drift([2.0], ens, _zero_potential(), W) == pytest.approx([-0.3 * (2.0 - 2.0)])
    assert sde.drift([0.5], ens, _zero_potential(), W) == pytest.approx([-0.3 * (0.5 - 2.0)])


def test_quadratic_interaction_matches_direct_summation():
    rng = np.random.default_rng(0)
    x, src = rng.normal(size=(3, 40, 2)), rng.normal(size=(3, 25, 2))
    W = model.quadratic_interaction(1.7)
    generic = model.custom_even(lambda z: 1.7 * z, 1.7, convex=True)
    fast = sde.interaction_term(x, src, W)
    slow = sde.interaction_term(x, src, generic)
    direct = np.stack([[np.mean([1.7 * (xi - sj) for sj in s], axis=0) for xi in xx]
                       for xx, s in zip(x, src)])
    assert np.allclose(fast, direct, atol=1e-12)
    assert np.allclose(slow, direct, atol=1e-12)


def test_increments_are_keyed_by_step_not_history():
    plan = sde.NoisePlan(3, 0.01, 1.0, 1.0)
    bank = sde._ChannelBank(plan, np.array([4, 9]), "idiosyncratic", (5, 1))
    for s in (0, 1, 31, 32, 33, 95, 64):
        row = bank(s)
        for j, r in enumerate((4, 9)):
            assert np.array_equal(row[j], plan.increments(r, "idiosyncratic", s, (5, 1)))
    a = plan.increments(0, "common", 7, (1, 1))
    assert not np.array_equal(a, plan.increments(0, "common-b", 7, (1, 1)))
    assert not np.array_equal(a, plan.increments(1, "common", 7, (1, 1)))
    assert not np.array_equal(a, plan.increments(0, "common", 8, (1, 1)))


def _t2_spec(**kw):
    base = dict(V=QUAD, W=model.quadratic_interaction(0.5),
                plan=sde.NoisePlan(7, 0.01, 0.5, 0.5), N=30, d=1, t_final=0.5,
                law_a=sde.InitialLaw("gaussian", (1.0,), 0.25),
                law_b=sde.InitialLaw("gaussian", (-1.0,), 1.0),
                mode=sde.CouplingMode("synchronous"), aux_size=30, cadence=5,
                observers=("w2", "paired_rms", "spread_a", "m2_a"))
    base.update(kw)
    return sde.RunSpec(**base)


def test_determinism_independent_of_workers():
    spec = _t2_spec()
    one = sde.run_batch(spec, 8, workers=1, chunk_size=3)
    two = sde.run_batch(spec, 8, workers=2, chunk_size=3)
    again = sde.run_batch(spec, 8, workers=1, chunk_size=3)
    for name in one.series:
        assert np.array_equal(one.series[name], two.series[name])
        assert np.array_equal(one.series[name], again.series[name])


def test_synchronous_identical_ensembles_stay_identical():
    x = np.random.default_rng(1).normal(size=(20, 2))
    ce = sde.CoupledEnsembles(sde.Ensemble(x), sde.Ensemble(x.copy()), sde.CouplingMode("synchronous"))
    plan = sde.NoisePlan(1, 0.01, 0.7, 0.4)
    W = model.quadratic_interaction(0.3)
    V = model.radial_double_well(2)
    for _ in range(50):
        ce = sde.step(ce, V, W, plan)
        assert np.array_equal(ce.a.positions, ce.b.positions)


def test_ramp_and_mixing_weights():
    u = np.linspace(0, 2, 201)
    pi = sde.ramp(u)
    assert np.all(pi[u <= 0.5] == 0) and np.all(pi[u >= 1] == 1)
    assert np.all(np.diff(pi) >= 0)
    lam = np.sqrt(1 - pi ** 2)
    assert np.allclose(pi ** 2 + lam ** 2, 1.0, atol=1e-15)


def test_full_reflection_increment_is_twice_common():
    rng = np.random.default_rng(2)
    a, b = rng.normal(-1, 0.3, size=(15, 1)), rng.normal(1, 0.3, size=(15, 1))
    plan = sde.NoisePlan(5, 0.01, 0.0, 1.3)
    ce = sde.CoupledEnsembles(sde.Ensemble(a), sde.Ensemble(b),
                              sde.CouplingMode("reflection_1d"), delta=1e-6)
    nxt = sde.step(ce, QUAD, NONE, plan)
    z0 = plan.increments(0, "common", 0, (1, 1))
    drift_gap = (-(a - b)) * plan.dt
    gap = (nxt.a.positions - nxt.b.positions) - (a - b) - drift_gap
    assert np.allclose(gap, 2 * plan.sigma0 * z0, atol=1e-14)


def test_reflection_with_zero_weight_is_synchronous():
    x = np.random.default_rng(3).normal(size=(10, 1))
    y = x + 1e-9
    plan = sde.NoisePlan(5, 0.01, 0.0, 1.0)
    ce = sde.CoupledEnsembles(sde.Ensemble(x), sde.Ensemble(y), sde.CouplingMode("reflection_1d"),
                              delta=1.0)
    nxt = sde.step(ce, QUAD, NONE, plan)
    inc_a = nxt.a.positions - x + x * plan.dt
    inc_b = nxt.b.positions - y + y * plan.dt
    assert np.allclose(inc_a, inc_b, atol=1e-14)


def test_mean_conservation_is_common_random_walk():
    x = np.random.default_rng(4).normal(size=(25, 1))
    plan = sde.NoisePlan(9, 0.01, 0.0, 0.8)
    ce = sde.CoupledEnsembles(sde.Ensemble(x))
    W = model.quadratic_interaction(2.0)
    V = _zero_potential()
    for s in range(40):
        before = ce.a.mean()
        ce = sde.step(ce, V, W, plan)
        z0 = plan.increments(0, "common", s, (1, 1))[0]
        assert np.allclose(ce.a.mean() - before, plan.sigma0 * z0, atol=1e-13)


def test_deterministic_ou_decay():
    plan = sde.NoisePlan(0, 1e-3, 0.0, 0.0)
    ce = sde.CoupledEnsembles(sde.Ensemble(np.array([[2.0]])))
    rec = sde.run(ce, QUAD, NONE, plan, 1.0, observers=("m2_a",), cadence=100)
    x = np.sqrt(rec.series["m2_a"][0])
    assert np.allclose(x, 2.0 * np.exp(-rec.times), atol=2.0 * plan.dt)


def test_zero_steps_records_initial_only():
    ce = sde.CoupledEnsembles(sde.Ensemble(np.array([[1.0], [3.0]])))
    rec = sde.run(ce, QUAD, NONE, sde.NoisePlan(0, 0.01, 1.0, 1.0), 0.0, observers=("spread_a",))
    assert rec.times.tolist() == [0.0]
    assert rec.series["spread_a"][0, 0] == pytest.approx(1.0)


def test_sample_initial():
    plan = sde.NoisePlan(0, 0.01, 1.0, 1.0)
    d = sde.sample_initial(sde.InitialLaw("dirac", (1.0, -2.0)), 7, plan)
    assert np.all(d.positions == [1.0, -2.0])
    N = 10_000
    g = sde.sample_initial(sde.InitialLaw("gaussian", (0.0, 0.0), 1.0), N, plan)
    assert np.all(np.abs(g.positions.mean(axis=0)) < 4 / math.sqrt(N))
    with pytest.raises(ValueError):
        sde.sample_initial(sde.InitialLaw("gaussian", (0.0, 0.0), [[1.0, 2.0], [2.0, 1.0]]), 5, plan)
    a = sde.sample_initial(sde.InitialLaw("gaussian_random_center", (0.0,), 0.1, center_cov=4.0),
                           5, plan, tag=0, center_tag=0)
    b = sde.sample_initial(sde.InitialLaw("gaussian_random_center", (0.0,), 0.1, center_cov=4.0),
                           5, plan, tag=1, center_tag=0)
    assert abs(a.mean()[0] - b.mean()[0]) < 2.0


def test_optimal_initial_pairing():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(12, 2))
    shuffle = rng.permutation(12)
    perm = sde.optimal_initial_pairing(sde.Ensemble(x), sde.Ensemble(x[shuffle]))
    assert np.array_equal(x[shuffle][perm], x)
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    perm = sde.optimal_initial_pairing(sde.Ensemble(a), sde.Ensemble(b))
    cost = np.sum((a - b[perm]) ** 2)
    brute = min(np.sum((a - b[list(p)]) ** 2) for p in itertools.permutations(range(3)))
    assert cost == pytest.approx(brute)
    with pytest.raises(ValueError):
        sde.optimal_initial_pairing(sde.Ensemble(a), sde.Ensemble(b[:2]))


def test_blow_up_carries_partial_record():
    spec = sde.RunSpec(V=QUAD, W=NONE, plan=sde.NoisePlan(0, 3.0, 0.0, 0.0), N=4, d=1,
                       t_final=60.0, law_a=sde.InitialLaw("dirac", (1.0,)), cadence=1,
                       observers=("m2_a",))
    for workers in (1, 2):
        with pytest.raises(sde.BlowUpError) as info:
            sde.run_batch(spec, 4, workers=workers, chunk_size=2)
        err = info.value
        assert err.ensemble == "a" and err.time > 0
        assert err.partial is not None and not err.partial.complete
        assert err.partial.series["m2_a"].shape[1] >= 1


def test_mean_reflection_with_idiosyncratic_noise_warns():
    x = np.random.default_rng(6).normal(size=(5, 2))
    ce = sde.CoupledEnsembles(sde.Ensemble(x), sde.Ensemble(x + 1.0), sde.CouplingMode("mean_reflection"))
    with pytest.warns(UserWarning):
        sde.run(ce, model.quadratic([0.0, 0.0]), NONE, sde.NoisePlan(0, 0.01, 0.5, 0.5), 0.1)


def test_reflection_1d_requires_d1():
    with pytest.raises(ValueError):
        sde.CoupledEnsembles(sde.Ensemble(np.zeros((3, 2))), sde.Ensemble(np.ones((3, 2))),
                             sde.CouplingMode("reflection_1d"))


def test_synchronous_paired_distance_non_increasing():
    spec = _t2_spec(aux_size=None, N=50, t_final=3.0, observers=("paired_rms",), cadence=10)
    rec = sde.run_batch(spec, 20)
    ms = rec.series["paired_rms"] ** 2
    assert np.all(np.diff(ms, axis=1) <= 1e-12)


def test_running_second_moment_below_affine_bound():
    sigma, sigma0 = 0.5, 1.0
    spec = sde.RunSpec(V=DW, W=model.quadratic_interaction(0.5),
                       plan=sde.NoisePlan(21, 0.01, sigma, sigma0), N=100, d=1, t_final=10.0,
                       law_a=sde.InitialLaw("gaussian", (2.0,), 1.0), cadence=10,
                       observers=("m2_a",))
    rec = sde.run_batch(spec, 30)
    intercept, _ = stationary.moment_bound(DW, sigma, sigma0, 1)
    m2 = rec.mean("m2_a")
    assert np.all(m2 <= m2[0] + intercept)


def test_w2_observer_matches_ot_module():
    spec = _t2_spec(t_final=0.1)
    batch = sde.initial_batch(spec, [0, 1])
    rec = sde.run_batch(spec, [0, 1])
    for j in range(2):
        assert rec.series["w2"][j, 0] == pytest.approx(ot.w2_exact(batch.a[j], batch.b[j]), abs=1e-12)
