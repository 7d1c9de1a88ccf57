from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mkvcn import metric, model, ot

M1 = metric.build_metric(model.builtin_double_well_1d(), 1.0)


def _brute_w(a, b, p):
    a, b = ot.as_support(a), ot.as_support(b)
    n = a.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        d = np.linalg.norm(a - b[list(perm)], axis=1)
        best = min(best, np.mean(d ** p))
    return best ** (1.0 / p)


def test_w_p_1d_examples():
    assert ot.w_p_1d([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert ot.w_p_1d([0.0, 1.0], [1.0, 2.0], p=1) == 1.0
    a = np.random.default_rng(1).normal(size=20)
    for p in (1, 2):
        assert ot.w_p_1d(a, a + 0.7, p) == pytest.approx(0.7)


def test_unequal_sizes_rejected():
    with pytest.raises(ValueError):
        ot.w_p_1d([0.0, 1.0], [0.0])


def test_w2_exact_matches_1d_to_1e12():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b = rng.normal(size=50), rng.normal(1.0, 2.0, size=50)
        assert abs(ot.w2_exact(a, b) - ot.w_p_1d(a, b, 2)) <= 1e-12
        # assignment path in 1-D too
        _, v = ot.assignment((a[:, None] - b[None, :]) ** 2)
        assert abs(np.sqrt(v) - ot.w_p_1d(a, b, 2)) <= 1e-12


def test_w2_planted_2d():
    a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    b = np.array([[0.1, 2.1], [0.0, -0.2], [1.3, 0.1]])
    assert ot.w2_exact(a, b) == pytest.approx(_brute_w(a, b, 2), abs=1e-12)
    assert ot.w2_exact(a, a[[2, 0, 1]]) == 0.0


def test_w2_cap():
    a = np.zeros((ot.W2_EXACT_CAP + 1, 2))
    with pytest.raises(ot.UseSlicedEstimateError):
        ot.w2_exact(a, a)


def test_assignment_matches_exhaustive_100_instances():
    rng = np.random.default_rng(3)
    for k in range(100):
        n = int(rng.integers(1, 9))
        cost = rng.random((n, n)) * rng.choice([1.0, 10.0, 100.0])
        perm, v = ot.assignment(cost)
        _, v_brute = ot.exhaustive_assignment(cost)
        assert v == pytest.approx(v_brute, rel=1e-12, abs=1e-12)
        assert sorted(perm.tolist()) == list(range(n))


clouds = st.lists(st.floats(-10, 10, allow_nan=False), min_size=5, max_size=5)


@settings(max_examples=100, deadline=None)
@given(clouds, clouds, clouds)
def test_distance_axioms(x, y, z):
    for dist in (lambda a, b: ot.w_p_1d(a, b, 1), lambda a, b: ot.w_p_1d(a, b, 2), ot.w1_exact):
        dxy, dyx = dist(x, y), dist(y, x)
        assert dxy >= 0 and dxy == pytest.approx(dyx, abs=1e-12)
        assert dist(x, x) == 0
        assert dist(x, z) <= dxy + dist(y, z) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_distance_axioms_2d(seed):
    rng = np.random.default_rng(seed)
    x, y, z = (rng.normal(size=(6, 2)) for _ in range(3))
    for dist in (ot.w2_exact, ot.w1_exact):
        assert dist(x, y) == pytest.approx(dist(y, x), abs=1e-12)
        assert dist(x, z) <= dist(x, y) + dist(y, z) + 1e-9


def test_df_paired_examples():
    a = np.random.default_rng(4).normal(size=(10, 1))
    assert ot.df_paired(a, a, M1) == 0.0
    assert ot.df_paired([[0.0]], [[1.3]], M1) == pytest.approx(metric.eval_f(M1, 1.3))


def test_df_1d_estimate_planted_and_bounds():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=4), rng.normal(2.0, 1.0, size=4)
    est = ot.df_1d_estimate(a, b, M1)
    cost = metric.eval_f(M1, np.abs(a[:, None] - b[None, :]))
    _, brute = ot.exhaustive_assignment(cost)
    assert est.exact and est.label == "EXACT"
    assert est.value == pytest.approx(brute, abs=1e-12)
    assert ot.df_1d_estimate(a, a, M1).value == 0.0
    for _ in range(30):
        x, y = rng.normal(size=30), rng.normal(rng.normal(), 2.0, size=30)
        e = ot.df_1d_estimate(x, y, M1).value
        w1 = ot.w_p_1d(x, y, 1)
        assert 0.5 * M1.phi_R0 * w1 - 1e-12 <= e <= w1 + 1e-12


def test_df_estimate_label_above_cap():
    a = np.linspace(0, 1, ot.DF_ASSIGNMENT_CAP + 1)
    est = ot.df_1d_estimate(a, a + 0.5, M1)
    assert not est.exact and est.label == "ESTIMATE"


def test_outer_distance():
    rng = np.random.default_rng(6)
    reals = [rng.normal(size=(5, 1)) for _ in range(3)]
    assert ot.outer_distance(reals, reals).assignment_value == 0.0
    a = [np.zeros((3, 1)), np.ones((3, 1))]
    b = [np.ones((3, 1)) * 1.1, np.zeros((3, 1)) + 0.2]
    out = ot.outer_distance(a, b, inner="w1")
    brute = min(np.mean([ot.w1_exact(a[i], b[p[i]]) for i in range(2)]) for p in ((0, 1), (1, 0)))
    assert out.assignment_value == pytest.approx(brute)
    assert out.aligned_value >= out.assignment_value
