"""Acceptance suite: one PASS/FAIL line per criterion, presets at full size."""
from __future__ import annotations

import time

import numpy as np
import pytest

from mkvcn import metric, model, ot, sde, stationary
from mkvcn.harness.presets import run_preset

pytestmark = pytest.mark.slow

_CACHE: dict = {}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def _preset(name, run_dir):
    if name not in _CACHE:
        start = time.perf_counter()
        res = run_preset(name, output_dir=run_dir)
        _CACHE[name] = (res, time.perf_counter() - start)
    return _CACHE[name]


def _report(capsys, number: int, title: str, checks, elapsed: float):
    ok = all(c.passed for c in checks)
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({elapsed:.1f} s)")
        for c in checks:
            print(f"    {c.line()}")
    return ok


class _Check:
    def __init__(self, name, passed, detail):
        self.name, self.passed, self.detail = name, bool(passed), detail

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def test_criterion_1_metric_closed_forms(capsys):
    start = time.perf_counter()
    m = metric.build_metric(model.quadratic([0.0], 1.0), 1.0)
    values = {"R0": (m.R0, 0.0), "R1": (m.R1, 2.0), "ell": (m.ell, 0.5),
              "f(2)": (metric.eval_f(m, 2.0), 5.0 / 3.0)}
    elapsed = time.perf_counter() - start
    checks = [_Check(k, abs(got - want) <= 1e-6, f"{got:.10f} vs {want:.10f}")
              for k, (got, want) in values.items()]
    checks.append(_Check("runtime", elapsed < 1.0, f"{elapsed:.3f} s < 1 s"))
    assert _report(capsys, 1, "metric closed forms", checks, elapsed)


def test_criterion_2_contraction_inequality(capsys):
    start = time.perf_counter()
    checks = []
    for name, V in (("quadratic", model.quadratic([0.0], 1.0)),
                    ("double_well", model.builtin_double_well_1d())):
        for s0 in (1.0, 3.0):
            rep = metric.check_contraction_inequality(metric.build_metric(V, s0), V)
            checks.append(_Check(f"{name} sigma0={s0:g}", rep.passed, rep.summary()))
    elapsed = time.perf_counter() - start
    checks.append(_Check("runtime", elapsed < 1.0, f"{elapsed:.3f} s < 1 s"))
    assert _report(capsys, 2, "contraction inequality on (0, 3 R1]", checks, elapsed)


def test_criterion_3_synchronous_convex_decay(capsys, run_dir):
    res, elapsed = _preset("t2_convex", run_dir)
    assert _report(capsys, 3, "W2 decay rate >= 0.8 with plateau", res.checks, elapsed)


def test_criterion_4_chaos_floor_scaling(capsys, run_dir):
    res, elapsed = _preset("chaos_scaling", run_dir)
    assert _report(capsys, 4, "plateau slope -0.5 +/- 0.15", res.checks, elapsed)


def test_criterion_5_ou_common_noise(capsys, run_dir):
    res, elapsed = _preset("p4_ou", run_dir)
    assert _report(capsys, 5, "OU invariant variances and stationarity", res.checks, elapsed)


def test_criterion_6_reflection_double_well(capsys, run_dir):
    res, elapsed = _preset("t3_double_well", run_dir)
    assert _report(capsys, 6, "df_paired rate >= 0.5 c and delta insensitivity", res.checks, elapsed)


def test_criterion_7_collapse_without_idiosyncratic_noise(capsys, run_dir):
    res, elapsed = _preset("sg0_collapse", run_dir)
    assert _report(capsys, 7, "spread collapse and mean f-distance decay", res.checks, elapsed)


def test_criterion_8_gibbs_barycenter(capsys, run_dir):
    res, elapsed = _preset("p9_gibbs", run_dir)
    assert _report(capsys, 8, "barycenter law vs exp(-2V/sigma0^2)", res.checks, elapsed)


def test_criterion_9_property_suites(capsys):
    start = time.perf_counter()
    checks = []

    spec = sde.RunSpec(V=model.quadratic([0.0], 1.0), W=model.quadratic_interaction(0.5),
                       plan=sde.NoisePlan(3, 0.01, 0.5, 0.5), N=50, d=1, t_final=1.0,
                       law_a=sde.InitialLaw("gaussian", (1.0,), 0.25),
                       law_b=sde.InitialLaw("gaussian", (-1.0,), 1.0), aux_size=50, cadence=10,
                       observers=("w2", "paired_rms", "spread_a"))
    r1 = sde.run_batch(spec, 6, workers=1, chunk_size=2)
    r2 = sde.run_batch(spec, 6, workers=2, chunk_size=2)
    same = all(np.array_equal(r1.series[k], r2.series[k]) for k in r1.series)
    checks.append(_Check("determinism", same, "bitwise-identical reruns across worker counts"))

    rng = np.random.default_rng(99)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        cost = rng.random((n, n))
        if abs(ot.assignment(cost)[1] - ot.exhaustive_assignment(cost)[1]) > 1e-12:
            mismatches += 1
    checks.append(_Check("assignment_vs_exhaustive", mismatches == 0,
                         f"{mismatches} mismatches over 100 instances with N <= 8"))

    violations = 0
    for _ in range(200):
        x, y, z = (rng.normal(rng.normal(), rng.random() + 0.1, size=(6, 2)) for _ in range(3))
        for dist in (ot.w2_exact, ot.w1_exact):
            dxy, dyx = dist(x, y), dist(y, x)
            if dxy < 0 or abs(dxy - dyx) > 1e-12 or dist(x, x) != 0.0:
                violations += 1
            if dist(x, z) > dxy + dist(y, z) + 1e-12:
                violations += 1
    checks.append(_Check("distance_axioms", violations == 0,
                         f"{violations} violations on 200 random triples"))

    bad = 0
    for V in (model.quadratic([0.0], 1.0), model.builtin_double_well_1d(), model.radial_double_well(2)):
        for s0 in (1.0, 3.0):
            m = metric.build_metric(V, s0)
            bad += int(np.sum(m.f > m.r + 1e-12) + np.sum(m.f < 0.5 * m.phi_R0 * m.r - 1e-12))
    checks.append(_Check("f_sandwich", bad == 0, f"{bad} table nodes outside phi(R0) r / 2 <= f <= r"))

    V = model.builtin_double_well_1d()
    mspec = sde.RunSpec(V=V, W=model.quadratic_interaction(0.5),
                        plan=sde.NoisePlan(17, 0.01, 0.5, 1.0), N=100, d=1, t_final=10.0,
                        law_a=sde.InitialLaw("gaussian", (2.0,), 1.0), cadence=10,
                        observers=("m2_a",))
    m2 = sde.run_batch(mspec, 30).mean("m2_a")
    intercept, _ = stationary.moment_bound(V, 0.5, 1.0, 1)
    checks.append(_Check("moment_bound", bool(np.all(m2 <= m2[0] + intercept)),
                         f"max running m2 {m2.max():.3f} <= {m2[0]:.3f} + {intercept:.3f}"))
    elapsed = time.perf_counter() - start
    checks.append(_Check("runtime", elapsed < 60.0, f"{elapsed:.1f} s < 60 s"))
    assert _report(capsys, 9, "property suites", checks, elapsed)
