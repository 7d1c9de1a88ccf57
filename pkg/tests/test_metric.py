from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from mkvcn import metric, model

QUAD = model.quadratic([0.0], 1.0)
DW = model.builtin_double_well_1d()


@pytest.fixture(scope="module")
def unit_metric():
    return metric.build_metric(QUAD, 1.0)


def test_closed_forms(unit_metric):
    m = unit_metric
    assert m.R0 == 0.0
    assert abs(m.R1 - 2.0) < 1e-6
    assert abs(m.ell - 0.5) < 1e-6
    assert abs(metric.eval_f(m, 2.0) - 5.0 / 3.0) < 1e-6


def test_double_well_phi_at_R0_against_adaptive_quadrature():
    m = metric.build_metric(DW, 1.0)
    assert m.R0 == pytest.approx(2.0, abs=1e-9)
    # phi(R0) = exp(-(1 / (2 sigma0^2)) int_0^R0 s kappa_-(s) ds)
    integral, _ = integrate.quad(lambda s: s * max(0.0, -DW.kappa(s)), 0.0, 2.0, epsabs=1e-12)
    assert integral == pytest.approx(1.0, abs=1e-10)
    assert m.phi_R0 == pytest.approx(math.exp(-0.5 * integral), rel=1e-8)


def test_ell_against_adaptive_quadrature():
    m = metric.build_metric(DW, 3.0)
    phi = lambda s: math.exp(-integrate.quad(lambda u: u * max(0.0, -DW.kappa(u)), 0.0, min(s, m.R0))[0]
                             / (2.0 * m.diff))
    Phi = lambda r: integrate.quad(phi, 0.0, r, epsabs=1e-12)[0]
    inv_ell = integrate.quad(lambda s: Phi(s) / phi(s), 0.0, m.R1, points=[m.R0], epsabs=1e-11)[0]
    assert m.ell == pytest.approx(1.0 / inv_ell, rel=1e-6)


@pytest.mark.parametrize("V", [QUAD, DW, model.radial_double_well(2)], ids=["quad", "dw", "radial"])
@pytest.mark.parametrize("s0", [1.0, 3.0])
def test_contraction_inequality_passes(V, s0):
    rep = metric.check_contraction_inequality(metric.build_metric(V, s0), V)
    assert rep.passed, rep.summary()


def test_contraction_on_requested_grid(unit_metric):
    rep = metric.check_contraction_inequality(unit_metric, QUAD, r_grid=np.linspace(0.01, 6, 50))
    assert rep.passed


def test_contraction_near_origin_is_concavity(unit_metric):
    rep = metric.check_contraction_inequality(unit_metric, QUAD, r_grid=[1e-4])
    assert rep.max_excess <= 0


@pytest.mark.parametrize("V,s0", [(QUAD, 1.0), (DW, 1.0), (DW, 3.0), (model.radial_double_well(2), 2.0)])
def test_sandwich_concave_increasing(V, s0):
    m = metric.build_metric(V, s0)
    assert m.f[0] == 0.0
    assert np.all(np.diff(m.f) > 0)
    assert np.all(np.diff(m.fprime) <= 1e-12)
    r = m.r
    assert np.all(m.f <= r + 1e-12)
    assert np.all(m.f >= 0.5 * m.phi_R0 * r - 1e-12)


def test_halving_quad_step_converges():
    a = metric.build_metric(DW, 3.0, quad_step=2e-3)
    b = metric.build_metric(DW, 3.0, quad_step=1e-3)
    for name in ("ell", "R1", "phi_R0"):
        x, y = getattr(a, name), getattr(b, name)
        assert abs(x - y) <= 1e-8 * abs(y)


def test_eval_f_errors_and_zero(unit_metric):
    assert metric.eval_f(unit_metric, 0.0) == 0.0
    with pytest.raises(ValueError):
        metric.eval_f(unit_metric, -0.1)


def test_eval_f_affine_tail(unit_metric):
    m = unit_metric
    r = m.r_max + 3.0
    assert metric.eval_f(m, r) == pytest.approx(m.f[-1] + 3.0 * m.tail_slope)


def test_rate_c_examples(unit_metric):
    none = model.no_interaction()
    assert metric.rate_c(unit_metric, none) == pytest.approx(0.5)
    m3 = metric.build_metric(DW, 3.0)
    assert metric.rate_c(m3, none) == m3.ell * 9.0
    assert metric.rate_c(m3, model.quadratic_interaction(1e3)) < 0


def test_not_confining_rejected():
    flat = model.PotentialSpec.__new__(model.PotentialSpec)
    object.__setattr__(flat, "kind", "flat")
    object.__setattr__(flat, "dim", 1)
    object.__setattr__(flat, "kappa", lambda r: np.zeros_like(np.asarray(r, dtype=float)))
    object.__setattr__(flat, "kappa_liminf", 0.0)
    with pytest.raises(metric.NotConfiningError):
        metric.build_metric(flat, 1.0)


def test_threshold_examples():
    rep = metric.sigma0_threshold(DW, model.no_interaction())
    assert rep.boundary and rep.sigma0_bar == 0.0
    rep = metric.sigma0_threshold(DW, model.quadratic_interaction(0.05))
    assert 0.0 < rep.sigma0_bar < 10.0
    with pytest.raises(metric.NoThresholdError):
        metric.sigma0_threshold(DW, model.quadratic_interaction(0.05), search_interval=(3.0, 10.0))


def test_dump_csv_header(unit_metric):
    text = metric.dump_csv(unit_metric)
    header = [ln for ln in text.splitlines() if ln.startswith("#")]
    keys = {ln[1:].split("=")[0].strip() for ln in header}
    assert {"R0", "R1", "ell", "phi_R0", "c"} <= keys
    cols = next(ln for ln in text.splitlines() if not ln.startswith("#"))
    assert cols == "r,f,fprime,phi,g"
