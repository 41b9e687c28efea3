from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zaremba_pl.coefficients import CoefficientField
from zaremba_pl.geometry import LayerSequence, Obstacle, cylinder_domain
from zaremba_pl.growth import (
    C_ABS_DEFAULT,
    BarrierSpec,
    GrowthConstants,
    SaturationError,
    barrier_gradient,
    barrier_value,
    calibrate_c_abs,
    empirical_growth_check,
    eta1,
    growth_factor,
    kappa_j,
    lambda_const,
    landis_factor,
    layer_growth_factor,
    layer_term,
    verify_barrier,
)
from zaremba_pl.solver import discretize, solve_mixed_bvp

I3 = CoefficientField.identity(3)
X0 = (5.0, 0.0, 0.0)


def test_barrier_values():
    spec = BarrierSpec(X0, 0.4, 2.0, 0.5, 1.0)
    assert barrier_value(spec, [5.8, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
    assert barrier_value(spec, [5.4, 0.0, 0.0]) == pytest.approx(0.25)
    for al, s in ((0.3, 2.0), (0.7, 0.5)):
        sp = BarrierSpec(X0, 0.4, 2.0, al, s)
        assert barrier_value(sp, [5.0, 0.0, al * 0.4]) == pytest.approx(1 - al**s * 2.0**-s)
    with pytest.raises(ZeroDivisionError):
        barrier_value(spec, X0)


def test_barrier_spec_validation():
    with pytest.raises(ValueError):
        BarrierSpec(X0, 0.4, 1.0)
    with pytest.raises(ValueError):
        BarrierSpec(X0, 0.4, 2.0, alpha=1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(0.05, 0.95), st.floats(0.1, 4.0), st.floats(0.1, 2.0), st.floats(0.0, 1.0))
def test_barrier_radially_decreasing(r1, alpha, s, dr, phase):
    spec = BarrierSpec(X0, 1.0, 2.0, alpha, s)
    d = np.array([np.cos(6 * phase), np.sin(6 * phase), 0.0])
    x = np.asarray(X0) + r1 * d
    y = np.asarray(X0) + (r1 + dr) * d
    assert barrier_value(spec, y) < barrier_value(spec, x)
    # gradient points towards the centre
    assert barrier_gradient(spec, x)[0] @ d < 0


def test_gradient_against_finite_difference():
    spec = BarrierSpec(X0, 0.4, 2.0, 0.5, 2.0)
    x = np.array([5.3, 0.2, -0.1])
    e = np.eye(3) * 1e-6
    fd = [(barrier_value(spec, x + e[i]) - barrier_value(spec, x - e[i])) / 2e-6 for i in range(3)]
    assert np.allclose(barrier_gradient(spec, x)[0], fd, rtol=1e-6)


def test_eta1_and_lambda():
    assert eta1(2.0, 1.0) == pytest.approx(1 / 3)
    assert eta1(2.0, 2.0) == pytest.approx(5 / 9)
    assert eta1(1.5, 0.0) == 0.0
    assert lambda_const(0.5, 2.0, 2) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        eta1(4.0, 1.0)


def test_growth_constants_example():
    c = GrowthConstants(2.0, 0.5, 2, 1.0)
    assert c.eta1 == pytest.approx(1 / 3)
    assert c.eta2 == pytest.approx(1 / 6)
    assert c.eta3 == pytest.approx(1 / 6)
    assert c.beta0 == pytest.approx(0.25)
    assert c.tau == pytest.approx(1 / 12)
    assert c.lam == pytest.approx(0.25)
    assert c.boundary_q
    assert not GrowthConstants(2.0, 0.3, 2, 1.0).boundary_q
    with pytest.raises(ValueError):
        GrowthConstants(2.0, 0.6, 2, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.01, 3.99), st.floats(0.1, 4.0), st.floats(0.0, 0.99))
def test_landis_factor_monotone(a, s, frac):
    R = 1.0
    cmax = 1.0 / eta1(a, s)
    f = landis_factor(frac * cmax, R, s, a)
    assert f >= 1
    assert landis_factor(frac * cmax * 0.5, R, s, a) <= f


def test_landis_saturation():
    with pytest.raises(SaturationError):
        landis_factor(3.0, 1.0, 1.0, 2.0)


@given(st.floats(0.0, 0.999))
def test_inverse_dominates_linear(t):
    g = growth_factor(t)
    assert g.inverse >= g.linear >= 1


def test_layer_factor_saturation_flagged():
    layers = LayerSequence(tuple(float(j) for j in range(1, 8)), rho=0.5, a=1.5, q=0.2, N0=2)
    rec = SimpleNamespace(s=1.0, varkappa=1.0, C_H=SimpleNamespace(lower=1e6))
    gf = layer_growth_factor(rec, layers, 3)
    assert gf.saturated and gf.inverse is None
    small = SimpleNamespace(s=1.0, varkappa=0.1, C_H=SimpleNamespace(lower=0.05))
    gf = layer_growth_factor(small, layers, 3)
    assert not gf.saturated and gf.inverse > 1


def test_no_obstacle_gives_unit_factor():
    c = GrowthConstants(1.5, 0.2, 2, 1.0)
    for form in ("packaged", "traced"):
        assert growth_factor(layer_term(0.0, 0.0, 0.5, c, form=form)).inverse == 1.0
    with pytest.raises(ValueError):
        layer_term(0.1, 0.1, 0.5, c, form="other")


def test_kappa_packaged_formula():
    k = kappa_j(0.5, 0.2, 1.5, 2, 1.0, C_abs=12.6)
    assert k.packaged == pytest.approx(12.6 / 4 * (2 * 0.04 / 1.5) * 0.5)
    assert k.traced is None and k.ratio is None
    kt = kappa_j(0.5, 0.2, 1.5, 2, 1.0, cap=0.1, R=0.5)
    assert 0 < kt.ratio <= 1


def test_calibrated_constant_dominates():
    c = calibrate_c_abs()
    assert 0 < c <= C_ABS_DEFAULT


# barrier verification


def _obstacle_domain():
    return cylinder_domain(obstacles=(Obstacle(0.25, (4.75, 5.25)),))


def test_barrier_inapplicable_without_obstacle():
    rep = verify_barrier(BarrierSpec(X0, 0.4, 2.0, 0.5, 1.0), cylinder_domain(), I3, samples=300, rays=32)
    assert rep.status == "inapplicable"
    assert not rep.preconditions["inner_ball_outside_D"]


def test_barrier_fails_below_critical_exponent():
    rep = verify_barrier(BarrierSpec(X0, 0.4, 2.0, 0.5, 0.5), _obstacle_domain(), I3, samples=300, rays=32)
    assert rep.status == "not-a-barrier"
    assert not rep.conditions["Lw_nonpositive"]
    assert rep.e == pytest.approx(3.0)


def test_barrier_passes_at_critical_exponent():
    rep = verify_barrier(BarrierSpec(X0, 0.4, 2.0, 0.5, 1.0), _obstacle_domain(), I3, samples=600, rays=48)
    assert rep.ok


# empirical check


def _solved(phi=0.0, inlet=1.0):
    obs = tuple(Obstacle(0.25, (j - 0.1, j + 0.1)) for j in range(2, 8))
    dom = cylinder_domain(obstacles=obs)
    g = discretize(dom, I3, (1.0, 8.0), 0.2, outlet="oblique")
    layers = LayerSequence(tuple(float(j) for j in range(1, 9)), rho=0.5, a=1.5, q=0.2, N0=2)
    return solve_mixed_bvp(g, phi=phi, inlet=inlet), g, layers


def test_empirical_check_passes_for_trivial_factor():
    sol, g, layers = _solved()
    chk = empirical_growth_check(sol, g, layers, 4, 1.0)
    assert chk.status == "pass" and chk.measured >= 1


def test_empirical_check_premises_inconclusive():
    sol, g, layers = _solved(phi=0.5)
    chk = empirical_growth_check(sol, g, layers, 4, 1.0)
    assert chk.status == "inconclusive" and "Gamma_1" in chk.reason


def test_empirical_check_detects_overprediction():
    sol, g, layers = _solved()
    chk = empirical_growth_check(sol, g, layers, 4, 1e3)
    assert chk.status == "fail" and chk.margin < 0


def test_empirical_check_skips_saturated():
    sol, g, layers = _solved()
    assert empirical_growth_check(sol, g, layers, 4, None).status == "skipped"
