import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zaremba_pl.capacity import (
    EMPTY,
    Ball,
    CapacityError,
    Cylinder,
    DiscreteMeasure,
    Intersection,
    SingularPotential,
    Union,
    capacity_lower,
    capacity_upper,
    cylinder_capacity_lower,
    cylinder_constant,
    layer_capacity,
    riesz_potential,
    set_from_dict,
    subadditivity_gap,
    verify_witness,
)
from zaremba_pl.geometry import LayerSequence, Obstacle, cylinder_domain

ORIGIN = (0.0, 0.0, 0.0)


def fibonacci_sphere(m):
    k = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * k / m)
    th = math.pi * (1 + 5**0.5) * k
    return np.c_[np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)]


def test_riesz_potential_examples():
    mu = DiscreteMeasure(np.zeros((1, 3)), [1.0])
    assert riesz_potential(mu, [2.0, 0.0, 0.0], 1.0) == pytest.approx(0.5)
    sph = DiscreteMeasure(fibonacci_sphere(1000), np.full(1000, 1e-3))
    x = 2 * fibonacci_sphere(7)
    assert np.max(np.abs(riesz_potential(sph, x, 1.0) - 0.5)) <= 1e-3
    zero = DiscreteMeasure(np.zeros((0, 3)), [])
    assert riesz_potential(zero, [1.0, 2.0, 3.0], 1.0) == 0.0
    with pytest.raises(SingularPotential):
        riesz_potential(mu, [0.0, 0.0, 0.0], 1.0)


def test_measure_rejects_negative_weights():
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((1, 3)), [-1.0])


def test_empty_set_has_zero_capacity():
    assert capacity_lower(EMPTY, 1.0).lower == 0.0
    assert capacity_upper(EMPTY, 1.0) == 0.0


def test_sphere_average_closed_form_matches_quadrature():
    from scipy import integrate

    for s in (0.5, 1.0, 1.5, 2.5):
        for rho in (0.3, 0.9):
            q = integrate.quad(lambda t: (1 + rho**2 - 2 * rho * math.cos(t)) ** (-s / 2) * math.sin(t), 0, math.pi)[0] / 2
            closed = ((1 + rho) ** (2 - s) - (1 - rho) ** (2 - s)) / (2 * rho * (2 - s))
            assert closed == pytest.approx(q, rel=1e-10)


def test_ball_closed_forms():
    # at s = n - 2 the sphere average of |x - y|^-s is min(1, 1/rho) so the bound is r^s
    assert capacity_upper(Ball(ORIGIN, 1.0), 1.0) == pytest.approx(1.0, abs=1e-6)
    assert capacity_upper(Ball(ORIGIN, 3.0), 1.0) == pytest.approx(3.0, abs=1e-5)


def test_unsupported_exponent():
    with pytest.raises(ValueError):
        capacity_lower(Ball(ORIGIN, 1.0), 3.0)
    with pytest.raises(ValueError):
        capacity_lower(Ball(ORIGIN, 1.0), 0.0)


@pytest.mark.parametrize("s", [1.0, 2.0])
def test_witness_certified(s):
    H = Union((Ball((0.0, 0.0, 0.0), 0.5), Ball((1.5, 0.0, 0.0), 0.4)))
    est = capacity_lower(H, s, h=0.12)
    assert est.lower <= est.upper
    assert est.witness.mass == pytest.approx(est.lower)
    assert np.all(H.sdf(est.witness.points) <= 0)
    assert verify_witness(H, est.witness, s) <= 1 + 1e-9


@pytest.mark.parametrize("t", [0.5, 2.0])
@pytest.mark.parametrize("s", [1.0, 2.0])
def test_scaling_law(t, s):
    H = Ball(ORIGIN, 1.0)
    base = capacity_lower(H, s).lower
    scaled = capacity_lower(H.scaled(t), s).lower
    assert abs(scaled / base - t**s) / t**s <= 0.05


@pytest.mark.slow
def test_cylinder_scaling():
    H = Cylinder((0.0, 1.0), 0.25)
    base = capacity_lower(H, 2.0, h=0.06).lower
    big = capacity_lower(H.scaled(2.0), 2.0, h=0.12).lower
    assert abs(big / base / 4 - 1) <= 0.05


@settings(max_examples=8, deadline=None)
@given(st.floats(0.3, 0.9), st.floats(1.0, 2.0))
def test_monotonicity_nested_balls(r_small, s):
    small = capacity_lower(Ball(ORIGIN, r_small), s, h=r_small / 3)
    assert small.lower <= capacity_upper(Ball(ORIGIN, 1.0), s)


@pytest.mark.slow
def test_monotonicity_nested_cylinders():
    inner = capacity_lower(Cylinder((0.2, 0.8), 0.2), 1.0, h=0.06)
    assert inner.lower <= capacity_upper(Cylinder((0.0, 1.0), 0.25), 1.0)
    outer = capacity_lower(Cylinder((0.0, 1.0), 0.25), 1.0, h=0.06)
    assert inner.lower <= outer.lower * 1.02


def test_resolution_monotonicity():
    H = Ball(ORIGIN, 1.0)
    coarse = capacity_lower(H, 2.0, h=0.3).lower
    fine = capacity_lower(H, 2.0, h=0.15).lower
    assert fine >= coarse - 1e-12


def test_subadditivity_is_reported():
    gap = subadditivity_gap([Ball(ORIGIN, 0.4), Ball((2.0, 0.0, 0.0), 0.4)], 1.0)
    assert gap <= 1e-9


def test_cylinder_bound():
    C = cylinder_constant(3, 2.0)
    assert cylinder_capacity_lower(4.0, 0.25, 2.0) == pytest.approx(C)
    assert cylinder_capacity_lower(2.0, 0.5, 1.0) == pytest.approx(2 * cylinder_capacity_lower(1.0, 0.5, 1.0))
    assert cylinder_capacity_lower(1.0, 1.0, 1.0) == pytest.approx(cylinder_constant(3, 1.0))
    with pytest.raises(ValueError):
        cylinder_capacity_lower(1.0, 0.25, 0.5)
    with pytest.warns(UserWarning):
        cylinder_capacity_lower(100.0, 0.25, 1.0)


def test_cylinder_bound_below_lp():
    # independent seed at the default resolution
    est = capacity_lower(Cylinder((0.0, 4.0), 0.25), 2.0, seed=7)
    assert est.lower >= cylinder_capacity_lower(4.0, 0.25, 2.0) * 0.98


def test_set_descriptors_round_trip():
    for H in (
        Ball((1.0, 2.0, 3.0), 0.5),
        Cylinder((1.0, 2.0), 0.3),
        Union((Ball(ORIGIN, 1.0), Cylinder((2.0, 3.0), 0.2))),
        Intersection((Ball(ORIGIN, 1.0), Cylinder((-0.1, 0.1), 0.5))),
    ):
        assert set_from_dict(H.to_dict()).to_dict() == H.to_dict()


def test_intersection_emptiness():
    assert Intersection((Ball(ORIGIN, 0.5), Cylinder((2.0, 3.0), 0.2))).is_empty()
    assert not Intersection((Ball(ORIGIN, 0.5), Cylinder((-0.1, 0.1), 0.2))).is_empty()


def _layers():
    return LayerSequence(tuple(float(j) for j in range(1, 9)), rho=0.5, a=1.5, q=0.2, N0=2)


def test_layer_capacity_ratio():
    dom = cylinder_domain(obstacles=tuple(Obstacle(0.25, (j - 0.1, j + 0.1)) for j in range(2, 8)))
    lc = layer_capacity(dom, _layers(), 4, 1.0, h=0.05)
    assert 0 < lc.varkappa <= 1
    assert lc.C_ball.lower <= lc.C_H.upper
    assert lc.C_H.lower <= lc.C_H.upper


def test_layer_capacity_without_obstacle():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        lc = layer_capacity(cylinder_domain(), _layers(), 4, 1.0, h=0.05)
    assert lc.varkappa == 0.0 and lc.warning
    assert any("capacity condition" in str(x.message) for x in w)


def test_no_atoms_error():
    with pytest.raises(CapacityError):
        capacity_lower(Ball(ORIGIN, 1e-3), 1.0, h=1.0)
