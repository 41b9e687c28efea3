import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zaremba_pl.coefficients import (
    CoefficientError,
    CoefficientField,
    DegeneratePoint,
    DegenerationProfile,
    Scalar,
    ellipticity,
    layer_ellipticity,
    max_ellipticity,
    s_exponent,
    validate_degeneration,
)
from zaremba_pl.geometry import LayerSequence, cylinder_domain

X = np.array([2.0, 0.1, -0.3])


def test_ellipticity_examples():
    I = CoefficientField.identity(3)
    assert ellipticity(I, X, [0.6, 0.8, 0.0]) == pytest.approx(3.0)
    A = CoefficientField.diagonal([1.0, 1.0, 4.0])
    assert ellipticity(A, X, [0, 0, 1]) == pytest.approx(1.5)
    assert ellipticity(A, X, [1, 0, 0]) == pytest.approx(6.0)


def test_ellipticity_rejects_non_unit_and_degenerate():
    with pytest.raises(CoefficientError):
        ellipticity(CoefficientField.identity(3), X, [1.0, 1.0, 0.0])
    with pytest.raises((DegeneratePoint, CoefficientError)):
        CoefficientField.constant([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])


def _random_spd(seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    ev = rng.uniform(0.2, 5.0, 3)
    return CoefficientField.rotated(Q.tolist(), ev.tolist())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_scale_invariance(seed, c):
    a = _random_spd(seed)
    xi = np.array([0.48, 0.6, 0.64])
    assert ellipticity(a.scaled(c), X, xi) == pytest.approx(ellipticity(a, X, xi), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_closed_form_max(seed):
    a = _random_spd(seed)
    closed = float(max_ellipticity(a, X[None, :])[0])
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((4000, 3))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    sampled = max(ellipticity(a, X, v) for v in xi[:400])
    assert sampled <= closed * (1 + 1e-12)
    assert closed >= 1
    # the minimum eigenvector attains it
    A = a(X[None, :])[0]
    w, V = np.linalg.eigh(A)
    assert ellipticity(a, X, V[:, 0]) == pytest.approx(closed, rel=1e-10)


@given(st.floats(0.01, 100.0))
def test_multiple_of_identity(c):
    assert float(max_ellipticity(CoefficientField.identity(3).scaled(c), X[None, :])[0]) == pytest.approx(3.0)


def _layers():
    return LayerSequence(tuple(float(j) for j in range(1, 10)), rho=0.5)


def test_layer_ellipticity_constant():
    dom = cylinder_domain()
    assert layer_ellipticity(CoefficientField.identity(3), dom, _layers(), 4).e == pytest.approx(3.0)
    assert layer_ellipticity(CoefficientField.diagonal([1, 1, 4]), dom, _layers(), 4).e == pytest.approx(6.0)


def test_layer_ellipticity_varying_against_dense_oracle():
    g = Scalar("affine_x1", (("c0", 0.0), ("c1", 0.5)))
    a = CoefficientField.diagonal([1.0, 1.0, g])
    dom = cylinder_domain()
    rep = layer_ellipticity(a, dom, _layers(), 4, samples=2000, refine=True)
    # g(x1) = x1 / 2 grows past 1 on [3, 5], so e = (2 + g)/1 at x1 = 5
    assert rep.e == pytest.approx(2 + 2.5, rel=1e-12)
    assert rep.refined == pytest.approx(rep.e, rel=1e-12)
    assert rep.s == pytest.approx(2.5)


def test_s_exponent():
    assert s_exponent(3.0) == 1.0
    assert s_exponent(6.0) == 4.0
    with pytest.raises(ValueError):
        s_exponent(1.5)
    p = DegenerationProfile("log_power", c=1.0, beta=0.5)
    j = np.array([10.0, 100.0])
    assert np.allclose(p.s_sequence(j), p(j) * np.log(j))


def test_degeneration_validation():
    assert validate_degeneration(DegenerationProfile("log_power", c=1.0, beta=0.5), (10, 1e6)).valid
    inv_ln = validate_degeneration(DegenerationProfile("log_power", c=1.0, beta=1.0), (10, 1e6))
    assert not inv_ln.valid and not inv_ln.pln_increasing
    inv_t = validate_degeneration(DegenerationProfile("power", c=1.0, gamma=1.0), (10, 1e6))
    assert not inv_t.valid and inv_t.witness_t is not None


def test_field_round_trip():
    for a in (
        CoefficientField.identity(3),
        CoefficientField.diagonal([1.0, 2.0, Scalar("power_x1", (("c", 1.0), ("p", 0.5)))]),
        _random_spd(3),
    ):
        b = CoefficientField.from_dict(a.to_dict())
        assert np.allclose(a(X[None, :]), b(X[None, :]))
