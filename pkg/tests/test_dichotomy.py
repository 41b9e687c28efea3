import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zaremba_pl.coefficients import DegenerationProfile
from zaremba_pl.dichotomy import (
    DegenerationInvalid,
    classify,
    degenerate_sum_asymptotic,
    envelope_consistency,
    envelopes,
    funnel_sum,
    rate_envelopes_r,
    series_terms,
    truncation_sensitivity,
)


def test_series_partial_sums_and_verdicts():
    js = np.arange(1, 201)
    harm = series_terms(1.0 / js, js)
    assert harm.S(10) == pytest.approx(sum(1.0 / k for k in range(1, 11)))
    assert harm.verdict == "divergent"
    sq = series_terms(1.0 / js**2, js)
    assert sq.verdict == "convergent"
    assert series_terms([0.1] * 3).verdict == "undetermined"
    assert series_terms([0.0] * 6).verdict == "convergent"
    with pytest.raises(KeyError):
        harm.S(500)


def test_series_rejects_bad_terms():
    with pytest.raises(ValueError):
        series_terms([0.1, -0.1, 0.1, 0.1])
    with pytest.raises(ValueError):
        series_terms([0.1, 0.2], [1])


def test_series_flags_saturation():
    s = series_terms([0.5, 1.2, 0.5, 0.5])
    assert s.saturated.tolist() == [False, True, False, False]


def test_classify_examples():
    assert classify([5, 4, 3, 2, 1]).kind == "decay"
    g = classify([5, 4, 3, 4, 5, 6])
    assert g.kind == "growth" and g.tau_star == 2
    u = classify([1, 2, 1, 2, 1])
    assert u.kind == "undetermined" and u.first_violation == 0
    with pytest.raises(ValueError):
        classify([1, 2, 3])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 10.0), st.lists(st.floats(0.0, 0.5), min_size=6, max_size=20))
def test_envelopes_exact_sequences(c, terms):
    S = series_terms(terms)
    decay = c * np.exp2(-S.partial)
    rep = envelopes(S, decay, "decay")
    assert rep.passed and rep.constant == pytest.approx(c)
    growth = c * np.exp2(S.partial)
    rep = envelopes(S, growth, "growth")
    assert rep.passed and rep.constant == pytest.approx(c)


def test_envelopes_detect_wrong_rate():
    S = series_terms([0.5] * 10)
    M = np.exp2(-0.1 * S.partial)  # slower decay than 2^-S
    assert not envelopes(S, M, "decay").passed
    assert not envelopes(S, M, "undetermined").passed
    with pytest.raises(ValueError):
        envelopes(S, M[:-1], "decay")


def test_truncation_sensitivity():
    assert truncation_sensitivity([1.0, 2.0], [1.01, 1.98]) == pytest.approx(0.01)


@given(st.floats(0.01, 0.49), st.floats(0.1, 4.0), st.integers(1, 500))
def test_funnel_sum_constant_s(lam, s, N):
    fs = funnel_sum(lam, s, N)
    assert fs.S[-1] == pytest.approx(N * lam**s, rel=1e-12)
    cp = funnel_sum(lam, s, N, checkpoints=[N])
    assert cp.S[0] == pytest.approx(N * lam**s, rel=1e-12)


def test_funnel_sum_checkpoints_match_running_sums():
    s = lambda j: 1 + np.log(j)
    full = funnel_sum(0.3, s, 10_000)
    cps = [10, 100, 9_999]
    part = funnel_sum(0.3, s, 10_000, checkpoints=cps)
    assert np.allclose(part.S, full.S[np.array(cps) - 1], rtol=1e-12)
    with pytest.raises(ValueError):
        funnel_sum(0.5, 1.0, 10)
    with pytest.raises(ValueError):
        funnel_sum(0.3, 1.0, 10, checkpoints=[20])


def test_degenerate_sum_against_direct_sum():
    p = DegenerationProfile("log_power", c=1.0, beta=0.5)
    rep = degenerate_sum_asymptotic(p, 0.4, [100, 1000])
    direct = math.fsum(0.4 ** (float(p(j)) * math.log(j)) for j in range(2, 1001))
    assert rep.rows[-1].exact == pytest.approx(direct, rel=1e-12)
    assert rep.rows[-1].predicted == pytest.approx(1000 ** (1 + float(p(1000)) * math.log(0.4)))


def test_degenerate_sum_control_is_far():
    p = DegenerationProfile("log_power", c=1.0, beta=0.5)
    main = degenerate_sum_asymptotic(p, 0.4, [10**3, 10**5])
    ctrl = degenerate_sum_asymptotic(p, 0.4, [10**3, 10**5], corrected=False)
    assert main.trend_ok
    assert abs(ctrl.rows[-1].ratio - 1) > 5 * abs(main.rows[-1].ratio - 1)


def test_degenerate_sum_validity():
    with pytest.raises(DegenerationInvalid):
        degenerate_sum_asymptotic(DegenerationProfile("log_power", c=1.0, beta=1.0), 0.4, [100])
    with pytest.raises(ValueError):
        degenerate_sum_asymptotic(DegenerationProfile("log_power", c=1.0, beta=0.5), 1.0, [100])


def test_rate_envelopes():
    env = rate_envelopes_r(0.5, c_hat=2.0)
    assert env(4.0) == pytest.approx(math.exp(4.0))
    assert rate_envelopes_r(0.5, c_hat=2.0, sign=-1)(4.0) == pytest.approx(math.exp(-4.0))
    with pytest.raises(ValueError):
        rate_envelopes_r(1.0)
    with pytest.raises(ValueError):
        rate_envelopes_r(0.5, kind="degenerate")


def test_envelope_consistency_constant_s():
    assert envelope_consistency(0.5, 0.3, 1.0, [10, 100, 1000]) <= 1e-12
