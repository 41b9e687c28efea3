"""Acceptance suite; one summary line per criterion is printed at the end of the run."""

import json
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from zaremba_pl.capacity import Ball, capacity_lower, verify_witness
from zaremba_pl.coefficients import CoefficientField, DegenerationProfile
from zaremba_pl.dichotomy import degenerate_sum_asymptotic, funnel_sum
from zaremba_pl.geometry import Obstacle, check_admissibility, cylinder_domain
from zaremba_pl.growth import BarrierSpec, barrier_value, verify_barrier
from zaremba_pl.harness import execute
from zaremba_pl.solver import (
    DominanceError,
    NodeKind,
    check_comparison,
    check_discrete_max_principle,
    discretize,
    discretize_annulus,
    solve_mixed_bvp,
    verify_subelliptic_power,
)

from conftest import load_shipped


def crit(n, text):
    return pytest.mark.criterion(n, text)


# 1 -------------------------------------------------------------------------


@crit(1, "capacity scaling C_1(B_2)/C_1(B_1) = 2 within 5%, <= 2 min per solve")
def test_capacity_scaling():
    out = {}
    for r in (1.0, 2.0):
        t = time.perf_counter()
        out[r] = capacity_lower(Ball((0.0, 0.0, 0.0), r), 1.0)
        assert time.perf_counter() - t <= 120
    ratio = out[2.0].lower / out[1.0].lower
    print(f"C(B1)={out[1.0].lower:.6f} C(B2)={out[2.0].lower:.6f} ratio={ratio:.6f}")
    assert abs(ratio / 2 - 1) <= 0.05


# 2 -------------------------------------------------------------------------


@crit(2, "Newtonian capacity of the unit ball >= 0.9 (true value 1)")
def test_newtonian_ball():
    est = capacity_lower(Ball((0.0, 0.0, 0.0), 1.0), 1.0)
    print(f"lower={est.lower:.6f} upper={est.upper:.6f}")
    assert est.lower >= 0.9
    assert est.lower <= est.upper
    # the witness stays admissible on an independent exterior sample
    assert verify_witness(Ball((0.0, 0.0, 0.0), 1.0), est.witness, 1.0) <= 1 + 1e-9


# 3 -------------------------------------------------------------------------


@crit(3, "discrete L|x|^-s <= 10h^2 for s in {1,2,4}; s = 0.5 control detected")
@pytest.mark.parametrize("s", [1.0, 2.0, 4.0])
def test_power_subsolution(s):
    rep = verify_subelliptic_power(CoefficientField.identity(3), s, h=0.1)
    print(f"s={s} max positive={rep.max_positive:.3e} tol={rep.tolerance:.3e}")
    assert rep.passed


@crit(3, "discrete L|x|^-s <= 10h^2 for s in {1,2,4}; s = 0.5 control detected")
def test_power_subsolution_control():
    rep = verify_subelliptic_power(CoefficientField.identity(3), 0.5, h=0.1)
    assert rep.max_positive > rep.tolerance


# 4 -------------------------------------------------------------------------


@crit(4, "solver order for u = 1/|x| in [1.7, 2.3] over h, h/2, h/4; <= 5 min")
def test_solver_order():
    t = time.perf_counter()
    exact = lambda X: 1.0 / np.linalg.norm(X, axis=1)  # noqa: E731
    errs = []
    hs = (0.2, 0.1, 0.05)
    for h in hs:
        g = discretize_annulus(1.0, 2.0, h)
        sol = solve_mixed_bvp(g, phi=exact)
        errs.append(float(np.max(np.abs(sol.u - exact(g.coords)))))
    orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    print(f"errors={errs} orders={orders}")
    assert all(1.7 <= p <= 2.3 for p in orders)
    assert time.perf_counter() - t <= 300


# 5 -------------------------------------------------------------------------


@crit(5, "discrete maximum principle and comparison to 1e-10; negative controls caught")
def test_max_principle_shipped(decay_run):
    solve = decay_run["reports"]["solve.json"]
    grids = [solve["base"], solve["refinement"]["fine"]]
    for g in grids:
        assert g["max_principle"]["ok"]
        assert g["comparison_upper"]["status"] == "pass"
        assert g["comparison_lower"]["status"] == "pass"


@crit(5, "discrete maximum principle and comparison to 1e-10; negative controls caught")
def test_max_principle_controls():
    dom = cylinder_domain(obstacles=(Obstacle(0.25, (2.9, 3.1)),))
    g = discretize(dom, CoefficientField.identity(3), (1.0, 5.0), 0.2, outlet="oblique")
    sol = solve_mixed_bvp(g, inlet=1.0)
    assert check_discrete_max_principle(sol, g).ok
    # corrupted interior node
    u = sol.u.copy()
    k = g.nodes(NodeKind.INTERIOR)[len(g.nodes(NodeKind.INTERIOR)) // 2]
    u[k] = 1.5
    rep = check_discrete_max_principle(u, g)
    assert not rep.ok and rep.worst_node == k
    # comparison: a larger inlet datum dominates, the corrupted field does not
    big = solve_mixed_bvp(g, inlet=2.0)
    assert check_comparison(sol, big, g).status == "pass"
    assert check_comparison(big, sol, g).status != "pass"
    # non-M-matrix coefficients are rejected at assembly
    bad = CoefficientField.constant([[1.0, 0.8, 0.8], [0.8, 1.0, 0.8], [0.8, 0.8, 1.0]])
    with pytest.raises(DominanceError):
        discretize(dom, bad, (1.0, 5.0), 0.2)


# 6 -------------------------------------------------------------------------

_BARRIER_DOMAIN = cylinder_domain(obstacles=(Obstacle(0.25, (4.75, 5.25)),))


@crit(6, "verify_barrier passes on the a/alpha/s grid; beta0 sphere values to 1e-12")
@pytest.mark.parametrize("a", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("alpha", [0.25, 0.5])
@pytest.mark.parametrize("s", [1.0, 2.0, 4.0])
def test_barrier_grid(a, alpha, s):
    spec = BarrierSpec((5.0, 0.0, 0.0), 0.4, a, alpha, s)
    rep = verify_barrier(spec, _BARRIER_DOMAIN, CoefficientField.identity(3), samples=1500, rays=96)
    assert rep.ok, rep.reason
    rng = np.random.default_rng(1)
    d = rng.standard_normal((500, 3))
    sphere = np.asarray(spec.x0) + spec.R * d / np.linalg.norm(d, axis=1, keepdims=True)
    expected = alpha**s * (1 - a ** (-s))
    assert np.max(np.abs(barrier_value(spec, sphere) - expected)) <= 1e-12


# 7 -------------------------------------------------------------------------


@crit(7, "growth lemma: measured sup ratio >= predicted factor on a 10-layer window")
def test_growth_lemma(decay_run):
    assert decay_run["status"] == 0, decay_run["manifest"].message
    checks = decay_run["reports"]["growth.json"]["checks"]
    assert len(checks) >= 10
    verified = [c for c in checks if c["status"] != "inconclusive"]
    assert len(verified) >= 10
    for c in verified:
        assert c["status"] == "pass"
        assert c["margin"] >= 0
        assert c["predicted"] >= 1


# 8 -------------------------------------------------------------------------


@crit(8, "decay branch: classification, non-increasing M 2^S over >= 8 layers, truncation < 5%")
def test_decay_branch(decay_run):
    d = decay_run["reports"]["dichotomy.json"]
    assert d["classification"]["kind"] == "decay"
    M = np.array(d["M"])
    S = np.array(d["series"]["partial"])
    assert len(M) >= 8
    slope = stats.theilslopes(np.log(M * 2.0**S), np.array(d["taus"]))[0]
    print(f"robust slope of log(M 2^S) = {slope:.4f}; truncation = {d['truncation_sensitivity']:.2e}")
    assert slope <= 0
    assert d["envelope"]["passed"]
    assert d["truncation_sensitivity"] < 0.05


# 9 -------------------------------------------------------------------------


@crit(9, "constant s_j gives linear S_N; decay exponent positive and stable within 20% for h, h/2")
def test_example2_linear_series():
    lam, s = 0.25, 1.5
    fs = funnel_sum(lam, s, 2000)
    assert np.allclose(fs.S, fs.N * lam**s, rtol=1e-13, atol=0)
    assert np.max(np.abs(np.diff(fs.S, 2))) <= 1e-12


@crit(9, "constant s_j gives linear S_N; decay exponent positive and stable within 20% for h, h/2")
def test_example2_decay_exponent(decay_run):
    ref = decay_run["reports"]["solve.json"]["refinement"]
    c_h, c_h2 = ref["decay_exponent_h"], ref["decay_exponent_h_half"]
    print(f"decay exponent h={c_h:.4f} h/2={c_h2:.4f}")
    assert c_h > 0 and c_h2 > 0
    assert abs(c_h / c_h2 - 1) <= 0.2


# 10 ------------------------------------------------------------------------


@crit(10, "degenerate sum asymptotics: |ratio - 1| decreasing; uncorrected control fails; <= 1 min")
def test_example3_asymptotics():
    t = time.perf_counter()
    p = DegenerationProfile("log_power", c=1.0, beta=0.5)
    Ns = [10**3, 10**4, 10**5, 10**6, 10**7]
    main = degenerate_sum_asymptotic(p, 0.4, Ns)
    control = degenerate_sum_asymptotic(p, 0.4, Ns, corrected=False)
    print("ratios", [round(r.ratio, 4) for r in main.rows], "control", [round(r.ratio, 4) for r in control.rows])
    assert main.trend_ok
    assert not control.trend_ok
    assert time.perf_counter() - t <= 60


# 11 ------------------------------------------------------------------------


def _admissibility(name):
    cfg = load_shipped(name)
    a = cfg.raw["admissibility"]
    return check_admissibility(cfg.domain(), cfg.layers(), cfg.admissibility_window(), a["n_xi"], a["n_gamma"], seed=cfg.raw["seed"])


@crit(11, "admissibility: cylinder tau=j and cone tau=2^j pass; sqrt funnel C margins positive and increasing")
@pytest.mark.parametrize("name", ["admissibility_cylinder", "admissibility_cone"])
def test_admissibility_pass(name):
    rep = _admissibility(name)
    assert all(r.ok for r in rep.layers)
    assert rep.j_star == rep.layers[0].j


@crit(11, "admissibility: cylinder tau=j and cone tau=2^j pass; sqrt funnel C margins positive and increasing")
def test_admissibility_sqrt_funnel():
    rep = _admissibility("admissibility_sqrt")
    assert rep.admissible
    tail = [r for r in rep.layers if r.j >= rep.j_star]
    assert len(tail) >= 10
    margins = np.array([r.C_margin for r in tail])
    assert np.all(margins > 0)
    assert np.all(np.diff(margins) > 0)


# 12 ------------------------------------------------------------------------


@crit(12, "determinism: shipped configs rerun with the same seed give byte-identical reports")
def test_determinism_decay(decay_run, tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        status, manifest = execute("run", load_shipped("cylinder_decay"), tmp_path)
    assert status == 0
    assert manifest.files == decay_run["manifest"].files
    for name in manifest.files:
        assert (tmp_path / name).read_bytes() == (decay_run["out"] / name).read_bytes()


@crit(12, "determinism: shipped configs rerun with the same seed give byte-identical reports")
@pytest.mark.parametrize(
    "command,name",
    [
        ("admissibility", "admissibility_cylinder"),
        ("admissibility", "admissibility_cone"),
        ("admissibility", "admissibility_sqrt"),
        ("asymptotics", "asymptotics_degenerate"),
        ("capacity", "unit_ball_capacity"),
        ("constants", "constants_example"),
    ],
)
def test_determinism_other(command, name, tmp_path):
    cfg = load_shipped(name)
    runs = []
    for k in range(2):
        out = tmp_path / str(k)
        status, manifest = execute(command, cfg, out)
        assert status == 0
        runs.append(manifest.files)
        m = json.loads((out / "run_manifest.json").read_text())
        assert m["seed"] == cfg.raw["seed"]
    assert runs[0] == runs[1]
