"""Pipeline stages, report persistence and run manifests.

Every stage takes an :class:`ExperimentConfig` and a :class:`Context` that
caches intermediate results, so a subcommand runs exactly the stages it
depends on.  Reports are JSON (sorted keys, no timings) and CSV; timings
live only in ``run_manifest.json``.

Output files
------------
admissibility.json / .csv   per-layer A/B/C margins (j, R, A_margin, B_max_steps, B_worst_overlap, C_margin, ok)
capacity.json / .csv        per-layer capacities (j, s, C_H_lower, C_H_upper, C_ball_lower, varkappa)
solve.json, profile.csv     solver diagnostics; sup over the slab at each tau_j (j, tau, M)
growth.json / .csv          measured vs predicted growth factor (j, status, measured, predicted, margin)
dichotomy.json / .csv       classification, series and envelope (j, tau, M, S, envelope)
constants.json / .csv       growth constants per s
asymptotics.json / .csv     sum ratios over the N grid (N, exact, predicted, ratio, control_ratio)
effective_config.yaml       the expanded config
run_manifest.json           config hash, versions, seed, stage timings, sha256 of every file above
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .capacity import capacity_lower, layer_capacity
from .coefficients import layer_ellipticity
from .config import ConfigError, ExperimentConfig
from .dichotomy import (
    DichotomyReport,
    classify,
    degenerate_sum_asymptotic,
    envelopes,
    series_from_layers,
    truncation_sensitivity,
)
from .geometry import check_admissibility
from .growth import GrowthConstants, calibrate_c_abs, empirical_growth_check, layer_growth_factor
from .solver import (
    GridError,
    SolverError,
    check_comparison,
    check_discrete_max_principle,
    check_m_matrix,
    discretize,
    layer_suprema,
    solve_mixed_bvp,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_IO = 0, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def clean(obj):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2) + "\n"


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Context
# --------------------------------------------------------------------------


@dataclass
class Context:
    cfg: ExperimentConfig
    out: Path
    jobs: int = 1
    files: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)

    def write(self, name: str, text: str) -> None:
        path = self.out / name
        self.out.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def timed(self, stage: str, fn):
        if stage in self.cache:
            return self.cache[stage]
        t = time.perf_counter()
        res = fn()
        self.timings[stage] = round(time.perf_counter() - t, 3)
        self.cache[stage] = res
        return res


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def stage_admissibility(ctx: Context) -> dict:
    def run():
        cfg = ctx.cfg
        a = cfg.raw["admissibility"]
        domain, layers = cfg.domain(), cfg.layers()
        rep = check_admissibility(
            domain, layers, cfg.admissibility_window(), int(a["n_xi"]), int(a["n_gamma"]), seed=int(cfg.raw["seed"])
        )
        d = rep.to_dict()
        d["flags"] = list(cfg.flags)
        ctx.write("admissibility.json", dumps(d))
        rows = [["j", "R", "A_margin", "B_max_steps", "B_worst_overlap", "C_margin", "ok"]]
        for r in rep.layers:
            rows.append([r.j, r.R, r.A_margin, r.B_max_steps, r.B_worst_overlap, r.C_margin, int(r.ok)])
        ctx.write("admissibility.csv", csv_text(rows))
        return rep

    return ctx.timed("admissibility", run)


def require_admissible(ctx: Context, rep) -> None:
    lo, _ = ctx.cfg.window()
    for r in rep.layers:
        if r.j >= lo and not r.ok:
            raise StageError("admissibility", f"condition ({r.failed}) failed at j={r.j}")


def _layer_cap_job(args):
    domain, layers, j, s, h, seed = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return layer_capacity(domain, layers, j, s, h=h, seed=seed)


def stage_capacity(ctx: Context):
    def run():
        cfg = ctx.cfg
        c = cfg.raw["capacity"]
        seed = int(cfg.raw["seed"])
        sets = cfg.capacity_sets()
        if sets:
            s = float(c["s"])
            ests = [capacity_lower(H, s, h=c["resolution"] if c["resolution"] else None, seed=seed) for H in sets]
            out = {"sets": [{"set": H.to_dict(), **e.to_dict()} for H, e in zip(sets, ests)]}
            ctx.write("capacity.json", dumps(out))
            rows = [["index", "s", "lower", "upper"]] + [[i, e.s, e.lower, e.upper] for i, e in enumerate(ests)]
            ctx.write("capacity.csv", csv_text(rows))
            return {"sets": ests}
        domain, layers, coeffs = cfg.domain(), cfg.layers(), cfg.coefficients()
        lo, hi = cfg.window()
        js = list(range(lo, hi + 1))
        ell = {j: layer_ellipticity(coeffs, domain, layers, j, int(c["ellipticity_samples"]), seed=seed + j) for j in js}
        h = float(c["resolution"]) if c["resolution"] else None
        jobs = [(domain, layers, j, ell[j].s, h, seed + j) for j in js]
        if ctx.jobs > 1:
            with ProcessPoolExecutor(max_workers=ctx.jobs) as ex:
                caps = list(ex.map(_layer_cap_job, jobs))
        else:
            caps = [_layer_cap_job(a) for a in jobs]
        by_j = {lc.j: lc for lc in caps}
        out = {
            "layers": [dict(lc.to_dict(), e=ell[lc.j].e) for lc in caps],
            "resolution": h,
        }
        ctx.write("capacity.json", dumps(out))
        rows = [["j", "s", "C_H_lower", "C_H_upper", "C_ball_lower", "varkappa"]]
        for lc in caps:
            rows.append([lc.j, lc.s, lc.C_H.lower, lc.C_H.upper, lc.C_ball.lower, lc.varkappa])
        ctx.write("capacity.csv", csv_text(rows))
        return {"layers": by_j}

    return ctx.timed("capacity", run)


@dataclass
class SolveResult:
    grid: object
    solution: object
    js: list
    taus: list
    M: np.ndarray
    summary: dict


def solve_span(cfg: ExperimentConfig, K: int, h: float) -> SolveResult:
    """Solve on tau_{j0} <= x1 <= tau_K and record M(tau_j) over the window."""
    sv = cfg.raw["solver"]
    domain, layers, coeffs = cfg.domain(), cfg.layers(), cfg.coefficients()
    j0, _ = cfg.span_j()
    span = (layers.tau(j0), layers.tau(K))
    try:
        grid = discretize(domain, coeffs, span, h, outlet=sv["outlet"])
        check_m_matrix(grid)
    except GridError as e:
        raise StageError("solve", f"discretization failed (monotone scheme): {e}") from e
    inlet = sv["phi"] if sv["inlet"] is None else sv["inlet"]
    try:
        sol = solve_mixed_bvp(grid, phi=float(sv["phi"]), psi=float(sv["psi"]), inlet=float(inlet), outlet=0.0, tol=float(sv["tol"]))
    except SolverError as e:
        raise StageError("solve", str(e)) from e
    lo, hi = cfg.window()
    js = list(range(lo, hi + 1))
    M = layer_suprema(sol, grid, layers, js)
    # comparison against the constant bounds of the data: 0 <= u <= max data
    u = sol.u
    known = grid.known
    top = np.full_like(u, float(np.max(u[known])))
    bottom = np.full_like(u, float(min(0.0, np.min(u[known]))))
    mp = check_discrete_max_principle(sol, grid)
    summary = {
        "h": h,
        "span": list(span),
        "K": K,
        "nodes": grid.counts(),
        "residual": sol.residual,
        "method": sol.method,
        "max_principle": asdict(mp),
        "comparison_upper": asdict(check_comparison(u, top, grid)),
        "comparison_lower": asdict(check_comparison(bottom, u, grid)),
    }
    return SolveResult(grid, sol, js, [layers.tau(j) for j in js], M, summary)


def decay_exponent(taus, M) -> float:
    """Theil-Sen slope of -ln M against tau."""
    return float(-stats.theilslopes(np.log(np.asarray(M)), np.asarray(taus))[0])


def stage_solve(ctx: Context) -> dict:
    def run():
        cfg = ctx.cfg
        sv = cfg.raw["solver"]
        h = float(sv["h"])
        _, K = cfg.span_j()
        extra = int(sv["truncation_extra"])
        base = solve_span(cfg, K, h)
        res = {"base": base}
        report = {"base": base.summary, "flags": list(cfg.flags)}
        if extra:
            longer = solve_span(cfg, K + extra, h)
            res["long"] = longer
            report["truncation"] = {"K": K, "K_long": K + extra, "sensitivity": truncation_sensitivity(base.M, longer.M)}
        if sv["refine"]:
            fine = solve_span(cfg, K, h / 2)
            res["fine"] = fine
            c_h, c_h2 = decay_exponent(base.taus, base.M), decay_exponent(fine.taus, fine.M)
            report["refinement"] = {
                "h": h,
                "h_half": h / 2,
                "decay_exponent_h": c_h,
                "decay_exponent_h_half": c_h2,
                "relative_change": abs(c_h / c_h2 - 1) if c_h2 else "inf",
                "fine": fine.summary,
            }
        report["decay_exponent"] = decay_exponent(base.taus, base.M)
        for key, r in res.items():
            for name in ("max_principle",):
                if not r.summary[name]["ok"]:
                    raise StageError("solve", f"discrete maximum principle violated ({key} grid)")
            for name in ("comparison_upper", "comparison_lower"):
                if r.summary[name]["status"] == "fail":
                    raise StageError("solve", f"discrete comparison failed ({key} grid, {name})")
        ctx.write("solve.json", dumps(report))
        rows = [["j", "tau", "M"]] + [[j, t, m] for j, t, m in zip(base.js, base.taus, base.M)]
        ctx.write("profile.csv", csv_text(rows))
        return res

    return ctx.timed("solve", run)


def stage_growth(ctx: Context, caps: dict, solved: dict) -> list:
    def run():
        cfg = ctx.cfg
        g = cfg.raw["growth"]
        layers = cfg.layers()
        base = solved["base"]
        checks, rows = [], [["j", "status", "measured", "predicted", "margin", "traced_factor"]]
        for j in base.js:
            lc = caps["layers"][j]
            gf = layer_growth_factor(lc, layers, j, C_abs=float(g["C_abs"]), form=g["form"], alpha=float(g["alpha"]))
            tr = layer_growth_factor(lc, layers, j, C_abs=float(g["C_abs"]), form="traced", alpha=float(g["alpha"]))
            chk = empirical_growth_check(base.solution, base.grid, layers, j, gf)
            d = chk.to_dict()
            d.update(factor=gf.to_dict(), traced_factor=tr.to_dict())
            checks.append(d)
            rows.append([j, chk.status, chk.measured, chk.predicted, chk.margin, tr.inverse])
        ctx.write("growth.json", dumps({"checks": checks, "C_abs": g["C_abs"], "form": g["form"], "alpha": g["alpha"]}))
        ctx.write("growth.csv", csv_text(rows))
        bad = [c["j"] for c in checks if c["status"] == "fail"]
        if bad:
            raise StageError("growth", f"measured growth below the predicted factor at j={bad[0]}")
        return checks

    return ctx.timed("growth", run)


def stage_dichotomy(ctx: Context, caps: dict, solved: dict) -> DichotomyReport:
    def run():
        cfg = ctx.cfg
        g = cfg.raw["growth"]
        layers = cfg.layers()
        base = solved["base"]
        series = series_from_layers(caps["layers"], layers, base.js, float(g["C_abs"]), g["form"], float(g["alpha"]))
        cls = classify(base.M)
        env = envelopes(series, base.M, cls)
        trunc = None
        if "long" in solved:
            trunc = truncation_sensitivity(base.M, solved["long"].M)
        rep = DichotomyReport(list(base.js), list(base.taus), base.M.tolist(), cls, series, env, trunc)
        rep.extra["decay_exponent"] = decay_exponent(base.taus, base.M) if np.all(base.M > 0) else None
        ctx.write("dichotomy.json", dumps(rep.to_dict()))
        ctx.write("dichotomy.csv", csv_text(rep.csv_rows()))
        return rep

    return ctx.timed("dichotomy", run)


def stage_constants(ctx: Context, overrides: dict | None = None) -> list:
    def run():
        cfg = ctx.cfg
        c = dict(cfg.raw["constants"])
        for k, v in (overrides or {}).items():
            if v is not None:
                c[k] = v
        L = cfg.raw["layers"]
        a = float(c["a"] if c["a"] is not None else L["a"])
        q = float(c["q"] if c["q"] is not None else L["q"])
        N0 = int(c["N0"] if c["N0"] is not None else L["N0"])
        s_list = c["s"] if isinstance(c["s"], (list, tuple)) else [c["s"]]
        alpha = float(cfg.raw["growth"]["alpha"])
        try:
            table = [GrowthConstants(a, q, N0, float(s), alpha).to_dict() for s in s_list]
        except ValueError as e:
            raise ConfigError(f"constants: {e}") from e
        ctx.write("constants.json", dumps({"constants": table, "C_abs": cfg.raw["growth"]["C_abs"], "C_abs_calibrated": calibrate_c_abs(alpha=alpha)}))
        cols = ["a", "q", "N0", "s", "alpha", "eta1", "eta2", "eta3", "beta0", "tau", "lam", "boundary_q"]
        ctx.write("constants.csv", csv_text([cols] + [[row[k] for k in cols] for row in table]))
        return table

    return ctx.timed("constants", run)


def stage_asymptotics(ctx: Context):
    def run():
        cfg = ctx.cfg
        A = cfg.raw["asymptotics"]
        p = cfg.degeneration()
        lam = float(A["lam"])
        Ns = [int(n) for n in A["Ns"]]
        try:
            main = degenerate_sum_asymptotic(p, lam, Ns, corrected=bool(A["corrected"]))
            control = degenerate_sum_asymptotic(p, lam, Ns, corrected=False, check=False)
        except ValueError as e:
            raise StageError("asymptotics", str(e)) from e
        ctx.write("asymptotics.json", dumps({"main": main.to_dict(), "control": control.to_dict(), "p": p.to_dict()}))
        rows = [["N", "exact", "predicted", "ratio", "control_ratio"]]
        for r, rc in zip(main.rows, control.rows):
            rows.append([r.N, r.exact, r.predicted, r.ratio, rc.ratio])
        ctx.write("asymptotics.csv", csv_text(rows))
        return main, control

    return ctx.timed("asymptotics", run)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    versions: dict
    timings: dict
    files: dict
    status: str = "ok"
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _versions() -> dict:
    import pyamg
    import scipy
    import yaml

    return {
        "zaremba_pl": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyamg": pyamg.__version__,
        "pyyaml": yaml.__version__,
    }


COMMANDS = ("run", "admissibility", "capacity", "solve", "constants", "dichotomy", "asymptotics")


def execute(command: str, cfg: ExperimentConfig, out: Path, jobs: int = 1, overrides: dict | None = None) -> tuple[int, RunManifest]:
    """Run one command; returns (exit status, manifest).  Config errors propagate as ConfigError."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    ctx = Context(cfg, Path(out), max(1, int(jobs)))
    status, msg = EXIT_OK, ""
    try:
        ctx.write("effective_config.yaml", cfg.dump())
        if command == "admissibility":
            stage_admissibility(ctx)
        elif command == "capacity":
            stage_capacity(ctx)
        elif command == "solve":
            stage_solve(ctx)
        elif command == "constants":
            stage_constants(ctx, overrides)
        elif command == "asymptotics":
            stage_asymptotics(ctx)
        elif command == "dichotomy":
            caps = stage_capacity(ctx)
            stage_dichotomy(ctx, caps, stage_solve(ctx))
        else:
            require_admissible(ctx, stage_admissibility(ctx))
            caps = stage_capacity(ctx)
            solved = stage_solve(ctx)
            stage_growth(ctx, caps, solved)
            stage_dichotomy(ctx, caps, solved)
    except StageError as e:
        status, msg = EXIT_STAGE, str(e)
    manifest = RunManifest(command, cfg.digest(), int(cfg.raw["seed"]), _versions(), dict(ctx.timings), dict(sorted(ctx.files.items())), "ok" if status == EXIT_OK else "failed", msg)
    text = json.dumps(clean(manifest.to_dict()), sort_keys=True, indent=2) + "\n"
    (ctx.out / "run_manifest.json").parent.mkdir(parents=True, exist_ok=True)
    (ctx.out / "run_manifest.json").write_text(text)
    return status, manifest


def limit_threads(jobs: int):
    """Cap BLAS/OpenMP pools; returns a context manager (no-op if threadpoolctl is missing)."""
    os.environ.setdefault("OMP_NUM_THREADS", str(jobs))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=jobs)
