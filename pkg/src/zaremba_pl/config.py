"""Experiment configuration: YAML schema, defaults and validation.

A config is one YAML mapping with the sections below; every key is
optional except where noted.  ``effective()`` returns the fully expanded
mapping (defaults filled in), which reloads to an equal config.

    name: str
    seed: int
    domain:
      n: int                      # ambient dimension, >= 3
      base: {kind: ball, radius} | {kind: polytope, vertices: [[...], ...]}
      profile: {kind: power, alpha, scale, start}
             | {kind: regular, alpha, scale, slow: log|loglog, beta, start}
             | {kind: cone, slope, start}
             | {kind: tabulated, t: [...], f: [...]}
      obstacles: [{radius_factor, span: [t0, t1]}, ...]
               | {periodic: {radius_factor, half_width, j_from, j_to}}
    coefficients: {kind: identity} | {kind: constant, matrix}
                | {kind: diagonal, entries: [...]} | {kind: rotated, basis, entries}
    layers: {J, rho, a, q, N0, taus: optional explicit list}
    window: [j_lo, j_hi]          # layers used by capacity/growth/dichotomy
    admissibility: {window, n_xi, n_gamma}
    capacity: {resolution, ellipticity_samples, sets: [set descriptors], s}
    solver: {h, refine, span_j: [j0, K], outlet, inlet, phi, psi, tol, truncation_extra}
    growth: {C_abs, alpha, form}
    asymptotics: {p: {kind, c, beta|gamma}, lam, Ns, corrected}
    constants: {a, q, N0, s: [..]}
    output: {dir}
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import warnings
from pathlib import Path

import yaml

from .capacity import set_from_dict
from .coefficients import CoefficientField, DegenerationProfile
from .geometry import (
    BallBase,
    DomainSpec,
    LayerSequence,
    Obstacle,
    PolytopeBase,
    Profile,
    tau_sequence,
)
from .growth import C_ABS_DEFAULT


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "name": "experiment",
    "seed": 0,
    "domain": {
        "n": 3,
        "base": {"kind": "ball", "radius": 1.0},
        "profile": {"kind": "power", "alpha": 0.0, "scale": 1.0, "start": 1.0},
        "obstacles": [],
    },
    "coefficients": {"kind": "identity"},
    "layers": {"J": 12, "rho": 0.5, "a": 1.5, "q": 0.2, "N0": 2, "taus": None},
    "window": None,
    "admissibility": {"window": None, "n_xi": 64, "n_gamma": 256},
    "capacity": {"resolution": 0.05, "ellipticity_samples": 10000, "sets": [], "s": 1.0},
    "solver": {
        "h": 0.1,
        "refine": False,
        "span_j": None,
        "outlet": "oblique",
        "inlet": 1.0,
        "phi": 0.0,
        "psi": 0.0,
        "tol": 1e-10,
        "truncation_extra": 2,
    },
    "growth": {"C_abs": C_ABS_DEFAULT, "alpha": 0.5, "form": "packaged"},
    "asymptotics": {
        "p": {"kind": "log_power", "c": 1.0, "beta": 0.5},
        "lam": 0.4,
        "Ns": [1000, 10000, 100000, 1000000, 10000000],
        "corrected": True,
    },
    "constants": {"a": None, "q": None, "N0": None, "s": [1.0]},
    "output": {"dir": None},
}

_SECTIONS = set(DEFAULTS)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {path + k!r}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict) and k not in ("base", "profile", "p"):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig:
    """Validated experiment configuration with lazily built domain objects."""

    def __init__(self, raw: dict, source: str | None = None):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        self.raw = _merge(DEFAULTS, raw)
        self.source = source
        self.flags: list[str] = []
        self._validate()

    # -- loading -----------------------------------------------------------

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {p}") from e
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {p}: {e}") from e
        return cls(raw, str(p))

    def effective(self) -> dict:
        return copy.deepcopy(self.raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.effective(), sort_keys=True, default_flow_style=None)

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.raw == other.raw

    # -- builders ----------------------------------------------------------

    def profile(self) -> Profile:
        d = dict(self.raw["domain"]["profile"])
        kind = d.pop("kind", "power")
        try:
            if kind == "power":
                return Profile.power(float(d.get("alpha", 0.0)), float(d.get("scale", 1.0)), float(d.get("start", 1.0)))
            if kind == "regular":
                return Profile(kind="regular", alpha=float(d.get("alpha", 0.0)), scale=float(d.get("scale", 1.0)), slow=d.get("slow", "log"), beta=float(d.get("beta", 1.0)), start=float(d.get("start", 1.0)))
            if kind == "cone":
                return Profile.cone(float(d["slope"]), float(d.get("start", 1.0)))
            if kind == "tabulated":
                return Profile.tabulated(d["t"], d["f"], d.get("start"))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"domain.profile: {e}") from e
        raise ConfigError(f"domain.profile.kind {kind!r} not supported in configs")

    def base(self):
        d = self.raw["domain"]["base"]
        n = int(self.raw["domain"]["n"])
        if d.get("kind", "ball") == "ball":
            return BallBase(n - 1, float(d.get("radius", 1.0)))
        if d["kind"] == "polytope":
            return PolytopeBase(tuple(tuple(float(v) for v in row) for row in d["vertices"]))
        raise ConfigError(f"domain.base.kind {d['kind']!r} unknown")

    def layers(self) -> LayerSequence:
        L = self.raw["layers"]
        adm = {"a": float(L["a"]), "q": float(L["q"]), "N0": int(L["N0"])}
        try:
            if L.get("taus"):
                return LayerSequence(tuple(float(t) for t in L["taus"]), float(L["rho"]), **adm)
            return tau_sequence(self.profile(), int(L["J"]), float(L["rho"]), **adm)
        except ValueError as e:
            raise ConfigError(f"layers: {e}") from e

    def obstacles(self, layers: LayerSequence | None = None) -> tuple[Obstacle, ...]:
        ob = self.raw["domain"]["obstacles"]
        if isinstance(ob, dict):
            per = ob.get("periodic")
            if per is None:
                raise ConfigError("domain.obstacles mapping must contain 'periodic'")
            layers = layers or self.layers()
            j_from = int(per.get("j_from", 2))
            j_to = int(per.get("j_to", layers.J))
            w = float(per["half_width"])
            c = float(per["radius_factor"])
            return tuple(Obstacle(c, (layers.tau(j) - w, layers.tau(j) + w)) for j in range(j_from, j_to + 1))
        return tuple(Obstacle(float(o["radius_factor"]), (float(o["span"][0]), float(o["span"][1]))) for o in ob)

    def domain(self) -> DomainSpec:
        try:
            d = DomainSpec(int(self.raw["domain"]["n"]), self.base(), self.profile(), self.obstacles())
            d.check_obstacles()
        except ValueError as e:
            raise ConfigError(f"domain: {e}") from e
        return d

    def coefficients(self) -> CoefficientField:
        try:
            return CoefficientField.from_dict(self.raw["coefficients"], n=int(self.raw["domain"]["n"]))
        except (KeyError, ValueError) as e:
            raise ConfigError(f"coefficients: {e}") from e

    def window(self) -> tuple[int, int]:
        w = self.raw["window"]
        if w is None:
            return (2, self.span_j()[1] - 1)
        return int(w[0]), int(w[1])

    def admissibility_window(self) -> tuple[int, int]:
        w = self.raw["admissibility"]["window"]
        return self.window() if w is None else (int(w[0]), int(w[1]))

    def span_j(self) -> tuple[int, int]:
        s = self.raw["solver"]["span_j"]
        if s is None:
            J = self.layers().J
            return (1, J - int(self.raw["solver"]["truncation_extra"]))
        return int(s[0]), int(s[1])

    def degeneration(self) -> DegenerationProfile:
        try:
            return DegenerationProfile.from_dict(self.raw["asymptotics"]["p"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"asymptotics.p: {e}") from e

    def capacity_sets(self):
        try:
            return [set_from_dict(s) for s in self.raw["capacity"]["sets"]]
        except (KeyError, ValueError) as e:
            raise ConfigError(f"capacity.sets: {e}") from e

    def output_dir(self, override: str | None = None) -> Path:
        rel = override or self.raw["output"]["dir"] or os.path.join("runs", self.raw["name"])
        root = os.environ.get("ZPL_OUTPUT_ROOT")
        p = Path(rel)
        if root and not p.is_absolute():
            p = Path(root) / p
        return p

    # -- validation --------------------------------------------------------

    def _validate(self) -> None:
        r = self.raw
        if int(r["domain"]["n"]) < 3:
            raise ConfigError("domain.n must be at least 3")
        L = r["layers"]
        a, q, N0 = float(L["a"]), float(L["q"]), L["N0"]
        if not 1 < a < 4:
            raise ConfigError(f"layers.a = {a} must lie in (1, 4)")
        if not 0 < q < a / 4:
            raise ConfigError(f"layers.q = {q} must satisfy 0 < q < a/4 = {a / 4}")
        if int(N0) != N0 or int(N0) < 1:
            raise ConfigError("layers.N0 must be a positive integer")
        if not 0 < float(L["rho"]) <= 1:
            raise ConfigError("layers.rho must lie in (0, 1]")
        sv = r["solver"]
        if float(sv["h"]) <= 0:
            raise ConfigError("solver.h must be positive")
        if sv["outlet"] not in ("dirichlet", "oblique"):
            raise ConfigError("solver.outlet must be 'dirichlet' or 'oblique'")
        if r["growth"]["form"] not in ("packaged", "traced"):
            raise ConfigError("growth.form must be 'packaged' or 'traced'")
        lam = float(r["asymptotics"]["lam"])
        if not 0 < lam < 1:
            raise ConfigError("asymptotics.lam must lie in (0, 1)")
        # building objects surfaces remaining schema errors early
        self.profile()
        self.base()
        self.coefficients()
        self.degeneration()
        self.capacity_sets()
        layers = self.layers()
        lo, hi = self.window()
        if lo < 2 or hi > layers.J - 1 or lo > hi:
            raise ConfigError(f"window [{lo}, {hi}] must lie within 2..{layers.J - 1}")
        j0, K = self.span_j()
        extra = int(sv["truncation_extra"])
        if j0 < 1 or K + extra > layers.J or j0 >= K:
            raise ConfigError(f"solver.span_j [{j0}, {K}] (+{extra}) must lie within 1..{layers.J}")
        if not (j0 <= lo - 1 and hi + 1 <= K):
            raise ConfigError("window layers j-1..j+1 must lie inside the solver span")
        ob = r["domain"]["obstacles"]
        if isinstance(ob, dict) and "periodic" in ob:
            c = float(ob["periodic"]["radius_factor"])
            if 2 * c > 1:
                self.flags.append("2c > 1: obstacle radius factor exceeds the rho <= 1 regime")
                warnings.warn(self.flags[-1], stacklevel=2)
        if ob:
            dom = self.domain()
            t_lo, t_hi = layers.tau(j0), layers.tau(K + extra)
            for o in dom.obstacles:
                if o.span[0] < dom.start:
                    raise ConfigError(f"obstacle span {o.span} starts before the domain")
                if o.span[1] > t_hi + 1e-12 or o.span[0] < t_lo - 1e-12:
                    raise ConfigError(f"obstacle span {o.span} lies outside the solver span [{t_lo}, {t_hi}]")
