"""Funnel-type domains, layer sequences and admissibility checks.

A domain is the product-type set

    D~ = {(x1, f(x1) y) : y in Omega, x1 > start}

with a convex base ``Omega`` in R^(n-1) containing the origin, a positive
profile ``f`` and a union ``G`` of closed axial cylinders (the obstacles).
The working domain is ``D = D~ \\ G``; the lateral surface of ``D~`` carries
the oblique-derivative condition and the obstacle surfaces carry the
Dirichlet condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.interpolate import PchipInterpolator
from scipy.spatial import ConvexHull
from scipy.stats import norm, qmc

H_GEO = 1e-9


class DomainError(ValueError):
    """Raised when a point or a geometric request does not fit the domain."""


class ProfileError(ValueError):
    """Raised when a profile cannot produce a layer sequence."""


class Membership(IntEnum):
    INTERIOR = 0
    IN_G = 1
    ON_GAMMA1 = 2
    ON_GAMMA2 = 3
    OUTSIDE = 4


# --------------------------------------------------------------------------
# Profiles
# --------------------------------------------------------------------------

_SLOW_FACTORS = ("none", "log", "loglog")


@dataclass(frozen=True)
class Profile:
    """Positive profile ``f`` of a funnel domain.

    Kinds
    -----
    ``power``      f(t) = scale * t**alpha, alpha < 1
    ``regular``    f(t) = scale * t**alpha * phi(t), phi = (ln t)**beta or
                   (ln ln t)**beta (``slow`` = "log" / "loglog")
    ``cone``       f(t) = scale * t (acute cone; not sub-linear)
    ``tabulated``  monotone cubic interpolation of (t, f) samples
    ``callable``   user functions ``func`` and optional ``deriv``
    """

    kind: str = "power"
    alpha: float = 0.0
    scale: float = 1.0
    slow: str = "none"
    beta: float = 1.0
    start: float = 1.0
    samples: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    deriv: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("power", "regular", "cone", "tabulated", "callable"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind in ("power", "regular") and not self.alpha < 1:
            raise ValueError("profile exponent must satisfy alpha < 1")
        if self.kind == "regular" and self.slow not in _SLOW_FACTORS:
            raise ValueError(f"slowly varying factor must be one of {_SLOW_FACTORS}")
        if self.kind == "tabulated" and self.samples is None:
            raise ValueError("tabulated profile needs samples")
        if self.kind == "callable" and self.func is None:
            raise ValueError("callable profile needs func")
        if self.scale <= 0:
            raise ValueError("profile scale must be positive")

    @classmethod
    def power(cls, alpha: float, scale: float = 1.0, start: float = 1.0) -> "Profile":
        return cls(kind="power", alpha=alpha, scale=scale, start=start)

    @classmethod
    def cone(cls, slope: float, start: float = 1.0) -> "Profile":
        return cls(kind="cone", scale=slope, start=start)

    @classmethod
    def from_callable(cls, func, deriv=None, start: float = 1.0) -> "Profile":
        return cls(kind="callable", func=func, deriv=deriv, start=start)

    @classmethod
    def tabulated(cls, t, f, start: float | None = None) -> "Profile":
        t = tuple(float(v) for v in t)
        f = tuple(float(v) for v in f)
        return cls(kind="tabulated", samples=(t, f), start=t[0] if start is None else start)

    def _interp(self) -> PchipInterpolator:
        t, f = self.samples
        return PchipInterpolator(np.asarray(t), np.asarray(f), extrapolate=True)

    def _slow(self, t):
        if self.kind != "regular" or self.slow == "none":
            return np.ones_like(t), np.zeros_like(t)
        lt = np.log(t)
        if self.slow == "log":
            phi = lt**self.beta
            dphi = self.beta * lt ** (self.beta - 1) / t
        else:
            llt = np.log(lt)
            phi = llt**self.beta
            dphi = self.beta * llt ** (self.beta - 1) / (t * lt)
        return phi, dphi

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "power":
            return self.scale * t**self.alpha
        if self.kind == "cone":
            return self.scale * t
        if self.kind == "regular":
            phi, _ = self._slow(t)
            return self.scale * t**self.alpha * phi
        if self.kind == "tabulated":
            return self._interp()(t)
        return np.asarray(self.func(t), dtype=float)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "power":
            return self.scale * self.alpha * t ** (self.alpha - 1)
        if self.kind == "cone":
            return np.full_like(t, self.scale)
        if self.kind == "regular":
            phi, dphi = self._slow(t)
            return self.scale * (self.alpha * t ** (self.alpha - 1) * phi + t**self.alpha * dphi)
        if self.kind == "tabulated":
            return self._interp().derivative()(t)
        if self.deriv is not None:
            return np.asarray(self.deriv(t), dtype=float)
        step = 1e-6 * np.maximum(1.0, np.abs(t))
        return (np.asarray(self.func(t + step)) - np.asarray(self.func(t - step))) / (2 * step)

    def dilated(self, factor: float) -> "Profile":
        """Profile of the domain scaled by ``factor``: t -> factor * f(t / factor)."""
        if factor <= 0:
            raise ValueError("dilation factor must be positive")
        if self.kind == "power":
            return replace(self, scale=self.scale * factor ** (1 - self.alpha), start=self.start * factor)
        if self.kind == "cone":
            return replace(self, start=self.start * factor)
        base = self
        return Profile.from_callable(
            lambda t: factor * base(np.asarray(t) / factor),
            lambda t: base.derivative(np.asarray(t) / factor),
            start=self.start * factor,
        )

    def check_positive(self, t_max: float, samples: int = 512) -> None:
        t = np.geomspace(self.start, max(t_max, self.start * (1 + 1e-9)), samples)
        if not np.all(self(t) > 0):
            raise ProfileError("profile must be positive on its domain")


# --------------------------------------------------------------------------
# Convex bases
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BallBase:
    """Ball of given radius centred at the origin of R^m."""

    dim: int
    radius: float = 1.0

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def inradius(self) -> float:
        return self.radius

    @property
    def center(self) -> np.ndarray:
        return np.zeros(self.dim)

    def depth(self, y):
        """Signed distance to the boundary, positive inside."""
        y = np.atleast_2d(y)
        return self.radius - np.linalg.norm(y, axis=1)

    def normal(self, y) -> np.ndarray:
        y = np.atleast_2d(y)
        return y / np.linalg.norm(y, axis=1, keepdims=True)

    def boundary_points(self, directions: np.ndarray) -> np.ndarray:
        d = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        return self.radius * d

    def gauge_extent(self, directions: np.ndarray) -> np.ndarray:
        return np.full(len(directions), self.radius)

    def bounding_radius(self) -> float:
        return self.radius


@dataclass(frozen=True)
class PolytopeBase:
    """Convex polytope in R^m given by its vertices (origin must be interior)."""

    vertices: tuple[tuple[float, ...], ...]
    normals: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        hull = ConvexHull(v)
        if len(hull.vertices) != len(v):
            raise DomainError("polytope base is not convex: some vertices are interior")
        eq = hull.equations
        normals = eq[:, :-1]
        offsets = -eq[:, -1]
        # merge coplanar facets produced by triangulation
        key = np.round(np.hstack([normals, offsets[:, None]]), 12)
        _, idx = np.unique(key, axis=0, return_index=True)
        idx = np.sort(idx)
        normals, offsets = normals[idx], offsets[idx]
        if not np.all(offsets > 0):
            raise DomainError("polytope base must contain the origin in its interior")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @property
    def dim(self) -> int:
        return len(self.vertices[0])

    @property
    def diameter(self) -> float:
        v = np.asarray(self.vertices)
        return float(np.max(np.linalg.norm(v[:, None] - v[None], axis=-1)))

    @property
    def inradius(self) -> float:
        return self._chebyshev()[1]

    @property
    def center(self) -> np.ndarray:
        return self._chebyshev()[0]

    def _chebyshev(self):
        m = self.dim
        c = np.zeros(m + 1)
        c[-1] = -1.0
        a_ub = np.hstack([self.normals, np.ones((len(self.normals), 1))])
        res = optimize.linprog(c, A_ub=a_ub, b_ub=self.offsets, bounds=[(None, None)] * m + [(0, None)], method="highs")
        return res.x[:m], float(res.x[-1])

    def depth(self, y):
        y = np.atleast_2d(y)
        return np.min(self.offsets[None, :] - y @ self.normals.T, axis=1)

    def normal(self, y, tol: float = 1e-7) -> np.ndarray:
        """Supporting-plane normal; average of active facet normals at edges."""
        y = np.atleast_2d(y)
        gap = self.offsets[None, :] - y @ self.normals.T
        out = np.empty_like(y)
        for k in range(len(y)):
            active = gap[k] <= tol * max(1.0, float(np.max(self.offsets)))
            if not np.any(active):
                active = gap[k] == gap[k].min()
            nrm = self.normals[active].sum(axis=0)
            out[k] = nrm / np.linalg.norm(nrm)
        return out

    def gauge_extent(self, directions: np.ndarray) -> np.ndarray:
        d = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        proj = d @ self.normals.T
        with np.errstate(divide="ignore"):
            ratio = np.where(proj > 0, self.offsets[None, :] / np.where(proj > 0, proj, 1.0), np.inf)
        return ratio.min(axis=1)

    def boundary_points(self, directions: np.ndarray) -> np.ndarray:
        d = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        return d * self.gauge_extent(d)[:, None]

    def bounding_radius(self) -> float:
        return float(np.max(np.linalg.norm(np.asarray(self.vertices), axis=1)))


# --------------------------------------------------------------------------
# Domains
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Obstacle:
    """Closed axial cylinder {|x_bar| <= c f(t0), t0 <= x1 <= t1}."""

    radius_factor: float
    span: tuple[float, float]

    def radius(self, profile: Profile) -> float:
        return float(self.radius_factor * profile(self.span[0]))


@dataclass(frozen=True)
class DomainSpec:
    n: int
    base: BallBase | PolytopeBase
    profile: Profile
    obstacles: tuple[Obstacle, ...] = ()
    h_geo: float = H_GEO

    def __post_init__(self):
        if self.n < 3:
            raise DomainError("dimension must be at least 3")
        if self.base.dim != self.n - 1:
            raise DomainError("base must live in dimension n - 1")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def start(self) -> float:
        return self.profile.start

    def obstacle_radii(self) -> np.ndarray:
        return np.array([ob.radius(self.profile) for ob in self.obstacles])

    def dilate(self, factor: float) -> "DomainSpec":
        obs = tuple(
            Obstacle(ob.radius_factor, (ob.span[0] * factor, ob.span[1] * factor)) for ob in self.obstacles
        )
        base = self.base
        return replace(self, profile=self.profile.dilated(factor), obstacles=obs, base=base)

    def check_obstacles(self, samples: int = 64) -> None:
        """Every obstacle cylinder must sit inside the ambient funnel."""
        depth0 = float(self.base.depth(np.zeros((1, self.n - 1)))[0])
        for ob in self.obstacles:
            if ob.span[0] < self.start or ob.span[1] <= ob.span[0]:
                raise DomainError(f"obstacle span {ob.span} invalid for domain start {self.start}")
            t = np.linspace(ob.span[0], ob.span[1], samples)
            if not np.all(ob.radius(self.profile) < depth0 * self.profile(t)):
                raise DomainError(f"obstacle on {ob.span} leaves the funnel")


def cylinder_domain(n: int = 3, radius: float = 1.0, obstacles: Sequence[Obstacle] = (), start: float = 1.0) -> DomainSpec:
    return DomainSpec(n, BallBase(n - 1, 1.0), Profile.power(0.0, scale=radius, start=start), tuple(obstacles))


def funnel_domain(alpha: float, n: int = 3, obstacles: Sequence[Obstacle] = (), start: float = 1.0) -> DomainSpec:
    return DomainSpec(n, BallBase(n - 1, 1.0), Profile.power(alpha, start=start), tuple(obstacles))


def periodic_disks(taus: Sequence[float], radius_factor: float, half_width: float) -> tuple[Obstacle, ...]:
    """Short obstacle cylinders centred at each cut position."""
    return tuple(Obstacle(radius_factor, (float(t) - half_width, float(t) + half_width)) for t in taus)


def classify_points(domain: DomainSpec, x) -> np.ndarray:
    """Vectorised membership classification (values of :class:`Membership`)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x1 = x[:, 0]
    xb = x[:, 1:]
    out = np.full(len(x), Membership.INTERIOR, dtype=np.int8)
    inside_start = x1 >= domain.start * (1 - domain.h_geo)
    t = np.maximum(x1, domain.start)
    f = domain.profile(t)
    band = domain.h_geo * f
    lateral = domain.base.depth(xb / f[:, None]) * f
    on2 = np.abs(lateral) <= band
    outside = (lateral < -band) | ~inside_start
    rb = np.linalg.norm(xb, axis=1)
    for ob in domain.obstacles:
        r = ob.radius(domain.profile)
        tol = domain.h_geo * r
        t0, t1 = ob.span
        closed = (rb <= r + tol) & (x1 >= t0 - tol) & (x1 <= t1 + tol)
        strict = (rb < r - tol) & (x1 > t0 + tol) & (x1 < t1 - tol)
        out[closed & ~strict & (out != Membership.IN_G)] = Membership.ON_GAMMA1
        out[strict] = Membership.IN_G
    out[on2] = Membership.ON_GAMMA2
    out[outside] = Membership.OUTSIDE
    return out


def contains(domain: DomainSpec, x) -> Membership:
    """Membership class of a single point."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("point must be finite")
    return Membership(int(classify_points(domain, x[None, :])[0]))


def lateral_projection(domain: DomainSpec, x) -> np.ndarray:
    """Project points radially (within their cross-section) onto the lateral surface."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = domain.profile(np.maximum(x[:, 0], domain.start))
    yb = x[:, 1:] / f[:, None]
    norm_y = np.linalg.norm(yb, axis=1)
    safe = np.where(norm_y > 0, norm_y, 1.0)
    d = np.where(norm_y[:, None] > 0, yb / safe[:, None], np.eye(1, yb.shape[1]))
    yb_on = domain.base.boundary_points(d)
    out = x.copy()
    out[:, 1:] = yb_on * f[:, None]
    return out


def outward_field(domain: DomainSpec, x, *, check: bool = True) -> np.ndarray:
    """Unit oblique field on the lateral boundary (outward, supporting-plane based)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if check:
        cls = classify_points(domain, x)
        if np.any(cls != Membership.ON_GAMMA2):
            raise DomainError("outward_field requires points on the lateral boundary")
    f = domain.profile(x[:, 0])
    df = domain.profile.derivative(x[:, 0])
    nb = domain.base.normal(x[:, 1:] / f[:, None])
    ell = np.hstack([-df[:, None], nb]) / np.sqrt(1 + df**2)[:, None]
    return ell[0] if ell.shape[0] == 1 else ell


def ell_field(domain: DomainSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Field usable at grid nodes near the lateral boundary (evaluated at the projection)."""

    def field_at(x):
        return np.atleast_2d(outward_field(domain, lateral_projection(domain, x), check=False))

    return field_at


def distance_to_lateral(domain: DomainSpec, z, window: float | None = None, samples: int = 401) -> float:
    """Euclidean distance from an interior point to the lateral surface."""
    z = np.asarray(z, dtype=float)
    f0 = float(domain.profile(max(z[0], domain.start)))
    if window is None:
        window = 2.0 * domain.base.bounding_radius() * f0 + 1e-12

    def in_plane(t):
        t = np.atleast_1d(t)
        ft = domain.profile(t)
        d = domain.base.depth(np.repeat(z[None, 1:], len(t), 0) / ft[:, None]) * ft
        return np.sqrt((t - z[0]) ** 2 + d**2)

    lo = max(domain.start, z[0] - window)
    t = np.linspace(lo, z[0] + window, samples)
    vals = in_plane(t)
    k = int(np.argmin(vals))
    a, b = t[max(k - 1, 0)], t[min(k + 1, samples - 1)]
    if b > a:
        res = optimize.minimize_scalar(lambda s: float(in_plane(s)[0]), bounds=(a, b), method="bounded", options={"xatol": 1e-12})
        return float(min(vals[k], res.fun))
    return float(vals[k])


# --------------------------------------------------------------------------
# Layer sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSequence:
    """Cut positions tau_1 < tau_2 < ... (1-based in every accessor)."""

    taus: tuple[float, ...]
    rho: float = 1.0
    a: float = 1.5
    q: float = 0.2
    N0: int = 2

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        object.__setattr__(self, "taus", tuple(float(t) for t in taus))
        if len(taus) < 2 or np.any(np.diff(taus) <= 0):
            raise ValueError("taus must be strictly increasing (at least two cuts)")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if not 1 < self.a < 4:
            raise ValueError("admissibility parameter a must lie in (1, 4)")
        if not 0 < self.q < self.a / 4:
            raise ValueError("admissibility parameter q must lie in (0, a/4)")
        if int(self.N0) != self.N0 or self.N0 < 1:
            raise ValueError("N0 must be a positive integer")

    @property
    def J(self) -> int:
        return len(self.taus)

    @property
    def lam(self) -> float:
        return 2 * self.q**self.N0 / self.a

    def tau(self, j: int) -> float:
        if not 1 <= j <= self.J:
            raise IndexError(f"layer index {j} outside 1..{self.J}")
        return self.taus[j - 1]

    def R(self, j: int) -> float:
        return self.rho * (self.tau(j + 1) - self.tau(j))

    @property
    def radii(self) -> np.ndarray:
        return self.rho * np.diff(np.asarray(self.taus))

    def with_params(self, **kw) -> "LayerSequence":
        return replace(self, **kw)


def _monotone_ratio_check(profile: Profile, t_hi: float) -> None:
    t = np.geomspace(profile.start, t_hi, 2048)
    ratio = t / profile(t)
    if not np.all(np.diff(ratio) > 0):
        bad = t[1:][np.diff(ratio) <= 0][0]
        raise ProfileError(f"t/f(t) is not increasing near t={bad:.6g}")


def tau_sequence(profile: Profile, J: int, rho: float = 1.0, **adm) -> LayerSequence:
    """Cut positions tau_j = F(j), F the inverse of t/f(t), for j = 1..J."""
    if J < 2:
        raise ValueError("need at least two cut positions")
    j = np.arange(1, J + 1, dtype=float)
    if profile.kind == "power":
        taus = (profile.scale * j) ** (1.0 / (1.0 - profile.alpha))
        if profile.alpha == 0:
            taus = profile.scale * j
        return LayerSequence(tuple(taus), rho, **adm)
    if profile.kind == "cone":
        raise ProfileError("t/f(t) is constant for a cone; give the cut positions explicitly")
    # bracket: t/f(t) = j
    hi = profile.start * 2
    while hi / float(profile(hi)) < J:
        hi *= 2
        if hi > 1e300:
            raise ProfileError("t/f(t) does not reach the requested level")
    _monotone_ratio_check(profile, hi)
    g = lambda t, level: t / float(profile(t)) - level  # noqa: E731
    lo = profile.start
    taus = []
    for level in j:
        if g(lo, level) > 0:
            raise ProfileError(f"t/f(t) already exceeds {level} at the domain start")
        taus.append(optimize.brentq(g, lo, hi, args=(level,), xtol=1e-300, rtol=1e-14, maxiter=500))
    return LayerSequence(tuple(taus), rho, **adm)


@dataclass
class ProfileReport:
    C_feqvR: float
    subexp_ok: bool
    ok: bool
    reason: str = ""


def check_profile_conditions(
    profile: Profile, layers: LayerSequence, window: tuple[int, int] | None = None, samples: int = 64, cap: float = 1e6
) -> ProfileReport:
    """Smallest sampled C with R_j / C <= f <= C R_j near each cut, and f' -> 0."""
    lo, hi = window if window is not None else (2, layers.J - 1)
    lo = max(lo, 2)
    hi = min(hi, layers.J - 1)
    if hi < lo:
        raise ValueError("window must contain at least one layer with two neighbours")
    worst = 1.0
    for j in range(lo, hi + 1):
        t = np.linspace(layers.tau(j - 1), layers.tau(j + 1), samples)
        r = layers.R(j)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            f = profile(t)
            ratio = np.concatenate([f / r, r / f])
        if not np.all(np.isfinite(ratio)):
            worst = math.inf
            break
        worst = max(worst, float(ratio.max()))
    tj = np.asarray([layers.tau(j) for j in range(lo, hi + 1)])
    with np.errstate(over="ignore", invalid="ignore"):
        dfs = np.abs(profile.derivative(tj))
    subexp_ok = bool(np.all(np.isfinite(dfs)) and np.all(np.diff(dfs) <= 1e-12 * np.maximum(1.0, dfs[:-1])))
    reasons = []
    if not (worst <= cap):
        reasons.append(f"no constant up to {cap:g} bounds f/R_j")
    if not subexp_ok:
        reasons.append("|f'| is not decreasing toward zero")
    return ProfileReport(worst, subexp_ok, not reasons, "; ".join(reasons))


# --------------------------------------------------------------------------
# Sampling helpers
# --------------------------------------------------------------------------


def _halton(dim: int, m: int, seed: int) -> np.ndarray:
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(m)


def _directions(u: np.ndarray) -> np.ndarray:
    """Map uniform samples in (0,1)^m to unit directions in R^m."""
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_cross_section(domain: DomainSpec, t: float, m: int, seed: int = 0, shrink: float = 1 - 1e-6) -> np.ndarray:
    """Low-discrepancy points of the cross-section {x1 = t} of the ambient funnel."""
    k = domain.n - 1
    u = _halton(k + 1, m, seed)
    d = _directions(u[:, :k])
    extent = domain.base.gauge_extent(d)
    radial = u[:, k] ** (1.0 / k)
    yb = d * (extent * radial * shrink)[:, None]
    f = float(domain.profile(t))
    return np.hstack([np.full((m, 1), t), f * yb])


def sample_lateral(domain: DomainSpec, center, radius: float, m: int, seed: int = 0, oversample: int = 32) -> np.ndarray:
    """Low-discrepancy points of the lateral surface inside B(center, radius)."""
    center = np.asarray(center, dtype=float)
    k = domain.n - 1
    u = _halton(k + 1, m * oversample, seed)
    t = np.clip(center[0] - radius + 2 * radius * u[:, 0], domain.start, None)
    d = _directions(u[:, 1:])
    pts = np.hstack([t[:, None], domain.base.boundary_points(d) * domain.profile(t)[:, None]])
    keep = np.linalg.norm(pts - center, axis=1) < radius
    return pts[keep][:m]


def sample_layer(domain: DomainSpec, layers: LayerSequence, j: int, m: int, seed: int = 0) -> np.ndarray:
    """Low-discrepancy points of D(j-1, j+1) (obstacles removed)."""
    t0, t1 = layers.tau(j - 1), layers.tau(j + 1)
    k = domain.n - 1
    u = _halton(k + 2, 2 * m, seed)
    t = t0 + (t1 - t0) * u[:, 0]
    d = _directions(u[:, 1 : k + 1])
    radial = u[:, k + 1] ** (1.0 / k)
    yb = d * (domain.base.gauge_extent(d) * radial)[:, None]
    pts = np.hstack([t[:, None], yb * domain.profile(t)[:, None]])
    cls = classify_points(domain, pts)
    pts = pts[(cls == Membership.INTERIOR) | (cls == Membership.ON_GAMMA2)]
    return pts[:m]


# --------------------------------------------------------------------------
# Admissibility
# --------------------------------------------------------------------------


@dataclass
class ChainResult:
    ok: bool
    points: list[np.ndarray]
    xi: np.ndarray
    worst_overlap: float = math.inf
    reason: str = ""

    @property
    def N(self) -> int:
        return len(self.points) - 1


def chain_start(domain: DomainSpec, layers: LayerSequence, j: int) -> np.ndarray:
    t = layers.tau(j)
    return np.concatenate([[t], domain.profile(t) * domain.base.center])


def _in_ambient(domain: DomainSpec, x) -> bool:
    return contains(replace(domain, obstacles=()), x) == Membership.INTERIOR


def ball_chain(
    domain: DomainSpec,
    layers: LayerSequence,
    j: int,
    xi,
    z0=None,
    reach: float = 0.9,
) -> ChainResult:
    """Collinear chain z^0 -> xi of balls B(z^i, R_j) with qR_j-balls in every overlap.

    Consecutive centres are at most 2R(1-q) apart so the lens contains the
    ball of radius R - d/2 >= qR about the midpoint; that ball must also
    sit inside the ambient funnel.
    """
    xi = np.asarray(xi, dtype=float)
    R = layers.R(j)
    q = layers.q
    z0 = chain_start(domain, layers, j) if z0 is None else np.asarray(z0, dtype=float)
    v = xi - z0
    dist = float(np.linalg.norm(v))
    if dist < R:
        return ChainResult(True, [z0], xi)
    target = dist - reach * R
    dmax = 2 * R * (1 - q) * (1 - 1e-9)
    steps = max(1, math.ceil(target / dmax))
    if steps > layers.N0:
        return ChainResult(False, [z0], xi, reason=f"needs {steps} steps > N0={layers.N0}")
    pts = [z0 + v * (target * i / steps) / dist for i in range(steps + 1)]
    worst = math.inf
    for p0, p1 in zip(pts[:-1], pts[1:]):
        d = float(np.linalg.norm(p1 - p0))
        lens = R - d / 2
        mid = 0.5 * (p0 + p1)
        room = distance_to_lateral(domain, mid) if _in_ambient(domain, mid) else -math.inf
        margin = min(lens, room) - q * R
        worst = min(worst, margin)
        if margin < 0:
            return ChainResult(False, pts, xi, worst, reason="overlap does not contain a ball of radius qR")
    return ChainResult(True, pts, xi, worst)


@dataclass
class LayerAdmissibility:
    j: int
    R: float
    A_margin: float
    B_ok: bool
    B_max_steps: int
    B_worst_overlap: float
    C_margin: float
    ok: bool
    failed: str = ""
    witness: list[float] | None = None


@dataclass
class AdmissibilityReport:
    layers: list[LayerAdmissibility]
    j_star: int | None
    status: str = "sampled-verified"
    params: dict = field(default_factory=dict)

    @property
    def admissible(self) -> bool:
        return self.j_star is not None

    def to_dict(self) -> dict:
        return {
            "status": self.status if self.admissible else "not-admissible",
            "j_star": self.j_star,
            "params": self.params,
            "layers": [vars(lr) for lr in self.layers],
        }


def check_admissibility(
    domain: DomainSpec,
    layers: LayerSequence,
    window: tuple[int, int],
    n_xi: int = 64,
    n_gamma: int = 256,
    seed: int = 0,
    tol_geo: float = 1e-9,
) -> AdmissibilityReport:
    """Sampled verification of conditions (A), (B), (C) for each j in ``window``."""
    lo, hi = window
    if lo < 1 or hi > layers.J - 1 or hi < lo:
        raise ValueError(f"window must lie within 1..{layers.J - 1}")
    ambient = replace(domain, obstacles=())
    a = layers.a
    results = []
    for j in range(lo, hi + 1):
        R = layers.R(j)
        z0 = chain_start(domain, layers, j)
        A_margin = distance_to_lateral(domain, z0, window=a * R + domain.profile(layers.tau(j)) * domain.base.bounding_radius()) - a * R
        row = LayerAdmissibility(j, R, A_margin, True, 0, math.inf, math.inf, True)
        if A_margin < 0:
            row.ok, row.failed, row.witness = False, "A", z0.tolist()
        xis = sample_cross_section(domain, layers.tau(j), n_xi, seed=seed + j)
        centers: list[np.ndarray] = []
        for xi in xis:
            chain = ball_chain(domain, layers, j, xi, z0=z0)
            row.B_max_steps = max(row.B_max_steps, chain.N)
            row.B_worst_overlap = min(row.B_worst_overlap, chain.worst_overlap)
            if not chain.ok:
                row.B_ok = False
                if row.ok:
                    row.ok, row.failed, row.witness = False, "B", xi.tolist()
                continue
            centers.extend(chain.points[1:])
        if centers:
            uniq = np.unique(np.round(np.asarray(centers), 12), axis=0)
            for zi in uniq:
                gam = sample_lateral(ambient, zi, a * R, n_gamma, seed=seed + 7 * j)
                if len(gam) == 0:
                    continue
                ell = outward_field(ambient, gam, check=False)
                ell = np.atleast_2d(ell)
                dots = np.einsum("ij,ij->i", gam - zi, ell)
                k = int(np.argmin(dots))
                if dots[k] < row.C_margin:
                    row.C_margin = float(dots[k])
                if dots[k] < -tol_geo and row.ok:
                    row.ok, row.failed, row.witness = False, "C", gam[k].tolist()
        results.append(row)
    j_star = None
    for k in range(len(results) - 1, -1, -1):
        if not results[k].ok:
            break
        j_star = results[k].j
    params = {"rho": layers.rho, "a": a, "q": layers.q, "N0": layers.N0, "n_xi": n_xi, "n_gamma": n_gamma, "seed": seed}
    return AdmissibilityReport(results, j_star, params=params)
