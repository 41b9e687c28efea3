"""Coefficient fields a(x), ellipticity and degeneration profiles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import DomainSpec, LayerSequence, sample_layer


class CoefficientError(ValueError):
    pass


class DegeneratePoint(CoefficientError):
    pass


# --------------------------------------------------------------------------
# Scalar families of x1
# --------------------------------------------------------------------------

SCALAR_FAMILIES = {
    "const": lambda t, c=1.0: np.full_like(t, c, dtype=float),
    "power_x1": lambda t, c=1.0, p=1.0: c * t**p,
    "affine_x1": lambda t, c0=1.0, c1=0.0: c0 + c1 * t,
    "log_x1": lambda t, c0=1.0, c1=1.0: c0 + c1 * np.log(t),
}


@dataclass(frozen=True)
class Scalar:
    """A named scalar function of x1 (see ``SCALAR_FAMILIES``)."""

    family: str = "const"
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.family not in SCALAR_FAMILIES:
            raise CoefficientError(f"unknown scalar family {self.family!r}; known: {sorted(SCALAR_FAMILIES)}")
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", tuple(sorted(self.params.items())))

    @classmethod
    def const(cls, c: float) -> "Scalar":
        return cls("const", (("c", float(c)),))

    def __call__(self, t):
        return SCALAR_FAMILIES[self.family](np.asarray(t, dtype=float), **dict(self.params))

    def to_dict(self) -> dict:
        return {"family": self.family, **dict(self.params)}

    @classmethod
    def from_dict(cls, d) -> "Scalar":
        if isinstance(d, (int, float)):
            return cls.const(d)
        d = dict(d)
        fam = d.pop("family", "const")
        return cls(fam, tuple(sorted((k, float(v)) for k, v in d.items())))


# --------------------------------------------------------------------------
# Coefficient fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric coefficient matrix a(x) from one of three formula families.

    ``constant``: a fixed matrix.  ``diagonal``: a_ii = scalar_i(x1).
    ``rotated``: a = Q diag(scalar_i(x1)) Q^T with a fixed orthogonal Q.
    """

    kind: str
    n: int
    matrix: tuple[tuple[float, ...], ...] | None = None
    scalars: tuple[Scalar, ...] = ()
    basis: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.kind == "constant":
            A = np.asarray(self.matrix, dtype=float)
            if A.shape != (self.n, self.n):
                raise CoefficientError("constant matrix has the wrong shape")
            if not np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
                raise CoefficientError("coefficient matrix must be symmetric")
            if np.linalg.eigvalsh(A)[0] <= 0:
                raise CoefficientError("coefficient matrix must be positive definite")
            object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in A))
        elif self.kind in ("diagonal", "rotated"):
            if len(self.scalars) != self.n:
                raise CoefficientError(f"{self.kind} field needs {self.n} scalar entries")
            if self.kind == "rotated":
                Q = np.asarray(self.basis, dtype=float)
                if Q.shape != (self.n, self.n) or not np.allclose(Q @ Q.T, np.eye(self.n), atol=1e-10):
                    raise CoefficientError("rotated field needs an orthogonal basis matrix")
                object.__setattr__(self, "basis", tuple(tuple(float(v) for v in row) for row in Q))
        else:
            raise CoefficientError(f"unknown coefficient kind {self.kind!r}")

    @classmethod
    def identity(cls, n: int) -> "CoefficientField":
        return cls("constant", n, matrix=tuple(map(tuple, np.eye(n))))

    @classmethod
    def constant(cls, A) -> "CoefficientField":
        A = np.asarray(A, dtype=float)
        return cls("constant", A.shape[0], matrix=tuple(map(tuple, A)))

    @classmethod
    def diagonal(cls, entries) -> "CoefficientField":
        sc = tuple(e if isinstance(e, Scalar) else Scalar.from_dict(e) for e in entries)
        return cls("diagonal", len(sc), scalars=sc)

    @classmethod
    def rotated(cls, basis, eigenvalues) -> "CoefficientField":
        sc = tuple(e if isinstance(e, Scalar) else Scalar.from_dict(e) for e in eigenvalues)
        return cls("rotated", len(sc), scalars=sc, basis=tuple(map(tuple, np.asarray(basis, dtype=float))))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or all(s.family == "const" for s in self.scalars)

    def __call__(self, x) -> np.ndarray:
        """Matrices a(x) with shape (m, n, n) for points of shape (m, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = len(x)
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.matrix), (m, self.n, self.n)).copy()
        lam = np.stack([s(x[:, 0]) for s in self.scalars], axis=1)
        if self.kind == "diagonal":
            out = np.zeros((m, self.n, self.n))
            idx = np.arange(self.n)
            out[:, idx, idx] = lam
            return out
        Q = np.asarray(self.basis)
        return np.einsum("ik,mk,jk->mij", Q, lam, Q)

    def eigen_extremes(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(trace, smallest eigenvalue) at each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind in ("diagonal", "rotated"):
            lam = np.stack([s(x[:, 0]) for s in self.scalars], axis=1)
            return lam.sum(axis=1), lam.min(axis=1)
        A = self(x)
        return np.trace(A, axis1=1, axis2=2), np.linalg.eigvalsh(A)[:, 0]

    def scaled(self, c: float) -> "CoefficientField":
        if c <= 0:
            raise CoefficientError("scale must be positive")
        if self.kind == "constant":
            return CoefficientField.constant(c * np.asarray(self.matrix))
        sc = tuple(_scaled_scalar(s, c) for s in self.scalars)
        return CoefficientField(self.kind, self.n, scalars=sc, basis=self.basis)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "matrix": [list(r) for r in self.matrix]}
        d = {"kind": self.kind, "entries": [s.to_dict() for s in self.scalars]}
        if self.kind == "rotated":
            d["basis"] = [list(r) for r in self.basis]
        return d

    @classmethod
    def from_dict(cls, d: dict, n: int | None = None) -> "CoefficientField":
        kind = d.get("kind", "constant")
        if kind == "identity":
            return cls.identity(int(d.get("n", n)))
        if kind == "constant":
            return cls.constant(d["matrix"])
        if kind == "diagonal":
            return cls.diagonal(d["entries"])
        if kind == "rotated":
            return cls.rotated(d["basis"], d["entries"])
        raise CoefficientError(f"unknown coefficient kind {kind!r}")


def _scaled_scalar(s: Scalar, c: float) -> Scalar:
    p = dict(s.params)
    if s.family == "const":
        p["c"] = c * p.get("c", 1.0)
    elif s.family == "power_x1":
        p["c"] = c * p.get("c", 1.0)
    else:
        p["c0"] = c * p.get("c0", 1.0)
        p["c1"] = c * p.get("c1", 0.0 if s.family == "affine_x1" else 1.0)
    return Scalar(s.family, tuple(sorted(p.items())))


# --------------------------------------------------------------------------
# Ellipticity
# --------------------------------------------------------------------------


def ellipticity(a: CoefficientField, x, xi) -> float:
    """tr a(x) / (xi^T a(x) xi) for a unit vector xi."""
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1) > 1e-12:
        raise CoefficientError("xi must be a unit vector")
    A = a(np.asarray(x, dtype=float))[0]
    quad = float(xi @ A @ xi)
    if quad <= 0:
        raise DegeneratePoint(f"xi^T a xi = {quad} is not positive")
    return float(np.trace(A)) / quad


def max_ellipticity(a: CoefficientField, x) -> np.ndarray:
    """max over unit xi of e(x, xi), i.e. tr a / lambda_min, at each point."""
    tr, lmin = a.eigen_extremes(x)
    if np.any(lmin <= 0):
        raise DegeneratePoint("coefficient matrix is not positive definite at a sampled point")
    return tr / lmin


@dataclass
class LayerEllipticity:
    j: int
    e: float
    argmax: np.ndarray
    samples: int
    refined: float | None = None

    @property
    def s(self) -> float:
        return s_exponent(self.e)


def layer_ellipticity(
    a: CoefficientField,
    domain: DomainSpec,
    layers: LayerSequence,
    j: int,
    samples: int = 10_000,
    seed: int = 0,
    refine: bool = False,
) -> LayerEllipticity:
    """Sampled sup of tr a / lambda_min over D(j-1, j+1); a lower estimate of e(j).

    Constant fields need no sampling.  With ``refine`` the estimate is
    recomputed with ten times more points and both are reported.
    """
    if a.n != domain.n:
        raise CoefficientError("coefficient dimension does not match the domain")
    if a.is_constant:
        x = np.atleast_2d(np.r_[layers.tau(j), np.zeros(domain.n - 1)])
        return LayerEllipticity(j, float(max_ellipticity(a, x)[0]), x[0], 1)
    pts = sample_layer(domain, layers, j, samples, seed=seed)
    if not len(pts):
        raise CoefficientError(f"layer {j} produced no sample points")
    t0, t1 = layers.tau(j - 1), layers.tau(j + 1)
    # the families only depend on x1, so the layer ends are always probed too
    ends = np.zeros((2, domain.n))
    ends[:, 0] = (t0, t1)
    pts = np.vstack([pts, ends])
    e = max_ellipticity(a, pts)
    k = int(np.argmax(e))
    out = LayerEllipticity(j, float(e[k]), pts[k], len(pts))
    if refine:
        fine = layer_ellipticity(a, domain, layers, j, samples * 10, seed=seed + 1)
        out.refined = fine.e
    return out


def s_exponent(e_j: float) -> float:
    """s_j = e(j) - 2."""
    if not e_j > 2:
        raise CoefficientError(f"ellipticity {e_j} must exceed 2")
    return float(e_j) - 2.0


# --------------------------------------------------------------------------
# Degeneration profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DegenerationProfile:
    """p(t) driving s_j = p(j) ln j for degenerate equations.

    ``log_power``: c (ln t)^-beta; ``power``: c t^-gamma; ``callable``: any p.
    """

    kind: str = "log_power"
    c: float = 1.0
    beta: float = 0.5
    gamma: float = 1.0
    func: Callable | None = field(default=None, compare=False)
    window: tuple[float, float] = (10.0, 1e7)

    def __post_init__(self):
        if self.kind not in ("log_power", "power", "callable"):
            raise CoefficientError(f"unknown degeneration kind {self.kind!r}")
        if self.kind == "callable" and self.func is None:
            raise CoefficientError("callable profile needs func")

    @classmethod
    def inv_sqrt_log(cls, **kw) -> "DegenerationProfile":
        return cls("log_power", beta=0.5, **kw)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "log_power":
            return self.c * np.log(t) ** (-self.beta)
        if self.kind == "power":
            return self.c * t ** (-self.gamma)
        return np.asarray(self.func(t), dtype=float)

    def s_sequence(self, j) -> np.ndarray:
        """s_j = p(j) ln j."""
        j = np.asarray(j, dtype=float)
        return self(j) * np.log(j)

    def to_dict(self) -> dict:
        if self.kind == "callable":
            raise CoefficientError("callable profiles are not serialisable")
        d = {"kind": self.kind, "c": self.c, "window": list(self.window)}
        d["beta" if self.kind == "log_power" else "gamma"] = self.beta if self.kind == "log_power" else self.gamma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegenerationProfile":
        d = dict(d)
        if "window" in d:
            d["window"] = tuple(float(v) for v in d["window"])
        return cls(**d)


@dataclass
class DegenerationReport:
    valid: bool
    p_decreasing: bool
    pln_increasing: bool
    witness_t: float | None = None
    reason: str = ""


def validate_degeneration(p: DegenerationProfile, window=None, points: int = 512, rtol: float = 1e-12) -> DegenerationReport:
    """Check p decreasing and p(t) ln t strictly increasing on a geometric grid.

    Increments smaller than ``rtol`` times the value count as flat, so a
    profile whose product is constant is rejected.
    """
    lo, hi = window if window is not None else p.window
    if not 1 < lo < hi:
        raise CoefficientError("window must satisfy 1 < lo < hi")
    t = np.geomspace(lo, hi, points)
    v = p(t)
    g = v * np.log(t)
    dv = np.diff(v)
    dg = np.diff(g)
    bad_p = np.nonzero(dv >= 0)[0]
    bad_g = np.nonzero(dg <= rtol * np.abs(g[1:]))[0]
    ok_p, ok_g = len(bad_p) == 0, len(bad_g) == 0
    if ok_p and ok_g:
        return DegenerationReport(True, True, True)
    if not ok_p:
        k = bad_p[0]
        return DegenerationReport(False, False, ok_g, float(t[k + 1]), f"p is not decreasing near t={t[k + 1]:.6g}")
    k = bad_g[0]
    return DegenerationReport(False, True, False, float(t[k + 1]), f"p(t) ln t is not increasing near t={t[k + 1]:.6g}")


def dominance_violations(a: CoefficientField, x) -> np.ndarray:
    """Indices of points where a_ii < sum_{j != i} |a_ij| for some i."""
    A = a(x)
    diag = np.einsum("mii->mi", A)
    off = np.abs(A).sum(axis=2) - np.abs(diag)
    return np.nonzero(np.any(diag < off - 1e-14 * np.abs(diag), axis=1))[0]

