"""Monotone finite-difference solver for the mixed Dirichlet/oblique problem.

Interior rows discretise L u = -sum a_ij D_ij u with the classical
monotone 7/19-point stencil (cross derivatives on diagonal neighbours,
oriented by the sign of a_ij), so every row belongs to an M-matrix as long
as a_ii >= sum_{j != i} |a_ij|.  Lateral nodes carry a first-order upwind
oblique row u(x) - u(x - eps l) = eps Psi, the off-lattice value being a
multilinear interpolation with non-negative weights.  Obstacle nodes snap to
the lattice.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .geometry import DomainSpec, LayerSequence, Membership, classify_points, ell_field


class SolverError(RuntimeError):
    pass


class GridError(ValueError):
    pass


class DominanceError(GridError):
    def __init__(self, nodes: np.ndarray, msg: str = ""):
        self.nodes = np.asarray(nodes)
        super().__init__(msg or f"diagonal dominance fails at {len(self.nodes)} node(s), e.g. {self.nodes[:3].tolist()}")


class NodeKind(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2
    INLET = 3
    OUTLET = 4


DIRECT_LIMIT = 40_000


@dataclass
class Grid:
    h: float
    origin: np.ndarray
    shape: tuple[int, ...]
    ijk: np.ndarray
    coords: np.ndarray
    kind: np.ndarray
    A: sp.csr_matrix
    outlet: str = "dirichlet"
    eps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ell: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.coords.shape[1]

    @property
    def size(self) -> int:
        return len(self.kind)

    def nodes(self, *kinds: NodeKind) -> np.ndarray:
        return np.nonzero(np.isin(self.kind, [int(k) for k in kinds]))[0]

    @property
    def unknown(self) -> np.ndarray:
        kinds = [NodeKind.INTERIOR, NodeKind.NEUMANN]
        if self.outlet == "oblique":
            kinds.append(NodeKind.OUTLET)
        return self.nodes(*kinds)

    @property
    def known(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.size), self.unknown)

    def counts(self) -> dict:
        return {k.name.lower(): int(np.sum(self.kind == k)) for k in NodeKind}


@dataclass
class GridSolution:
    u: np.ndarray
    residual: float
    iterations: int
    method: str
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"residual": self.residual, "iterations": self.iterations, "method": self.method, "seconds": self.seconds}


# --------------------------------------------------------------------------
# Assembly
# --------------------------------------------------------------------------


def _pairs(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _stencil_offsets(n: int) -> tuple[np.ndarray, list]:
    """Axis offsets (2n) and for each pair the four diagonal offsets."""
    axis = []
    for i in range(n):
        for sgn in (1, -1):
            e = np.zeros(n, dtype=np.int64)
            e[i] = sgn
            axis.append(e)
    diag = []
    for i, j in _pairs(n):
        pp, mm, pm, mp = (np.zeros(n, dtype=np.int64) for _ in range(4))
        pp[[i, j]] = (1, 1)
        mm[[i, j]] = (-1, -1)
        pm[[i, j]] = (1, -1)
        mp[[i, j]] = (-1, 1)
        diag.append((pp, mm, pm, mp))
    return np.array(axis), diag


def stencil_weights(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """h^2-scaled weights for matrices A of shape (m, n, n).

    Returns (centre (m,), axis (m, 2n) ordered +e1,-e1,+e2,..., cross (m, npairs)
    where cross is -|a_ij| placed on the +/+ & -/- diagonals when a_ij > 0 and on
    the +/- & -/+ diagonals otherwise).
    """
    m, n, _ = A.shape
    diag = np.einsum("mii->mi", A)
    absA = np.abs(A)
    off = absA.sum(axis=2) - np.abs(diag)
    axis_w = -(diag - off)
    axis = np.repeat(axis_w, 2, axis=1)
    pairs = _pairs(n)
    cross = np.stack([-absA[:, i, j] for i, j in pairs], axis=1) if pairs else np.zeros((m, 0))
    centre = 2 * diag.sum(axis=1) + 2 * cross.sum(axis=1)
    return centre, axis, cross


def check_dominance(A: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    diag = np.einsum("mii->mi", A)
    off = np.abs(A).sum(axis=2) - np.abs(diag)
    return np.nonzero(np.any(diag < off - tol * np.abs(diag), axis=1))[0]


class _Lattice:
    def __init__(self, lo, h, shape):
        self.lo = np.asarray(lo, dtype=float)
        self.h = float(h)
        self.shape = tuple(int(s) for s in shape)

    def coords(self, ijk):
        return self.lo + self.h * ijk

    def all_ijk(self):
        grids = np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij")
        return np.stack(grids, axis=-1).reshape(-1, len(self.shape))

    def flat(self, ijk):
        return np.ravel_multi_index(tuple(ijk.T), self.shape)

    def in_range(self, ijk):
        return np.all((ijk >= 0) & (ijk < np.asarray(self.shape)), axis=1)


def _needed_offsets(A: np.ndarray, n: int):
    """Per-node list of stencil offsets with non-zero weight (as boolean masks)."""
    axis, diag = _stencil_offsets(n)
    centre, axis_w, cross = stencil_weights(A)
    return axis, diag, centre, axis_w, cross


def _assemble_interior(lat: _Lattice, node_of: np.ndarray, rows_ijk: np.ndarray, A: np.ndarray, row_ids: np.ndarray):
    n = rows_ijk.shape[1]
    axis, diag, centre, axis_w, cross = _needed_offsets(A, n)
    rr, cc, vv = [row_ids], [row_ids], [centre]
    for k, off in enumerate(axis):
        w = axis_w[:, k]
        nz = w != 0
        nb = node_of[lat.flat(rows_ijk[nz] + off)]
        rr.append(row_ids[nz])
        cc.append(nb)
        vv.append(w[nz])
    for p, (i, j) in enumerate(_pairs(n)):
        aij = A[:, i, j]
        w = cross[:, p]
        pp, mm, pm, mp = diag[p]
        for sel, offs in ((aij > 0, (pp, mm)), (aij < 0, (pm, mp))):
            for off in offs:
                nb = node_of[lat.flat(rows_ijk[sel] + off)]
                rr.append(row_ids[sel])
                cc.append(nb)
                vv.append(w[sel])
    return np.concatenate(rr), np.concatenate(cc), np.concatenate(vv)


def _required_neighbours_ok(lat: _Lattice, ok_mask_flat: np.ndarray, ijk: np.ndarray, A: np.ndarray) -> np.ndarray:
    n = ijk.shape[1]
    axis, diag, _, axis_w, _ = _needed_offsets(A, n)
    good = np.ones(len(ijk), dtype=bool)

    def probe(off, sel):
        q = ijk[sel] + off
        inr = lat.in_range(q)
        res = np.zeros(len(q), dtype=bool)
        res[inr] = ok_mask_flat[lat.flat(q[inr])]
        return res

    for k, off in enumerate(axis):
        sel = axis_w[:, k] != 0
        good[sel] &= probe(off, sel)
    for p, (i, j) in enumerate(_pairs(n)):
        aij = A[:, i, j]
        pp, mm, pm, mp = diag[p]
        for sel, offs in ((aij > 0, (pp, mm)), (aij < 0, (pm, mp))):
            for off in offs:
                good[sel] &= probe(off, sel)
    return good


def _neighbour_flats(lat: _Lattice, ijk: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Flat lattice indices of all stencil neighbours (in range) of the given nodes."""
    n = ijk.shape[1]
    axis, diag, _, axis_w, _ = _needed_offsets(A, n)
    out = []
    for k, off in enumerate(axis):
        q = ijk[axis_w[:, k] != 0] + off
        out.append(lat.flat(q[lat.in_range(q)]))
    for p, (i, j) in enumerate(_pairs(n)):
        aij = A[:, i, j]
        pp, mm, pm, mp = diag[p]
        for sel, offs in ((aij > 0, (pp, mm)), (aij < 0, (pm, mp))):
            for off in offs:
                q = ijk[sel] + off
                out.append(lat.flat(q[lat.in_range(q)]))
    return np.unique(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)


def _corner_weights(lat: _Lattice, p: np.ndarray):
    """Lattice corners (m, 2^n, n) and multilinear weights (m, 2^n) around points p."""
    rel = (p - lat.lo) / lat.h
    base = np.floor(rel + 1e-12).astype(np.int64)
    frac = np.clip(rel - base, 0.0, 1.0)
    frac[frac < 1e-12] = 0.0
    n = p.shape[1]
    corners, weights = [], []
    for bits in itertools.product((0, 1), repeat=n):
        b = np.array(bits)
        corners.append(base + b)
        weights.append(np.prod(np.where(b == 1, frac, 1 - frac), axis=1))
    return np.stack(corners, axis=1), np.stack(weights, axis=1)


def _oblique_rows(lat, flat_kind, rows_ijk, ell, allowed_strict, allowed_loose, kmax=8):
    """Pick eps = k h per node so every weighted corner is an allowed node.

    Returns (k per node, corners, weights); k = 0 where no choice worked.
    """
    m, n = rows_ijk.shape
    x = lat.coords(rows_ijk)
    ks = np.zeros(m, dtype=np.int64)
    C = np.zeros((m, 2**n, n), dtype=np.int64)
    W = np.zeros((m, 2**n))
    self_flat = lat.flat(rows_ijk)
    for allowed in (allowed_strict, allowed_loose):
        for k in range(1, kmax + 1):
            todo = ks == 0
            if not todo.any():
                break
            p = x[todo] - k * lat.h * ell[todo]
            corners, w = _corner_weights(lat, p)
            ok = np.ones(len(p), dtype=bool)
            for c in range(corners.shape[1]):
                need = w[:, c] > 0
                q = corners[:, c]
                inr = lat.in_range(q)
                ok &= ~need | inr
                fl = np.where(inr, lat.flat(np.where(inr[:, None], q, 0)), -1)
                kinds = np.where(fl >= 0, flat_kind[np.maximum(fl, 0)], -1)
                good = np.isin(kinds, allowed)
                if allowed is allowed_loose:
                    good |= fl == self_flat[todo]
                ok &= ~need | good
            # a row that only references itself carries no information
            selfw = np.zeros(len(p))
            for c in range(corners.shape[1]):
                selfw += np.where(lat.flat(np.clip(corners[:, c], 0, np.asarray(lat.shape) - 1)) == self_flat[todo], w[:, c], 0)
            ok &= selfw < 1 - 1e-12
            idx = np.nonzero(todo)[0][ok]
            ks[idx] = k
            C[idx] = corners[ok]
            W[idx] = w[ok]
    return ks, C, W


# lattice-level classification codes used during assembly
_OUT, _FREE, _SOLID = -1, 10, 11


def _build(
    lat: _Lattice,
    code: np.ndarray,
    coeffs: CoefficientField,
    ell_fn: Callable | None,
    inlet_plane: bool,
    outlet: str,
    neumann_allowed: bool,
    kmax: int = 8,
) -> Grid:
    """Shared assembly given lattice codes (_OUT outside, _FREE fluid, _SOLID Dirichlet region)."""
    n = len(lat.shape)
    all_ijk = lat.all_ijk()
    free = np.nonzero(code == _FREE)[0]
    free_ijk = all_ijk[free]
    kind_flat = np.full(code.shape, -1, dtype=np.int64)
    planes = np.zeros(len(free), dtype=np.int64)
    if inlet_plane:
        planes[free_ijk[:, 0] == 0] = NodeKind.INLET
        planes[free_ijk[:, 0] == lat.shape[0] - 1] = NodeKind.OUTLET
    cap = planes != 0
    kind_flat[free[cap]] = planes[cap]
    body = free[~cap]
    body_ijk = all_ijk[body]
    A_body = coeffs(lat.coords(body_ijk))
    bad = check_dominance(A_body)
    if len(bad):
        raise DominanceError(lat.coords(body_ijk[bad]))
    inside = code != _OUT
    ok = _required_neighbours_ok(lat, inside, body_ijk, A_body)
    kind_flat[body[ok]] = NodeKind.INTERIOR
    if not neumann_allowed and not ok.all():
        kind_flat[body[~ok]] = NodeKind.DIRICHLET
    else:
        kind_flat[body[~ok]] = NodeKind.NEUMANN
    interior = body[ok]
    A_int = A_body[ok]
    # solid nodes touched by an interior stencil become Dirichlet nodes
    touched = _neighbour_flats(lat, all_ijk[interior], A_int)
    solid_touched = touched[code[touched] == _SOLID]
    kind_flat[solid_touched] = NodeKind.DIRICHLET
    if np.any(code[touched] == _OUT):
        raise GridError("interior stencil reaches outside the domain")

    neumann = np.nonzero(kind_flat == NodeKind.NEUMANN)[0]
    oblique = neumann
    outlet_nodes = np.nonzero(kind_flat == NodeKind.OUTLET)[0]
    if outlet == "oblique":
        oblique = np.concatenate([neumann, outlet_nodes])
    ell = np.zeros((len(oblique), n))
    if len(neumann):
        if ell_fn is None:
            raise GridError("lateral boundary nodes need an oblique field")
        ell[: len(neumann)] = ell_fn(lat.coords(all_ijk[neumann]))
    ell[len(neumann) :, 0] = 1.0
    ks = np.zeros(0, dtype=np.int64)
    if len(oblique):
        solid_code = np.where(code == _SOLID, NodeKind.DIRICHLET, -1)
        flat_kind = np.where(kind_flat >= 0, kind_flat, solid_code)
        strict = [NodeKind.INTERIOR, NodeKind.DIRICHLET, NodeKind.INLET]
        loose = strict + [NodeKind.NEUMANN, NodeKind.OUTLET]
        if outlet != "oblique":
            strict.append(NodeKind.OUTLET)
        ks, C, W = _oblique_rows(lat, flat_kind, all_ijk[oblique], ell, strict, loose, kmax)
        if np.any(ks == 0):
            where = lat.coords(all_ijk[oblique[ks == 0]])
            raise GridError(f"no upwind interpolation stencil at {len(where)} boundary node(s), e.g. {where[0].tolist()}")
        cflat = lat.flat(C.reshape(-1, n)).reshape(C.shape[:2])
        used = cflat[W > 0]
        kind_flat[used[code[used] == _SOLID]] = NodeKind.DIRICHLET

    active = np.nonzero(kind_flat >= 0)[0]
    node_of = np.full(code.shape, -1, dtype=np.int64)
    node_of[active] = np.arange(len(active))
    ijk = all_ijk[active]
    kind = kind_flat[active].astype(np.int8)
    M = len(active)

    rows, cols, vals = [], [], []
    r, c, v = _assemble_interior(lat, node_of, all_ijk[interior], A_int, node_of[interior])
    rows.append(r), cols.append(c), vals.append(v)
    known = np.nonzero(~np.isin(kind, [NodeKind.INTERIOR, NodeKind.NEUMANN] + ([NodeKind.OUTLET] if outlet == "oblique" else [])))[0]
    rows.append(known), cols.append(known), vals.append(np.ones(len(known)))
    if len(oblique):
        ob_ids = node_of[oblique]
        rows.append(ob_ids), cols.append(ob_ids), vals.append(np.ones(len(ob_ids)))
        for cidx in range(C.shape[1]):
            w = W[:, cidx]
            nz = w > 0
            rows.append(ob_ids[nz])
            cols.append(node_of[cflat[nz, cidx]])
            vals.append(-w[nz])
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(M, M))
    A.sum_duplicates()
    eps = np.zeros(M)
    ell_full = np.zeros((M, n))
    if len(oblique):
        eps[node_of[oblique]] = ks * lat.h
        ell_full[node_of[oblique]] = ell
    grid = Grid(lat.h, lat.lo, lat.shape, ijk, lat.coords(ijk), kind, A, outlet, eps, ell_full)
    grid.meta["node_of"] = node_of
    check_m_matrix(grid)
    return grid


def check_m_matrix(grid: Grid, tol: float = 1e-12) -> None:
    """Diagonal > 0, off-diagonal <= 0 and row sums >= 0 (up to rounding)."""
    A = grid.A.tocoo()
    off = A.row != A.col
    if np.any(A.data[off] > tol):
        raise GridError("assembled matrix has a positive off-diagonal entry")
    d = grid.A.diagonal()
    if np.any(d <= 0):
        raise GridError("assembled matrix has a non-positive diagonal entry")
    rs = np.asarray(grid.A.sum(axis=1)).ravel()
    if np.any(rs < -tol * np.maximum(1.0, d)):
        raise GridError("assembled matrix has a negative row sum")


def discretize(
    domain: DomainSpec,
    coeffs: CoefficientField,
    span: tuple[float, float],
    h: float,
    outlet: str = "dirichlet",
    ell: Callable | None = None,
) -> Grid:
    """Grid over the truncated domain span[0] <= x1 <= span[1].

    Node kinds: inlet (x1 = span[0]) and outlet (x1 = span[1]) planes,
    Dirichlet (lattice nodes inside an obstacle that a stencil touches),
    Neumann (lateral nodes whose stencil leaves the funnel) and interior.
    """
    if outlet not in ("dirichlet", "oblique"):
        raise GridError("outlet must be 'dirichlet' or 'oblique'")
    if coeffs.n != domain.n:
        raise GridError("coefficient dimension does not match the domain")
    t0, t1 = map(float, span)
    if t0 < domain.start:
        raise GridError("span starts before the domain")
    N1 = int(round((t1 - t0) / h))
    if N1 < 2 or abs(N1 * h - (t1 - t0)) > 1e-9 * max(1.0, t1 - t0):
        raise GridError("span length must be a multiple of h")
    t = np.linspace(t0, t1, 257)
    B = float(np.max(domain.profile(t))) * domain.base.bounding_radius()
    m = int(math.ceil(B / h)) + 1
    lo = np.r_[t0, np.full(domain.n - 1, -m * h)]
    lat = _Lattice(lo, h, (N1 + 1,) + (2 * m + 1,) * (domain.n - 1))
    X = lat.coords(lat.all_ijk())
    cls = classify_points(domain, X)
    code = np.full(len(X), _FREE, dtype=np.int64)
    code[cls == Membership.OUTSIDE] = _OUT
    code[(cls == Membership.IN_G) | (cls == Membership.ON_GAMMA1)] = _SOLID
    grid = _build(lat, code, coeffs, ell or ell_field(domain), True, outlet, True)
    grid.meta.update({"span": (t0, t1), "geometry_error": h})
    return grid


def discretize_region(
    inside: Callable[[np.ndarray], np.ndarray],
    lo,
    hi,
    h: float,
    coeffs: CoefficientField,
) -> Grid:
    """Pure Dirichlet grid: nodes whose stencil leaves ``inside`` become boundary nodes."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    shape = tuple(int(math.floor((b - a) / h + 1e-9)) + 1 for a, b in zip(lo, hi))
    lat = _Lattice(lo, h, shape)
    X = lat.coords(lat.all_ijk())
    code = np.where(inside(X), _FREE, _OUT).astype(np.int64)
    return _build(lat, code, coeffs, None, False, "dirichlet", False)


def discretize_annulus(r_in: float, r_out: float, h: float, coeffs: CoefficientField | None = None, n: int = 3, center=None) -> Grid:
    """Annulus r_in <= |x - center| <= r_out with Dirichlet boundary nodes."""
    if not 0 < r_in < r_out:
        raise GridError("need 0 < r_in < r_out")
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    coeffs = coeffs or CoefficientField.identity(n)
    k = int(math.ceil(r_out / h))

    def inside(X):
        r = np.linalg.norm(X - c, axis=1)
        return (r >= r_in - 1e-12) & (r <= r_out + 1e-12)

    grid = discretize_region(inside, c - k * h, c + k * h, h, coeffs)
    grid.meta["annulus"] = (r_in, r_out)
    return grid


# --------------------------------------------------------------------------
# Solving
# --------------------------------------------------------------------------


def _values(data, x: np.ndarray) -> np.ndarray:
    if data is None:
        return np.zeros(len(x))
    if callable(data):
        return np.asarray(data(x), dtype=float).reshape(len(x))
    return np.full(len(x), float(data))


def boundary_vector(grid: Grid, phi=0.0, psi=0.0, inlet=None, outlet=0.0) -> np.ndarray:
    """Right-hand side / known values for every node (zero at interior nodes)."""
    b = np.zeros(grid.size)
    X = grid.coords
    d = grid.nodes(NodeKind.DIRICHLET)
    b[d] = _values(phi, X[d])
    i = grid.nodes(NodeKind.INLET)
    b[i] = _values(phi if inlet is None else inlet, X[i])
    o = grid.nodes(NodeKind.OUTLET)
    if grid.outlet == "dirichlet":
        b[o] = _values(outlet, X[o])
    else:
        b[o] = grid.eps[o] * _values(outlet, X[o])
    nm = grid.nodes(NodeKind.NEUMANN)
    b[nm] = grid.eps[nm] * _values(psi, X[nm])
    return b


def solve_linear(A: sp.csr_matrix, b: np.ndarray, tol: float = 1e-10, maxiter: int = 400, method: str = "auto"):
    n = A.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "amg"
    if method == "direct":
        x = spla.spsolve(A.tocsc(), b)
        return x, 1, "direct"
    import pyamg

    ml = pyamg.ruge_stuben_solver(A.tocsr(), max_coarse=500)
    res: list = []
    bnorm = max(float(np.linalg.norm(b)), 1e-300)
    x = ml.solve(b, tol=min(1e-13, tol / bnorm), maxiter=maxiter, accel="bicgstab", residuals=res)
    its = len(res)
    # a few refinement sweeps with plain V-cycles if the Krylov solve stalled
    for _ in range(5):
        r = b - A @ x
        if np.max(np.abs(r)) <= 0.1 * tol:
            break
        res = []
        x = x + ml.solve(r, tol=1e-14, maxiter=maxiter, accel=None, residuals=res)
        its += len(res)
    return x, its, "amg-bicgstab"


def solve_mixed_bvp(
    grid: Grid,
    phi=0.0,
    psi=0.0,
    inlet=None,
    outlet=0.0,
    tol: float = 1e-10,
    maxiter: int = 400,
    method: str = "auto",
) -> GridSolution:
    """Solve the assembled system.

    ``phi`` gives the Dirichlet data on obstacle nodes, ``inlet`` the data on
    the first plane (defaults to phi), ``psi`` the oblique data on lateral
    nodes and ``outlet`` the data on the last plane (Dirichlet value, or the
    oblique data when the outlet is oblique).  Each may be a constant or a
    callable of the node coordinates.
    """
    t = time.perf_counter()
    rhs = boundary_vector(grid, phi, psi, inlet, outlet)
    U = grid.unknown
    K = grid.known
    u = rhs.copy()
    if not len(U):
        return GridSolution(u, 0.0, 0, "none")
    A = grid.A
    A_UU = A[U][:, U]
    if len(K) == 0:
        raise SolverError("system has no Dirichlet part and is singular")
    b = rhs[U] - A[U][:, K] @ rhs[K]
    x, its, used = solve_linear(A_UU, b, tol, maxiter, method)
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve returned non-finite values (singular system?)")
    u[U] = x
    r = float(np.max(np.abs(A[U] @ u - rhs[U]))) if len(U) else 0.0
    if r > tol:
        raise SolverError(f"residual {r:.3e} above tolerance {tol:.1e} after {its} iterations")
    return GridSolution(u, r, its, used, time.perf_counter() - t)


def discrete_L(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Discrete L u at interior nodes (same order as grid.nodes(INTERIOR))."""
    I = grid.nodes(NodeKind.INTERIOR)
    return (grid.A[I] @ u) / grid.h**2


def discrete_oblique(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Upwind derivative along l at the Neumann nodes."""
    N = grid.nodes(NodeKind.NEUMANN)
    return (grid.A[N] @ u) / grid.eps[N]


# --------------------------------------------------------------------------
# Checks
# --------------------------------------------------------------------------


@dataclass
class MaxPrincipleReport:
    ok: bool
    interior_min: float
    interior_max: float
    boundary_min: float
    boundary_max: float
    worst_node: int | None = None
    worst_point: list | None = None
    violation: float = 0.0


def check_discrete_max_principle(solution: GridSolution | np.ndarray, grid: Grid, tol: float = 1e-10) -> MaxPrincipleReport:
    u = solution.u if isinstance(solution, GridSolution) else np.asarray(solution)
    inner = grid.kind == NodeKind.INTERIOR
    ui, ub = u[inner], u[~inner]
    bmin, bmax = float(ub.min()), float(ub.max())
    over = ui - (bmax + tol)
    under = (bmin - tol) - ui
    worst = np.maximum(over, under)
    ok = bool(np.all(worst <= 0))
    rep = MaxPrincipleReport(ok, float(ui.min()), float(ui.max()), bmin, bmax)
    if not ok:
        k = int(np.nonzero(inner)[0][np.argmax(worst)])
        rep.worst_node, rep.worst_point, rep.violation = k, grid.coords[k].tolist(), float(worst.max() + tol)
    return rep


@dataclass
class ComparisonReport:
    status: str  # pass | fail | inconclusive
    min_gap: float
    reason: str = ""
    worst_node: int | None = None


def check_comparison(u, v, grid: Grid, tol: float = 1e-10) -> ComparisonReport:
    """Discrete comparison: premises on L, Dirichlet and oblique rows first, then v >= u."""
    u = u.u if isinstance(u, GridSolution) else np.asarray(u, dtype=float)
    v = v.u if isinstance(v, GridSolution) else np.asarray(v, dtype=float)
    d = v - u
    Ad = grid.A @ d
    I = grid.nodes(NodeKind.INTERIOR)
    N = grid.nodes(NodeKind.NEUMANN)
    O = grid.nodes(NodeKind.OUTLET) if grid.outlet == "oblique" else np.zeros(0, dtype=int)
    K = grid.known
    scale = max(1.0, float(np.max(np.abs(u))), float(np.max(np.abs(v))))
    if np.any(Ad[I] < -tol * scale):
        return ComparisonReport("inconclusive", float(d.min()), "L u <= L v fails")
    if np.any(d[K] < -tol * scale):
        return ComparisonReport("inconclusive", float(d.min()), "u <= v fails on the Dirichlet part")
    if np.any(Ad[np.concatenate([N, O])] < -tol * scale):
        return ComparisonReport("inconclusive", float(d.min()), "oblique derivative premise fails")
    k = int(np.argmin(d))
    if d[k] >= -tol * scale:
        return ComparisonReport("pass", float(d[k]))
    return ComparisonReport("fail", float(d[k]), "v < u somewhere", k)


def layer_supremum(solution: GridSolution | np.ndarray, grid: Grid, tau: float) -> float:
    """max u over nodes with |x1 - tau| <= h/2."""
    u = solution.u if isinstance(solution, GridSolution) else np.asarray(solution)
    sel = np.abs(grid.coords[:, 0] - tau) <= grid.h / 2 + 1e-12 * grid.h
    if not sel.any():
        raise GridError(f"no nodes in the slab around x1 = {tau}")
    return float(u[sel].max())


def layer_suprema(solution, grid: Grid, layers: LayerSequence, js) -> np.ndarray:
    return np.array([layer_supremum(solution, grid, layers.tau(j)) for j in js])


def region_supremum(solution, grid: Grid, t0: float, t1: float) -> float:
    """max u over nodes with t0 - h/2 <= x1 <= t1 + h/2."""
    u = solution.u if isinstance(solution, GridSolution) else np.asarray(solution)
    x1 = grid.coords[:, 0]
    sel = (x1 >= t0 - grid.h / 2) & (x1 <= t1 + grid.h / 2)
    if not sel.any():
        raise GridError(f"no nodes in [{t0}, {t1}]")
    return float(u[sel].max())


# --------------------------------------------------------------------------
# Power sub-solutions
# --------------------------------------------------------------------------


@dataclass
class SubellipticReport:
    s: float
    h: float
    method: str
    max_positive: float
    max_value: float
    min_value: float
    tolerance: float
    passed: bool


def analytic_L_power(a: CoefficientField, x: np.ndarray, s: float, center=None) -> np.ndarray:
    """L |x - c|^-s = s r^(-s-2) (tr a - (s + 2) xi^T a xi), xi = (x - c)/r."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c = np.zeros(x.shape[1]) if center is None else np.asarray(center, dtype=float)
    y = x - c
    r = np.linalg.norm(y, axis=1)
    xi = y / r[:, None]
    A = a(x)
    tr = np.trace(A, axis1=1, axis2=2)
    q = np.einsum("mi,mij,mj->m", xi, A, xi)
    return s * r ** (-s - 2) * (tr - (s + 2) * q)


def verify_subelliptic_power(
    a: CoefficientField,
    s: float,
    annulus: tuple[float, float] = (1.0, 2.0),
    h: float = 0.1,
    method: str = "discrete",
    tol_factor: float = 10.0,
) -> SubellipticReport:
    """Largest positive value of L|x|^-s on an annulus grid; passes when <= tol_factor h^2."""
    grid = discretize_annulus(annulus[0], annulus[1], h, a, n=a.n)
    X = grid.coords
    if method == "discrete":
        u = np.linalg.norm(X, axis=1) ** (-s)
        Lu = discrete_L(grid, u)
    elif method == "analytic":
        Lu = analytic_L_power(a, X[grid.kind == NodeKind.INTERIOR], s)
    else:
        raise ValueError("method must be 'discrete' or 'analytic'")
    pos = float(max(0.0, Lu.max()))
    tol = tol_factor * h * h
    return SubellipticReport(s, h, method, pos, float(Lu.max()), float(Lu.min()), tol, pos <= tol)
