"""Conformal modulus and mu-modulus of curve families.

Two independent discretisations are provided.

harmonic energy
    A finite-volume Laplacian on a (possibly graded) rectilinear grid with
    edge conductances ``mass / length**2`` built from the weight.  Dirichlet
    data 0 on ``E`` and 1 on ``F``; curved boundaries of disk-type sets are
    located inside cells by linear interpolation of a level function
    (Shortley-Weller), so circles are not staircased.

density QP
    Constraint generation on a graph: minimise ``sum m(v) rho(v)**2`` over
    node densities subject to ``rho``-length at least one on a growing set
    of grid paths, adding the ``rho``-shortest ``E -> F`` paths until none is
    shorter than ``1 - tol``.  The QP is solved through its dual with a
    warm-started active-set method.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import cg, spsolve

from .geodesics import GridGraph, build_grid, distance_from_point
from .quadrature import rect_sq_integrals, segment_integrals
from .spaces import Box, SpaceError, SpaceHandle

try:  # algebraic multigrid preconditioner for the harmonic solves
    import pyamg
except ImportError:  # pragma: no cover - optional accelerator
    pyamg = None


class ModulusError(RuntimeError):
    """The solver could not produce a modulus (bad spec or no convergence)."""


# --------------------------------------------------------------------------
# point sets used as E, F and domains
# --------------------------------------------------------------------------

class PointSet:
    """A closed planar set given by a membership test and, optionally, a
    level function that is negative inside and changes sign on the boundary."""

    def mask(self, pts, tol: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def level(self, pts) -> Optional[np.ndarray]:
        return None

    def describe(self) -> dict:
        return {"type": type(self).__name__}


@dataclass(frozen=True)
class BallSet(PointSet):
    """``|p - c| <= radius`` (or ``>=`` when ``outside``)."""

    center: tuple
    radius: float
    outside: bool = False

    def level(self, pts):
        p = np.asarray(pts, dtype=float)
        dist = np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1])
        return self.radius - dist if self.outside else dist - self.radius

    def mask(self, pts, tol=0.0):
        return self.level(pts) <= tol

    def describe(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius,
                "outside": self.outside}


@dataclass(frozen=True)
class SegmentSet(PointSet):
    """Straight segment from ``a`` to ``b``; grid nodes within ``tol`` belong to it."""

    a: tuple
    b: tuple

    def distance(self, pts):
        p = np.asarray(pts, dtype=float)
        a, b = np.asarray(self.a, dtype=float), np.asarray(self.b, dtype=float)
        d = b - a
        s = np.clip(((p - a) @ d) / (d @ d), 0, 1)
        return np.hypot(*(p - a - s[..., None] * d).T) if p.ndim == 2 else \
            np.linalg.norm(p - a - s[..., None] * d, axis=-1)

    def mask(self, pts, tol=0.0):
        return self.distance(pts) <= tol + 1e-12

    def describe(self):
        return {"type": "segment", "a": list(self.a), "b": list(self.b)}


@dataclass(frozen=True)
class HalfPlaneSet(PointSet):
    """``p[axis] <= value`` (``side=-1``) or ``p[axis] >= value`` (``side=+1``)."""

    axis: int
    value: float
    side: int = -1

    def level(self, pts):
        p = np.asarray(pts, dtype=float)
        return (p[..., self.axis] - self.value) * (1 if self.side < 0 else -1)

    def mask(self, pts, tol=0.0):
        return self.level(pts) <= tol

    def describe(self):
        return {"type": "half-plane", "axis": self.axis, "value": self.value, "side": self.side}


@dataclass(frozen=True)
class UnionSet(PointSet):
    parts: tuple

    def mask(self, pts, tol=0.0):
        out = np.zeros(np.asarray(pts).shape[:-1], dtype=bool)
        for p in self.parts:
            out |= p.mask(pts, tol)
        return out

    def level(self, pts):
        levels = [p.level(pts) for p in self.parts]
        if any(v is None for v in levels):
            return None
        return np.min(levels, axis=0)

    def describe(self):
        return {"type": "union", "parts": [p.describe() for p in self.parts]}


class LevelSet(PointSet):
    """Sublevel set ``{phi <= 0}`` of a callable level function."""

    def __init__(self, phi: Callable, label: str = "level-set"):
        self.phi = phi
        self.label = label

    def level(self, pts):
        return self.phi(np.asarray(pts, dtype=float))

    def mask(self, pts, tol=0.0):
        return self.level(pts) <= tol

    def describe(self):
        return {"type": self.label}


# --------------------------------------------------------------------------
# family specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveFamilySpec:
    """Curves in ``domain`` (within ``box``) joining ``E`` to ``F``.

    For a quadrilateral the box is the quadrilateral itself and ``E``/``F``
    are a pair of opposite sides; ``arcs`` names the four sides in cyclic
    order.
    """

    kind: str
    box: Box
    E: PointSet
    F: PointSet
    domain: Optional[PointSet] = None
    label: str = ""
    arcs: Optional[tuple] = None
    focus: tuple = ()

    def __post_init__(self):
        if self.kind not in ("quadrilateral", "ring", "spanning-ring", "condenser"):
            raise ModulusError(f"unknown family kind {self.kind!r}")

    def describe(self) -> dict:
        return {"kind": self.kind, "box": list(self.box.as_tuple()), "E": self.E.describe(),
                "F": self.F.describe(), "label": self.label,
                "domain": None if self.domain is None else self.domain.describe()}


def quadrilateral(rect: Box, pair: str = "13") -> CurveFamilySpec:
    """Rectangle with sides in cyclic order left, bottom, right, top.

    ``pair="13"`` joins the left and right sides, ``"24"`` bottom and top.
    """
    arcs = (HalfPlaneSet(0, rect.x0, -1), HalfPlaneSet(1, rect.y0, -1),
            HalfPlaneSet(0, rect.x1, +1), HalfPlaneSet(1, rect.y1, +1))
    if pair == "13":
        E, F = arcs[0], arcs[2]
    elif pair == "24":
        E, F = arcs[1], arcs[3]
    else:
        raise ModulusError("pair must be '13' or '24'")
    return CurveFamilySpec("quadrilateral", rect, E, F, None, f"rect{rect.as_tuple()}:{pair}", arcs)


def annulus(center=(0.0, 0.0), r: float = 1.0, R: float = math.e) -> CurveFamilySpec:
    """Curves joining the two boundary circles of ``A(center; r, R)``."""
    if not 0 < r < R:
        raise ModulusError("annulus needs 0 < r < R")
    cx, cy = center
    box = Box(cx - R, cx + R, cy - R, cy + R)
    return CurveFamilySpec("ring", box, BallSet((cx, cy), r), BallSet((cx, cy), R, outside=True),
                           None, f"annulus({cx},{cy};{r},{R})")


def ring_spec(space: SpaceHandle, x, r: float, R: float, grid_h: Optional[float] = None) -> CurveFamilySpec:
    """``Gamma(B_d(x, r), X \\ B_d(x, R); B_d(x, R))`` with metric balls.

    Metric balls are Euclidean disks when that is exact (constant weight, or
    the exp-weight centred at the origin); otherwise they are level sets of
    a grid distance field.
    """
    from .measures import d_ball_disk
    x = np.asarray(x, dtype=float)
    inner, outer = d_ball_disk(space, x, r), d_ball_disk(space, x, R)
    if inner is not None and outer is not None:
        spec = annulus((inner.cx, inner.cy), inner.radius, outer.radius)
        return CurveFamilySpec("ring", spec.box, spec.E, spec.F, None,
                               f"ring_d({tuple(float(v) for v in x)};{r},{R})")
    bounds = space.euclidean_bounds(x, R)
    pad = 0.02 * max(bounds.width, bounds.height)
    box = Box(bounds.x0 - pad, bounds.x1 + pad, bounds.y0 - pad, bounds.y1 + pad).intersect(space.field.bbox)
    h = grid_h or max(box.width, box.height) / 384
    g = build_grid(space, box, h, 16)
    d = distance_from_point(g, x)

    def phi_in(p):
        return g.interpolate(d, p.reshape(-1, 2)).reshape(p.shape[:-1]) - r

    def phi_out(p):
        return R - g.interpolate(d, p.reshape(-1, 2)).reshape(p.shape[:-1])

    return CurveFamilySpec("ring", box, LevelSet(phi_in, "d-ball"), LevelSet(phi_out, "d-ball-complement"),
                           None, f"ring_d({tuple(float(v) for v in x)};{r},{R})")


def condenser(box: Box, E: PointSet, F: PointSet, domain: Optional[PointSet] = None,
              focus: Sequence = (), label: str = "") -> CurveFamilySpec:
    return CurveFamilySpec("condenser", box, E, F, domain, label, None, tuple(map(tuple, focus)))


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------

@dataclass
class ModulusResult:
    value: float
    method: str
    residual: float = 0.0
    iterations: int = 0
    density: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.value >= 0):
            raise ModulusError(f"negative modulus {self.value}")

    def to_json(self) -> str:
        d = {"value": self.value, "method": self.method, "residual": self.residual,
             "iterations": self.iterations}
        d.update({k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool, list))})
        return json.dumps(d, sort_keys=True)


@dataclass
class MuModulusResult(ModulusResult):
    pass


# --------------------------------------------------------------------------
# analytic references
# --------------------------------------------------------------------------

def analytic_annulus(r: float, R: float) -> float:
    """``2 pi / log(R / r)``: modulus of the curves joining the circles of an annulus."""
    if not (0 < r < R):
        raise ModulusError("need 0 < r < R")
    return 2 * math.pi / math.log(R / r)


def teichmuller_radii(t: float) -> tuple:
    return -1.0 / math.log(t / 2), -1.0 / math.log(t)


def teichmuller_upper_bound(t: float) -> float:
    """``2 pi / log(r_t / (R_t - r_t))`` with ``r_t = -1/log(t/2)``, ``R_t = -1/log t``.

    Valid while ``R_t < 2 r_t``, i.e. ``t < 1/2``.
    """
    if not (0 < t < 0.5):
        raise ModulusError("the bound needs 0 < t < 1/2")
    r, R = teichmuller_radii(t)
    return 2 * math.pi / math.log(r / (R - r))


# --------------------------------------------------------------------------
# harmonic solver
# --------------------------------------------------------------------------

def graded_axis(lo: float, hi: float, h: float, foci: Sequence[float] = (), h_min: Optional[float] = None,
                growth: float = 0.2) -> np.ndarray:
    """Nodes on ``[lo, hi]`` with spacing ``min(h, h_min + growth * dist(x, foci))``."""
    if not foci or h_min is None or h_min >= h:
        n = max(int(math.ceil((hi - lo) / h)), 3)
        return np.linspace(lo, hi, n + 1)
    foci = np.asarray(sorted(foci), dtype=float)

    def spacing(x):
        return min(h, h_min + growth * float(np.min(np.abs(foci - x))))

    xs = [lo]
    while xs[-1] < hi:
        xs.append(xs[-1] + spacing(xs[-1]))
    xs = np.asarray(xs)
    # rescale the overshoot of the final step and include foci exactly
    xs = lo + (xs - lo) * (hi - lo) / (xs[-1] - lo)
    for f in foci:
        if lo < f < hi:
            xs[np.argmin(np.abs(xs - f))] = f
    return np.unique(xs)


@dataclass
class RectGrid:
    xs: np.ndarray
    ys: np.ndarray

    @property
    def shape(self):
        return len(self.ys), len(self.xs)

    @property
    def coords(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])


def _dual_extent(c):
    lo = np.r_[c[0], 0.5 * (c[1:] + c[:-1])]
    hi = np.r_[0.5 * (c[1:] + c[:-1]), c[-1]]
    return lo, hi


def _conductances(space: SpaceHandle, G: RectGrid):
    """Edge lists ``(u, v, c, euclidean_len)`` for horizontal and vertical edges."""
    field = space.field
    xs, ys = G.xs, G.ys
    nx, ny = len(xs), len(ys)
    ylo, yhi = _dual_extent(ys)
    xlo, xhi = _dual_extent(xs)
    out = []
    # horizontal edges (i, j) - (i + 1, j)
    I, J = np.meshgrid(np.arange(nx - 1), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    a = np.column_stack([xs[I], ys[J]])
    b = np.column_stack([xs[I + 1], ys[J]])
    L = segment_integrals(field, a, b)
    M = rect_sq_integrals(field, xs[I], xs[I + 1], ylo[J], yhi[J])
    eu = (yhi[J] - ylo[J]) / (xs[I + 1] - xs[I])
    out.append((J * nx + I, J * nx + I + 1, L, M, eu))
    # vertical edges (i, j) - (i, j + 1)
    I, J = np.meshgrid(np.arange(nx), np.arange(ny - 1))
    I, J = I.ravel(), J.ravel()
    a = np.column_stack([xs[I], ys[J]])
    b = np.column_stack([xs[I], ys[J + 1]])
    L = segment_integrals(field, a, b)
    M = rect_sq_integrals(field, xlo[I], xhi[I], ys[J], ys[J + 1])
    eu = (xhi[I] - xlo[I]) / (ys[J + 1] - ys[J])
    out.append((J * nx + I, (J + 1) * nx + I, L, M, eu))
    u = np.concatenate([o[0] for o in out])
    v = np.concatenate([o[1] for o in out])
    L = np.concatenate([o[2] for o in out])
    M = np.concatenate([o[3] for o in out])
    eu = np.concatenate([o[4] for o in out])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c = M / (L * L)
    # where the weight underflows the ratio is 0/0; the conformal limit of
    # mass/length**2 is the Euclidean value.  The same limit is used where the
    # weight is not resolved by the cell (the ratio is then off by more than a
    # factor 2), since the weighted Dirichlet integrand is pointwise that of
    # the Euclidean metric
    bad = ~np.isfinite(c) | (L < 1e-150) | (M < 1e-290)
    with np.errstate(divide="ignore", invalid="ignore"):
        bad |= ~(np.abs(np.log(c / eu)) <= math.log(2.0))
    c[bad] = eu[bad]
    return u, v, c


def _cut_fraction(phi_a, phi_b):
    with np.errstate(divide="ignore", invalid="ignore"):
        th = phi_a / (phi_a - phi_b)
    th = np.where(np.isfinite(th), th, 1.0)
    return np.clip(th, 0.05, 1.0)


def harmonic_modulus(space: SpaceHandle, spec: CurveFamilySpec, h: Optional[float] = None,
                     h_min: Optional[float] = None, growth: float = 0.15, rtol: float = 1e-8,
                     return_potential: bool = False) -> ModulusResult:
    """Dirichlet energy of the discrete potential (0 on ``E``, 1 on ``F``)."""
    if not space.is_planar:
        raise ModulusError("the harmonic solver works on planar weights")
    box = spec.box
    if not box.inside(space.field.bbox):
        raise ModulusError(f"family box {box.as_tuple()} leaves the domain")
    h = h or max(box.width, box.height) / 256
    fx = [p[0] for p in spec.focus]
    fy = [p[1] for p in spec.focus]
    xs = graded_axis(box.x0, box.x1, h, fx, h_min, growth)
    ys = graded_axis(box.y0, box.y1, h, fy, h_min, growth)
    G = RectGrid(xs, ys)
    P = G.coords
    n = len(P)
    tol = 1e-9 * max(box.width, box.height)
    active = np.ones(n, dtype=bool) if spec.domain is None else spec.domain.mask(P, tol)
    inE = spec.E.mask(P, tol) & active
    inF = spec.F.mask(P, tol) & active
    if (inE & inF).any():
        raise ModulusError("E and F touch at grid resolution")
    if not inE.any() or not inF.any():
        raise ModulusError("E or F is not resolved by the grid")
    u, v, c = _conductances(space, G)
    keep = active[u] & active[v]
    u, v, c = u[keep], v[keep], c[keep]
    # Shortley-Weller correction on edges cut by a curved Dirichlet boundary
    for S, mask in ((spec.E, inE), (spec.F, inF)):
        lv = S.level(P)
        if lv is None:
            continue
        cross_uv = ~mask[u] & mask[v]
        cross_vu = mask[u] & ~mask[v]
        c[cross_uv] /= _cut_fraction(lv[u[cross_uv]], lv[v[cross_uv]])
        c[cross_vu] /= _cut_fraction(lv[v[cross_vu]], lv[u[cross_vu]])
    value = np.zeros(n)
    value[inF] = 1.0
    fixed = inE | inF
    free = active & ~fixed
    idx = -np.ones(n, dtype=np.int64)
    idx[free] = np.arange(free.sum())
    nf = int(free.sum())
    both = free[u] & free[v]
    rows = np.r_[idx[u[both]], idx[v[both]]]
    cols = np.r_[idx[v[both]], idx[u[both]]]
    vals = np.r_[-c[both], -c[both]]
    diag = np.zeros(nf)
    np.add.at(diag, idx[u[free[u]]], c[free[u]])
    np.add.at(diag, idx[v[free[v]]], c[free[v]])
    rhs = np.zeros(nf)
    fu = free[u] & fixed[v]
    np.add.at(rhs, idx[u[fu]], c[fu] * value[v[fu]])
    fv = free[v] & fixed[u]
    np.add.at(rhs, idx[v[fv]], c[fv] * value[u[fv]])
    A = sparse.csr_matrix((np.r_[vals, diag], (np.r_[rows, np.arange(nf)], np.r_[cols, np.arange(nf)])),
                          shape=(nf, nf))
    # free nodes with no path to the Dirichlet data make the system singular
    ncomp, lab = csgraph.connected_components(A, directed=False)
    anchored = np.zeros(ncomp, dtype=bool)
    anchored[lab[rhs != 0]] = True
    touch = np.zeros(nf, dtype=bool)
    touch[idx[u[fu]]] = True
    touch[idx[v[fv]]] = True
    anchored[lab[touch]] = True
    if not anchored[lab].all():
        floating = ~anchored[lab]
        A = A.tolil()
        for i in np.flatnonzero(floating):
            A.rows[i], A.data[i] = [i], [1.0]
        A = A.tocsr()
        rhs[floating] = 0.0
    M = None
    if pyamg is not None and nf > 2000:
        M = _amg_preconditioner(A)
    sol, info = cg(A, rhs, rtol=rtol, maxiter=5000, M=M)
    if info != 0:
        sol = spsolve(A.tocsc(), rhs)
    res = float(np.linalg.norm(A @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not res < 1e-6:
        raise ModulusError(f"linear solve failed (relative residual {res:.3g})")
    value[free] = sol
    energy = float((c * (value[u] - value[v]) ** 2).sum())
    result = ModulusResult(energy, "harmonic-energy", res, int(info), None,
                           {"nodes": n, "free": nf, "nx": len(xs), "ny": len(ys)})
    if return_potential:
        result.density = value.reshape(G.shape)
        result.info["grid"] = G
    return result


# --------------------------------------------------------------------------
# density (constraint generation) solver on a graph
# --------------------------------------------------------------------------

def _amg_preconditioner(A):
    # pyamg draws the start vectors of its spectral-radius estimates from the
    # global numpy generator; a fixed state keeps repeated solves bit-identical
    state = np.random.get_state()
    try:
        np.random.seed(0)
        return pyamg.smoothed_aggregation_solver(A, symmetry="symmetric").aspreconditioner()
    finally:
        np.random.set_state(state)


def _dual_sweeps(rows, lam, rho, minv, tol, max_sweeps=200):
    """Coordinate descent on ``1/4 l'Hl - 1'l`` over ``l >= 0`` with ``H = A M^-1 A'``.

    Each step is an exact line search along one coordinate followed by the
    projection onto ``l_i >= 0``; ``rho = M^-1 A' l / 2`` is kept in sync so a
    step costs one pass over the path's nodes.
    """
    for sweep in range(max_sweeps):
        worst = 0.0
        for i, (idx, val, curv) in enumerate(rows):
            ell = float(val @ rho[idx])
            new = max(0.0, lam[i] + (1.0 - ell) / curv)
            step = new - lam[i]
            if step != 0.0:
                rho[idx] += (0.5 * step) * val * minv[idx]
                lam[i] = new
            gap = 1.0 - ell if new > 0.0 else max(1.0 - ell, 0.0)
            worst = max(worst, abs(gap))
        if worst < tol:
            return sweep + 1
    return max_sweeps


def density_modulus_graph(adjacency: sparse.csr_matrix, mass: np.ndarray, E: np.ndarray, F: np.ndarray,
                          tol: float = 1e-3, batch: int = 50, max_constraints: int = 10_000,
                          max_rounds: int = 2000, rho_on_plates: bool = True,
                          inner_sweeps: int = 8, prune_after: int = 5,
                          trace: Optional[list] = None) -> ModulusResult:
    """Modulus of the ``E -> F`` path family of a weighted graph.

    ``adjacency`` holds symmetric edge costs (the curve measure of each edge)
    and ``mass`` the node masses.  A path's ``rho``-length is
    ``sum_edges cost * (rho(u) + rho(v)) / 2``, a trapezoid rule along the
    path.  With ``rho_on_plates`` the plate nodes carry density too, so a
    path's first and last half edges are counted; otherwise ``rho`` vanishes on
    ``E`` and ``F``.
    """
    n = adjacency.shape[0]
    E = np.asarray(E, dtype=bool)
    F = np.asarray(F, dtype=bool)
    if not E.any() or not F.any():
        raise ModulusError("E or F is empty")
    if (E & F).any():
        raise ModulusError("E and F overlap")
    A = adjacency.tocsr().astype(float)
    A.eliminate_zeros()
    coo = A.tocoo()
    up = coo.row < coo.col
    eu, ev, ec = coo.row[up], coo.col[up], coo.data[up]
    # a plate-to-plate path of zero cost has zero rho-length for every rho
    zero = ec <= 1e-250
    if zero.any():
        zg = sparse.csr_matrix((np.ones(zero.sum()), (eu[zero], ev[zero])), shape=(n, n))
        _, lab = csgraph.connected_components(zg + zg.T, directed=False)
        if np.intersect1d(lab[E], lab[F]).size:
            return ModulusResult(math.inf, "density-qp", 0.0, 0, None, {"reason": "zero-length curve"})
    mass = np.asarray(mass, dtype=float)
    touched = np.zeros(n, dtype=bool)
    touched[eu] = True
    touched[ev] = True
    var = touched & (mass > 0)
    if not rho_on_plates:
        var &= ~(E | F)
    minv = np.zeros(n)
    minv[var] = 1.0 / mass[var]
    Eidx = np.flatnonzero(E)
    Fidx = np.flatnonzero(F)
    interior = np.flatnonzero(~(E | F) & touched)
    rho = np.zeros(n)
    rows = []
    lam = np.zeros(0)
    idle = np.zeros(0, dtype=int)
    generated = 0
    indptr, indices = A.indptr, A.indices
    row_of = np.repeat(np.arange(n), np.diff(indptr))
    # share of each edge's cost charged to its endpoints: half each, or all
    # of it to the free endpoint of an edge leaving a density-free plate
    wr = np.full(len(A.data), 0.5)
    wc = np.full(len(A.data), 0.5)
    if not rho_on_plates:
        plate = E | F
        r_pl, c_pl = plate[row_of], plate[indices]
        wr = np.where(c_pl & ~r_pl, 1.0, np.where(r_pl, 0.0, 0.5))
        wc = np.where(r_pl & ~c_pl, 1.0, np.where(c_pl, 0.0, 0.5))
    charge = sparse.csr_matrix((wr, indices, indptr), shape=(n, n))
    shortest = 0.0
    sweeps = 0
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        W = A.copy()
        W.data = np.maximum(A.data * (wr * rho[row_of] + wc * rho[indices]), 1e-300)
        dist, pred, _ = csgraph.dijkstra(W, directed=True, indices=Eidx, return_predecessors=True,
                                         min_only=True)
        shortest = float(dist[F].min())
        if trace is not None:
            trace.append((rounds, shortest, len(rows)))
        if shortest >= 1 - tol:
            break
        if len(rows) >= max_constraints:
            raise ModulusError("constraint cap reached before tolerance")
        # violated paths through distinct interior nodes: a search from E and
        # one from F give, for each node, the best path through it
        distF, predF, _ = csgraph.dijkstra(W, directed=True, indices=Fidx, return_predecessors=True,
                                           min_only=True)
        through = dist + distF
        cand = interior[np.argsort(through[interior], kind="stable")]
        cand = cand[through[cand] < 1 - tol]
        if not cand.size:
            # the shortest path is a direct plate-to-plate edge
            j = Fidx[np.argmin(dist[F])]
            cand = np.array([j])
        covered = np.zeros(n, dtype=bool)
        added = 0
        for v in cand:
            if covered[v]:
                continue
            head = [int(v)]
            while pred[head[-1]] >= 0:
                head.append(int(pred[head[-1]]))
            tail = [int(v)]
            while predF[tail[-1]] >= 0:
                tail.append(int(predF[tail[-1]]))
            path = np.asarray(head[::-1] + tail[1:])
            covered[path] = True
            a_, b_ = path[:-1], path[1:]
            cost = np.asarray(A[a_, b_]).ravel()
            share = np.asarray(charge[a_, b_]).ravel()
            vec = np.zeros(n)
            np.add.at(vec, a_, share * cost)
            np.add.at(vec, b_, (1.0 - share) * cost)
            vec[~var] = 0.0
            idx = np.flatnonzero(vec)
            val = vec[idx]
            curv = 0.5 * float((val * val * minv[idx]).sum())
            if curv <= 0:
                return ModulusResult(math.inf, "density-qp", 0.0, rounds, None,
                                     {"reason": "path without density-carrying nodes"})
            rows.append((idx, val, curv))
            added += 1
            generated += 1
            if added >= batch:
                break
        lam = np.r_[lam, np.zeros(added)]
        idle = np.r_[idle, np.zeros(added, dtype=int)]
        sweeps += _dual_sweeps(rows, lam, rho, minv, 0.1 * tol, inner_sweeps)
        # constraints that stayed inactive for a while are dropped; one that
        # matters again is regenerated by the path search
        idle = np.where(lam > 0, 0, idle + 1)
        keep = idle <= prune_after
        if not keep.all():
            rows = [r for r, k_ in zip(rows, keep) if k_]
            lam, idle = lam[keep], idle[keep]
    else:
        raise ModulusError("constraint generation did not reach tolerance")
    primal = float((mass[var] * rho[var] ** 2).sum())
    # rescaling by the shortest length makes rho admissible for every graph path
    upper = primal / max(shortest, 1e-300) ** 2
    return ModulusResult(upper, "density-qp", abs(upper - primal), rounds, rho,
                         {"lower": primal, "constraints": generated, "active": len(rows), "shortest": shortest,
                          "sweeps": sweeps})


def _grid_family_masks(g: GridGraph, spec: CurveFamilySpec):
    P = g.coords
    tol = 1e-9 + 0.0
    active = np.ones(len(P), dtype=bool) if spec.domain is None else spec.domain.mask(P, tol)
    segtol = 0.5 * g.h
    E = spec.E.mask(P, segtol if isinstance(spec.E, SegmentSet) else tol) & active
    F = spec.F.mask(P, segtol if isinstance(spec.F, SegmentSet) else tol) & active
    return active, E, F


def _cut_plates(g: GridGraph, spec: CurveFamilySpec, active, E, F, adj: sparse.csr_matrix, mass,
                sub: int = 6):
    """Sharpen the plates of a grid family.

    An edge from a free node to a plate node is shortened to the point where
    it crosses the plate boundary (linear interpolation of the level
    function), and the part of each plate cell lying outside the plate is
    handed to the plate node's free lattice neighbours.  Together with the
    density vanishing on the plates this removes the first-order bias of
    snapping the plates to nodes.
    """
    P = g.coords
    free = active & ~(E | F)
    A = adj.tocoo()
    u, v, c = A.row, A.col, A.data.copy()
    mass = np.array(mass, dtype=float)
    for plate, S in ((E, spec.E), (F, spec.F)):
        phi = S.level(P)
        if phi is None:
            continue
        cut = free[u] & plate[v]
        cut2 = plate[u] & free[v]
        for fa, pa, m in ((u, v, cut), (v, u, cut2)):
            pf, pp = phi[fa[m]], phi[pa[m]]
            with np.errstate(divide="ignore", invalid="ignore"):
                theta = np.where(pf - pp > 0, pf / (pf - pp), 1.0)
            c[m] *= np.clip(theta, 0.02, 1.0)
        # outside part of the boundary plate cells
        nx, ny = g.nx, g.ny
        lo_x = np.r_[g.xs[0], 0.5 * (g.xs[1:] + g.xs[:-1])]
        hi_x = np.r_[0.5 * (g.xs[1:] + g.xs[:-1]), g.xs[-1]]
        lo_y = np.r_[g.ys[0], 0.5 * (g.ys[1:] + g.ys[:-1])]
        hi_y = np.r_[0.5 * (g.ys[1:] + g.ys[:-1]), g.ys[-1]]
        idx = np.flatnonzero(plate)
        ii, jj = idx % nx, idx // nx
        nbrs = []
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            i2, j2 = ii + di, jj + dj
            ok = (i2 >= 0) & (i2 < nx) & (j2 >= 0) & (j2 < ny)
            q = np.where(ok, j2 * nx + np.clip(i2, 0, nx - 1), 0)
            nbrs.append(np.where(ok & free[np.clip(q, 0, len(P) - 1)], q, -1))
        nbrs = np.stack(nbrs, axis=1)
        rim = (nbrs >= 0).any(axis=1)
        idx, ii, jj, nbrs = idx[rim], ii[rim], jj[rim], nbrs[rim]
        if not len(idx):
            continue
        t = (np.arange(sub) + 0.5) / sub
        sx = lo_x[ii, None] + (hi_x - lo_x)[ii, None] * t
        sy = lo_y[jj, None] + (hi_y - lo_y)[jj, None] * t
        pts = np.stack(np.broadcast_arrays(sx[:, :, None], sy[:, None, :]), axis=-1)
        outside = S.level(pts.reshape(-1, 2)).reshape(len(idx), sub, sub) > 0
        if spec.domain is not None:
            outside &= spec.domain.mask(pts.reshape(-1, 2), 1e-9).reshape(outside.shape)
        share = mass[idx] * outside.mean(axis=(1, 2)) / (nbrs >= 0).sum(axis=1)
        for col in range(4):
            ok = nbrs[:, col] >= 0
            np.add.at(mass, nbrs[ok, col], share[ok])
        mass[idx] = 0.0
    return sparse.csr_matrix((c, (u, v)), shape=adj.shape), mass


def _restrict(adj: sparse.csr_matrix, active: np.ndarray) -> sparse.csr_matrix:
    D = sparse.diags(active.astype(float))
    return (D @ adj @ D).tocsr()


def modulus_density(space: SpaceHandle, spec: CurveFamilySpec, h: Optional[float] = None, k: int = 16,
                    tol: float = 1e-3, grid: Optional[GridGraph] = None, **kw) -> ModulusResult:
    """Density-QP modulus with node masses ``int omega**2`` and d-length edges."""
    g = grid or build_grid(space, spec.box, h or max(spec.box.width, spec.box.height) / 64, k)
    active, E, F = _grid_family_masks(g, spec)
    adj, mass = _cut_plates(g, spec, active, E, F, _restrict(g.adjacency, active), g.node_mass * active)
    res = density_modulus_graph(adj, mass, E, F, tol=tol, rho_on_plates=False, **kw)
    res.info.update({"h": g.h, "stencil": g.k})
    return res


def mesh_harmonic_modulus(mesh, E: np.ndarray, F: np.ndarray) -> ModulusResult:
    """Capacity of the condenser ``(E, F)`` on a triangulated surface.

    On a surface the 2-modulus of the connecting family equals the least
    Dirichlet energy of a potential that is 0 on ``E`` and 1 on ``F``; the
    potential is sought among piecewise linear functions on the mesh.
    """
    E = np.asarray(E, dtype=bool)
    F = np.asarray(F, dtype=bool)
    if not E.any() or not F.any():
        raise ModulusError("E or F is empty")
    if (E & F).any():
        raise ModulusError("E and F overlap")
    K = mesh.stiffness
    n = K.shape[0]
    fixed = E | F
    value = np.where(F, 1.0, 0.0)
    free = np.flatnonzero(~fixed)
    Kff = K[free][:, free].tocsc()
    rhs = -K[free][:, np.flatnonzero(fixed)] @ value[fixed]
    # isolated free components carry no energy; pin them to 0
    ncomp, lab = csgraph.connected_components(Kff, directed=False)
    touch = np.zeros(ncomp, dtype=bool)
    touch[lab[np.abs(rhs) > 0]] = True
    if not touch.all():
        floating = ~touch[lab]
        Kff = (Kff + sparse.diags(floating.astype(float))).tocsc()
    sol = spsolve(Kff, rhs)
    res = float(np.linalg.norm(Kff @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not res < 1e-6:
        raise ModulusError(f"linear solve failed (relative residual {res:.3g})")
    value[free] = sol
    energy = float(value @ (K @ value))
    return ModulusResult(energy, "harmonic-energy", res, 0, value, {"nodes": n, "free": len(free)})


def mu_modulus(space: SpaceHandle, spec=None, h: Optional[float] = None, k: int = 16, tol: float = 1e-3,
               mesh=None, E=None, F=None, method: str = "harmonic", **kw) -> MuModulusResult:
    """mu-modulus: density solver with ``mu`` cell masses and q-edge costs.

    Planar spaces take a :class:`CurveFamilySpec`.  On spike surfaces pass a
    :class:`~qcsurf.spikes.SurfaceMesh` together with boolean node masks
    ``E`` and ``F``.  There the default ``method="harmonic"`` returns the
    finite-element capacity of ``(E, F)``; ``method="density"`` runs the
    density solver with chord-length edges and lumped node areas instead.
    """
    if mesh is not None:
        if method == "harmonic":
            res = mesh_harmonic_modulus(mesh, E, F)
        elif method == "density":
            res = density_modulus_graph(mesh.adjacency, mesh.node_mass, E, F, tol=tol, **kw)
        else:
            raise ModulusError("method must be 'harmonic' or 'density'")
        return MuModulusResult(res.value, res.method, res.residual, res.iterations, res.density,
                               {**res.info, "nodes": mesh.n_nodes})
    from .measures import q_edge_costs
    g = build_grid(space, spec.box, h or max(spec.box.width, spec.box.height) / 64, k)
    masses = g.node_mass
    if space.measure == "lebesgue":
        from .geodesics import cell_masses
        from .spaces import euclidean_field
        masses = cell_masses(euclidean_field(), g.xs, g.ys)
    qg = q_edge_costs(g)
    active, Em, Fm = _grid_family_masks(qg, spec)
    adj, mass = _cut_plates(qg, spec, active, Em, Fm, _restrict(qg.adjacency, active), masses * active)
    res = density_modulus_graph(adj, mass, Em, Fm, tol=tol, rho_on_plates=False, **kw)
    return MuModulusResult(res.value, "density-qp", res.residual, res.iterations, res.density,
                           {**res.info, "h": g.h, "stencil": k})


def modulus_quadrilateral(space: SpaceHandle, q: CurveFamilySpec, **kw) -> ModulusResult:
    if q.kind != "quadrilateral":
        raise ModulusError("expected a quadrilateral family")
    return harmonic_modulus(space, q, **kw)


def modulus_ring(space: SpaceHandle, spec: CurveFamilySpec, **kw) -> ModulusResult:
    if spec.kind not in ("ring", "spanning-ring", "condenser"):
        raise ModulusError("expected a ring family")
    return harmonic_modulus(space, spec, **kw)


def conjugate_product(space: SpaceHandle, rect: Box, **kw) -> tuple:
    m13 = modulus_quadrilateral(space, quadrilateral(rect, "13"), **kw).value
    m24 = modulus_quadrilateral(space, quadrilateral(rect, "24"), **kw).value
    return m13, m24, m13 * m24


# --------------------------------------------------------------------------
# the chained-annuli test density
# --------------------------------------------------------------------------

@dataclass
class ChainedAnnuliReport:
    k: int
    energy: float
    bound: float
    min_length: float
    radii: list

    @property
    def admissible(self) -> bool:
        return self.min_length >= 1.0 - 1e-9

    @property
    def scaled_energy(self) -> float:
        """Energy of ``rho / min_length``, which is admissible for every grid path of the family."""
        if self.min_length <= 0:
            return math.inf
        return self.energy / min(self.min_length, 1.0) ** 2


def chained_annuli_density(space: SpaceHandle, x, ell: float, m: float, Lambda: float, lam: float,
                           C_i: float, h: Optional[float] = None, k_stencil: int = 16) -> ChainedAnnuliReport:
    """Energy and admissibility of ``rho = (1/k) sum_j C_i chi_{A_j} / mu(B_j)**0.5``.

    ``B_j = B_d(x, Lambda**j ell / lam)`` and ``A_j = B_j \\ B_{j-1}`` for
    ``j = 1..k`` with ``k = ceil(log_Lambda(m / (ell lam**2)))``.  The curve
    family joins ``B_d(x, ell)`` to the complement of ``B_d(x, m)``.
    ``min_length`` is the smallest ``rho``-length (q-edge costs) over grid
    paths of the family.
    """
    from .measures import ball_measure, q_edge_costs
    if m / ell < Lambda * lam ** 2:
        raise ModulusError("need m / ell >= Lambda lam**2")
    k = int(math.ceil(math.log(m / (ell * lam ** 2)) / math.log(Lambda)))
    radii = [Lambda ** j * ell / lam for j in range(0, k + 1)]
    mus = [ball_measure(space, x, r) for r in radii[1:]]
    R = max(m, radii[-1])
    bounds = space.euclidean_bounds(x, R)
    pad = 0.05 * max(bounds.width, bounds.height)
    box = Box(bounds.x0 - pad, bounds.x1 + pad, bounds.y0 - pad, bounds.y1 + pad).intersect(space.field.bbox)
    g = build_grid(space, box, h or max(box.width, box.height) / 256, k_stencil)
    d = distance_from_point(g, x)
    rho = np.zeros(g.n_nodes)
    for j in range(1, k + 1):
        ring = (d >= radii[j - 1]) & (d < radii[j])
        rho[ring] += C_i / (k * math.sqrt(mus[j - 1]))
    energy = float((rho ** 2 * g.node_mass).sum())
    qg = q_edge_costs(g)
    A = qg.adjacency.tocsr()
    row_of = np.repeat(np.arange(g.n_nodes), np.diff(A.indptr))
    W = A.copy()
    W.data = np.maximum(A.data * 0.5 * (rho[row_of] + rho[A.indices]), 1e-300)
    E = d <= ell
    F = d >= m
    dist = csgraph.dijkstra(W, directed=True, indices=np.flatnonzero(E), min_only=True)
    return ChainedAnnuliReport(k, energy, C_i ** 2 / k, float(dist[F].min()), radii)
