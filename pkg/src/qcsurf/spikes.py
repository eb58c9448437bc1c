"""Triangulations of the spike surfaces and areas of ambient balls on them.

The surface is the plane with the disks ``B((t_n, 0), r_n)`` replaced by
cones or capped cylinders.  Ambient balls meet every flat piece in a planar
disk, so the flat parts (the perforated plane and the cylinder caps) are
handled with exact circle-intersection formulas, and the curved parts are
replaced by their inscribed polyhedra (planar facets) whose intersection
with a ball is computed exactly, facet by facet.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay

from .spaces import SpaceError, SpikeSurface


# --------------------------------------------------------------------------
# exact planar pieces
# --------------------------------------------------------------------------

def lens_area(d, a, b) -> np.ndarray:
    """Area of the intersection of disks of radii ``a`` and ``b`` at distance ``d``."""
    d, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (d, a, b)))
    out = np.zeros(d.shape)
    small = np.minimum(a, b)
    contained = d <= np.abs(a - b)
    out[contained] = np.pi * small[contained] ** 2
    part = ~contained & (d < a + b) & (a > 0) & (b > 0)
    if part.any():
        dd, aa, bb = d[part], a[part], b[part]
        c1 = np.clip((dd * dd + aa * aa - bb * bb) / (2 * dd * aa), -1, 1)
        c2 = np.clip((dd * dd + bb * bb - aa * aa) / (2 * dd * bb), -1, 1)
        k = np.sqrt(np.maximum((-dd + aa + bb) * (dd + aa - bb) * (dd - aa + bb) * (dd + aa + bb), 0))
        out[part] = aa * aa * np.arccos(c1) + bb * bb * np.arccos(c2) - 0.5 * k
    return out


def _edge_term(P, Q, R):
    # signed area of triangle(0, P, Q) intersected with the disk |z| < R
    d = Q - P
    a = (d * d).sum(-1)
    b = 2 * (P * d).sum(-1)
    c = (P * P).sum(-1) - R * R
    disc = b * b - 4 * a * c
    hit = (disc > 0) & (a > 0)
    sq = np.sqrt(np.where(hit, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        s1 = np.where(hit, (-b - sq) / (2 * a), 0.0)
        s2 = np.where(hit, (-b + sq) / (2 * a), 0.0)
    s1 = np.clip(s1, 0, 1)
    s2 = np.clip(s2, 0, 1)
    s2 = np.maximum(s1, s2)
    X0 = P + s1[..., None] * d
    X1 = P + s2[..., None] * d

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    def sector(u, v):
        return 0.5 * R * R * np.arctan2(cross(u, v), (u * v).sum(-1))

    return sector(P, X0) + 0.5 * cross(X0, X1) + sector(X1, Q)


def triangle_disk_area(tri2d: np.ndarray, R) -> np.ndarray:
    """Area of planar triangles (``(T, 3, 2)``, disk centred at 0) inside ``|z| < R``."""
    A, B, C = tri2d[:, 0], tri2d[:, 1], tri2d[:, 2]
    R = np.broadcast_to(np.asarray(R, dtype=float), (len(tri2d),))
    s = _edge_term(A, B, R) + _edge_term(B, C, R) + _edge_term(C, A, R)
    return np.abs(s)


def triangle_ball_area(tri: np.ndarray, x, r: float) -> np.ndarray:
    """Area of each 3-D triangle (``(T, 3, 3)``) inside the open ball ``B(x, r)``."""
    x = np.asarray(x, dtype=float)
    A, B, C = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(B - A, C - A)
    nn = np.linalg.norm(n, axis=1)
    out = np.zeros(len(tri))
    ok = nn > 0
    if not ok.any():
        return out
    A, B, C, n, nn = A[ok], B[ok], C[ok], n[ok], nn[ok]
    nh = n / nn[:, None]
    dist = ((x - A) * nh).sum(1)
    rho2 = r * r - dist * dist
    cut = rho2 > 0
    if not cut.any():
        return out
    e1 = B - A
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(nh, e1)
    c = x - dist[:, None] * nh
    pts = np.stack([A, B, C], axis=1) - c[:, None, :]
    tri2 = np.stack([(pts * e1[:, None, :]).sum(-1), (pts * e2[:, None, :]).sum(-1)], axis=-1)
    vals = np.zeros(len(A))
    vals[cut] = triangle_disk_area(tri2[cut], np.sqrt(rho2[cut]))
    out[np.flatnonzero(ok)] = vals
    return out


# --------------------------------------------------------------------------
# faceted spike pieces
# --------------------------------------------------------------------------

def piece_facets(s: SpikeSurface, n: int, m: int = 512) -> np.ndarray:
    """Planar facets of the curved part of spike ``n`` (cone, or cylinder tube)."""
    tn, hn, rn = float(s.t(n)), float(s.h(n)), float(s.r(n))
    th = 2 * np.pi * np.arange(m + 1) / m
    rim = np.column_stack([tn + rn * np.cos(th), rn * np.sin(th), np.zeros(m + 1)])
    if s.kind == "cones":
        apex = np.broadcast_to(np.array([tn, 0.0, hn]), (m, 3))
        return np.stack([apex, rim[:-1], rim[1:]], axis=1)
    top = rim + np.array([0.0, 0.0, hn])
    t1 = np.stack([rim[:-1], rim[1:], top[1:]], axis=1)
    t2 = np.stack([rim[:-1], top[1:], top[:-1]], axis=1)
    return np.concatenate([t1, t2])


def _facet_area(tri):
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def _curved_true_area(s: SpikeSurface, n: int) -> float:
    r, h = float(s.r(n)), float(s.h(n))
    if s.kind == "cones":
        return math.pi * r * math.hypot(h, r)
    return 2 * math.pi * r * h


def ball_area(s: SpikeSurface, x, r: float, m: int = 512, check: bool = True) -> float:
    """Surface area of ``{y in X : |y - x| < r}``.

    Flat parts use circle-lens formulas.  The curved part of each spike is
    replaced by ``m`` (cones) or ``2 m`` (tubes) planar facets clipped
    exactly against the ball; the clipped facet area is rescaled by the ratio
    of the true lateral area to the facet area, which makes a fully covered
    spike exact.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise SpaceError("spike surfaces take points of R^3")
    if r <= 0:
        raise SpaceError("radius must be positive")
    if check and s.distance_to_surface(x[None])[0] > 1e-9:
        raise SpaceError(f"point {tuple(float(v) for v in x)} is not on the surface")
    idx = s.indices
    tn, hn, rn = s.t(idx), s.h(idx), s.r(idx)
    total = 0.0
    # perforated plane z = 0
    if abs(x[2]) < r:
        rho = math.sqrt(r * r - x[2] * x[2])
        dc = np.hypot(x[0] - tn, x[1])
        total += math.pi * rho * rho - float(lens_area(dc, rho, rn).sum())
    for k, n in enumerate(idx):
        t, h, rr = float(tn[k]), float(hn[k]), float(rn[k])
        # distance from x to the solid cylinder enclosing the spike
        dxy = max(math.hypot(x[0] - t, x[1]) - rr, 0.0)
        dz = max(x[2] - h, -x[2], 0.0)
        if math.hypot(dxy, dz) >= r:
            continue
        if s.kind == "cylinders" and abs(x[2] - h) < r:
            rho = math.sqrt(r * r - (x[2] - h) ** 2)
            total += float(lens_area(math.hypot(x[0] - t, x[1]), rho, rr))
        far_xy = math.hypot(x[0] - t, x[1]) + rr
        top = [0.0, h]
        if max(math.hypot(far_xy, x[2] - z) for z in top) < r:
            total += _curved_true_area(s, n)
            continue
        tri = piece_facets(s, int(n), m)
        fa = _facet_area(tri)
        clipped = triangle_ball_area(tri, x, r)
        total += float(clipped.sum()) * _curved_true_area(s, n) / float(fa.sum())
    return total


def origin_ball_bound(s: SpikeSurface, n: int) -> float:
    """Constant ``K`` with ``H^2(B(0, 2^-n)) <= K 2^{-2n}`` from the geometric tail.

    ``K = pi + pi * sum_{k >= n} 2^{2n} 2^{-3k/2} (2^{-k/2} + 2^{-3k/2})`` for
    cones; for cylinders the lateral plus cap areas are summed instead.
    """
    k = np.arange(n, n + 200, dtype=float)
    if s.kind == "cones":
        excess = 2.0 ** (-1.5 * k) * (2.0 ** (-0.5 * k) + 2.0 ** (-1.5 * k))
    else:
        excess = 2 * 2.0 ** (-2 - 2 * k) * 2.0 ** (-k) + (2.0 ** (-2 - 2 * k)) ** 2
    return math.pi + math.pi * 2.0 ** (2 * n) * float(excess.sum())


# --------------------------------------------------------------------------
# surface mesh
# --------------------------------------------------------------------------

@dataclass
class SurfaceMesh:
    """Triangulated piece of a spike surface around the origin.

    ``piece[v]`` is 0 for vertices of the plane and ``n`` for vertices that
    lie on spike ``n`` strictly above the plane.
    """

    surface: SpikeSurface
    vertices: np.ndarray
    triangles: np.ndarray
    piece: np.ndarray
    radius: float

    @property
    def n_nodes(self) -> int:
        return len(self.vertices)

    @cached_property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        e, L = self.edges, np.maximum(self.edge_lengths, 1e-300)
        n = self.n_nodes
        return sparse.coo_matrix((np.r_[L, L], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                                 shape=(n, n)).tocsr()

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        return _facet_area(self.vertices[self.triangles])

    @cached_property
    def node_mass(self) -> np.ndarray:
        m = np.zeros(self.n_nodes)
        a = self.triangle_areas / 3
        for j in range(3):
            np.add.at(m, self.triangles[:, j], a)
        return m

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        """P1 finite-element stiffness matrix (cotangent weights).

        ``u' K u`` is the Dirichlet energy of the piecewise linear
        interpolant of ``u``.
        """
        V, T = self.vertices, self.triangles
        n = self.n_nodes
        rows, cols, vals = [], [], []
        for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            # the angle at corner c is opposite the edge (a, b)
            e1 = V[T[:, a]] - V[T[:, c]]
            e2 = V[T[:, b]] - V[T[:, c]]
            cross = np.linalg.norm(np.cross(e1, e2), axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                cot = np.where(cross > 0, (e1 * e2).sum(axis=1) / cross, 0.0)
            w = 0.5 * cot
            rows += [T[:, a], T[:, b]]
            cols += [T[:, b], T[:, a]]
            vals += [-w, -w]
        r, c_, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        K = sparse.coo_matrix((v, (r, c_)), shape=(n, n)).tocsr()
        K = K - sparse.diags(np.asarray(K.sum(axis=1)).ravel())
        return K.tocsr()

    def nearest(self, p) -> int:
        p = np.asarray(p, dtype=float)
        return int(np.argmin(np.linalg.norm(self.vertices - p, axis=1)))

    def norms(self, x=(0.0, 0.0, 0.0)) -> np.ndarray:
        return np.linalg.norm(self.vertices - np.asarray(x, dtype=float), axis=1)


def _ring(cx, cy, rad, m, phase=0.0):
    a = phase + 2 * np.pi * np.arange(m) / m
    return np.column_stack([cx + rad * np.cos(a), cy + rad * np.sin(a)])


def _band(i0, i1, m):
    # triangles joining two rings of m vertices with matching angles
    j = np.arange(m)
    k = (j + 1) % m
    return np.concatenate([np.column_stack([i0 + j, i0 + k, i1 + k]),
                           np.column_stack([i0 + j, i1 + k, i1 + j])])


def build_surface_mesh(s: SpikeSurface, radius: float = 0.75, n_ang: int = 96,
                       r_min: float | None = None, rim_points: int = 32,
                       cone_rings: int = 6, cap_rings: int = 4, max_tube_rings: int = 48,
                       max_n: int | None = None) -> SurfaceMesh:
    """Graded triangulation of ``X`` inside the ball of radius ``radius``.

    The plane is sampled on polar rings whose spacing grows geometrically
    from ``r_min``; ``n_ang`` is a multiple of 4 so the coordinate rays are
    resolved by mesh edges.  Each hole gets its own family of refinement
    rings so that even the thinnest spikes are attached to the plane along
    their full rim.  ``max_n`` drops the spikes of higher index (their holes
    are filled with plane), which keeps the mesh small when only scales far
    above those spikes matter.
    """
    if n_ang % 4:
        raise SpaceError("n_ang must be a multiple of 4")
    idx = [int(n) for n in s.indices if float(s.t(n) + s.r(n)) < radius and (max_n is None or n <= max_n)]
    if r_min is None:
        r_min = min(1e-4, float(s.t(max(idx) if idx else s.N)) / 4)
    q = 1 + 2 * np.pi / n_ang
    nr = int(math.ceil(math.log(radius / r_min) / math.log(q)))
    radii = r_min * q ** np.arange(nr)
    radii = np.r_[radii[radii < radius * (1 - 0.5 * (q - 1))], radius]
    plane = [np.zeros((1, 2))] + [_ring(0.0, 0.0, rr, n_ang) for rr in radii]
    P = np.vstack(plane)
    keep = np.ones(len(P), dtype=bool)
    local, rims = [], {}
    for n in idx:
        tn, rn = float(s.t(n)), float(s.r(n))
        ell = tn * 2 * np.pi / n_ang
        m = max(rim_points, int(math.ceil(2 * np.pi * rn / ell)))
        g = 1 + 2 * np.pi / m
        rings = [rn]
        while rings[-1] < rn + 1.5 * ell:
            rings.append(rings[-1] * g if rings[-1] * (g - 1) < ell else rings[-1] + ell)
        outer = rings[-1]
        keep &= np.hypot(P[:, 0] - tn, P[:, 1]) > outer + 0.5 * ell
        pts = [_ring(tn, 0.0, rr, m) for rr in rings]
        local.append((n, m, pts))
    P = P[keep]
    blocks = [P]
    offset = len(P)
    sel = [np.arange(len(P))]
    bands = []
    for n, m, pts in local:
        rims[n] = (offset, m)
        for j, ring in enumerate(pts):
            blocks.append(ring)
            if j:
                bands.append(_band(offset - m, offset, m))
            offset += len(ring)
        # only the outermost ring meets the ambient points; the refinement
        # rings are joined by structured bands, which stays robust at hole
        # radii far below the plane's sampling scale
        sel.append(np.arange(offset - m, offset))
    P2 = np.vstack(blocks)
    sel = np.concatenate(sel)
    tri = sel[Delaunay(P2[sel]).simplices]
    cen = P2[tri].mean(axis=1)
    bad = np.zeros(len(tri), dtype=bool)
    for n, m, pts in local:
        tn = float(s.t(n))
        outer = float(np.hypot(pts[-1][0, 0] - tn, pts[-1][0, 1]))
        bad |= np.hypot(cen[:, 0] - tn, cen[:, 1]) < outer * math.cos(math.pi / m)
    tri = np.vstack([tri[~bad]] + bands)
    V = [np.column_stack([P2, np.zeros(len(P2))])]
    piece = [np.zeros(len(P2), dtype=int)]
    T = [tri]
    nv = len(P2)
    for n in idx:
        tn, hn, rn = float(s.t(n)), float(s.h(n)), float(s.r(n))
        i_rim, m = rims[n]
        ang = 2 * np.pi * np.arange(m) / m
        prev = i_rim
        if s.kind == "cones":
            for j in range(1, cone_rings):
                f = 1 - j / cone_rings
                ring = np.column_stack([tn + rn * f * np.cos(ang), rn * f * np.sin(ang),
                                        np.full(m, hn * (1 - f))])
                V.append(ring)
                piece.append(np.full(m, n))
                T.append(_band(prev, nv, m))
                prev = nv
                nv += m
            V.append(np.array([[tn, 0.0, hn]]))
            piece.append(np.array([n]))
            j = np.arange(m)
            T.append(np.column_stack([prev + j, prev + (j + 1) % m, np.full(m, nv)]))
            nv += 1
            continue
        nz = int(np.clip(math.ceil(hn / (2 * np.pi * rn / m)), 4, max_tube_rings))
        for j in range(1, nz + 1):
            ring = np.column_stack([tn + rn * np.cos(ang), rn * np.sin(ang), np.full(m, hn * j / nz)])
            V.append(ring)
            piece.append(np.full(m, n))
            T.append(_band(prev, nv, m))
            prev = nv
            nv += m
        for j in range(1, cap_rings):
            f = 1 - j / cap_rings
            ring = np.column_stack([tn + rn * f * np.cos(ang), rn * f * np.sin(ang), np.full(m, hn)])
            V.append(ring)
            piece.append(np.full(m, n))
            T.append(_band(prev, nv, m))
            prev = nv
            nv += m
        V.append(np.array([[tn, 0.0, hn]]))
        piece.append(np.array([n]))
        j = np.arange(m)
        T.append(np.column_stack([prev + j, prev + (j + 1) % m, np.full(m, nv)]))
        nv += 1
    return SurfaceMesh(s, np.vstack(V), np.vstack(T).astype(np.int64), np.concatenate(piece), radius)
