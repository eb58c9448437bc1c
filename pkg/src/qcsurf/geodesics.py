"""Curve lengths and geodesic distances for conformal weights.

Distances are computed by Dijkstra on a lattice whose edges join each node
to the neighbours given by a k-direction stencil.  Every edge carries the
exact or adaptively integrated weighted length of the straight segment, so
the graph distance is an upper bound for ``d`` that decreases under grid
refinement and stencil enlargement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import quad
from scipy.sparse import csgraph

from .quadrature import rect_sq_integrals, segment_integrals
from .spaces import Box, SpaceError, SpaceHandle, WeightField

# lengths are floored so scipy keeps zero-cost edges (omega underflows near 0)
_TINY = 1e-300


class GridError(ValueError):
    pass


def stencil(k: int) -> list[tuple[int, int]]:
    """Half of a symmetric k-direction stencil (one of each +-v pair)."""
    if k not in (4, 8, 16, 32):
        raise GridError(f"stencil order must be 4, 8, 16 or 32, got {k}")
    reach = {4: 1, 8: 1, 16: 2, 32: 3}[k]
    out = []
    for a in range(0, reach + 1):
        for b in range(-reach, reach + 1):
            if (a == 0 and b <= 0) or math.gcd(a, abs(b)) != 1:
                continue
            if k == 4 and a and b:
                continue
            out.append((a, b))
    assert len(out) == k // 2
    return out


@dataclass(frozen=True)
class Polyline:
    vertices: np.ndarray
    closed: bool = False

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if len(v) > 1:
            keep = np.r_[True, np.any(np.diff(v, axis=0) != 0, axis=1)]
            v = v[keep]
        object.__setattr__(self, "vertices", v)

    @property
    def degenerate(self) -> bool:
        return len(self.vertices) < 2

    @classmethod
    def segment(cls, a, b, n: int = 1) -> "Polyline":
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        return cls(a + s * (b - a))

    @classmethod
    def circle(cls, center, radius, n: int = 512) -> "Polyline":
        ang = 2 * np.pi * np.arange(n + 1) / n
        c = np.asarray(center, dtype=float)
        v = c + radius * np.column_stack([np.cos(ang), np.sin(ang)])
        v[-1] = v[0]
        return cls(v, closed=True)

    def euclidean_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1).sum())

    def min_distance_to(self, point) -> float:
        """Euclidean distance from ``point`` to the polyline."""
        p = np.asarray(point, dtype=float)
        v = self.vertices
        if len(v) == 1:
            return float(np.linalg.norm(v[0] - p))
        a, d = v[:-1], np.diff(v, axis=0)
        s = np.clip(((p - a) * d).sum(1) / (d * d).sum(1), 0, 1)
        return float(np.min(np.linalg.norm(a + s[:, None] * d - p, axis=1)))

    def refine(self, max_len: float) -> "Polyline":
        v = self.vertices
        if len(v) < 2:
            return self
        out = [v[:1]]
        for a, b in zip(v[:-1], v[1:]):
            n = max(1, int(math.ceil(np.linalg.norm(b - a) / max_len)))
            s = np.arange(1, n + 1)[:, None] / n
            out.append(a + s * (b - a))
        return Polyline(np.vstack(out), self.closed)


@dataclass
class GridGraph:
    """Lattice discretisation of a weighted planar domain.

    Nodes are numbered ``j * nx + i`` for ``x = xs[i]``, ``y = ys[j]``.
    ``adjacency`` holds symmetric edge lengths (weighted length of the
    straight segment); ``node_mass`` is ``int omega**2`` over the node's
    cell, clipped to the box.
    """

    space: SpaceHandle
    box: Box
    h: float
    k: int
    xs: np.ndarray
    ys: np.ndarray
    adjacency: sparse.csr_matrix
    node_mass: np.ndarray

    @property
    def nx(self) -> int:
        return len(self.xs)

    @property
    def ny(self) -> int:
        return len(self.ys)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @cached_property
    def coords(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def snap(self, point) -> tuple[int, float]:
        """Nearest node to ``point`` and the Euclidean snap displacement."""
        p = np.asarray(point, dtype=float)
        if not self.box.contains(p, tol=self.h / 2):
            raise GridError(f"point {tuple(float(v) for v in p)} outside grid box {self.box.as_tuple()}")
        i = int(np.clip(np.rint((p[0] - self.xs[0]) / self.h), 0, self.nx - 1))
        j = int(np.clip(np.rint((p[1] - self.ys[0]) / self.h), 0, self.ny - 1))
        node = j * self.nx + i
        return node, float(np.linalg.norm(self.coords[node] - p))

    def edges(self):
        """Undirected edges as ``(u, v, length)`` with ``u < v``."""
        coo = sparse.triu(self.adjacency, k=1).tocoo()
        return coo.row, coo.col, coo.data

    def with_costs(self, costs_fn) -> "GridGraph":
        """Same lattice, edge costs replaced by ``costs_fn(u, v, length)``."""
        u, v, L = self.edges()
        c = np.maximum(costs_fn(u, v, L), _TINY)
        A = sparse.coo_matrix((np.r_[c, c], (np.r_[u, v], np.r_[v, u])),
                              shape=self.adjacency.shape).tocsr()
        return GridGraph(self.space, self.box, self.h, self.k, self.xs, self.ys, A, self.node_mass)

    def is_connected(self) -> bool:
        n, _ = csgraph.connected_components(self.adjacency, directed=False)
        return n == 1

    def interpolate(self, values: np.ndarray, pts) -> np.ndarray:
        """Bilinear interpolation of a node field at arbitrary points."""
        from scipy.interpolate import RegularGridInterpolator
        f = RegularGridInterpolator((self.ys, self.xs), values.reshape(self.ny, self.nx),
                                    bounds_error=False, fill_value=None)
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        return f(p[:, ::-1])


def _lattice(box: Box, h: float):
    nx = int(round(box.width / h)) + 1
    ny = int(round(box.height / h)) + 1
    if nx < 4 or ny < 4:
        raise GridError(f"spacing {h} too coarse for box {box.as_tuple()} (need >= 4 nodes per side)")
    xs = box.x0 + h * np.arange(nx)
    ys = box.y0 + h * np.arange(ny)
    return xs, ys


def cell_masses(field: WeightField, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """``int omega**2`` over each node's (box-clipped) dual cell."""
    def halves(c):
        lo = np.r_[c[0], 0.5 * (c[1:] + c[:-1])]
        hi = np.r_[0.5 * (c[1:] + c[:-1]), c[-1]]
        return lo, hi
    xl, xh = halves(xs)
    yl, yh = halves(ys)
    X0, Y0 = np.meshgrid(xl, yl)
    X1, Y1 = np.meshgrid(xh, yh)
    return rect_sq_integrals(field, X0, X1, Y0, Y1).ravel()


def build_grid(space: SpaceHandle, box: Optional[Box] = None, h: float = 1 / 128,
               k: int = 16, tol: float = 1e-10) -> GridGraph:
    """Lattice graph over ``box`` with spacing ``h`` and a k-direction stencil."""
    field = space.field
    box = box if box is not None else space.box
    if h <= 0:
        raise GridError("grid spacing must be positive")
    fb = field.bbox
    if not box.inside(fb):
        raise GridError(f"box {box.as_tuple()} leaves the domain of {space.name}")
    xs, ys = _lattice(box, h)
    nx, ny = len(xs), len(ys)
    if not np.all(field.in_domain(np.array([[xs[0], ys[0]], [xs[-1], ys[0]],
                                             [xs[0], ys[-1]], [xs[-1], ys[-1]]]))):
        raise GridError(f"box {box.as_tuple()} leaves the domain of {space.name}")
    rows, cols, vals = [], [], []
    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    for a, b in stencil(k):
        ok = (I + a < nx) & (J + b >= 0) & (J + b < ny)
        i0, j0 = I[ok], J[ok]
        i1, j1 = i0 + a, j0 + b
        pa = np.column_stack([xs[i0], ys[j0]])
        pb = np.column_stack([xs[i1], ys[j1]])
        L = np.maximum(segment_integrals(field, pa, pb, tol), _TINY)
        u = j0 * nx + i0
        v = j1 * nx + i1
        rows += [u, v]
        cols += [v, u]
        vals += [L, L]
    n = nx * ny
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    return GridGraph(space, box, h, k, xs, ys, A, cell_masses(field, xs, ys))


def distance_field(g: GridGraph, src, return_predecessors: bool = False):
    """Graph distance from ``src`` (a point or node index) to every node."""
    node = src if isinstance(src, (int, np.integer)) else g.snap(src)[0]
    out = csgraph.dijkstra(g.adjacency, directed=True, indices=int(node),
                           return_predecessors=return_predecessors)
    return out


def _trace(pred: np.ndarray, node: int) -> list[int]:
    path = [node]
    while pred[path[-1]] >= 0:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def _through_singular(g: GridGraph, dist_src: np.ndarray, s: int, t: int, rtol: float = 1e-12):
    """Route ``s -> t`` via a singular node when that is a tie for the minimum.

    Near a zero of the weight the accumulated path lengths stop resolving in
    floating point, so Dijkstra's predecessor tree picks an arbitrary member
    of a large family of equal-length paths.  When the detour through a
    singular point is minimal to relative precision ``rtol`` we return that
    representative, which is the geodesic the continuum problem selects.
    """
    for sp in g.space.field.singular_points:
        try:
            c, _ = g.snap(sp)
        except GridError:
            continue
        d_c, pred_c = distance_field(g, c, return_predecessors=True)
        via = dist_src[c] + d_c[t]
        if via <= dist_src[t] * (1 + rtol) + 1e-300:
            return c, d_c, pred_c
    return None


def _path_nodes(g, s, t, dist, pred, prefer_singular):
    if prefer_singular and g.space.is_planar and g.space.field.singular_points and s != t:
        hit = _through_singular(g, dist, s, t)
        if hit is not None:
            c, d_c, pred_c = hit
            head = _trace(pred, c)
            tail = _trace(pred_c, t)
            return head + tail[1:], float(dist[c] + d_c[t])
    return _trace(pred, t), float(dist[t])


def shortest_path(g: GridGraph, src, dst, prefer_singular: bool = True) -> tuple[Polyline, float]:
    """Dijkstra geodesic between the nodes nearest ``src`` and ``dst``."""
    s, _ = g.snap(src)
    t, _ = g.snap(dst)
    dist, pred = distance_field(g, s, return_predecessors=True)
    if not np.isfinite(dist[t]):
        raise GridError("endpoints are disconnected on this grid")
    nodes, length = _path_nodes(g, s, t, dist, pred, prefer_singular)
    return Polyline(g.coords[nodes]), length


def geodesic_fan(space: SpaceHandle, p, targets: Sequence, box: Optional[Box] = None,
                 h: float = 1 / 512, k: int = 16, grid: Optional[GridGraph] = None,
                 prefer_singular: bool = True, straighten: bool = False):
    """Geodesic polylines from ``p`` to each target, plus their lengths.

    With ``straighten`` each graph path is passed through :func:`shorten`,
    which removes most of the direction-quantisation error of the stencil,
    and the reported length is the weighted length of the pruned curve.
    """
    g = grid if grid is not None else build_grid(space, box, h, k)
    s, _ = g.snap(p)
    dist, pred = distance_field(g, s, return_predecessors=True)
    hubs = []
    if prefer_singular and space.is_planar:
        for sp in space.field.singular_points:
            try:
                c, _ = g.snap(sp)
            except GridError:
                continue
            hubs.append((c,) + tuple(distance_field(g, c, return_predecessors=True)))
    paths, lengths = [], []
    for q in np.atleast_2d(np.asarray(targets, dtype=float)):
        t, _ = g.snap(q)
        if not np.isfinite(dist[t]):
            raise GridError("endpoints are disconnected on this grid")
        nodes, length = _trace(pred, t), float(dist[t])
        for c, d_c, pred_c in hubs:
            if t != s and dist[c] + d_c[t] <= dist[t] * (1 + 1e-12):
                nodes = _trace(pred, c) + _trace(pred_c, t)[1:]
                length = float(dist[c] + d_c[t])
                break
        path = Polyline(g.coords[nodes])
        if straighten and len(nodes) > 2:
            path, length = shorten(space, path)
        paths.append(path)
        lengths.append(length)
    return paths, lengths


def shorten(space: SpaceHandle, c: Polyline, max_passes: int = 200) -> tuple[Polyline, float]:
    """Prune polyline vertices wherever the straight shortcut is not longer.

    A vertex ``v_i`` is dropped when the weighted length of the segment
    ``v_(i-1) v_(i+1)`` is at most the length of the two edges it replaces.
    Vertices of one parity are tested per pass so decisions never interact.
    The result is a genuine curve, so its length stays an upper bound for
    the distance between its endpoints; corners that pay off, such as the
    detour through a zero of the weight, survive.
    """
    v = c.vertices
    if len(v) < 3 or not space.is_planar:
        return c, curve_length(space, c)
    f = space.field
    seg = segment_integrals(f, v[:-1], v[1:])
    for it in range(max_passes):
        changed = False
        for parity in (1, 2):
            idx = np.arange(parity, len(v) - 1, 2)
            if len(idx) == 0:
                continue
            short = segment_integrals(f, v[idx - 1], v[idx + 1])
            drop = short <= (seg[idx - 1] + seg[idx]) * (1 + 1e-12)
            if not drop.any():
                continue
            changed = True
            gone = idx[drop]
            seg[gone - 1] = short[drop]
            keep = np.ones(len(v), dtype=bool)
            keep[gone] = False
            v = v[keep]
            seg = np.delete(seg, gone)
        if not changed:
            break
    return Polyline(v), float(seg.sum())


def curve_length(space: SpaceHandle, c: Polyline, tol: float = 1e-10) -> float:
    """Weighted length ``sum of int omega ds`` over the segments of ``c``.

    On spike surfaces the ambient metric is chordal, so the length of a
    polyline is the sum of its chords.
    """
    v = c.vertices
    if len(v) < 2:
        return 0.0
    if not space.is_planar:
        return float(np.linalg.norm(np.diff(v, axis=0), axis=1).sum())
    field = space.field
    if not np.all(field.in_domain(v)):
        raise SpaceError("curve leaves the domain")
    L = segment_integrals(field, v[:-1], v[1:], tol)
    if not np.all(np.isfinite(L)):
        raise SpaceError("divergent length integral along the curve")
    return float(L.sum())


def radial_distance(field: WeightField, x) -> float:
    """``d(0, x) = int_0^{|x|} omega`` for a radial weight."""
    if field.symmetry != "radial" or field.radial_profile is None:
        raise SpaceError(f"{field.name} is not radially symmetric")
    s = float(np.hypot(*np.asarray(x, dtype=float)))
    if field.radial_primitive is not None:
        return float(field.radial_primitive(s))
    val, _ = quad(lambda t: float(field.radial_profile(t)), 0.0, s, epsabs=1e-13, limit=200)
    return val


def distance_from_point(g: GridGraph, x, reach: float = 2.0) -> np.ndarray:
    """Graph distance from an arbitrary point (not necessarily a node).

    A virtual source is joined to every node within ``reach * h`` of ``x`` by
    the straight weighted segment, which removes the snap error of
    :func:`distance_field`.  On spike geometries this is not used.
    """
    p = np.asarray(x, dtype=float)
    i = (p[0] - g.xs[0]) / g.h
    j = (p[1] - g.ys[0]) / g.h
    w = int(math.ceil(reach))
    ii = np.arange(max(0, int(math.floor(i)) - w), min(g.nx, int(math.ceil(i)) + w + 1))
    jj = np.arange(max(0, int(math.floor(j)) - w), min(g.ny, int(math.ceil(j)) + w + 1))
    I, J = np.meshgrid(ii, jj)
    nodes = (J * g.nx + I).ravel()
    pts = g.coords[nodes]
    near = np.hypot(*(pts - p).T) <= reach * g.h
    nodes, pts = nodes[near], pts[near]
    if len(nodes) == 0:
        raise GridError(f"point {tuple(float(v) for v in p)} is not covered by the grid")
    L = np.maximum(segment_integrals(g.space.field, np.broadcast_to(p, pts.shape), pts), _TINY)
    n = g.n_nodes
    A = g.adjacency.tocoo()
    rows = np.r_[A.row, np.full(len(nodes), n)]
    cols = np.r_[A.col, nodes]
    vals = np.r_[A.data, L]
    M = sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
    d = csgraph.dijkstra(M, directed=True, indices=n)
    return d[:n]
