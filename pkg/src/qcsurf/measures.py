"""Weighted areas, ball measures, the mu-length content and the q-metric.

Conventions
-----------
* ``mu`` is ``int omega**2 dL2`` on weighted planes (Lebesgue when the
  weight is identically one) and surface area on the spike surfaces.
* The Caratheodory gauge of a ball is ``2 / sqrt(pi) * mu(B)**0.5``, so a
  Euclidean disk of radius ``r`` costs its diameter.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from . import spikes
from .geodesics import (GridError, GridGraph, Polyline, build_grid, distance_field,
                        distance_from_point)
from .quadrature import rect_sq_integrals, segment_integrals
from .spaces import Box, Disk, Region, SpaceError, SpaceHandle, WeightField

GAUGE = 2.0 / math.sqrt(math.pi)


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

@dataclass
class BallMeasureTable:
    center: tuple
    radii: list
    values: list
    method: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0):
            raise ValueError("ball measures must be nonnegative")

    def ratios(self, power: float = 2.0) -> np.ndarray:
        return np.asarray(self.values) / np.asarray(self.radii) ** power

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["radius", "value", "method"])
        for r, v in zip(self.radii, self.values):
            w.writerow([repr(float(r)), repr(float(v)), self.method])
        return buf.getvalue()


@dataclass
class MuLengthEstimate:
    curve: Polyline
    deltas: list
    contents: list
    value: float
    balls: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "content", "balls"])
        for d, c, n in zip(self.deltas, self.contents, self.balls or [""] * len(self.deltas)):
            w.writerow([repr(float(d)), repr(float(c)), n])
        return buf.getvalue()


@dataclass
class QMetricField:
    grid: GridGraph
    source: tuple
    values: np.ndarray

    def at(self, y) -> float:
        return float(self.values[self.grid.snap(y)[0]])


# --------------------------------------------------------------------------
# weighted area
# --------------------------------------------------------------------------

def _check_region(field: WeightField, region: Region):
    if isinstance(region, Box):
        corners = np.array([[region.x0, region.y0], [region.x1, region.y0],
                            [region.x0, region.y1], [region.x1, region.y1]])
        ok = field.in_domain(corners).all()
    else:
        ok = region.bbox.inside(field.bbox) and bool(
            field.in_domain(np.array([[region.cx, region.cy]]))[0])
        if isinstance(field.domain, Disk):
            ok = ok and (math.hypot(region.cx - field.domain.cx, region.cy - field.domain.cy)
                         + region.radius <= field.domain.radius + 1e-12)
    if not ok:
        raise SpaceError(f"region {region.as_tuple()} is not inside the domain of {field.name}")


def weighted_area(field: WeightField, region: Region, epsrel: float = 1e-10) -> float:
    """``int_region omega**2 dL2`` for a rectangle or a disk."""
    _check_region(field, region)
    if field.constant is not None:
        a = region.area if isinstance(region, Box) else math.pi * region.radius ** 2
        return field.constant ** 2 * a
    if isinstance(region, Box) and field.x1_sq_primitive is not None:
        return float(rect_sq_integrals(field, region.x0, region.x1, region.y0, region.y1))
    if isinstance(region, Disk) and field.radial_profile is not None and region.cx == 0 == region.cy:
        f = field.radial_profile
        val, _ = integrate.quad(lambda t: 2 * math.pi * t * float(f(t)) ** 2, 0.0, region.radius,
                                epsabs=0.0, epsrel=epsrel, limit=400)
        return val

    def w2(x, y):
        return float(field(np.array([x, y]))) ** 2

    opts = dict(epsabs=1e-13, epsrel=1e-9)
    if isinstance(region, Box):
        xcuts = [region.x0, region.x1]
        ycuts = [region.y0, region.y1]
        for sp in field.singular_points:
            if region.x0 < sp[0] < region.x1:
                xcuts.append(sp[0])
            if region.y0 < sp[1] < region.y1:
                ycuts.append(sp[1])
        if field.singular_x1 is not None and region.x0 < field.singular_x1 < region.x1:
            xcuts.append(field.singular_x1)
        xcuts, ycuts = sorted(xcuts), sorted(ycuts)
        total = 0.0
        for a, b in zip(xcuts[:-1], xcuts[1:]):
            for c, d in zip(ycuts[:-1], ycuts[1:]):
                val, _ = integrate.dblquad(lambda y, x: w2(x, y), a, b, c, d, **opts)
                total += val
        return total
    cx, cy, R = region.cx, region.cy, region.radius
    val, _ = integrate.dblquad(
        lambda rho, th: rho * w2(cx + rho * math.cos(th), cy + rho * math.sin(th)),
        0.0, 2 * math.pi, 0.0, R, **opts)
    return val


def d_ball_disk(space: SpaceHandle, x, r: float) -> Optional[Disk]:
    """The Euclidean disk equal to ``B_d(x, r)`` when that is known exactly."""
    x = np.asarray(x, dtype=float)
    if not space.is_planar:
        return None
    f = space.field
    if f.constant is not None:
        return Disk(float(x[0]), float(x[1]), r / f.constant)
    if f.radial_primitive_inv is not None and not np.any(x):
        # omega increases along rays inside the chart used here, so d-balls
        # about the centre of symmetry are Euclidean disks
        if f.name == "exp-weight" and r >= 1.0:
            raise SpaceError("radius exceeds the reach of the chart")
        return Disk(0.0, 0.0, float(f.radial_primitive_inv(r)))
    return None


# --------------------------------------------------------------------------
# ball measures
# --------------------------------------------------------------------------

def exp_origin_ball(r: float) -> float:
    """Closed form ``mu(B_d(0, r)) = 2 pi r**2 (1/4 - log(r)/2)`` for the exp-weight."""
    if not 0 < r < 1:
        raise SpaceError("radius must lie in (0, 1)")
    return 2 * math.pi * r * r * (0.25 - math.log(r) / 2)


def _sublevel_mass(g: GridGraph, d: np.ndarray, r: float) -> float:
    """Weighted mass of ``{d < r}`` with a linear sub-cell correction."""
    D = d.reshape(g.ny, g.nx)
    finite = np.isfinite(D)
    Dz = np.where(finite, D, D[finite].max() if finite.any() else 0.0)
    gy, gx = np.gradient(Dz, g.h)
    width = g.h * (np.abs(gx) + np.abs(gy))
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(width > 0, 0.5 + (r - Dz) / width, (Dz < r).astype(float))
    frac = np.clip(frac, 0.0, 1.0)
    frac[~finite] = 0.0
    return float((frac.ravel() * g.node_mass).sum())


def _ball_grid(space: SpaceHandle, x, r: float, n: int, k: int) -> GridGraph:
    bounds = space.euclidean_bounds(x, r)
    span = max(bounds.width, bounds.height)
    h = span / n
    pad = 3 * h
    box = Box(bounds.x0 - pad, bounds.x1 + pad, bounds.y0 - pad, bounds.y1 + pad)
    if not box.inside(space.field.bbox):
        raise SpaceError(f"ball B_d({tuple(float(v) for v in np.round(x, 6))}, {r}) exceeds the numerical domain")
    if isinstance(space.field.domain, Disk):
        D = space.field.domain
        far = max(math.hypot(cx - D.cx, cy - D.cy) for cx in (box.x0, box.x1) for cy in (box.y0, box.y1))
        if far > D.radius:
            raise SpaceError(f"ball B_d({tuple(float(v) for v in np.round(x, 6))}, {r}) exceeds the numerical domain")
    return build_grid(space, box, h, k)


def ball_measure_method(space: SpaceHandle, x) -> str:
    x = np.asarray(x, dtype=float)
    if not space.is_planar:
        return "surface-triangulation"
    if space.field.constant is not None or (space.name == "exp-weight" and not np.any(x)):
        return "closed-form"
    return "sublevel-integration"


def ball_measure(space: SpaceHandle, x, r: float, n: int = 256, k: int = 16) -> float:
    """``mu(B_d(x, r))`` for the space's measure.

    ``n`` is the number of grid cells across the ball's Euclidean bounding box
    when the sublevel-set method is used.
    """
    if r <= 0:
        raise SpaceError("radius must be positive")
    x = np.asarray(x, dtype=float)
    if not space.is_planar:
        return spikes.ball_area(space.surface, x, r)
    f = space.field
    if f.constant is not None:
        if space.box is not None and not space.box.contains(x):
            raise SpaceError("centre outside the domain")
        return math.pi * r * r
    if space.name == "exp-weight" and not np.any(x):
        return exp_origin_ball(r)
    g = _ball_grid(space, x, r, n, k)
    d = distance_from_point(g, x)
    return _sublevel_mass(g, d, r)


def ball_measure_table(space: SpaceHandle, x, radii: Sequence[float], **kw) -> BallMeasureTable:
    vals = [ball_measure(space, x, float(r), **kw) for r in radii]
    return BallMeasureTable(tuple(np.asarray(x, dtype=float).tolist()), [float(r) for r in radii],
                            vals, ball_measure_method(space, x))


_PR, _PW = np.polynomial.legendre.leggauss(4)
_PR = 0.5 * (_PR + 1)
_PW = 0.5 * _PW
_NTH = 8


def local_ball_measure(field: WeightField, m, rho) -> np.ndarray:
    """Small-ball value of ``mu(B_d(m, rho))`` for arrays of centres.

    The d-ball is replaced by the Euclidean disk of radius ``rho / omega(m)``
    and ``omega**2`` is integrated over it with a polar Gauss rule.  Where the
    weight vanishes at ``m`` the limiting value ``pi rho**2`` is returned.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (len(m),))
    if field.constant is not None:
        return math.pi * rho ** 2
    w0 = field(m)
    out = math.pi * rho ** 2
    ok = w0 > 1e-150
    if not ok.any():
        return out
    R = rho[ok] / w0[ok]
    th = 2 * np.pi * (np.arange(_NTH) + 0.5) / _NTH
    s = R[:, None] * _PR[None, :]
    px = m[ok, 0, None, None] + s[:, :, None] * np.cos(th)[None, None, :]
    py = m[ok, 1, None, None] + s[:, :, None] * np.sin(th)[None, None, :]
    pts = np.stack([px, py], axis=-1)
    inside = field.in_domain(pts)
    w2 = np.where(inside, field(np.where(inside[..., None], pts, m[ok, None, None, :])) ** 2, 0.0)
    val = (w2.mean(axis=2) * s) @ _PW * R * 2 * np.pi
    good = np.isfinite(val) & (val > 0)
    res = out[ok]
    res[good] = val[good]
    out = out.copy()
    out[ok] = res
    return out


# --------------------------------------------------------------------------
# q-metric
# --------------------------------------------------------------------------

def q_edge_costs(g: GridGraph) -> GridGraph:
    """Grid whose edge costs are ``2 pi**-0.5 mu(B_d(m, s/2))**0.5``.

    ``m`` is the Euclidean midpoint and ``s`` the weighted length of the edge.
    For Lebesgue measure this is exactly ``s``.
    """
    field = g.space.field
    if field.constant is not None:
        return g
    coords = g.coords

    def cost(u, v, L):
        mid = 0.5 * (coords[u] + coords[v])
        return GAUGE * np.sqrt(local_ball_measure(field, mid, L / 2))

    return g.with_costs(cost)


def q_grid(space: SpaceHandle, box: Optional[Box] = None, h: float = 1 / 128, k: int = 16) -> GridGraph:
    return q_edge_costs(build_grid(space, box, h, k))


def _q_box(space: SpaceHandle, x, y, margin: float = 0.5) -> Box:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    span = max(float(np.max(hi - lo)), 1e-3)
    pad = margin * span + 1e-2
    box = Box(lo[0] - pad, hi[0] + pad, lo[1] - pad, hi[1] + pad)
    fb = space.field.bbox
    box = box.intersect(fb)
    if isinstance(space.field.domain, Disk):
        R = space.field.domain.radius / math.sqrt(2)
        box = box.intersect(Box(-R, R, -R, R))
    return box


def _check_cover(g: GridGraph, nodes: list):
    """Edge d-lengths along a path must stay below the local cover radius."""
    A = g.adjacency
    for a, b in zip(nodes[:-1], nodes[1:]):
        s = A[a, b]
        mid = 0.5 * (g.coords[a] + g.coords[b])
        if s > g.space.cover_radius(mid) + 1e-15:
            raise GridError(f"grid too coarse: edge d-length {s:.3g} exceeds the cover radius at {mid}")


def q_distance(space: SpaceHandle, x, y, h: Optional[float] = None, k: int = 32,
               box: Optional[Box] = None, grid: Optional[GridGraph] = None) -> float:
    """Grid estimate of ``q(x, y)``.

    On the spike surfaces the q-metric is not computed; the ambient distance
    is returned instead (the two are comparable there).
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if not space.is_planar:
        return float(np.linalg.norm(x - y))
    if np.array_equal(x, y):
        return 0.0
    if grid is None:
        box = box if box is not None else _q_box(space, x, y)
        if h is None:
            h = max(box.width, box.height) / 256
        grid = q_grid(space, box, h, k)
    d = _q_from_point(grid, x)
    t, snap = grid.snap(y)
    val = float(d[t])
    if not np.isfinite(val):
        raise GridError("q solver failed: endpoints disconnected")
    return val


def _q_from_point(g: GridGraph, x) -> np.ndarray:
    # distance_from_point joins x with weighted d-lengths; in the small-ball
    # limit the q-cost of a short segment equals its d-length
    return distance_from_point(g, x)


def q_distance_field(space: SpaceHandle, x, box: Optional[Box] = None, h: float = 1 / 128,
                     k: int = 16) -> QMetricField:
    g = q_grid(space, box, h, k)
    node, _ = g.snap(x)
    return QMetricField(g, tuple(np.asarray(x, dtype=float)), distance_field(g, node))


def hausdorff1_q(space: SpaceHandle, c: Polyline, h: Optional[float] = None, k: int = 16,
                 max_piece: Optional[float] = None) -> float:
    """q-length of a polyline: sum of q-distances between consecutive points.

    The polyline is first refined so that pieces are short compared with the
    grid, then each piece contributes the q-cost of its segment (exact in the
    small-ball limit) bounded above by the grid q-distance.
    """
    v = c.vertices
    if len(v) < 2:
        return 0.0
    if not space.is_planar:
        return float(np.linalg.norm(np.diff(v, axis=0), axis=1).sum())
    f = space.field
    piece = max_piece if max_piece is not None else c.euclidean_length() / 512
    fine = c.refine(piece).vertices
    a, b = fine[:-1], fine[1:]
    s = segment_integrals(f, a, b)
    return float((GAUGE * np.sqrt(local_ball_measure(f, 0.5 * (a + b), s / 2))).sum())


# --------------------------------------------------------------------------
# mu-length content
# --------------------------------------------------------------------------

def _arclength_points(space: SpaceHandle, c: Polyline, targets: np.ndarray) -> np.ndarray:
    """Points of ``c`` at prescribed d-arclength positions."""
    v = c.vertices
    if space.is_planar:
        fine = c.refine(max(c.euclidean_length() / 4096, 1e-12)).vertices
        seg = segment_integrals(space.field, fine[:-1], fine[1:])
    else:
        fine = v
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    cum = np.r_[0.0, np.cumsum(seg)]
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(seg[idx] > 0, (targets - cum[idx]) / seg[idx], 0.0)
    frac = np.clip(frac, 0, 1)
    return fine[idx] + frac[:, None] * (fine[idx + 1] - fine[idx])


def curve_d_length(space: SpaceHandle, c: Polyline) -> float:
    from .geodesics import curve_length
    return curve_length(space, c)


def mu_length(space: SpaceHandle, c: Polyline, deltas: Sequence[float], eps: float = 1e-3,
              measure: Optional[Callable] = None) -> MuLengthEstimate:
    """Greedy Caratheodory content ``l_{mu, delta}`` and its extrapolation.

    For each ``delta`` the curve (parametrised by d-arclength ``L``) is covered
    by ``n = ceil(L / (2 delta (1 - eps)))`` balls of common radius
    ``rho = L / (2 n (1 - eps)) <= delta`` centred on the curve, so consecutive
    balls overlap by the fraction ``eps``.  ``measure(x, r)`` defaults to
    :func:`ball_measure`.
    """
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise SpaceError("cover radii must be positive")
    if c.degenerate:
        return MuLengthEstimate(c, deltas, [0.0] * len(deltas), 0.0, [0] * len(deltas))
    mfun = measure or (lambda x, r: ball_measure(space, x, r))
    L = curve_d_length(space, c)
    if L == 0:
        return MuLengthEstimate(c, deltas, [0.0] * len(deltas), 0.0, [0] * len(deltas))
    cover_min = min(space.cover_radius(p) for p in c.refine(c.euclidean_length() / 64).vertices)
    contents, counts = [], []
    for d in deltas:
        if d >= cover_min:
            raise SpaceError(f"cover radius {d} is not below the admissible radius {cover_min:.4g}")
        n = int(math.ceil(L / (2 * d * (1 - eps))))
        rho = L / (2 * n * (1 - eps))
        step = 2 * rho * (1 - eps)
        centres = _arclength_points(space, c, np.minimum((np.arange(n) + 0.5) * step, L))
        total = sum(GAUGE * math.sqrt(max(mfun(p, rho), 0.0)) for p in centres)
        contents.append(total)
        counts.append(n)
    order = np.argsort(deltas)
    if len(deltas) >= 2:
        d1, d2 = deltas[order[0]], deltas[order[1]]
        c1, c2 = contents[order[0]], contents[order[1]]
        # first-order Richardson in delta on the two smallest radii
        value = c1 + (c1 - c2) * d1 / (d2 - d1) if d2 != d1 else c1
        if not np.isfinite(value) or value <= 0:
            value = c1
    else:
        value = contents[0]
    return MuLengthEstimate(c, deltas, contents, float(value), counts)


# --------------------------------------------------------------------------
# q-ball measure and H_q^2 of rectangles
# --------------------------------------------------------------------------

def q_ball_measure(space: SpaceHandle, x, r: float, n: int = 192, k: int = 16) -> float:
    """``mu(B_q(x, r))`` by integrating the measure over ``{q < r}``."""
    x = np.asarray(x, dtype=float)
    if not space.is_planar:
        return spikes.ball_area(space.surface, x, r)
    if space.field.constant is not None:
        return math.pi * r * r
    bounds = space.euclidean_bounds(x, 1.5 * r)
    box = Box(bounds.x0, bounds.x1, bounds.y0, bounds.y1).intersect(space.field.bbox)
    g = q_edge_costs(build_grid(space, box, max(box.width, box.height) / n, k))
    d = distance_from_point(g, x)
    return _sublevel_mass(g, d, r)


def hausdorff2_q(space: SpaceHandle, A: Box, n_cover: int = 24) -> float:
    """Square-cover estimate of ``H_q^2(A)``.

    ``A`` is tiled by ``n_cover**2`` congruent squares and each square is
    charged ``pi D**2 / 4`` with ``D`` its q-diameter (the longer diagonal's
    q-length).  This is an upper bound for the ``delta``-content; for
    Lebesgue measure it equals ``pi / 2`` times the area.
    """
    xs = np.linspace(A.x0, A.x1, n_cover + 1)
    ys = np.linspace(A.y0, A.y1, n_cover + 1)
    X0, Y0 = (a.ravel() for a in np.meshgrid(xs[:-1], ys[:-1]))
    X1, Y1 = (a.ravel() for a in np.meshgrid(xs[1:], ys[1:]))
    f = space.field
    diam = np.zeros(len(X0))
    for a, b in (((X0, Y0), (X1, Y1)), ((X1, Y0), (X0, Y1))):
        pa, pb = np.column_stack(a), np.column_stack(b)
        total = np.zeros(len(pa))
        for j in range(8):
            u, v = pa + (pb - pa) * j / 8, pa + (pb - pa) * (j + 1) / 8
            s = segment_integrals(f, u, v)
            total += GAUGE * np.sqrt(local_ball_measure(f, 0.5 * (u + v), s / 2))
        diam = np.maximum(diam, total)
    return float((math.pi * diam ** 2 / 4).sum())
