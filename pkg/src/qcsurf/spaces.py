"""Metric-measure spaces built from conformal weights and spike surfaces.

A planar space is described by a :class:`WeightField` ``omega``; lengths are
``int omega ds`` and areas ``int omega**2 dL2``.  The spike examples are
surfaces in R^3 carrying the chordal (ambient) metric.  :func:`make_example`
is the registry of the worked examples.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

EXAMPLE_NAMES = ("exp-weight", "spikes-cones", "spikes-cylinders", "grushin-glued", "euclidean")


class SpaceError(ValueError):
    """Invalid space parameters or a query outside the numerical domain."""


# --------------------------------------------------------------------------
# planar regions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise SpaceError(f"degenerate box {self.as_tuple()}")

    @classmethod
    def square(cls, center=(0.0, 0.0), half=1.0) -> "Box":
        cx, cy = center
        return cls(cx - half, cx + half, cy - half, cy + half)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        return ((p[..., 0] >= self.x0 - tol) & (p[..., 0] <= self.x1 + tol)
                & (p[..., 1] >= self.y0 - tol) & (p[..., 1] <= self.y1 + tol))

    def inside(self, other: "Box") -> bool:
        return (self.x0 >= other.x0 - 1e-12 and self.x1 <= other.x1 + 1e-12
                and self.y0 >= other.y0 - 1e-12 and self.y1 <= other.y1 + 1e-12)

    def intersect(self, other: "Box") -> "Box":
        return Box(max(self.x0, other.x0), min(self.x1, other.x1),
                   max(self.y0, other.y0), min(self.y1, other.y1))

    def as_tuple(self):
        return (self.x0, self.x1, self.y0, self.y1)


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    radius: float

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        return np.hypot(p[..., 0] - self.cx, p[..., 1] - self.cy) <= self.radius + tol

    @property
    def bbox(self) -> Box:
        return Box(self.cx - self.radius, self.cx + self.radius,
                   self.cy - self.radius, self.cy + self.radius)

    def as_tuple(self):
        return (self.cx, self.cy, self.radius)


Region = Union[Box, Disk]


# --------------------------------------------------------------------------
# conformal weights
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightField:
    """Conformal weight ``omega`` on a planar domain.

    Optional closed forms let the numerics avoid sampling near singularities:

    ``radial_profile`` / ``radial_primitive``
        ``omega`` as a function of ``|x|`` and ``W(s) = int_0^s omega``.
    ``x1_profile`` / ``x1_primitive`` / ``x1_sq_primitive``
        for weights constant on vertical lines: ``omega(x) = f(x1)``, its
        antiderivative ``F`` and the antiderivative of ``f**2``.
    """

    name: str
    omega: Callable[[np.ndarray], np.ndarray]
    domain: Region
    singular_points: tuple = ()
    singular_x1: Optional[float] = None
    symmetry: str = "none"
    constant: Optional[float] = None
    radial_profile: Optional[Callable] = None
    radial_primitive: Optional[Callable] = None
    radial_primitive_inv: Optional[Callable] = None
    x1_profile: Optional[Callable] = None
    x1_primitive: Optional[Callable] = None
    x1_primitive_inv: Optional[Callable] = None
    x1_sq_primitive: Optional[Callable] = None

    def __post_init__(self):
        if self.symmetry not in ("radial", "vertical-lines", "none"):
            raise SpaceError(f"unknown symmetry tag {self.symmetry!r}")

    def __call__(self, pts) -> np.ndarray:
        return self.omega(np.asarray(pts, dtype=float))

    def in_domain(self, pts) -> np.ndarray:
        return self.domain.contains(pts)

    @property
    def bbox(self) -> Box:
        return self.domain.bbox if isinstance(self.domain, Disk) else self.domain

    def is_singular(self, pts, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        out = np.zeros(p.shape[:-1], dtype=bool)
        for s in self.singular_points:
            out |= np.hypot(p[..., 0] - s[0], p[..., 1] - s[1]) <= tol
        if self.singular_x1 is not None:
            out |= np.abs(p[..., 0] - self.singular_x1) <= tol
        return out


def weight_at(field: WeightField, x) -> float:
    """Value of the conformal weight at a single point.

    The formula is evaluated anywhere in the plane; the numerical domain only
    limits grids and integrals.  The exp-weight returns 0 at the origin.  The
    glued Grushin weight blows up as ``x1 -> 0+`` but equals 1 at ``x1 == 0``.
    """
    p = np.asarray(x, dtype=float)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise SpaceError("weight_at expects a single finite planar point")
    return float(field(p))


def _exp_omega(p):
    r = np.hypot(p[..., 0], p[..., 1])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = np.exp(-1.0 / r) / (r * r)
    return np.where(r > 0, w, 0.0)


def _exp_profile(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = np.exp(-1.0 / t) / (t * t)
    return np.where(t > 0, w, 0.0)


def _exp_primitive(t):
    # int_0^t e^{-1/s}/s^2 ds = e^{-1/t}
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(t > 0, np.exp(-1.0 / t), 0.0)


def _exp_primitive_inv(w):
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(w > 0, -1.0 / np.log(np.minimum(w, 1.0 - 1e-16)), 0.0)


def exp_weight_field(radius: float = 2.0) -> WeightField:
    return WeightField(
        name="exp-weight",
        omega=_exp_omega,
        domain=Disk(0.0, 0.0, radius),
        singular_points=((0.0, 0.0),),
        symmetry="radial",
        radial_profile=_exp_profile,
        radial_primitive=_exp_primitive,
        radial_primitive_inv=_exp_primitive_inv,
    )


def grushin_weight_field(beta: float, half: float = 2.0) -> WeightField:
    if not (0.0 < beta < 0.5):
        raise SpaceError(f"grushin-glued requires beta in (0, 1/2), got {beta}")
    b = float(beta)

    def omega(p):
        x1 = p[..., 0]
        with np.errstate(divide="ignore"):
            return np.where(x1 > 0, np.abs(x1) ** (-b), 1.0)

    def profile(x1):
        x1 = np.asarray(x1, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x1 > 0, np.abs(x1) ** (-b), 1.0)

    def primitive(x1):
        x1 = np.asarray(x1, dtype=float)
        return np.where(x1 > 0, np.maximum(x1, 0.0) ** (1 - b) / (1 - b), x1)

    def primitive_inv(g):
        g = np.asarray(g, dtype=float)
        return np.where(g > 0, (np.maximum(g, 0.0) * (1 - b)) ** (1 / (1 - b)), g)

    def sq_primitive(x1):
        x1 = np.asarray(x1, dtype=float)
        return np.where(x1 > 0, np.maximum(x1, 0.0) ** (1 - 2 * b) / (1 - 2 * b), x1)

    return WeightField(
        name="grushin-glued",
        omega=omega,
        domain=Box(-half, half, -half, half),
        singular_x1=0.0,
        symmetry="vertical-lines",
        x1_profile=profile,
        x1_primitive=primitive,
        x1_primitive_inv=primitive_inv,
        x1_sq_primitive=sq_primitive,
    )


def euclidean_field(half: float = 10.0) -> WeightField:
    return WeightField(
        name="euclidean",
        omega=lambda p: np.ones(np.asarray(p).shape[:-1]),
        domain=Box(-half, half, -half, half),
        symmetry="radial",
        constant=1.0,
        radial_profile=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        radial_primitive=lambda t: np.asarray(t, dtype=float),
        radial_primitive_inv=lambda w: np.asarray(w, dtype=float),
        x1_profile=lambda x1: np.ones_like(np.asarray(x1, dtype=float)),
        x1_primitive=lambda x1: np.asarray(x1, dtype=float),
        x1_primitive_inv=lambda g: np.asarray(g, dtype=float),
        x1_sq_primitive=lambda x1: np.asarray(x1, dtype=float),
    )


# --------------------------------------------------------------------------
# spike surfaces
# --------------------------------------------------------------------------

def _seg_dist_2d(px, pz, ax, az, bx, bz):
    """Distance from (px, pz) to the segment [a, b] in a meridian half-plane."""
    dx, dz = bx - ax, bz - az
    L2 = dx * dx + dz * dz
    s = np.clip(((px - ax) * dx + (pz - az) * dz) / L2, 0.0, 1.0)
    return np.hypot(px - ax - s * dx, pz - az - s * dz)


@dataclass(frozen=True)
class SpikeSurface:
    """Plane with cones or cylinders grafted over disks centred at ``(t_n, 0)``.

    Spikes ``n = 1..N`` are realised; beyond ``N`` the surface is flat.
    """

    kind: str
    N: int = 12

    def __post_init__(self):
        if self.kind not in ("cones", "cylinders"):
            raise SpaceError(f"unknown spike kind {self.kind!r}")
        if int(self.N) < 1:
            raise SpaceError(f"truncation N must be >= 1, got {self.N}")

    # dyadic parameter tables
    def t(self, n):
        return 2.0 ** (-np.asarray(n, dtype=float))

    def h(self, n):
        n = np.asarray(n, dtype=float)
        return 2.0 ** (-n / 2) if self.kind == "cones" else 2.0 ** (-n)

    def r(self, n):
        n = np.asarray(n, dtype=float)
        return 2.0 ** -2 * (2.0 ** (-1.5 * n) if self.kind == "cones" else 2.0 ** (-2 * n))

    @property
    def indices(self) -> np.ndarray:
        return np.arange(1, int(self.N) + 1)

    def apex(self, n: int) -> np.ndarray:
        return np.array([float(self.t(n)), 0.0, float(self.h(n))])

    def disks_disjoint(self) -> bool:
        n = np.arange(1, int(self.N) + 1)
        return bool(np.all(self.t(n) - self.t(n + 1) > self.r(n) + self.r(n + 1)))

    def piece_area(self, n: int) -> float:
        """Area of the grafted piece ``n`` (lateral cone, or tube plus cap)."""
        r, h = float(self.r(n)), float(self.h(n))
        if self.kind == "cones":
            return math.pi * r * math.hypot(h, r)
        return 2 * math.pi * r * h + math.pi * r * r

    def tail_area_bound(self) -> float:
        """Area excess sum_{n>N} (piece area - removed disk area), geometric tail."""
        n = np.arange(int(self.N) + 1, int(self.N) + 200)
        extra = np.array([self.piece_area(k) - math.pi * float(self.r(k)) ** 2 for k in n])
        return float(extra.sum())

    def distance_to_surface(self, pts) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        plane = np.abs(z)
        best = np.full(len(p), np.inf)
        in_hole = np.zeros(len(p), dtype=bool)
        for n in self.indices:
            tn, hn, rn = float(self.t(n)), float(self.h(n)), float(self.r(n))
            rho = np.hypot(x - tn, y)
            inside = rho < rn
            in_hole |= inside
            # rim of the removed disk, as seen from the plane piece
            rim = np.hypot(rho - rn, z)
            if self.kind == "cones":
                piece = _seg_dist_2d(rho, z, rn, 0.0, 0.0, hn)
            else:
                piece = np.minimum(_seg_dist_2d(rho, z, rn, 0.0, rn, hn),
                                   _seg_dist_2d(rho, z, rn, hn, 0.0, hn))
            best = np.minimum(best, np.minimum(piece, np.where(inside, rim, np.inf)))
        best = np.minimum(best, np.where(in_hole, np.inf, plane))
        return best

    def on_surface(self, pts, tol: float = 1e-9) -> np.ndarray:
        return self.distance_to_surface(pts) <= tol


def ambient_distance(s: SpikeSurface, p, q, tol: float = 1e-9) -> float:
    """Chordal distance ``|p - q|`` in R^3 between two points of the surface."""
    pq = np.array([p, q], dtype=float)
    if pq.shape != (2, 3):
        raise SpaceError("ambient_distance expects two points of R^3")
    off = s.distance_to_surface(pq)
    if np.any(off > tol):
        raise SpaceError(f"point off the surface by {off.max():.3g}")
    return float(np.linalg.norm(pq[0] - pq[1]))


# --------------------------------------------------------------------------
# handles and registry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExampleId:
    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "ExampleId":
        """Parse ``name`` or ``name:key=value,key=value``."""
        name, _, rest = text.partition(":")
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, val = item.partition("=")
            if not eq:
                raise SpaceError(f"bad parameter {item!r}, expected key=value")
            params[key.strip()] = float(val) if key.strip() != "N" else int(float(val))
        return cls(name.strip(), params)


@dataclass(frozen=True)
class SpaceHandle:
    """A metric-measure space with its admissible-cover radius rule."""

    name: str
    params: dict
    geometry: Union[WeightField, SpikeSurface]
    measure: str
    box: Optional[Box]
    cover_rule: Callable
    cover_note: str = ""
    C_i: Optional[float] = None
    Lambda: Optional[float] = None

    @property
    def is_planar(self) -> bool:
        return isinstance(self.geometry, WeightField)

    @property
    def field(self) -> WeightField:
        if not self.is_planar:
            raise SpaceError(f"{self.name} is not a planar weight field")
        return self.geometry

    @property
    def surface(self) -> SpikeSurface:
        if self.is_planar:
            raise SpaceError(f"{self.name} is not a spike surface")
        return self.geometry

    def cover_radius(self, x) -> float:
        return float(self.cover_rule(np.asarray(x, dtype=float)))

    def distance_exact(self, x, y) -> Optional[float]:
        """Closed-form distance when one is known, else ``None``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not self.is_planar:
            return float(np.linalg.norm(x - y))
        f = self.field
        if f.constant is not None:
            return float(f.constant * np.linalg.norm(x - y))
        if f.radial_primitive is not None:
            # geodesics from the origin are radial wherever omega increases along rays
            if not np.any(x):
                return float(f.radial_primitive(np.linalg.norm(y)))
            if not np.any(y):
                return float(f.radial_primitive(np.linalg.norm(x)))
        if f.x1_primitive is not None and x[1] == y[1]:
            # omega depends on x1 only, so any path costs at least |F(y1) - F(x1)|
            return float(abs(f.x1_primitive(y[0]) - f.x1_primitive(x[0])))
        return None

    def euclidean_bounds(self, x, r: float) -> Box:
        """A Euclidean box containing ``B_d(x, r)``."""
        x = np.asarray(x, dtype=float)
        if not self.is_planar:
            return Box(x[0] - r, x[0] + r, x[1] - r, x[1] + r)
        f = self.field
        if f.constant is not None:
            a = r / f.constant
            return Box(x[0] - a, x[0] + a, x[1] - a, x[1] + a)
        if f.radial_primitive is not None:
            s = float(np.hypot(*x))
            w = float(f.radial_primitive(s))
            if w + r >= 1.0 - 1e-12:
                raise SpaceError(f"radius {r} exceeds the reach of the chart at {tuple(float(v) for v in x)}")
            s_out = float(f.radial_primitive_inv(w + r))
            s_in = float(f.radial_primitive_inv(w - r)) if w > r else 0.0
            if s_in > 0:
                # omega attains its minimum over the annulus at an endpoint
                wmin = float(min(f.radial_profile(s_in), f.radial_profile(s_out)))
                if s_out > 0.5 and s_in < 0.5:
                    wmin = min(wmin, float(f.radial_profile(0.5)))
                a = min(r / wmin, s + s_out) if wmin > 0 else s + s_out
            else:
                a = s + s_out
            return Box(x[0] - a, x[0] + a, x[1] - a, x[1] + a)
        if f.x1_primitive is not None:
            g = float(f.x1_primitive(x[0]))
            lo = float(f.x1_primitive_inv(g - r))
            hi = float(f.x1_primitive_inv(g + r))
            wmin = float(np.min(f.x1_profile(np.array([lo, hi, min(max(lo, 0.0), hi)]))))
            wmin = min(wmin, 1.0)
            a = r / wmin
            return Box(lo, hi, x[1] - a, x[1] + a)
        raise SpaceError(f"no Euclidean bound available for {self.name}")

    def descriptor(self) -> dict:
        d = {"name": self.name, "params": dict(sorted(self.params.items())),
             "measure": self.measure, "cover_rule": self.cover_note}
        if self.box is not None:
            d["domain_box"] = list(self.box.as_tuple())
        if not self.is_planar:
            d["truncation"] = int(self.surface.N)
            d["tail_area_bound"] = self.surface.tail_area_bound()
        if self.C_i is not None:
            d["C_i"] = self.C_i
        if self.Lambda is not None:
            d["Lambda"] = self.Lambda
        return d

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)


def _exp_cover(x):
    s = float(np.hypot(x[0], x[1]))
    return 0.1 if s == 0.0 else min(s / 2, 0.1)


def _spike_cover(x):
    s = float(np.linalg.norm(x))
    return 0.5 if s == 0.0 else min(0.5, s / 20)


def make_example(id: Union[ExampleId, str], **params) -> SpaceHandle:
    """Build one of the registered example spaces.

    >>> make_example("grushin-glued", beta=0.25).field.name
    'grushin-glued'
    """
    if isinstance(id, str):
        id = ExampleId.parse(id)
    p = {**id.params, **params}
    name = id.name
    if name == "euclidean":
        f = euclidean_field()
        return SpaceHandle(name, p, f, "lebesgue", f.bbox, lambda x: 1.0, "r_x = 1")
    if name == "exp-weight":
        f = exp_weight_field()
        return SpaceHandle(name, p, f, "hausdorff2", Box(-1.4, 1.4, -1.4, 1.4), _exp_cover,
                           "r_x = min(|x|/2, 0.1), r_0 = 0.1")
    if name == "grushin-glued":
        beta = float(p.setdefault("beta", 0.25))
        f = grushin_weight_field(beta)
        return SpaceHandle(name, p, f, "hausdorff2", f.bbox, lambda x: 0.25, "r_x = 1/4")
    if name in ("spikes-cones", "spikes-cylinders"):
        N = p.setdefault("N", 12)
        if int(N) != N or int(N) < 1:
            raise SpaceError(f"truncation N must be a positive integer, got {N}")
        s = SpikeSurface("cones" if name.endswith("cones") else "cylinders", int(N))
        return SpaceHandle(name, p, s, "hausdorff2", None, _spike_cover,
                           "r_0 = 1/2, r_x = min(1/2, |x|/20)")
    raise SpaceError(f"unknown example {name!r}; known: {', '.join(EXAMPLE_NAMES)}")


def points_on_circle(center: Sequence[float], radius: float, n: int, phase: float = 0.0):
    ang = phase + 2 * np.pi * np.arange(n) / n
    c = np.asarray(center, dtype=float)
    return c + radius * np.column_stack([np.cos(ang), np.sin(ang)])
