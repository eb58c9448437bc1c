"""Vectorised line and area integrals of conformal weights.

Segments are processed in bulk: a Gauss-Legendre pair (one panel vs two
half panels) gives an error estimate, and only the segments that miss the
tolerance are split again.  Closed-form primitives are used whenever the
weight provides them, which is how the Grushin axis and radial rays through
the origin are handled without sampling the singularity.
"""
from __future__ import annotations

import numpy as np

from .spaces import WeightField

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W

_AREA_X, _AREA_W = np.polynomial.legendre.leggauss(5)
_AREA_X = 0.5 * (_AREA_X + 1.0)
_AREA_W = 0.5 * _AREA_W


def _gl_panel(field, a, d, s0, s1):
    # int_{s0}^{s1} omega(a + s d) ds for arrays of panels, |d| factored out by caller
    span = s1 - s0
    s = s0[:, None] + span[:, None] * _GL_X[None, :]
    pts = a[:, None, :] + s[..., None] * d[:, None, :]
    return span * (field(pts) @ _GL_W)


def _adaptive(field, a, d, s0, s1, tol, depth=0):
    whole = _gl_panel(field, a, d, s0, s1)
    mid = 0.5 * (s0 + s1)
    left = _gl_panel(field, a, d, s0, mid)
    right = _gl_panel(field, a, d, mid, s1)
    fine = left + right
    bad = np.abs(fine - whole) > tol
    if depth >= 40 or not bad.any():
        return fine
    out = fine.copy()
    idx = np.flatnonzero(bad)
    out[idx] = (_adaptive(field, a[idx], d[idx], s0[idx], mid[idx], tol / 2, depth + 1)
                + _adaptive(field, a[idx], d[idx], mid[idx], s1[idx], tol / 2, depth + 1))
    return out


def segment_integrals(field: WeightField, a, b, tol: float = 1e-10) -> np.ndarray:
    """``int_[a,b] omega ds`` for arrays of segments ``a[i] -> b[i]``.

    Absolute tolerance ``tol`` per segment for the adaptive branch.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d = b - a
    L = np.hypot(d[:, 0], d[:, 1])
    out = np.zeros(len(a))
    if field.constant is not None:
        return field.constant * L
    todo = L > 0
    if field.x1_primitive is not None:
        dx = d[:, 0]
        vertical = np.abs(dx) <= 1e-13 * np.maximum(L, 1e-300)
        F = field.x1_primitive
        with np.errstate(divide="ignore", invalid="ignore"):
            slanted = L / np.abs(dx) * np.abs(F(b[:, 0]) - F(a[:, 0]))
        out = np.where(vertical, L * field.x1_profile(a[:, 0]), slanted)
        out[~todo] = 0.0
        return out
    if field.radial_primitive is not None:
        W = field.radial_primitive
        ra = np.hypot(a[:, 0], a[:, 1])
        rb = np.hypot(b[:, 0], b[:, 1])
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        radial = todo & (np.abs(cross) <= 1e-12 * np.maximum(ra * rb, 1e-300))
        dot = (a * b).sum(axis=1)
        through = radial & (dot < 0)
        same = radial & ~through
        out[same] = np.abs(W(rb[same]) - W(ra[same]))
        out[through] = W(ra[through]) + W(rb[through])
        todo &= ~radial
    if not todo.any():
        return out
    idx = np.flatnonzero(todo)
    aa, dd = a[idx], d[idx]
    # unit-speed parameter on [0, L]; split at the closest approach to each
    # singular point so the panels never straddle it
    u = dd / L[idx, None]
    cuts = [np.zeros(len(idx)), L[idx]]
    for sp in field.singular_points:
        s = ((np.asarray(sp) - aa) * u).sum(axis=1)
        cuts.append(np.clip(s, 0.0, L[idx]))
    cuts = np.sort(np.column_stack(cuts), axis=1)
    total = np.zeros(len(idx))
    for j in range(cuts.shape[1] - 1):
        s0, s1 = cuts[:, j], cuts[:, j + 1]
        live = s1 > s0
        if live.any():
            total[live] += _adaptive(field, aa[live], u[live], s0[live], s1[live], tol)
    out[idx] = total
    return out


def polyline_length(field: WeightField, vertices, tol: float = 1e-10) -> float:
    v = np.asarray(vertices, dtype=float)
    if len(v) < 2:
        return 0.0
    return float(segment_integrals(field, v[:-1], v[1:], tol).sum())


def rect_sq_integrals(field: WeightField, x0, x1, y0, y1) -> np.ndarray:
    """``int omega**2 dL2`` over arrays of axis-parallel rectangles."""
    x0, x1, y0, y1 = (np.asarray(v, dtype=float) for v in (x0, x1, y0, y1))
    if field.constant is not None:
        return field.constant ** 2 * (x1 - x0) * (y1 - y0)
    if field.x1_sq_primitive is not None:
        P = field.x1_sq_primitive
        return (y1 - y0) * (P(x1) - P(x0))
    xs = x0[..., None] + (x1 - x0)[..., None] * _AREA_X
    ys = y0[..., None] + (y1 - y0)[..., None] * _AREA_X
    pts = np.stack(np.broadcast_arrays(xs[..., :, None], ys[..., None, :]), axis=-1)
    w2 = field(pts) ** 2
    val = np.einsum("...ij,i,j->...", w2, _AREA_W, _AREA_W)
    return val * (x1 - x0) * (y1 - y0)
