"""Command-line front end: ``python -m qcsurf <command> ...``.

Exit codes: 0 when the computed claim holds, 1 when it does not, 2 for
usage errors, 3 when a solver cannot produce a value.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import checkers, measures, modulus
from .checkers import _plain
from .geodesics import GridError, Polyline, build_grid, distance_from_point, geodesic_fan, radial_distance
from .modulus import ModulusError
from .spaces import Box, Disk, SpaceError, SpaceHandle, make_example, points_on_circle

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    space: Optional[str] = None
    h: Optional[float] = None
    k: int = 16
    out: Optional[str] = None
    slack: float = 0.1
    seed: int = 0
    json: bool = False
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise UsageError("--h must be positive")
        if self.k not in (4, 8, 16, 32):
            raise UsageError("--stencil must be one of 4, 8, 16, 32")


# --------------------------------------------------------------------------
# parsing helpers and output
# --------------------------------------------------------------------------

def parse_point(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad point {text!r}, expected comma-separated numbers") from None
    if len(vals) not in (2, 3):
        raise UsageError(f"bad point {text!r}, expected 2 or 3 coordinates")
    return np.asarray(vals)


def parse_floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def parse_space(text: str) -> SpaceHandle:
    try:
        return make_example(text)
    except SpaceError as exc:
        raise UsageError(str(exc)) from None


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2)


def _write(cfg: RunConfig, name: str, text: str) -> Optional[str]:
    if not cfg.out:
        return None
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, name)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _emit(cfg: RunConfig, payload: dict, lines: list, csv: Optional[str] = None, stem: str = None):
    stem = stem or cfg.command.replace(" ", "-")
    _write(cfg, stem + ".json", dumps(payload) + "\n")
    if csv is not None:
        _write(cfg, stem + ".csv", csv)
    if cfg.json:
        print(dumps(payload))
    else:
        for line in lines:
            print(line)


def _rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a - b)


def _planar_box(space: SpaceHandle, pts, pad_frac: float = 0.5) -> Box:
    P = np.atleast_2d(pts)
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = max(pad_frac * float(np.max(hi - lo)), 0.05)
    b = Box(lo[0] - pad, hi[0] + pad, lo[1] - pad, hi[1] + pad)
    return b.intersect(space.field.bbox)


def _grid_distance(space: SpaceHandle, x, y, h: float, k: int) -> float:
    g = build_grid(space, _planar_box(space, [x, y]), h, k)
    d = distance_from_point(g, x)
    return float(g.interpolate(d, [y])[0])


# --------------------------------------------------------------------------
# point computations
# --------------------------------------------------------------------------

def cmd_dist(cfg: RunConfig, x, y) -> int:
    space = parse_space(cfg.space)
    h = cfg.h or 1 / 512
    if space.is_planar:
        x, y = x[:2], y[:2]
        grid = _grid_distance(space, x, y, h, cfg.k)
    else:
        grid = float(np.linalg.norm(np.asarray(x) - np.asarray(y)))
    exact = space.distance_exact(x, y)
    payload = {"space": space.descriptor(), "x": x, "y": y, "h": h, "stencil": cfg.k, "grid": grid,
               "exact": exact, "rel_gap": None if exact is None else _rel(grid, exact)}
    lines = [f"grid distance  {grid:.6g}  (h={h:.6g}, k={cfg.k})"]
    if exact is not None:
        lines.append(f"closed form    {exact:.6g}")
        lines.append(f"relative gap   {payload['rel_gap']:.3%}")
    _emit(cfg, payload, lines)
    return EXIT_PASS


def polylines_csv(paths) -> str:
    blocks = []
    for p in paths:
        blocks.append("".join(f"{a:.10g},{b:.10g}\n" for a, b in p.vertices[:, :2]))
    return "x,y\n" + "\n".join(blocks)


def cmd_geodesic(cfg: RunConfig, x, y) -> int:
    space = parse_space(cfg.space)
    if not space.is_planar:
        raise UsageError("geodesics are computed on planar weights")
    h = cfg.h or 1 / 512
    box = _planar_box(space, [x, y])
    raw, raw_len = geodesic_fan(space, x[:2], [y[:2]], box=box, h=h, k=cfg.k)
    paths, lengths = geodesic_fan(space, x[:2], [y[:2]], box=box, h=h, k=cfg.k, straighten=True)
    payload = {"space": space.descriptor(), "x": x, "y": y, "h": h, "stencil": cfg.k,
               "graph_length": raw_len[0], "length": lengths[0], "vertices": paths[0].vertices}
    csv = polylines_csv(paths)
    _emit(cfg, payload, [f"graph length {raw_len[0]:.6g}, pruned curve length {lengths[0]:.6g} "
                         f"with {len(paths[0].vertices)} vertices", csv.rstrip()], csv=csv)
    return EXIT_PASS


def cmd_ball_area(cfg: RunConfig, x, radii) -> int:
    space = parse_space(cfg.space)
    table = measures.ball_measure_table(space, x, radii)
    payload = {"space": space.descriptor(), "x": x, "radii": list(table.radii),
               "measures": list(table.values), "ratios": table.ratios().tolist(),
               "method": measures.ball_measure_method(space, x)}
    lines = [f"r={r:.6g}  mu={m:.8g}  mu/r^2={q:.6g}" for r, m, q in
             zip(payload["radii"], payload["measures"], payload["ratios"])]
    _emit(cfg, payload, lines, csv=table.to_csv())
    return EXIT_PASS


def cmd_mu_length(cfg: RunConfig, x, y, deltas) -> int:
    space = parse_space(cfg.space)
    est = measures.mu_length(space, Polyline(np.vstack([x, y])), deltas)
    payload = {"space": space.descriptor(), "x": x, "y": y, "deltas": est.deltas,
               "contents": est.contents, "value": est.value, "counts": est.balls}
    lines = [f"delta={d:.4g}  content={c:.8g}  balls={n}" for d, c, n in
             zip(est.deltas, est.contents, est.balls)] + [f"extrapolated mu-length {est.value:.8g}"]
    _emit(cfg, payload, lines, csv=est.to_csv())
    return EXIT_PASS


def cmd_q_dist(cfg: RunConfig, x, y) -> int:
    space = parse_space(cfg.space)
    q = measures.q_distance(space, x, y, h=cfg.h, k=cfg.k)
    payload = {"space": space.descriptor(), "x": x, "y": y, "q": q, "h": cfg.h, "stencil": cfg.k}
    _emit(cfg, payload, [f"q-distance {q:.6g}"])
    return EXIT_PASS


# --------------------------------------------------------------------------
# moduli
# --------------------------------------------------------------------------

def cmd_modulus(cfg: RunConfig, kind: str, a) -> int:
    space = parse_space(cfg.space)
    if not space.is_planar:
        raise UsageError("modulus commands take planar spaces; surfaces are handled by 'check loewner'")
    if kind == "quad":
        x0, x1, y0, y1 = _rect(a.rect)
        spec = modulus.quadrilateral(Box(x0, x1, y0, y1), a.pair)
        reference = (y1 - y0) / (x1 - x0) if a.pair == "13" else (x1 - x0) / (y1 - y0)
    elif kind == "ring":
        c = parse_point(a.center)
        spec = modulus.annulus((c[0], c[1]), a.r, a.R)
        reference = modulus.analytic_annulus(a.r, a.R)
    else:
        if a.rect:
            x0, x1, y0, y1 = _rect(a.rect)
            spec = modulus.quadrilateral(Box(x0, x1, y0, y1), a.pair)
            reference = None
        else:
            c = parse_point(a.center)
            spec = modulus.annulus((c[0], c[1]), a.r, a.R)
            reference = None
    if kind == "mu":
        res = modulus.mu_modulus(space, spec, h=cfg.h, k=cfg.k, tol=a.tol)
    elif a.method == "density":
        res = modulus.modulus_density(space, spec, h=cfg.h, k=cfg.k, tol=a.tol)
    else:
        res = modulus.harmonic_modulus(space, spec, h=cfg.h)
    payload = {"space": space.descriptor(), "family": spec.describe(), "value": res.value,
               "method": res.method, "residual": res.residual, "iterations": res.iterations,
               "euclidean_reference": reference}
    lines = [f"{spec.label}: modulus {res.value:.6g} ({res.method}, residual {res.residual:.2g})"]
    if reference is not None:
        lines.append(f"Euclidean value {reference:.6g}, relative gap {_rel(res.value, reference):.3%}")
    csv = None
    if a.density_csv and res.density is not None:
        csv = "index,rho\n" + "".join(f"{i},{v:.10g}\n" for i, v in enumerate(np.ravel(res.density)))
    _emit(cfg, payload, lines, csv=csv, stem=f"modulus-{kind}")
    return EXIT_PASS


def _rect(text: str):
    v = parse_floats(text)
    if len(v) != 4 or not (v[0] < v[1] and v[2] < v[3]):
        raise UsageError("--rect takes x0,x1,y0,y1 with x0<x1 and y0<y1")
    return v


# --------------------------------------------------------------------------
# checkers
# --------------------------------------------------------------------------

def _verdict_code(v: str) -> int:
    return EXIT_PASS if v == "pass" else EXIT_FAIL


def cmd_check(cfg: RunConfig, kind: str, a) -> int:
    space = parse_space(cfg.space)
    x = None if a.x is None else parse_point(a.x)
    origin = np.zeros(2 if space.is_planar else 3)
    if kind == "imm":
        samples = None
        if x is not None:
            samples = checkers.SampleSpec([tuple(x)], seed=cfg.seed)
        elif not space.is_planar:
            samples = checkers.SampleSpec([tuple(origin)], seed=cfg.seed)
        else:
            samples = checkers.default_samples(space, seed=cfg.seed)
        rep = checkers.check_imm(space, a.Lambda, samples, slack=cfg.slack, c_bound=a.bound)
        summary = f"I-MM: C_i = {rep.C_i:.4g} with Lambda = {a.Lambda}"
    elif kind == "llc":
        rep = checkers.check_llc(space, x, _need(a.scales, "--scales"))
        summary = f"LLC: lambda1 = {rep.lambda1}, lambda2 = {rep.lambda2}"
    elif kind == "loewner":
        T = parse_floats(a.T) if a.T else [1.0]
        rep = checkers.estimate_loewner(space, T, _need(a.scales, "--scales"), h=cfg.h)
        summary = "I-Loewner: phi = " + ", ".join(f"{p['phi']:.4g}" for p in rep.phi_hat)
    elif kind == "upper-reg":
        rep = checkers.check_upper_regularity(space, origin if x is None else x,
                                              _need(a.radii, "--radii"), slack=cfg.slack)
        summary = "upper 2-regularity: mu/r^2 = " + ", ".join(f"{q:.4g}" for q in rep.ratios)
    elif kind == "reciprocal":
        rep = checkers.check_reciprocality_decay(space, origin if x is None else x, a.R,
                                                 _need(a.radii, "--radii"), slack=cfg.slack,
                                                 **({"h": cfg.h} if cfg.h else {}))
        summary = "ring moduli: " + ", ".join(f"{v:.4g}" for v in rep.values)
    else:
        rep = checkers.distortion_ratio(space, origin if x is None else x, _need(a.radii, "--radii"))
        summary = "H(x, r) = " + ", ".join(f"{v:.4g}" for v in rep.H)
    payload = {"space": space.descriptor(), "slack": cfg.slack, "seed": cfg.seed, "report": rep.to_dict()}
    csv = rep.to_csv() if hasattr(rep, "to_csv") else None
    _emit(cfg, payload, [summary, f"verdict: {rep.verdict}"], csv=csv, stem=f"check-{kind}")
    if kind == "distortion":
        return EXIT_PASS
    return _verdict_code(rep.verdict)


def _need(text, flag):
    if not text:
        raise UsageError(f"{flag} is required")
    return parse_floats(text)


# --------------------------------------------------------------------------
# Figure 1
# --------------------------------------------------------------------------

def render_svg(paths, box: Box, size: int = 800, marks=()) -> str:
    """Polylines as SVG path elements on a fixed ``size x size`` canvas."""
    span = max(box.width, box.height)
    sx = size / span

    def px(p):
        return (p[0] - box.x0) * sx, (box.y1 - p[1]) * sx

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>']
    for v in paths:
        pts = [px(p) for p in v]
        d = f"M{pts[0][0]:.2f},{pts[0][1]:.2f}"
        if len(pts) == 1:
            d += " l0,0"
        else:
            d += "".join(f" L{a:.2f},{b:.2f}" for a, b in pts[1:])
        out.append(f'<path d="{d}" fill="none" stroke="black" stroke-width="1.2" '
                   f'stroke-linecap="round" stroke-linejoin="round"/>')
    for m in marks:
        a, b = px(m)
        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="red"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def figure1(space_name: str = "exp-weight", source=(0.3, 0.0), radius: float = 0.6, n_targets: int = 24,
            h: float = 1 / 512, k: int = 16, targets=None) -> dict:
    space = make_example(space_name)
    T = points_on_circle((0.0, 0.0), radius, n_targets) if targets is None else np.atleast_2d(targets)
    reach = max(radius, float(np.max(np.abs(T)))) if len(T) else radius
    half = math.ceil((reach + 0.025) / h) * h
    box = Box(-half, half, -half, half)
    paths, lengths = geodesic_fan(space, source, T, box=box, h=h, k=k, straighten=True)
    rows = []
    for q, p, L in zip(T, paths, lengths):
        ang = math.degrees(math.atan2(q[1], q[0]))
        upper_left = 90.0 < ang < 180.0
        rows.append({"target": q, "angle": ang, "length": L, "vertices": len(p.vertices),
                     "min_dist_origin": p.min_distance_to((0.0, 0.0)), "upper_left": upper_left})
    return {"space": space.descriptor(), "source": list(source), "h": h, "stencil": k, "box": box,
            "rows": rows, "paths": [p.vertices for p in paths]}


def cmd_figure1(cfg: RunConfig, a) -> int:
    h = cfg.h or 1 / 512
    name = "euclidean" if a.euclidean else (cfg.space or "exp-weight")
    targets = None
    if a.target:
        targets = [parse_point(t)[:2] for t in a.target]
    fig = figure1(name, tuple(parse_point(a.source)[:2]), a.radius, a.targets, h, cfg.k, targets)
    out = cfg.out or "figure1.svg"
    svg_path = out if out.endswith(".svg") else os.path.join(out, "figure1.svg")
    os.makedirs(os.path.dirname(svg_path) or ".", exist_ok=True)
    svg = render_svg(fig["paths"], fig["box"], marks=[fig["source"], (0.0, 0.0)])
    with open(svg_path, "w", newline="\n") as fh:
        fh.write(svg)
    checked = [r for r in fig["rows"] if r["upper_left"]]
    ok = all(r["min_dist_origin"] <= 2 * h for r in checked)
    if name == "euclidean":
        # chords between the snapped endpoints, so that only stencil error remains
        chords = [float(np.linalg.norm(v[-1] - v[0])) for v in fig["paths"]]
        ok = all(abs(r["length"] - c) <= 0.005 * max(c, h) for r, c in zip(fig["rows"], chords))
    payload = {k: v for k, v in fig.items() if k != "paths"}
    payload["box"] = list(fig["box"].as_tuple())
    payload["svg"] = svg_path
    payload["verdict"] = "pass" if ok else "fail"
    base = os.path.splitext(svg_path)[0]
    with open(base + ".json", "w", newline="\n") as fh:
        fh.write(dumps(payload) + "\n")
    with open(base + ".csv", "w", newline="\n") as fh:
        fh.write(polylines_csv([Polyline(v) for v in fig["paths"]]))
    lines = [f"wrote {svg_path} with {len(fig['paths'])} geodesics"]
    if name != "euclidean":
        lines.append(f"upper-left targets through the origin (within 2h): {sum(r['min_dist_origin'] <= 2 * h for r in checked)}/{len(checked)}")
    else:
        lines.append("straight-segment control: " + ("all lengths match chords" if ok else "chord mismatch"))
    lines.append(f"verdict: {payload['verdict']}")
    if cfg.json:
        print(dumps(payload))
    else:
        print("\n".join(lines))
    return EXIT_PASS if ok else EXIT_FAIL


# --------------------------------------------------------------------------
# verify: per-example claim suites
# --------------------------------------------------------------------------

PAPER, DERIVED, TRIVIAL = "paper", "derived", "trivial"


def _claim(name, source, holds, value=None, reference=None, tolerance=None, witnessed=False, **details):
    status = ("PASS(witnessed)" if witnessed else "PASS") if holds else "FAIL"
    return {"claim": name, "source": source, "status": status, "value": value, "reference": reference,
            "tolerance": tolerance, "details": details}


def _exp_distance(cfg):
    s = make_example("exp-weight")
    rows = []
    for rad in (0.3, 0.5, 0.7):
        exact = math.exp(-1 / rad)
        closed = radial_distance(s.field, (rad, 0.0))
        grid = _grid_distance(s, np.zeros(2), np.array([rad, 0.0]), cfg.h or 1 / 512, cfg.k)
        rows.append({"r": rad, "closed": closed, "grid": grid, "exact": exact})
    ok = all(abs(r["closed"] - r["exact"]) <= 1e-9 and _rel(r["grid"], r["exact"]) <= 0.02 for r in rows)
    return _claim("d(0,x) = exp(-1/|x|)", PAPER, ok, [r["grid"] for r in rows],
                  [r["exact"] for r in rows], 0.02, rows=rows)


def _exp_ball_area(cfg):
    s = make_example("exp-weight")
    rows = []
    for j in (2, 3, 4):
        r = math.exp(-j)
        area = measures.weighted_area(s.field, Disk(0.0, 0.0, -1 / math.log(r)))
        rows.append({"r": r, "area": area, "formula": 2 * math.pi * r * r * (0.25 - math.log(r) / 2)})
    ok = all(_rel(r["area"], r["formula"]) <= 0.01 for r in rows)
    return _claim("area of B_d(0,r) = 2 pi r^2 (1/4 - log(r)/2)", PAPER, ok,
                  [r["area"] for r in rows], [r["formula"] for r in rows], 0.01)


def _exp_upper_reg(cfg):
    s = make_example("exp-weight")
    rep = checkers.check_upper_regularity(s, (0.0, 0.0), [math.exp(-j) for j in range(3, 8)], slack=cfg.slack)
    return _claim("upper 2-regularity fails at 0", PAPER, rep.verdict == "fail" and bool(rep.witnesses),
                  rep.ratios, None, cfg.slack, witnessed=bool(rep.witnesses), witnesses=rep.witnesses)


def _conformal(space_name, rect):
    def run(cfg):
        s = make_example(space_name)
        e = make_example("euclidean")
        q = modulus.quadrilateral(Box(*rect), "13")
        h = min(rect[1] - rect[0], rect[3] - rect[2]) / 64
        mw = modulus.modulus_quadrilateral(s, q, h=h).value
        me = modulus.modulus_quadrilateral(e, q, h=h).value
        return _claim(f"identity is 1-QC: weighted modulus of {tuple(rect)} equals the Euclidean one",
                      PAPER, _rel(mw, me) <= 0.05, mw, me, 0.05)
    return run


def _exp_loewner(cfg):
    s = make_example("exp-weight")
    tab = checkers.loewner_failure_series(s, slack=cfg.slack)
    vals = [r["value"] for r in tab.rows]
    return _claim("not Loewner: Mod Gamma(E, F_t) decays under the Teichmuller bound", PAPER,
                  tab.verdict == "pass", vals, [r["bound"] for r in tab.rows], cfg.slack)


def _exp_decay(cfg):
    s = make_example("exp-weight")
    R, radii = 0.5, [2.0 ** -k for k in range(2, 8)]
    law = [2 * math.pi / math.log(math.log(r) / math.log(R)) for r in radii]
    rep = checkers.check_reciprocality_decay(s, (0.0, 0.0), R, radii, slack=cfg.slack, threshold=law[-1])
    close = all(_rel(v, w) <= 0.03 for v, w in zip(rep.values, law))
    return _claim("ring moduli at 0 decay as 2 pi / log(log r / log R)", DERIVED,
                  rep.verdict == "pass" and close, rep.values, law, 0.03)


def _llc_pass(space_name, scales, source=PAPER, name="LLC holds at the origin"):
    def run(cfg):
        s = make_example(space_name)
        rep = checkers.check_llc(s, None, scales)
        return _claim(name, source, rep.verdict == "pass", [rep.lambda1, rep.lambda2], None, None)
    return run


def _euclid_dist(cfg):
    s = make_example("euclidean")
    d = _grid_distance(s, np.zeros(2), np.array([1.0, 0.0]), cfg.h or 1 / 512, cfg.k)
    return _claim("grid distance (0,0)-(1,0) = 1", TRIVIAL, _rel(d, 1.0) <= 0.005, d, 1.0, 0.005)


def _euclid_square(cfg):
    s = make_example("euclidean")
    m13, m24, prod = modulus.conjugate_product(s, Box(0, 1, 0, 1), h=1 / 64)
    ok = _rel(m13, 1) <= 0.02 and _rel(m24, 1) <= 0.02 and _rel(prod, 1) <= 0.05
    return _claim("unit square: conjugate moduli 1 and product 1", TRIVIAL, ok, [m13, m24, prod], 1.0, 0.02)


def _euclid_annulus(cfg):
    s = make_example("euclidean")
    vals, refs = [], []
    for R in (math.e, math.e ** 2):
        vals.append(modulus.modulus_ring(s, modulus.annulus((0, 0), 1.0, R)).value)
        refs.append(modulus.analytic_annulus(1.0, R))
    return _claim("annulus A(0;1,R) has modulus 2 pi / log R", PAPER,
                  all(_rel(v, w) <= 0.03 for v, w in zip(vals, refs)), vals, refs, 0.03)


def _euclid_q(cfg):
    s = make_example("euclidean")
    q = measures.q_distance(s, (0.0, 0.0), (1.0, 0.0))
    ml = measures.mu_length(s, Polyline(np.array([[0.0, 0.0], [1.0, 0.0]])), [0.01, 0.02]).value
    ok = _rel(q, 1) <= 0.02 and _rel(ml, 1) <= 0.02
    return _claim("Lebesgue measure: q-distance and mu-length equal Euclidean length", PAPER, ok,
                  [q, ml], 1.0, 0.02)


def _euclid_imm(cfg):
    s = make_example("euclidean")
    rep = checkers.check_imm(s, 2.0, checkers.default_samples(s, seed=cfg.seed), c_bound=2 * math.sqrt(math.pi),
                             slack=cfg.slack)
    return _claim("I-MM with C_i <= 2 sqrt(pi) up to slack", DERIVED, rep.verdict == "pass" and rep.C_i <= 3.9,
                  rep.C_i, 2 * math.sqrt(math.pi), cfg.slack)


def _upper_reg_pass(space_name, radii, name="upper 2-regularity holds at the origin", source=PAPER):
    def run(cfg):
        s = make_example(space_name)
        x = np.zeros(2 if s.is_planar else 3)
        rep = checkers.check_upper_regularity(s, x, radii, slack=cfg.slack)
        return _claim(name, source, rep.verdict == "pass", rep.ratios, None, cfg.slack)
    return run


def _euclid_loewner(cfg):
    s = make_example("euclidean")
    tab = checkers.estimate_loewner(s, (1.0,), [2.0 ** -k for k in range(3, 7)])
    vals = [r["value"] for r in tab.rows]
    ok = tab.verdict == "pass" and max(vals) / min(vals) < 3
    return _claim("Loewner: modulus bounded below across scales", PAPER, ok, vals, None, None)


def _grushin_dist(cfg):
    s = make_example("grushin-glued", beta=0.25)
    d = _grid_distance(s, np.zeros(2), np.array([0.75, 0.0]), cfg.h or 1 / 512, cfg.k)
    ref = (4 / 3) * 0.75 ** 0.75
    return _claim("d(0,(0.75,0)) = (4/3) 0.75^(3/4)", DERIVED, _rel(d, ref) <= 0.02, d, ref, 0.02)


def _grushin_ball_box(cfg):
    s = make_example("grushin-glued", beta=0.25)
    reps = [checkers.check_ball_box(s, r) for r in (0.1, 0.5, 1.0)]
    wit = [w for rep in reps for w in rep.witnesses]
    return _claim("ball-box relation r <= d(x,0) <= 2r on the boundary of D_r", PAPER, not wit,
                  [[min(rep.distances), max(rep.distances)] for rep in reps], [[r, 2 * r] for r in (0.1, 0.5, 1.0)],
                  0.02, witnesses=wit)


def _grushin_area(cfg):
    s = make_example("grushin-glued", beta=0.25)
    D = checkers.ball_box_region(0.25, 1.0)
    area = measures.weighted_area(s.field, D)
    ref = checkers.grushin_box_area(0.25, 1.0)
    return _claim("weighted area of D_1 = 2 r^2 + 2 r R^(1-2 beta)/(1-2 beta)", DERIVED,
                  _rel(area, ref) <= 0.01, area, ref, 0.01)


def _grushin_upper_reg(cfg):
    s = make_example("grushin-glued", beta=0.25)
    rep = checkers.check_upper_regularity(s, (0.0, 0.0), [2.0 ** -k for k in range(3, 9)], slack=cfg.slack)
    return _claim("upper 2-regularity fails on the vertical axis", PAPER,
                  rep.verdict == "fail" and bool(rep.witnesses), rep.ratios, None, cfg.slack,
                  witnessed=bool(rep.witnesses), witnesses=rep.witnesses)


def _cone_llc(cfg):
    s = make_example("spikes-cones")
    scales = [float(np.linalg.norm(s.surface.apex(n))) for n in range(2, 11)]
    rep = checkers.check_llc(s, None, scales)
    wit = [w for w in rep.witnesses if w.get("lambda_needed_fine", 0) > max(rep.lambda_grid)]
    return _claim("I-LLC violated at origin", PAPER, rep.verdict == "fail" and bool(wit),
                  rep.needed2, max(rep.lambda_grid), None, witnessed=bool(wit), witnesses=wit)


def _cone_witness(cfg):
    s = make_example("spikes-cones")
    w = checkers.cone_witness(s, 10)
    ok = w["ratio"] <= 0.05 and _rel(w["ratio"], w["reference"]) <= 0.01
    return _claim("cone witness t_n/|y_n| matches 2^(-n/2) at n = 10", PAPER, ok, w["ratio"], w["reference"], 0.01,
                  witnessed=ok, witnesses=[w])


def _spike_upper_reg(space_name):
    def run(cfg):
        s = make_example(space_name)
        radii = [2.0 ** -n for n in range(2, 9)]
        rep = checkers.check_upper_regularity(s, np.zeros(3), radii, slack=cfg.slack)
        scaled = [m * 4.0 ** n for m, n in zip(rep.measures, range(2, 9))]
        return _claim("upper 2-regularity at 0: mu(B(0,2^-n)) 4^n bounded", PAPER, rep.verdict == "pass",
                      scaled, None, cfg.slack)
    return run


def _cyl_imm(cfg):
    s = make_example("spikes-cylinders")
    rep = checkers.check_imm(s, 2.0, checkers.SampleSpec([(0.0, 0.0, 0.0)], seed=cfg.seed), slack=cfg.slack)
    return _claim("mu is I-MM at the origin with Lambda = 2", PAPER,
                  rep.verdict == "pass" and math.isfinite(rep.C_i), rep.C_i, None, None)


def _cyl_loewner(cfg):
    s = make_example("spikes-cylinders")
    tab = checkers.estimate_loewner(s, (1.0,), [2.0 ** -k for k in range(3, 7)])
    vals = [r["value"] for r in tab.rows]
    ok = tab.verdict == "pass" and min(vals) > 0 and max(vals) / min(vals) < 3
    return _claim("I-Loewner at the origin: modulus bounded below across scales", PAPER, ok, vals, None, None)


CLAIMS: dict[str, list[Callable]] = {
    "exp-weight": [_exp_distance, _exp_ball_area, _exp_upper_reg,
                   _conformal("exp-weight", (0.2, 0.6, 0.1, 0.3)), _exp_loewner, _exp_decay,
                   _llc_pass("exp-weight", [0.05, 0.02, 0.01])],
    "euclidean": [_euclid_dist, _euclid_square, _euclid_annulus, _euclid_q, _euclid_imm,
                  _upper_reg_pass("euclidean", [0.5, 0.25, 0.125, 0.0625], source=TRIVIAL),
                  _llc_pass("euclidean", [0.5, 0.25, 0.125], source=TRIVIAL), _euclid_loewner],
    "grushin-glued": [_grushin_dist, _grushin_ball_box, _grushin_area, _grushin_upper_reg,
                      _conformal("grushin-glued", (0.1, 0.5, -0.2, 0.2)),
                      _llc_pass("grushin-glued", [0.1, 0.05, 0.02])],
    "spikes-cones": [_spike_upper_reg("spikes-cones"), _cone_llc, _cone_witness],
    "spikes-cylinders": [_spike_upper_reg("spikes-cylinders"), _cyl_imm, _cyl_loewner,
                         _llc_pass("spikes-cylinders", [2.0 ** -k for k in range(2, 9)],
                                   name="I-LLC holds at the origin")],
}


def _run_claim(args):
    fn, cfg = args
    t0 = time.perf_counter()
    try:
        out = fn(cfg)
    except (ModulusError, GridError) as exc:
        out = {"claim": fn.__name__, "source": "", "status": "SOLVER-FAILURE", "details": {"error": str(exc)}}
    out["seconds"] = round(time.perf_counter() - t0, 1)
    return out


def cmd_verify(cfg: RunConfig, example: str) -> int:
    name = example.partition(":")[0]
    if name not in CLAIMS:
        raise UsageError(f"no claim suite for {example!r}; known: {', '.join(sorted(CLAIMS))}")
    jobs = [(fn, cfg) for fn in CLAIMS[name]]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_claim, jobs))
    else:
        results = [_run_claim(j) for j in jobs]
    failed = [r for r in results if not r["status"].startswith("PASS")]
    payload = {"example": name, "slack": cfg.slack, "seed": cfg.seed, "h": cfg.h or 1 / 512, "stencil": cfg.k,
               "claims": [{k: v for k, v in r.items() if k != "seconds"} for r in results],
               "verdict": "pass" if not failed else "fail",
               "first_failure": failed[0]["claim"] if failed else None}
    lines = [f"{r['claim']}: {r['status']}  [{r['source']}]" for r in results]
    lines.append(f"verdict: {payload['verdict']}" + (f" (first failing claim: {failed[0]['claim']})" if failed else ""))
    _emit(cfg, payload, lines, stem=f"verify-{name}")
    if any(r["status"] == "SOLVER-FAILURE" for r in failed[:1]):
        return EXIT_SOLVER
    return EXIT_PASS if not failed else EXIT_FAIL


# --------------------------------------------------------------------------
# argument parser
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--h", type=float, default=None, help="grid spacing")
    common.add_argument("--stencil", type=int, default=16, help="stencil size k (4, 8, 16 or 32)")
    common.add_argument("--out", default=None, help="output directory (figure1 also accepts an .svg path)")
    common.add_argument("--seed", type=int, default=0, help="sampling seed")
    common.add_argument("--slack", type=float, default=0.1, help="verdict slack")
    common.add_argument("--json", action="store_true", help="print the JSON report instead of text")
    common.add_argument("--workers", type=int, default=1, help="worker processes for verify")

    p = _Parser(prog="qcsurf", description="Conformal weights, spike surfaces and their moduli.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in ("dist", "geodesic", "q-dist"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("space")
        s.add_argument("x")
        s.add_argument("y")

    s = sub.add_parser("figure1", parents=[common])
    s.add_argument("--euclidean", action="store_true", help="straight-line control run")
    s.add_argument("--space", dest="fig_space", default=None)
    s.add_argument("--source", default="0.3,0")
    s.add_argument("--radius", type=float, default=0.6)
    s.add_argument("--targets", type=int, default=24)
    s.add_argument("--target", action="append", help="explicit target point (repeatable)")

    s = sub.add_parser("ball-area", parents=[common])
    s.add_argument("space")
    s.add_argument("x")
    s.add_argument("radii", help="comma-separated radii")

    s = sub.add_parser("mu-length", parents=[common])
    s.add_argument("space")
    s.add_argument("x")
    s.add_argument("y")
    s.add_argument("--deltas", default="0.01,0.02")

    m = sub.add_parser("modulus").add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in ("quad", "ring", "mu"):
        s = m.add_parser(kind, parents=[common])
        s.add_argument("space")
        s.add_argument("--rect", default=None if kind == "mu" else "0,1,0,1")
        s.add_argument("--pair", choices=("13", "24"), default="13")
        s.add_argument("--center", default="0,0")
        s.add_argument("--r", type=float, default=1.0)
        s.add_argument("--R", type=float, default=math.e)
        s.add_argument("--method", choices=("harmonic", "density"), default="harmonic")
        s.add_argument("--tol", type=float, default=1e-3)
        s.add_argument("--density-csv", action="store_true", help="also write the density as CSV")

    c = sub.add_parser("check").add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in ("imm", "llc", "loewner", "upper-reg", "reciprocal", "distortion"):
        s = c.add_parser(kind, parents=[common])
        s.add_argument("space")
        s.add_argument("--x", default=None, help="centre point")
        s.add_argument("--Lambda", type=float, default=2.0)
        s.add_argument("--bound", type=float, default=None, help="claimed C_i for the I-MM check")
        s.add_argument("--scales", default=None)
        s.add_argument("--T", default=None, help="relative distances for the Loewner table")
        s.add_argument("--radii", default=None)
        s.add_argument("--R", type=float, default=0.5)

    s = sub.add_parser("verify", parents=[common])
    s.add_argument("example")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # coordinates such as -0.2,0.2 would otherwise read as option flags
    argv = [" " + t if re.match(r"^-\.?\d", t) and "," in t else t for t in argv]
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = a.command + (f" {a.kind}" if getattr(a, "kind", None) else "")
    try:
        cfg = RunConfig(command, getattr(a, "space", None), a.h, a.stencil, a.out, a.slack, a.seed, a.json,
                        a.workers)
        if a.command == "dist":
            return cmd_dist(cfg, parse_point(a.x), parse_point(a.y))
        if a.command == "geodesic":
            return cmd_geodesic(cfg, parse_point(a.x), parse_point(a.y))
        if a.command == "q-dist":
            return cmd_q_dist(cfg, parse_point(a.x), parse_point(a.y))
        if a.command == "ball-area":
            return cmd_ball_area(cfg, parse_point(a.x), parse_floats(a.radii))
        if a.command == "mu-length":
            return cmd_mu_length(cfg, parse_point(a.x), parse_point(a.y), parse_floats(a.deltas))
        if a.command == "figure1":
            cfg.space = a.fig_space
            return cmd_figure1(cfg, a)
        if a.command == "modulus":
            return cmd_modulus(cfg, a.kind, a)
        if a.command == "check":
            return cmd_check(cfg, a.kind, a)
        return cmd_verify(cfg, a.example)
    except UsageError as exc:
        print(f"qcsurf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModulusError, GridError) as exc:
        print(f"qcsurf: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SpaceError as exc:
        print(f"qcsurf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
