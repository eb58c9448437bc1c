import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csgraph

from qcsurf import make_example
from qcsurf.geodesics import (GridError, Polyline, build_grid, curve_length, distance_field,
                              distance_from_point, geodesic_fan, radial_distance, shorten,
                              shortest_path, stencil)
from qcsurf.quadrature import polyline_length, segment_integrals
from qcsurf.spaces import Box, points_on_circle


def test_stencil_sizes():
    for k in (4, 8, 16, 32):
        assert len(stencil(k)) == k // 2
    with pytest.raises(GridError):
        stencil(6)


def test_unit_square_grid(euclid):
    g = build_grid(euclid, Box(0, 1, 0, 1), 0.25, 8)
    assert g.n_nodes == 25
    assert g.adjacency[0, 1] == pytest.approx(0.25)
    assert g.adjacency[0, 6] == pytest.approx(0.25 * math.sqrt(2))
    assert g.is_connected()


def test_exp_grid_node_count(expw):
    g = build_grid(expw, Box(-1, 1, -1, 1), 1 / 256, 4)
    assert g.n_nodes == 513 ** 2


def test_grushin_axis_edge(grushin):
    h = 0.01
    L = segment_integrals(grushin.field, [(-h / 2, 0.0)], [(h / 2, 0.0)])[0]
    assert L == pytest.approx(h / 2 + (4 / 3) * (h / 2) ** 0.75, rel=1e-12)


def test_grushin_slanted_segment_against_quadrature(grushin):
    from scipy.integrate import quad
    a, b = np.array([-0.1, 0.2]), np.array([0.3, -0.1])
    ref = quad(lambda s: float(grushin.field(a + s * (b - a))), 0, 1, points=[0.25], limit=200)[0]
    ref *= np.linalg.norm(b - a)
    assert segment_integrals(grushin.field, [a], [b])[0] == pytest.approx(ref, rel=1e-8)


def test_exp_off_ray_segment_against_quadrature(expw):
    from scipy.integrate import quad
    a, b = np.array([-0.4, 0.05]), np.array([0.5, 0.1])
    ref = quad(lambda s: float(expw.field(a + s * (b - a))), 0, 1, epsabs=1e-13, limit=400)[0]
    ref *= np.linalg.norm(b - a)
    assert segment_integrals(expw.field, [a], [b], tol=1e-12)[0] == pytest.approx(ref, rel=1e-8)


def test_curve_lengths(euclid, expw):
    assert curve_length(euclid, Polyline(np.array([[0, 0], [3, 4]]))) == pytest.approx(5.0)
    assert curve_length(expw, Polyline(np.array([[0, 0], [0.5, 0]]))) == pytest.approx(math.exp(-2), rel=1e-12)
    assert curve_length(expw, Polyline(np.array([[0, 0], [0.5, 0]]))) == pytest.approx(0.135335, abs=1e-6)


@pytest.mark.parametrize("rad", [0.3, 0.6])
def test_exp_circle_length(expw, rad):
    c = Polyline.circle((0, 0), rad, 2048)
    exact = 2 * math.pi * math.exp(-1 / rad) / rad
    assert curve_length(expw, c) == pytest.approx(exact, rel=1e-5)


def test_radial_distance(expw):
    assert radial_distance(expw.field, (0.5, 0)) == pytest.approx(0.1353353, abs=1e-7)
    assert radial_distance(expw.field, (1.0, 0)) == pytest.approx(0.3678794, abs=1e-7)
    assert radial_distance(expw.field, (1e-4, 0)) == 0.0
    assert radial_distance(expw.field, (0.02, 0)) < 1e-21


def test_polyline_basics():
    p = Polyline(np.array([[0, 0], [0, 0], [1, 0]]))
    assert len(p.vertices) == 2
    assert p.euclidean_length() == 1
    assert p.refine(0.1).vertices.shape[0] == 11
    assert p.min_distance_to((0.5, 1.0)) == pytest.approx(1.0)
    assert Polyline(np.array([[0.2, 0.3]])).degenerate


def test_shortest_path_euclidean(euclid):
    g = build_grid(euclid, Box(-0.25, 1.25, -0.5, 0.5), 1 / 64, 16)
    path, L = shortest_path(g, (0, 0), (1, 0))
    assert L == pytest.approx(1.0, rel=0.005)
    assert path.vertices[0] == pytest.approx([0, 0]) and path.vertices[-1] == pytest.approx([1, 0])


def test_shortest_path_exp_radial(expw):
    g = build_grid(expw, Box(-0.25, 0.75, -0.5, 0.5), 1 / 512, 16)
    _, L = shortest_path(g, (0, 0), (0.5, 0))
    assert L == pytest.approx(math.exp(-2), rel=0.02)


def test_shortest_path_through_origin(expw):
    h = 1 / 256
    g = build_grid(expw, Box(-0.5, 0.5, -0.5, 0.5), h, 16)
    path, L = shortest_path(g, (0.3, 0), (-0.2, 0.2))
    assert path.min_distance_to((0, 0)) <= 2 * h
    via = math.exp(-1 / 0.3) + math.exp(-1 / math.hypot(0.2, 0.2))
    assert L == pytest.approx(via, rel=0.02)


def test_fan_figure_setting(expw):
    T = points_on_circle((0, 0), 0.6, 24)
    h = 1 / 128
    paths, lengths = geodesic_fan(expw, (0.3, 0), T, box=Box(-0.625, 0.625, -0.625, 0.625), h=h)
    assert len(paths) == 24
    for q, p in zip(T, paths):
        ang = math.degrees(math.atan2(q[1], q[0]))
        if 90 < ang < 180:
            assert p.min_distance_to((0, 0)) <= 2 * h


def test_fan_single_target_is_source(expw):
    paths, lengths = geodesic_fan(expw, (0.3, 0), [(0.3, 0)], box=Box(-0.5, 0.5, -0.5, 0.5), h=1 / 64)
    assert paths[0].degenerate and lengths[0] == 0.0


def test_euclidean_fan_straight(euclid):
    T = points_on_circle((0, 0), 0.6, 24)
    paths, lengths = geodesic_fan(euclid, (0.3, 0), T, box=Box(-0.625, 0.625, -0.625, 0.625), h=1 / 128,
                                  straighten=True)
    for p, L in zip(paths, lengths):
        chord = float(np.linalg.norm(p.vertices[-1] - p.vertices[0]))
        assert L == pytest.approx(chord, rel=0.005)
        assert len(p.vertices) == 2


def test_raw_fan_quantisation_bound(euclid):
    # without pruning the 16-direction stencil overshoots by at most 1/cos(atan(1/2)/2) - 1
    T = points_on_circle((0, 0), 0.6, 24)
    paths, lengths = geodesic_fan(euclid, (0.3, 0), T, box=Box(-0.625, 0.625, -0.625, 0.625), h=1 / 128)
    bound = 1 / math.cos(math.atan(0.5) / 2) - 1
    for p, L in zip(paths, lengths):
        chord = float(np.linalg.norm(p.vertices[-1] - p.vertices[0]))
        assert chord <= L <= chord * (1 + bound + 1e-9)


def test_shorten_keeps_origin_corner(expw):
    v = np.array([[0.3, 0.0], [0.15, 0.0], [0.0, 0.0], [-0.1, 0.1], [-0.2, 0.2]])
    c, L = shorten(expw, Polyline(v))
    assert c.min_distance_to((0, 0)) < 1e-12
    assert L <= polyline_length(expw.field, v) + 1e-15


def test_refinement_monotone(expw):
    # endpoints on the coarsest lattice so every grid sees the same pair
    x, y = (20 / 64, 6 / 64), (-13 / 64, 16 / 64)
    box = Box(-0.5, 0.5, -0.5, 0.5)
    L = {}
    for h, k in ((1 / 64, 16), (1 / 128, 16), (1 / 64, 8), (1 / 64, 32)):
        L[h, k] = shortest_path(build_grid(expw, box, h, k), x, y)[1]
    assert L[1 / 128, 16] <= L[1 / 64, 16] + 1e-9
    assert L[1 / 64, 32] <= L[1 / 64, 8] + 1e-9


@pytest.mark.parametrize("t", [0.1, 0.05])
def test_mqc_witness_ratio(expw, t):
    # both witnesses are grid nodes at this spacing
    g = build_grid(expw, Box(-0.25, 0.25, -0.25, 0.25), 1 / 200, 16)
    d = distance_field(g, (0.0, 0.0))
    dy = d[g.snap((2 * t, 0.0))[0]]
    dz = d[g.snap((t, 0.0))[0]]
    assert dy / dz == pytest.approx(math.exp(1 / (2 * t)), rel=0.03)


def test_upper_estimate(expw):
    rng = np.random.default_rng(5)
    g = build_grid(expw, Box(-0.7, 0.7, -0.7, 0.7), 1 / 128, 16)
    for _ in range(10):
        r1, r2 = np.sort(rng.uniform(0.15, 0.6, 2))
        a1, a2 = rng.uniform(0, 2 * np.pi, 2)
        x = (r1 * math.cos(a1), r1 * math.sin(a1))
        y = (r2 * math.cos(a2), r2 * math.sin(a2))
        d = distance_from_point(g, x)
        L = float(g.interpolate(d, [y])[0])
        bound = math.exp(-1 / r2) - math.exp(-1 / r1) + 2 * math.pi * math.exp(-1 / r2) / r2
        assert L <= bound * 1.02


@pytest.mark.parametrize("name,box", [("euclidean", Box(-1, 1, -1, 1)), ("exp-weight", Box(-1, 1, -1, 1)),
                                      ("grushin-glued", Box(-1, 1, -1, 1))])
def test_metric_axioms_on_random_triples(name, box):
    s = make_example(name)
    g = build_grid(s, box, 1 / 16, 16)
    rng = np.random.default_rng(11)
    nodes = rng.choice(g.n_nodes, 40, replace=False)
    D = csgraph.dijkstra(g.adjacency, indices=nodes)[:, nodes]
    tri = rng.integers(0, 40, size=(1000, 3))
    a, b, c = tri.T
    tol = 1e-12 * max(1.0, D.max())
    assert np.all(np.abs(D - D.T) <= tol)
    assert np.all(D[a, c] <= D[a, b] + D[b, c] + tol)


def test_spike_metric_axioms(cones):
    s = cones.surface
    rng = np.random.default_rng(2)
    P = np.column_stack([rng.uniform(-1, 0, (300, 2)), np.zeros(300)])
    for i in range(0, 300, 3):
        x, y, z = P[i], P[i + 1], P[i + 2]
        assert np.linalg.norm(x - z) <= np.linalg.norm(x - y) + np.linalg.norm(y - z) + 1e-15


def test_distance_from_point_subnode(euclid):
    g = build_grid(euclid, Box(0, 1, 0, 1), 1 / 32, 16)
    d = distance_from_point(g, (0.51, 0.49))
    assert float(g.interpolate(d, [(0.9, 0.49)])[0]) == pytest.approx(0.39, rel=0.01)


def test_grid_errors(expw):
    with pytest.raises(GridError):
        build_grid(expw, Box(-3, 3, -3, 3), 0.1)
    g = build_grid(expw, Box(-0.5, 0.5, -0.5, 0.5), 1 / 16)
    with pytest.raises(GridError):
        g.snap((1.0, 1.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 0.95))
def test_grid_matches_radial_law(rad):
    s = make_example("exp-weight")
    g = build_grid(s, Box(-0.125, 1.0, -0.125, 0.125), 1 / 64, 16)
    d = distance_field(g, (0.0, 0.0))
    x = round(rad * 64) / 64
    assert d[g.snap((x, 0.0))[0]] == pytest.approx(math.exp(-1 / x), rel=1e-9)
