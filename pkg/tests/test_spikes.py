import math

import numpy as np
import pytest
from scipy.sparse import csgraph

from qcsurf import spikes
from qcsurf.spaces import SpaceError


def test_lens_area_limits():
    # disjoint, nested and the half-overlap of two unit disks
    assert spikes.lens_area(3.0, 1.0, 1.0) == 0.0
    assert spikes.lens_area(0.1, 1.0, 0.5) == pytest.approx(math.pi * 0.25)
    ref = 2 * math.acos(0.5) - 0.5 * math.sqrt(3)
    assert spikes.lens_area(1.0, 1.0, 1.0) == pytest.approx(ref, rel=1e-12)


def test_lens_area_monte_carlo():
    rng = np.random.default_rng(3)
    p = rng.uniform(-1, 1, size=(400_000, 2))
    inside = (np.hypot(*p.T) < 1) & (np.hypot(p[:, 0] - 0.8, p[:, 1]) < 0.6)
    mc = inside.mean() * 4
    assert spikes.lens_area(0.8, 1.0, 0.6) == pytest.approx(mc, abs=0.01)


def test_triangle_disk_area():
    tri = np.array([[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]])
    assert spikes.triangle_disk_area(tri, 1.0)[0] == pytest.approx(0.005, rel=1e-12)
    big = np.array([[[-10.0, -10.0], [10.0, -10.0], [0.0, 10.0]]])
    assert spikes.triangle_disk_area(big, 0.5)[0] == pytest.approx(math.pi * 0.25, rel=1e-12)
    # quarter disk: right triangle with legs 2 clipped by the unit disk at its right-angle vertex
    q = np.array([[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]])
    assert spikes.triangle_disk_area(q, 1.0)[0] == pytest.approx(math.pi / 4, rel=1e-12)


def test_facets_converge_to_lateral_area(cones, cylinders):
    for sp in (cones, cylinders):
        s = sp.surface
        n = 3
        h, r = float(s.h(n)), float(s.r(n))
        lateral = math.pi * r * math.hypot(h, r) if s.kind == "cones" else 2 * math.pi * r * h
        coarse = spikes._facet_area(spikes.piece_facets(s, n, 16)).sum()
        fine = spikes._facet_area(spikes.piece_facets(s, n, 512)).sum()
        assert coarse < fine <= lateral * (1 + 1e-12)
        assert fine == pytest.approx(lateral, rel=1e-3)


def test_ball_on_cylinder_cap(cylinders):
    s = cylinders.surface
    n = 2
    t, h, r = float(s.t(n)), float(s.h(n)), float(s.r(n))
    rho = 0.5 * r
    assert spikes.ball_area(s, np.array([t, 0.0, h]), rho) == pytest.approx(math.pi * rho * rho, rel=1e-12)


def test_ball_area_flat_point(cones):
    s = cones.surface
    # far from every spike the ball is a flat disk
    assert spikes.ball_area(s, np.array([-0.5, 0.3, 0.0]), 0.1) == pytest.approx(math.pi * 0.01, rel=1e-12)
    with pytest.raises(SpaceError):
        spikes.ball_area(s, np.array([0.0, 0.0, 1.0]), 0.1)
    with pytest.raises(SpaceError):
        spikes.ball_area(s, np.zeros(3), -1.0)


def test_origin_ball_bound_holds(cones, cylinders):
    for sp in (cones, cylinders):
        for n in (2, 4, 6, 8):
            r = 2.0 ** -n
            assert spikes.ball_area(sp.surface, np.zeros(3), r) <= spikes.origin_ball_bound(sp.surface, n) * r * r


@pytest.fixture(scope="module")
def cyl_mesh(cylinders):
    return spikes.build_surface_mesh(cylinders.surface, radius=0.5, n_ang=64, max_n=7)


@pytest.fixture(scope="module")
def cone_mesh(cones):
    return spikes.build_surface_mesh(cones.surface, radius=0.5, n_ang=64, max_n=7)


def _included(mesh, max_n=7):
    s = mesh.surface
    return [int(n) for n in s.indices if float(s.t(n) + s.r(n)) < mesh.radius and n <= max_n]


@pytest.mark.parametrize("which", ["cyl_mesh", "cone_mesh"])
def test_mesh_connected_and_on_surface(request, which):
    mesh = request.getfixturevalue(which)
    s = mesh.surface
    ncomp, _ = csgraph.connected_components(mesh.adjacency, directed=False)
    assert ncomp == 1
    off = mesh.vertices[s.distance_to_surface(mesh.vertices) > 1e-9]
    # the only vertices off the surface fill the holes of the spikes left out of the mesh:
    # those beyond max_n and those crossing the outer rim
    dropped = [int(n) for n in s.indices if int(n) not in _included(mesh)]
    for p in off:
        assert p[2] == 0.0
        assert any(math.hypot(p[0] - float(s.t(n)), p[1]) < float(s.r(n)) for n in dropped)
    assert (mesh.triangle_areas > 0).all()
    assert mesh.node_mass.sum() == pytest.approx(mesh.triangle_areas.sum(), rel=1e-12)


@pytest.mark.parametrize("which", ["cyl_mesh", "cone_mesh"])
def test_mesh_area_against_pieces(request, which):
    mesh = request.getfixturevalue(which)
    s = mesh.surface
    exact = math.pi * mesh.radius ** 2
    for n in _included(mesh):
        h, r = float(s.h(n)), float(s.r(n))
        if s.kind == "cones":
            exact += math.pi * r * math.hypot(h, r) - math.pi * r * r
        else:
            exact += 2 * math.pi * r * h
    assert mesh.triangle_areas.sum() == pytest.approx(exact, rel=0.01)


def test_stiffness_properties(cyl_mesh):
    K = cyl_mesh.stiffness
    assert abs(K - K.T).max() < 1e-12
    ones = np.ones(cyl_mesh.n_nodes)
    assert np.abs(K @ ones).max() < 1e-9
    # Dirichlet energy of u = x1 on the flat part: restricted to plane triangles,
    # the energy equals their area since |grad u| = 1 there
    V, T = cyl_mesh.vertices, cyl_mesh.triangles
    flat = (cyl_mesh.piece[T] == 0).all(axis=1) & (np.abs(V[T][:, :, 2]) < 1e-12).all(axis=1)
    from qcsurf.spikes import SurfaceMesh
    sub = SurfaceMesh(cyl_mesh.surface, V, T[flat], cyl_mesh.piece, cyl_mesh.radius)
    u = V[:, 0]
    assert u @ (sub.stiffness @ u) == pytest.approx(sub.triangle_areas.sum(), rel=1e-9)
    rng = np.random.default_rng(0)
    w = rng.normal(size=cyl_mesh.n_nodes)
    assert w @ (K @ w) > 0


def test_mesh_nearest(cyl_mesh):
    j = cyl_mesh.nearest((0.2, 0.1, 0.0))
    assert np.linalg.norm(cyl_mesh.vertices[j] - np.array([0.2, 0.1, 0.0])) < 0.05
    assert cyl_mesh.norms()[j] == pytest.approx(np.linalg.norm(cyl_mesh.vertices[j]))
