import json
import math

import mpmath
import numpy as np
import pytest
from scipy import sparse

from qcsurf import modulus as M
from qcsurf.checkers import estimate_loewner
from qcsurf.spaces import Box


# ---------------------------------------------------------------- analytic values

def test_analytic_annulus():
    assert M.analytic_annulus(1, math.e) == pytest.approx(2 * math.pi, rel=1e-14)
    assert M.analytic_annulus(1, math.e ** 2) == pytest.approx(math.pi, rel=1e-14)
    vals = [M.analytic_annulus(0.3, 0.3 * (1 + eps)) for eps in (1e-1, 1e-3, 1e-6)]
    assert vals[0] < vals[1] < vals[2] and vals[2] > 1e6
    with pytest.raises(M.ModulusError):
        M.analytic_annulus(2.0, 1.0)


def test_teichmuller_bound_against_mpmath():
    mpmath.mp.dps = 30
    t = mpmath.mpf("1e-3")
    r_t, R_t = -1 / mpmath.log(t / 2), -1 / mpmath.log(t)
    ref = 2 * mpmath.pi / mpmath.log(r_t / (R_t - r_t))
    assert M.teichmuller_upper_bound(1e-3) == pytest.approx(float(ref), rel=1e-12)
    assert float(ref) == pytest.approx(2.733, abs=5e-4)
    # the quoted 2.7313 rounds R_t - r_t to 0.01318; the full-precision value is 2.7328
    assert abs(float(ref) - 2.731) < 5e-3
    r, R = M.teichmuller_radii(1e-3)
    assert r == pytest.approx(0.13158, abs=5e-5) and R == pytest.approx(0.14476, abs=5e-5)


def test_teichmuller_bound_decays():
    ts = [1e-3, 1e-6, 1e-12, 1e-48, 1e-200]
    vals = [M.teichmuller_upper_bound(t) for t in ts]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    # r_t / (R_t - r_t) simplifies to log(1/t) / log 2
    for t, v in zip(ts, vals):
        assert v == pytest.approx(2 * math.pi / math.log(math.log(1 / t) / math.log(2)), rel=1e-9)
    # so the bound tends to 0, at log-log speed: t = 10^(-10^e)
    ext = [2 * math.pi / math.log(10.0 ** e * math.log(10) / math.log(2)) for e in (10, 100, 1000 // 4)]
    assert all(a > b for a, b in zip(ext, ext[1:])) and ext[-1] < 0.011
    for bad in (0.0, 0.5, 0.9, -1e-3):
        with pytest.raises(M.ModulusError):
            M.teichmuller_upper_bound(bad)


# ---------------------------------------------------------------- harmonic solver

def test_square_and_rectangle(euclid):
    assert M.modulus_quadrilateral(euclid, M.quadrilateral(Box(0, 1, 0, 1))).value == pytest.approx(1.0, rel=0.02)
    rect = Box(0, 2, 0, 1)
    assert M.modulus_quadrilateral(euclid, M.quadrilateral(rect, "13")).value == pytest.approx(0.5, rel=0.02)
    assert M.modulus_quadrilateral(euclid, M.quadrilateral(rect, "24")).value == pytest.approx(2.0, rel=0.02)
    # the density solver on the same rectangle as an independent oracle
    dens = M.modulus_density(euclid, M.quadrilateral(rect, "13"), h=1 / 32)
    assert dens.value == pytest.approx(0.5, rel=0.03)


@pytest.mark.parametrize("name,rect", [("expw", Box(0.2, 0.6, 0.1, 0.3)),
                                       ("grushin", Box(0.1, 0.5, -0.2, 0.2))])
def test_conformal_invariance(request, euclid, name, rect):
    space = request.getfixturevalue(name)
    for pair in ("13", "24"):
        q = M.quadrilateral(rect, pair)
        ref = M.modulus_quadrilateral(euclid, q).value
        assert M.modulus_quadrilateral(space, q).value == pytest.approx(ref, rel=0.05)


def test_annuli(euclid):
    a1 = M.modulus_ring(euclid, M.annulus((0, 0), 1, math.e)).value
    a2 = M.modulus_ring(euclid, M.annulus((0, 0), 1, math.e ** 2)).value
    assert a1 == pytest.approx(2 * math.pi, rel=0.03)
    assert a2 == pytest.approx(math.pi, rel=0.03)


def test_conjugate_product(euclid, expw):
    m13, m24, prod = M.conjugate_product(euclid, Box(0, 1, 0, 1))
    assert prod == pytest.approx(1.0, rel=0.05) and prod > 0
    _, _, prod_exp = M.conjugate_product(expw, Box(0.2, 0.6, 0.1, 0.3))
    assert prod_exp == pytest.approx(1.0, rel=0.05)


def test_modulus_errors(euclid):
    with pytest.raises(M.ModulusError):
        M.quadrilateral(Box(0, 1, 0, 1), "12")
    with pytest.raises(M.ModulusError):
        M.annulus((0, 0), 2.0, 1.0)
    with pytest.raises(M.ModulusError):
        M.modulus_ring(euclid, M.quadrilateral(Box(0, 1, 0, 1)))
    with pytest.raises(M.ModulusError):
        M.ModulusResult(-1.0, "harmonic-energy")
    # E and F overlapping
    spec = M.condenser(Box(0, 1, 0, 1), M.HalfPlaneSet(0, 0.6, -1), M.HalfPlaneSet(0, 0.4, +1))
    with pytest.raises(M.ModulusError):
        M.harmonic_modulus(euclid, spec)


# ---------------------------------------------------------------- density solver

def test_density_square(euclid):
    res = M.modulus_density(euclid, M.quadrilateral(Box(0, 1, 0, 1)), h=1 / 32)
    assert res.value == pytest.approx(1.0, rel=0.03)
    assert res.method == "density-qp"


def test_density_matches_ring(euclid):
    spec = M.annulus((0, 0), 1, math.e)
    harm = M.modulus_ring(euclid, spec).value
    dens = M.modulus_density(euclid, spec, h=math.e / 24).value
    assert abs(dens - harm) / harm <= 0.05


def test_zero_length_path_gives_infinity():
    # a chain 0 - 1 - 2 whose second edge costs nothing, and a detour through 3
    rows, cols, w = [0, 1, 0, 3], [1, 2, 3, 2], [0.0, 0.0, 1.0, 1.0]
    A = sparse.csr_matrix((w + w, (rows + cols, cols + rows)), shape=(4, 4))
    # explicit zeros are dropped by scipy, so encode a zero-cost edge as a tiny cost
    A = sparse.csr_matrix((np.array([1e-300, 1e-300, 1.0, 1.0] * 2),
                           (np.array(rows + cols), np.array(cols + rows))), shape=(4, 4))
    E = np.array([True, False, False, False])
    F = np.array([False, False, True, False])
    res = M.density_modulus_graph(A, np.ones(4), E, F)
    assert math.isinf(res.value) and res.info["reason"] == "zero-length curve"


def test_density_graph_path_oracle():
    # n unit edges in series with unit masses: Mod = 1 / sum(cost^2 / mass-ish); for a single
    # path of length L with density on every node the optimum is rho = c * ones
    n = 6
    i = np.arange(n - 1)
    A = sparse.csr_matrix((np.ones(2 * (n - 1)), (np.r_[i, i + 1], np.r_[i + 1, i])), shape=(n, n))
    E = np.zeros(n, dtype=bool)
    E[0] = True
    F = np.zeros(n, dtype=bool)
    F[-1] = True
    res = M.density_modulus_graph(A, np.ones(n), E, F, tol=1e-6)
    # rho-length = sum_e (rho_u + rho_v)/2 with weights 1/2,1,...,1,1/2 -> minimise |rho|^2
    wts = np.r_[0.5, np.ones(n - 2), 0.5]
    assert res.value == pytest.approx(1.0 / (wts @ wts), rel=1e-3)


def test_mu_modulus_lebesgue(euclid):
    spec = M.quadrilateral(Box(0, 1, 0, 1))
    mu = M.mu_modulus(euclid, spec, h=1 / 32).value
    dens = M.modulus_density(euclid, spec, h=1 / 32).value
    assert mu == pytest.approx(dens, rel=0.03)
    ring = M.annulus((0, 0), 1, math.e)
    mu_r = M.mu_modulus(euclid, ring, h=math.e / 24).value
    assert mu_r == pytest.approx(M.modulus_density(euclid, ring, h=math.e / 24).value, rel=0.03)


def test_mu_modulus_cylinders_against_loewner(cylinders):
    from qcsurf import spikes
    from qcsurf.checkers import _mesh_loewner_sets
    s = 2.0 ** -4
    table = estimate_loewner(cylinders, [1.0], [s])
    phi_hat = table.phi_hat[0]["phi"]
    r_out = cylinders.cover_radius(np.zeros(3))
    mesh = spikes.build_surface_mesh(cylinders.surface, radius=min(1.5 * r_out, 0.75), n_ang=64,
                                     max_n=int(math.ceil(math.log2(1 / s))) + 3)
    E, F = _mesh_loewner_sets(mesh, s, s, r_out)
    val = M.mu_modulus(cylinders, mesh=mesh, E=E, F=F).value
    assert phi_hat > 0
    assert val >= phi_hat * (1 - 1e-9)


@pytest.fixture(scope="module")
def chained(expw):
    from qcsurf.checkers import SampleSpec, check_imm
    x = (0.5, 0.0)
    imm = check_imm(expw, 2.0, SampleSpec([x], radii=[0.004, 0.016, 0.064]))
    # m / ell = Lambda^k lam^2 with Lambda = 2, lam = 1, k = 5
    rep = M.chained_annuli_density(expw, x, ell=0.002, m=0.064, Lambda=2.0, lam=1.0, C_i=imm.C_i)
    return x, imm, rep


def test_chained_annuli_bound(expw, chained):
    x, imm, rep = chained
    assert imm.verdict == "pass"
    assert rep.k == 5 and rep.radii[-1] == pytest.approx(0.064)
    assert rep.bound == pytest.approx(imm.C_i ** 2 / 5)
    # each ring crossing costs about 1/k; grid paths lose a little at the ring edges
    assert 0.8 <= rep.min_length <= 1.2
    assert rep.energy <= rep.bound
    assert rep.scaled_energy <= rep.bound
    spec = M.ring_spec(expw, x, 0.002, 0.064)
    assert M.harmonic_modulus(expw, spec).value <= rep.scaled_energy


def test_chained_annuli_rejects_short_family(expw):
    with pytest.raises(M.ModulusError):
        M.chained_annuli_density(expw, (0.5, 0.0), ell=0.01, m=0.015, Lambda=2.0, lam=1.0, C_i=3.5)


# ---------------------------------------------------------------- structural properties

def test_majorization(euclid):
    box = Box(-2, 2, -2, 2)
    E = M.BallSet((0.0, 0.0), 0.3)
    small_F = M.BallSet((0.0, 0.0), 1.8, outside=True)
    big_F = M.BallSet((0.0, 0.0), 1.2, outside=True)
    m_small = M.harmonic_modulus(euclid, M.condenser(box, E, small_F)).value
    m_big = M.harmonic_modulus(euclid, M.condenser(box, E, big_F)).value
    assert m_big >= m_small
    # shrinking the domain to the upper half plane
    half = M.HalfPlaneSet(1, 0.0, +1)
    m_half = M.harmonic_modulus(euclid, M.condenser(box, E, big_F, domain=half)).value
    assert m_half <= m_big


@pytest.mark.parametrize("name,x", [("euclid", (0.3, 0.2)), ("expw", (0.5, 0.1)), ("grushin", (0.5, 0.3))])
def test_reciprocality_decay_regular_points(request, name, x):
    space = request.getfixturevalue(name)
    for r, R in ((0.004, 0.04), (0.002, 0.05)):
        spec = M.ring_spec(space, x, r, R)
        val = M.harmonic_modulus(space, spec).value
        assert val <= M.analytic_annulus(r, R) * 1.03


def test_result_json(euclid):
    res = M.modulus_quadrilateral(euclid, M.quadrilateral(Box(0, 1, 0, 1)))
    d = json.loads(res.to_json())
    assert set(d) >= {"value", "method", "residual", "iterations"}
    assert d["method"] == "harmonic-energy"
    assert res.to_json() == M.modulus_quadrilateral(euclid, M.quadrilateral(Box(0, 1, 0, 1))).to_json()
