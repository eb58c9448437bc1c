import math

import numpy as np
import pytest

from qcsurf import make_example
from qcsurf import measures
from qcsurf.checkers import SampleSpec, check_imm, ball_box_region, grushin_box_area, q_ball_sandwich
from qcsurf.geodesics import Polyline
from qcsurf.spaces import Box, Disk, SpaceError
from qcsurf.spikes import ball_area, origin_ball_bound


@pytest.fixture(scope="module")
def exp_imm():
    s = make_example("exp-weight")
    return check_imm(s, 2.0, SampleSpec([(0.3, 0.2), (-0.4, 0.1)], n_radii=2))


def test_weighted_area_basics(euclid, expw):
    assert measures.weighted_area(euclid.field, Box(0, 1, 0, 1)) == 1.0
    r = math.exp(-2)
    val = measures.weighted_area(expw.field, Disk(0, 0, -1 / math.log(r)))
    assert val == pytest.approx(2 * math.pi * r * r * (0.25 - math.log(r) / 2), rel=1e-8)
    # 2 pi e^-4 * 5/4 to seven digits
    assert val == pytest.approx(0.1438507, abs=1e-7)


def test_weighted_area_off_centre_disk(expw):
    # generic disk through dblquad against a polar Gauss oracle
    from scipy.integrate import dblquad
    D = Disk(0.3, 0.1, 0.1)
    ref = dblquad(lambda rho, th: rho * float(expw.field(np.array([0.3 + rho * math.cos(th),
                                                                   0.1 + rho * math.sin(th)]))) ** 2,
                  0, 2 * math.pi, 0, 0.1, epsabs=1e-13)[0]
    assert measures.weighted_area(expw.field, D) == pytest.approx(ref, rel=1e-7)


def test_grushin_box_area(grushin):
    D = ball_box_region(0.25, 1.0)
    val = measures.weighted_area(grushin.field, D)
    assert val == pytest.approx(2 + 2 * math.sqrt(3), rel=1e-10)
    assert val == pytest.approx(grushin_box_area(0.25, 1.0), rel=1e-12)
    # the closed form with R = (1 - beta) r^(1/(1-beta)) scales like r^(5/3) for beta = 1/4
    for r in (0.1, 0.5):
        assert measures.weighted_area(grushin.field, ball_box_region(0.25, r)) == pytest.approx(
            2 * r * r + 2 * math.sqrt(3) * r ** (5 / 3), rel=1e-10)


def test_region_outside_domain(expw):
    with pytest.raises(SpaceError):
        measures.weighted_area(expw.field, Box(-3, 3, -3, 3))


@pytest.mark.parametrize("x,r", [((0.0, 0.0), 0.3), ((2.0, -1.0), 0.05)])
def test_euclidean_ball(euclid, x, r):
    assert measures.ball_measure(euclid, x, r) == pytest.approx(math.pi * r * r, rel=0.01)


def test_exp_origin_ball(expw):
    r = math.exp(-3)
    assert measures.ball_measure(expw, (0, 0), r) == pytest.approx(2 * math.pi * math.exp(-6) * 1.75, rel=1e-12)
    assert measures.ball_measure(expw, (0, 0), r) == pytest.approx(0.0272553, abs=1e-7)


def test_sublevel_against_closed_form_on_regular_ball(expw):
    # B_d(x, r) at a regular point, against the exact area of the sandwiching disks
    x, r = np.array([0.5, 0.0]), 0.01
    m = measures.ball_measure(expw, x, r)
    w = float(expw.field(x))
    approx_disk = measures.weighted_area(expw.field, Disk(0.5, 0.0, r / w))
    assert m == pytest.approx(approx_disk, rel=0.03)


def test_ball_table_monotone(expw):
    t = measures.ball_measure_table(expw, (0.4, 0.1), [0.002, 0.005, 0.01, 0.02])
    assert np.all(np.diff(t.values) > 0) and t.method == "sublevel-integration"
    assert t.to_csv().splitlines()[0] == "radius,value,method"


def test_cone_origin_ball(cones):
    s = cones.surface
    r = 2.0 ** -4
    val = ball_area(s, np.zeros(3), r)
    assert val <= origin_ball_bound(s, 4) * r * r
    # triangulated cross-check with a finer facet count
    assert val == pytest.approx(ball_area(s, np.zeros(3), r, m=2048), rel=1e-3)
    assert val >= math.pi * r * r * 0.99


def test_mu_length_lebesgue(euclid):
    est = measures.mu_length(euclid, Polyline(np.array([[0.0, 0.0], [1.0, 0.0]])), [0.05, 0.1])
    assert est.value == pytest.approx(1.0, rel=0.02)
    assert est.contents[0] >= est.contents[1] - 1e-12
    deg = measures.mu_length(euclid, Polyline(np.array([[0.2, 0.2]])), [0.1])
    assert deg.value == 0.0


def test_mu_length_exp_against_q_length(expw, exp_imm):
    c = Polyline(np.array([[0.25, 0.0], [0.5, 0.0]]))
    ml = measures.mu_length(expw, c, [0.002, 0.004]).value
    hq = measures.hausdorff1_q(expw, c)
    assert ml == pytest.approx(hq, rel=0.10)
    C = exp_imm.C_i
    assert 2 / (C * math.sqrt(math.pi)) * hq <= ml


def test_mu_length_rejects_large_radius(expw):
    with pytest.raises(SpaceError):
        measures.mu_length(expw, Polyline(np.array([[0.25, 0.0], [0.5, 0.0]])), [0.5])


def test_lebesgue_reduction_random_segments(euclid):
    rng = np.random.default_rng(7)
    for _ in range(50):
        a = rng.uniform(-2, 2, 2)
        b = a + rng.uniform(-1, 1, 2)
        L = float(np.linalg.norm(b - a))
        c = Polyline(np.vstack([a, b]))
        assert measures.mu_length(euclid, c, [L / 50, L / 25]).value == pytest.approx(L, rel=0.02)
    for _ in range(5):
        a = rng.uniform(-2, 2, 2)
        b = a + rng.uniform(-1, 1, 2)
        assert measures.q_distance(euclid, a, b) == pytest.approx(np.linalg.norm(b - a), rel=0.02)


def test_q_distance_basics(euclid, expw):
    assert measures.q_distance(euclid, (0, 0), (1, 0)) == pytest.approx(1.0, rel=0.02)
    assert measures.q_distance(expw, (0.3, 0.1), (0.3, 0.1)) == 0.0


def test_q_imm_consistency(expw, exp_imm):
    # a pair on |x| = 0.5 and the d-ball through it
    y = np.array([0.5, 0.0])
    a = 0.02
    z = np.array([0.5 * math.cos(a), 0.5 * math.sin(a)])
    q = measures.q_distance(expw, y, z)
    from qcsurf.geodesics import curve_length
    r = curve_length(expw, Polyline(np.vstack([y, z])))
    mu = measures.ball_measure(expw, y, r)
    C = exp_imm.C_i
    assert q / C <= math.sqrt(mu) <= C * q


def test_hausdorff1_q(euclid, expw, exp_imm):
    seg = Polyline(np.array([[0.0, 0.0], [0.6, 0.8]]))
    assert measures.hausdorff1_q(euclid, seg) == pytest.approx(1.0, rel=1e-9)
    c = Polyline(np.array([[0.3, 0.0], [0.4, 0.1], [0.2, 0.3]]))
    ml = measures.mu_length(expw, c, [0.002, 0.004]).value
    hq = measures.hausdorff1_q(expw, c)
    C = exp_imm.C_i
    assert math.sqrt(math.pi) / (4 * C ** 3) * ml <= hq <= C * math.sqrt(math.pi) / 2 * ml


def test_q_circle_length(expw):
    # a small q-circle around a regular point: Euclidean circle of radius rho / omega(x)
    x = np.array([0.5, 0.2])
    w = float(expw.field(x))
    rho = 0.002
    c = Polyline.circle(x, rho / w, 256)
    L = measures.hausdorff1_q(expw, c)
    assert 2 * rho <= L <= 2 * math.pi * rho * 1.1


def test_q_ball_sandwich(expw, exp_imm):
    out = q_ball_sandwich(expw, (0.3, 0.2), 0.004, exp_imm.C_i)
    assert out["ok"]


def test_hausdorff2_q_sandwich(euclid, expw, exp_imm):
    A = Box(0, 1, 0, 1)
    assert measures.hausdorff2_q(euclid, A) == pytest.approx(math.pi / 2, rel=1e-9)
    B = Box(0.3, 0.4, 0.1, 0.2)
    mu = measures.weighted_area(expw.field, B)
    H = measures.hausdorff2_q(expw, B)
    C = exp_imm.C_i
    assert math.pi / (4 * C ** 2) * mu <= H <= 100 * math.pi * C ** 2 * mu


def test_closed_ball_doubling(expw, exp_imm):
    x, r = (0.3, 0.2), 0.004
    open_ball = measures.ball_measure(expw, x, r)
    closed = measures.ball_measure(expw, x, r * (1 + 1e-6))
    assert closed <= exp_imm.C_i ** 2 * open_ball


def test_grushin_axis_ratio_increasing(grushin):
    radii = [2.0 ** -k for k in range(3, 9)]
    ratios = [measures.ball_measure(grushin, (0.0, 0.0), r) / r ** 2 for r in radii]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_local_ball_measure_limits(expw, euclid):
    assert measures.local_ball_measure(euclid.field, [(0.2, 0.3)], 0.1)[0] == pytest.approx(math.pi * 0.01)
    v = measures.local_ball_measure(expw.field, [(0.0, 0.0)], 1e-3)[0]
    assert v == pytest.approx(math.pi * 1e-6)
