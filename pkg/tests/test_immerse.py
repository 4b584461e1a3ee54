import numpy as np
import pytest
from scipy.linalg import expm
from scipy.special import ellipe

from cmctrinoid.errors import InsufficientEndDepth, WeightOutOfRange
from cmctrinoid.immerse import (ImmersionParams, MeshSpec, delaunay_frame, delaunay_profile,
                                delaunay_surface, end_asymptotics, hopf_differential,
                                metric_density, metric_hopf_diagnostics, r3_to_su2, su2_to_r3,
                                sym_frames, sym_point, symmetry_residual, trinoid_surface)
from cmctrinoid.loops import LaurentLoop, unit_samples
from cmctrinoid.potentials import Weights, delaunay_residue_samples


def axis_fit(v):
    """Least-squares axis (point, direction) and radii of points on a surface of revolution."""
    c = v.mean(axis=0)
    _, _, vt = np.linalg.svd(v - c)
    ax = vt[0]
    d = v - c
    r = np.linalg.norm(d - (d @ ax)[:, None] * ax, axis=1)
    return c, ax, r


def test_su2_roundtrip():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    assert np.allclose(su2_to_r3(r3_to_su2(x)), x)
    s = r3_to_su2(x)
    assert np.allclose(s + np.conj(np.swapaxes(s, -1, -2)), 0)


def test_sym_of_constant_frame_is_origin():
    rng = np.random.default_rng(1)
    u = expm(np.array([[0.3j, 0.5 + 0.2j], [-0.5 + 0.2j, -0.3j]]))
    F = np.broadcast_to(u, (32, 2, 2))
    p, skew = sym_frames(F)
    assert np.abs(p).max() < 1e-14


def test_params_validation():
    with pytest.raises(ValueError):
        ImmersionParams(nsamples=64, band=64)
    with pytest.raises(ValueError):
        ImmersionParams(lambda0=0.5)
    assert ImmersionParams().effective_band == 63


def test_delaunay_period_closure():
    params = ImmersionParams(nsamples=64, band=32)
    for zeta in (0.0, 0.4 + 0.3j):
        phi = delaunay_frame(0.75, np.array([zeta, zeta + 2j * np.pi]), params)
        p0, d0 = sym_point(LaurentLoop.from_samples(phi[0], 31), params)
        p1, d1 = sym_point(LaurentLoop.from_samples(phi[1], 31), params)
        assert np.all(np.isfinite(p0))
        assert np.linalg.norm(p1 - p0) <= 1e-6
        assert d0["skew_residual"] <= 1e-8


def test_delaunay_frame_closed_form():
    params = ImmersionParams(nsamples=16, band=8)
    a = delaunay_residue_samples(-1.0, params.lam)
    got = delaunay_frame(-1.0, 0.7 - 0.2j, params)
    want = np.stack([expm((0.7 - 0.2j) * m) for m in a])
    assert np.abs(got - want).max() < 1e-12


def test_cylinder_radius():
    m = delaunay_surface(1.0, xrange=(-6, 6), nx=61, ny=48)
    _, _, r = axis_fit(m.vertices)
    assert np.abs(r - 0.5).max() <= 1e-6
    assert m.diagnostics["closure_residual"] < 1e-10


def test_unduloid_necksize():
    m = delaunay_surface(0.75)
    _, _, r = axis_fit(m.vertices)
    assert abs(r.min() - 0.25) <= 1e-3
    assert abs(r.max() - 0.75) <= 1e-3


def test_nodoid_self_intersects():
    m = delaunay_surface(-1.0, xrange=(-8, 8), nx=161)
    c, ax, r = axis_fit(m.vertices)
    s = (m.vertices - c) @ ax
    ring = s.reshape(161, -1).mean(axis=1)
    # the meridian runs backwards along the axis over part of each period
    steps = np.diff(ring)
    assert np.any(steps > 0) and np.any(steps < 0)
    neck = (1 - np.sqrt(2)) / 2   # signed necksize for w = -1
    assert abs(r.min() - abs(neck)) < 1e-2


def test_delaunay_surface_rejects_bad_weight():
    with pytest.raises(WeightOutOfRange):
        delaunay_surface(1.5)
    with pytest.raises(WeightOutOfRange):
        delaunay_surface(0.0)


def test_profile_axial_period_is_ellipse_perimeter():
    # the unduloid meridian is the roulette of a focus of an ellipse with
    # major semi-axis 1/(2H) and eccentricity 1 - 2 n H; one period = one turn
    for w in (0.75, 0.5, 0.9):
        prof = delaunay_profile(w)
        n = (1 - np.sqrt(1 - w)) / 2
        e = 1 - 2 * n
        assert prof.axial_period == pytest.approx(4 * 0.5 * ellipe(e * e), rel=1e-8)
        assert prof.neck == pytest.approx(n, abs=1e-12)


@pytest.mark.parametrize("w", [0.75, -1.0])
def test_profile_is_conformal_and_cmc(w):
    prof = delaunay_profile(w, periods=1.0, pts_per_period=8000)
    s1, r1 = prof.daxial, prof.dradius
    r = prof.radius
    # conformal: the meridian speed equals the circle radius
    assert np.abs(np.hypot(s1, r1) - np.abs(r)).max() < 1e-9
    x = prof.x
    s2, r2 = np.gradient(s1, x), np.gradient(r1, x)
    sp = np.hypot(s1, r1)
    k1 = (s1 * r2 - r1 * s2) / sp ** 3
    k2 = s1 / (r * sp)
    hmean = 0.5 * (k2 - k1)
    inner = slice(10, -10)
    assert np.abs(np.abs(hmean[inner]) - 1).max() < 1e-4


def test_metric_density_and_hopf():
    assert metric_density(np.eye(2), 0.5) == pytest.approx(1.0)
    b0 = np.diag([2.0, 0.5])
    assert metric_density(b0, 0.5) == pytest.approx(16.0)
    assert hopf_differential(0.5, 0.25, H=2.0) == pytest.approx(-0.125)
    assert hopf_differential(1.0, 1.0, lam0=-1.0) == pytest.approx(2.0)


def test_discrete_metric_on_fine_patch():
    m = delaunay_surface(0.75, xrange=(-2, 2), nx=81, ny=128)
    diag = metric_hopf_diagnostics(m)
    assert diag["within_5_percent"]
    assert diag["max_relative_metric_error"] <= 0.05


def test_delaunay_end_fit_is_zero():
    m = delaunay_surface(0.75, xrange=(-25, 1), nx=261)
    rep = end_asymptotics(m, "delaunay", min_periods=3)
    assert max(rep.c0) < 1e-3 * rep.neck


@pytest.fixture(scope="module")
def coarse_trinoid():
    W = Weights(0.75, 0.75, 0.75)
    return trinoid_surface(W, ImmersionParams(nsamples=64, band=32),
                           MeshSpec(rays=32, end_depth=1.0, rings_per_period=8, density=0.5))


def test_coarse_trinoid_structure(coarse_trinoid):
    m = coarse_trinoid
    d = m.diagnostics
    assert d["vertices"] == m.nvertices
    t = m.triangles()
    assert t.min() >= 0 and t.max() < m.nvertices
    assert np.all(np.isfinite(m.vertices))
    assert d["closure_relative"] < 1e-5
    assert d["max_factorization_residual"] < 1e-8
    assert set(m.ends) == {"0", "1", "inf"}
    for info in d["ends"].values():
        assert not info["truncated"]


def test_coarse_trinoid_symmetry(coarse_trinoid):
    s = symmetry_residual(coarse_trinoid)
    assert s["relative"] < 1e-4
    assert s["determinant"] == pytest.approx(-1.0)


def test_coarse_trinoid_threads_identical(coarse_trinoid):
    W = Weights(0.75, 0.75, 0.75)
    m2 = trinoid_surface(W, ImmersionParams(nsamples=64, band=32, threads=2),
                         MeshSpec(rays=32, end_depth=1.0, rings_per_period=8, density=0.5))
    assert np.array_equal(m2.vertices, coarse_trinoid.vertices)


def test_coarse_trinoid_short_ends(coarse_trinoid):
    with pytest.raises(InsufficientEndDepth):
        end_asymptotics(coarse_trinoid, "0")


def test_scalene_threads_identical():
    # unequal ends give rays with different RK8 step counts
    W = Weights.from_necksizes(0.3, 0.25, 0.2)
    spec = MeshSpec(rays=32, end_depth=1.0, rings_per_period=8, density=0.5)
    m1 = trinoid_surface(W, ImmersionParams(nsamples=64, band=32), spec)
    m3 = trinoid_surface(W, ImmersionParams(nsamples=64, band=32, threads=3), spec)
    assert np.array_equal(m1.vertices, m3.vertices)
    assert m1.diagnostics["closure_relative"] < 1e-5
