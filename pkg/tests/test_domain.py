import numpy as np
import pytest

from cmctrinoid.domain import bfs_levels, build_domain, cyl_scale, edges, end_point, min_angle


@pytest.fixture(scope="module")
def dom():
    return build_domain()


def test_end_point():
    u = np.array([0.1 + 0.2j, -0.3j])
    assert np.allclose(end_point(0, u), u)
    assert np.allclose(end_point(1, u), 1 - u)
    assert np.allclose(end_point("inf", u), 1 / u)


def test_cyl_scale_near_punctures():
    assert cyl_scale(1e-3) == pytest.approx(1e-3, rel=1e-2)
    assert cyl_scale(1 + 1e-3j) == pytest.approx(1e-3, rel=1e-2)
    assert cyl_scale(1e3) == pytest.approx(1e3, rel=1e-2)


def test_halves_are_mirror_images(dom):
    assert np.array_equal(dom.upper.z, dom.lower.z.conj())
    assert np.all(dom.lower.z.imag <= 1e-14)
    # shared axis vertices are real
    assert np.abs(dom.lower.z[dom.lower.axis01].imag).max() == 0


def test_triangles_counterclockwise(dom):
    for half in (dom.lower, dom.upper):
        a = half.z[half.tris]
        area = ((a[:, 1] - a[:, 0]).conj() * (a[:, 2] - a[:, 0])).imag
        assert np.all(area > 0)


def test_rings_on_chart_boundary(dom):
    L = dom.lower
    for end in (0, 1, "inf"):
        z = L.z[L.ring[end]]
        u = {0: z, 1: 1 - z, "inf": 1 / z}[end]
        assert np.allclose(np.abs(u), dom.rho)
    assert dom.info["min_angle_deg"] > 10


def test_cuts_on_real_axis(dom):
    L = dom.lower
    assert np.all(L.z[L.cut_neg].real < 0) and np.all(L.z[L.cut_pos].real > 1)
    assert np.abs(L.z[L.cut_neg].imag).max() < 1e-14


def test_bfs_reaches_everything(dom):
    L = dom.lower
    lev = bfs_levels(L.z.size, L.tris, [0])
    reached = {0} | {int(c) for _, ch in lev for c in ch}
    assert len(reached) == L.z.size
    e = edges(L.tris)
    for par, ch in lev:
        pairs = np.sort(np.stack([par, ch], axis=1), axis=1)
        # every parent-child hop is a mesh edge
        assert all(((e == p).all(axis=1)).any() for p in pairs[:5])


def test_density_refines(dom):
    fine = build_domain(density=1.5)
    assert fine.lower.z.size > dom.lower.z.size


def test_seed_determinism():
    a, b = build_domain(seed=3), build_domain(seed=3)
    assert np.array_equal(a.lower.z, b.lower.z)
    assert np.array_equal(a.lower.tris, b.lower.tris)


def test_odd_rays_rejected():
    with pytest.raises(ValueError):
        build_domain(nrays=63)


def test_min_angle_equilateral():
    z = np.array([0, 1, np.exp(1j * np.pi / 3)])
    assert min_angle(z, np.array([[0, 1, 2]])) == pytest.approx(60)
