import numpy as np
import pytest
from scipy.linalg import expm

from cmctrinoid.errors import PoleTooClose
from cmctrinoid.holonomy import (Arcs, FrameSolution, Segments, TransportStats, eigenvalue_curves,
                                 integrate, integrate_arc, loop_monodromy, monodromies, rk8_step,
                                 transport)
from cmctrinoid.loops import LaurentLoop, unit_samples
from cmctrinoid.potentials import (DelaunayPotential, Potential, Weights, delaunay_residue_samples,
                                   mu_w, nu_w, trinoid_potential)


class Zero(Potential):
    def matrix(self, z, lam):
        shape = np.broadcast_shapes(np.shape(z), np.shape(lam))
        return np.zeros(shape + (2, 2), dtype=complex)


def test_zero_potential_keeps_initial_value():
    rng = np.random.default_rng(0)
    phi0 = rng.normal(size=(16, 2, 2)) + 1j * rng.normal(size=(16, 2, 2))
    out = integrate(Zero(), [0.1, 0.5 + 0.5j, 2.0], phi0, nsamples=16)
    assert np.array_equal(out, phi0)


def test_euler_closed_form_on_arc():
    n = 32
    xi = DelaunayPotential(0.75)
    lam = unit_samples(n)
    a = delaunay_residue_samples(0.75, lam)
    phi0 = np.stack([expm(0.1 * m) for m in a])
    got = integrate_arc(xi, 0.0, 1.0, 0.0, np.pi / 2, phi0, nsamples=n)
    want = phi0 @ np.stack([expm(0.5j * np.pi * m) for m in a])
    assert np.abs(got - want).max() < 1e-9


def test_euler_closed_form_on_segment():
    n = 16
    xi = DelaunayPotential(-1.0)
    a = delaunay_residue_samples(-1.0, unit_samples(n))
    got = integrate(xi, [1.0, 3.0], np.broadcast_to(np.eye(2), (n, 2, 2)), nsamples=n)
    want = np.stack([expm(np.log(3.0) * m) for m in a])
    assert np.abs(got - want).max() < 1e-9


def test_integrate_loop_input():
    n = 16
    phi0 = LaurentLoop.identity(n)
    out = integrate(DelaunayPotential(0.5), [1.0, 1.5], phi0, nsamples=n)
    assert isinstance(out, LaurentLoop)
    assert out.nsamples == n


def test_pole_too_close():
    xi = DelaunayPotential(0.75)
    with pytest.raises(PoleTooClose):
        integrate(xi, [-1.0, 1.0], np.broadcast_to(np.eye(2), (8, 2, 2)), nsamples=8)


@pytest.mark.parametrize("w", [0.75, 0.5, -1.0, -2.0])
def test_delaunay_monodromy_eigenvalues(w):
    n = 128
    lam = unit_samples(n)
    phi0 = np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy()
    m = loop_monodromy(DelaunayPotential(w), 0.5 - 0.5j, [0.0], [0.3], phi0, lam)[0]
    a = delaunay_residue_samples(w, lam)
    want = np.stack([expm(2j * np.pi * x) for x in a])
    assert np.abs(m - want).max() < 1e-8
    ec = eigenvalue_curves(m)
    mu = mu_w(w, lam)
    e = np.stack([np.exp(2j * np.pi * mu), np.exp(-2j * np.pi * mu)], axis=1)
    dev = np.minimum(np.abs(ec.rho - e).max(axis=1), np.abs(ec.rho - e[:, ::-1]).max(axis=1))
    assert dev.max() < 1e-7


def test_eigen_curves_identity():
    ec = eigenvalue_curves(np.broadcast_to(np.eye(2, dtype=complex), (32, 2, 2)))
    assert np.allclose(ec.rho, 1)
    assert np.allclose(ec.drho_at_1, 0)


def test_trinoid_monodromy():
    W = Weights(0.75, 0.75, 0.75)
    ms = monodromies(trinoid_potential(W), nsamples=64)
    assert ms.product_residual < 1e-9
    assert ms.det_residual() < 1e-9
    lam = unit_samples(64)
    for k, m in enumerate((ms.M1, ms.M2, ms.M3)):
        tr = np.trace(m.samples, axis1=-2, axis2=-1)
        nu = nu_w(W.w[k], lam)
        # trace of a matrix with eigenvalues exp(+-2 pi i nu)
        assert np.abs(tr - 2 * np.cos(2 * np.pi * nu)).max() < 1e-8
        assert np.abs(m.samples[0] - np.eye(2)).max() < 1e-9


def test_frame_solution_and_stats():
    xi = trinoid_potential(Weights(0.75, 0.75, 0.75))
    fs = FrameSolution(xi, 0.5 - 0.5j, np.broadcast_to(np.eye(2), (16, 2, 2)), nsamples=16)
    phi = fs.along([0.5 + 0.5j])
    assert fs.det_drift(phi) < 1e-9
    assert fs.stats.steps > 0


def test_batched_transport_matches_single():
    xi = trinoid_potential(Weights(0.75, 0.75, 0.75))
    lam = unit_samples(16)
    y0 = np.broadcast_to(np.eye(2, dtype=complex), (3, 16, 2, 2)).copy()
    za = np.array([0.5 - 0.5j, 0.5 - 0.5j, 0.2 - 0.3j])
    zb = np.array([0.5 + 0.5j, -0.5j, 2.0 - 0.1j])
    st = TransportStats()
    both = transport(xi, Segments(za, zb), y0, lam, stats=st)
    one = transport(xi, Segments(za[2:], zb[2:]), y0[2:], lam)
    assert np.array_equal(both[2], one[0])
    assert st.steps > 0


def test_arc_path_geometry():
    arc = Arcs([0.0], [2.0], [0.0], [np.pi])
    assert arc.z(0.5, np.array([0])) == pytest.approx(2j)
    seg = Segments([0.0], [1 + 1j])
    assert seg.z(0.25, np.array([0])) == pytest.approx(0.25 + 0.25j)


def test_rk8_exponential():
    a = np.array([[0.0, 1.0], [-1.0, 0.0]], dtype=complex)
    y = np.eye(2, dtype=complex)
    h = 0.1
    for i in range(10):
        y = rk8_step(y, lambda t: a, i * h, h)
    assert np.abs(y - expm(a)).max() < 1e-13
