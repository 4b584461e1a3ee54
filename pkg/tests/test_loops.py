import numpy as np
import pytest

from cmctrinoid.errors import LoopError
from cmctrinoid.loops import (LaurentLoop, ScalarLoop, coeffs_to_samples, inv2, plus_part,
                              samples_to_coeffs, spectral_derivative_at, unit_samples, value_at)


def random_loop(rng, band=4, n=32, decay=0.5):
    k = np.abs(np.arange(-band, band + 1))
    c = (rng.normal(size=(2 * band + 1, 2, 2)) + 1j * rng.normal(size=(2 * band + 1, 2, 2)))
    return LaurentLoop(c * decay ** k[:, None, None], nsamples=n)


def test_fft_roundtrip():
    rng = np.random.default_rng(1)
    x = random_loop(rng)
    c = samples_to_coeffs(x.samples, x.band)
    assert np.allclose(c, x.coeffs, atol=1e-13)
    assert np.allclose(coeffs_to_samples(c, x.nsamples), x.samples, atol=1e-13)


def test_star_matches_pointwise_adjoint():
    rng = np.random.default_rng(2)
    x = random_loop(rng)
    s = x.star()
    for lam in unit_samples(x.nsamples):
        # X*(lam) = X(1/conj lam)^dagger, evaluated directly
        direct = x.eval(1 / np.conj(lam)).conj().T
        assert np.abs(s.eval(lam) - direct).max() < 1e-12
    assert np.abs(s.samples - np.conj(np.swapaxes(x.samples, -1, -2))).max() < 1e-12


def test_star_off_circle():
    rng = np.random.default_rng(3)
    x = random_loop(rng)
    lam = 0.7 * np.exp(0.3j)
    assert np.allclose(x.star().eval(lam), x.eval(1 / np.conj(lam)).conj().T, atol=1e-12)


def test_theta_derivative_constant_is_zero():
    x = LaurentLoop.constant(np.array([[1, 2], [3, 4]]), nsamples=16, band=2)
    assert np.abs(x.theta_derivative().samples).max() == 0


def test_theta_derivative_finite_difference():
    rng = np.random.default_rng(4)
    x = random_loop(rng)
    d = x.theta_derivative()
    h = 1e-5
    for th in np.linspace(0, 2 * np.pi, 7, endpoint=False):
        fd = (x.eval(np.exp(1j * (th + h))) - x.eval(np.exp(1j * (th - h)))) / (2 * h)
        assert np.abs(fd - d.eval(np.exp(1j * th))).max() < 1e-8


def test_sup_norm_identity():
    for rho in (1.0, 0.5, 0.1):
        assert LaurentLoop.identity(16).sup_norm(rho) == pytest.approx(1.0)


def test_sup_norm_brute_force():
    rng = np.random.default_rng(5)
    x = random_loop(rng)
    s = x.sup_norm()
    lam = unit_samples(4 * x.nsamples)
    brute = max(np.linalg.norm(x.eval(l), 2) for l in lam)
    assert s == pytest.approx(brute, rel=1e-12)
    assert s >= np.linalg.norm(x.samples, ord=2, axis=(-2, -1)).max() - 1e-12


def test_eval_examples():
    assert np.allclose(LaurentLoop.identity(8).eval(0.3 + 0.2j), np.eye(2))
    e12 = np.array([[0, 1], [0, 0]])
    x = LaurentLoop.monomial(-1, e12)
    assert np.allclose(x.eval(2.0), 0.5 * e12)
    with pytest.raises(LoopError):
        x.eval(0)


def test_product_matches_pointwise():
    rng = np.random.default_rng(6)
    a, b = random_loop(rng, 3), random_loop(rng, 2)
    p = a @ b
    lam = np.exp(0.9j)
    assert np.allclose(p.eval(lam), a.eval(lam) @ b.eval(lam), atol=1e-12)
    assert p.truncation_residual == 0


def test_product_truncation_recorded():
    rng = np.random.default_rng(7)
    a = random_loop(rng, 3, decay=1.0)
    p = a.matmul(a, kmax=4)
    assert p.band == 4
    assert p.truncation_residual > 0


def test_scalar_loop_star_and_eval():
    f = ScalarLoop([1, 2, 1], nsamples=8)  # lam^-1 + 2 + lam
    assert f.eval(1.0) == pytest.approx(4.0)
    assert f.eval(-1.0) == pytest.approx(0.0)
    assert np.allclose(f.star().coeffs, f.coeffs)


def test_bad_shapes_rejected():
    with pytest.raises(LoopError):
        LaurentLoop(np.zeros((2, 2, 2)))
    with pytest.raises(LoopError):
        LaurentLoop(np.zeros((5, 2, 2)), nsamples=4)
    with pytest.raises(LoopError):
        samples_to_coeffs(np.zeros((8, 2, 2)), 4)


def test_sample_helpers():
    rng = np.random.default_rng(8)
    x = random_loop(rng, 3, n=64)
    assert np.allclose(value_at(x.samples, 1.0), x.eval(1.0), atol=1e-12)
    d = spectral_derivative_at(x.samples, 1.0)
    k = np.arange(-3, 4)
    assert np.allclose(d, 1j * np.tensordot(k, x.coeffs, axes=1), atol=1e-11)
    m = rng.normal(size=(5, 2, 2)) + 1j * rng.normal(size=(5, 2, 2))
    assert np.allclose(inv2(m) @ m, np.eye(2), atol=1e-12)


def test_plus_part_drops_negative_modes():
    rng = np.random.default_rng(9)
    x = random_loop(rng, 3, n=32)
    p = plus_part(x.samples)
    c = samples_to_coeffs(p, 3)
    assert np.abs(c[:3]).max() < 1e-13
    assert np.allclose(c[3:], x.coeffs[3:], atol=1e-13)
