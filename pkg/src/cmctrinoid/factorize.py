"""Spectral factorizations of loops: scalar and matrix Birkhoff, and Iwasawa.

The Iwasawa splitting X = F B (F satisfies the reality condition, B is a
plus loop normalized by B(0) upper triangular with positive diagonal) is
computed through B* B = X* X, i.e. as a positive definite matrix spectral
factorization.  The latter is solved by the quadratically convergent
Wilson-Newton iteration on unit-circle samples.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import loops
from .errors import (
    DegenerateDeterminant,
    IdenticallyZero,
    NegativeSamples,
    NotHermitianSymmetric,
    NotPSD,
    NotRealSymmetric,
    SingularInput,
    SpectralFactorizationDiverged,
    ZeroMultiplicityError,
)
from .loops import LaurentLoop, ScalarLoop, dagger, det2, inv2

MAX_ITERS = 200
STEP_TOL = 1e-12
ZERO_THRESHOLD = 1e-8

_EYE = np.eye(2, dtype=complex)


# ---------------------------------------------------------------------------
# matrix spectral factorization on samples

def _wilson_chunk(g: np.ndarray, max_iters: int, tol: float):
    n = g.shape[-3]
    kpos = np.fft.fftfreq(n, 1.0 / n) > 0
    keep = kpos.astype(float)[:, None, None]
    g0 = g.mean(axis=-3)
    try:
        # LAPACK has no extended precision; the iteration refines the seed anyway
        low = np.linalg.cholesky(g0.astype(complex)).astype(g.dtype)
    except np.linalg.LinAlgError as exc:
        raise SingularInput("mean of X*X is not positive definite") from exc
    b = np.broadcast_to(dagger(low)[..., None, :, :], g.shape).copy()
    eye = np.eye(2, dtype=g.dtype)
    # converged entries are frozen, so each result is independent of the batch
    # it was computed in (chunking over threads stays bit-identical)
    flat_b = b.reshape((-1,) + g.shape[-3:])
    flat_g = g.reshape((-1,) + g.shape[-3:])
    active = np.arange(flat_b.shape[0])
    iters = 0
    err = 0.0
    for iters in range(1, max_iters + 1):
        ba, ga = flat_b[active], flat_g[active]
        bi = inv2(ba)
        hm = dagger(bi) @ ga @ bi - eye
        c = sfft.fft(hm, axis=-3)
        z0 = c[:, 0, :, :] / n
        c = c * keep
        z = sfft.ifft(c, axis=-3)
        z[..., 0, 0] += 0.5 * z0[:, 0, 0].real[:, None]
        z[..., 1, 1] += 0.5 * z0[:, 1, 1].real[:, None]
        z[..., 0, 1] += z0[:, 0, 1][:, None]
        step = np.abs(z).reshape(z.shape[0], -1).max(axis=-1)
        flat_b[active] = ba + z @ ba
        err = float(step.max()) if step.size else 0.0
        active = active[step >= tol]
        if active.size == 0:
            break
    else:
        if err > 1e3 * tol:
            raise SpectralFactorizationDiverged(f"Wilson iteration stalled at step size {err:.2e}")
    return flat_b.reshape(g.shape), iters, err


def spectral_factor_samples(g, max_iters: int = MAX_ITERS, tol: float = STEP_TOL,
                            threads: int = 1) -> tuple[np.ndarray, int, float]:
    """Factor sampled Hermitian positive definite G = B* B with B plus.

    ``g`` has shape (..., N, 2, 2).  B(0) is upper triangular with positive
    diagonal.  Returns (B samples, iterations, final relative step).
    """
    g = np.asarray(g)
    if g.dtype != np.clongdouble:
        g = g.astype(complex)
    g = 0.5 * (g + dagger(g))
    batch = g.shape[:-3]
    flat = g.reshape((-1,) + g.shape[-3:])
    if threads <= 1 or flat.shape[0] < 2 * threads:
        b, it, err = _wilson_chunk(flat, max_iters, tol)
    else:
        parts = np.array_split(flat, threads)
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(lambda p: _wilson_chunk(p, max_iters, tol), parts))
        b = np.concatenate([r[0] for r in res])
        it = max(r[1] for r in res)
        err = max(r[2] for r in res)
    return b.reshape(batch + g.shape[-3:]), it, err


def _check_pd(g: np.ndarray):
    d = det2(g).real
    t = (g[..., 0, 0] + g[..., 1, 1]).real
    if np.any(t <= 0) or np.any(d <= 1e-15 * t * t):
        raise SingularInput("X*X is not positive definite at some sample")


@dataclass
class IwasawaSamples:
    """Batched Iwasawa output on unit-circle samples."""
    F: np.ndarray
    B: np.ndarray
    residual_recon: np.ndarray
    residual_reality: np.ndarray
    residual_plus: np.ndarray
    iterations: int = 0


def iwasawa_samples(x, regularization: float = 0.0, threads: int = 1,
                    tol: float = STEP_TOL, max_iters: int = MAX_ITERS,
                    residuals: bool = True) -> IwasawaSamples:
    """Iwasawa factorization X = F B of sampled loops of shape (..., N, 2, 2).

    ``regularization`` is a relative ridge: G = X*X + eps * |G| * I.
    Extended precision (clongdouble) input is kept in extended precision.
    """
    x = np.asarray(x)
    if x.dtype != np.clongdouble:
        x = x.astype(complex)
    g = dagger(x) @ x
    if regularization > 0:
        scale = np.abs(g).reshape(g.shape[:-3] + (-1,)).max(axis=-1)
        g = g + (regularization * scale)[..., None, None, None] * _EYE
    _check_pd(g)
    b, it, _ = spectral_factor_samples(g, max_iters=max_iters, tol=tol, threads=threads)
    f = x @ inv2(b)
    if residuals:
        red = tuple(range(x.ndim - 3, x.ndim))
        rec = np.abs(f @ b - x).max(axis=red)
        real = np.abs(f @ dagger(f) - _EYE).max(axis=red)
        plus = loops.negative_mass(b)
    else:
        rec = real = plus = np.zeros(x.shape[:-3])
    return IwasawaSamples(f, b, rec, real, plus, it)


@dataclass
class IwasawaResult:
    F: LaurentLoop
    B: LaurentLoop
    residual_recon: float
    residual_reality: float
    residual_plus: float
    iterations: int = 0

    @property
    def B0(self) -> np.ndarray:
        return self.B.coeff(0)


def iwasawa(x: LaurentLoop, regularization: float = 0.0, band: int | None = None) -> IwasawaResult:
    """Iwasawa factorization of a single loop."""
    res = iwasawa_samples(x.samples, regularization=regularization)
    n = x.nsamples
    band = (n - 2) // 2 if band is None else band
    f = LaurentLoop.from_samples(res.F, band, radius=x.radius)
    b = LaurentLoop.from_samples(res.B, band, radius=x.radius)
    return IwasawaResult(f, b, float(res.residual_recon), float(res.residual_reality),
                         float(res.residual_plus), res.iterations)


# ---------------------------------------------------------------------------
# circle zeros

def fill_masked(samples, mask, band: int | None = None, axis: int = 0) -> np.ndarray:
    """Replace masked samples by a least-squares trigonometric fit of the rest."""
    samples = np.array(samples, dtype=complex)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return samples
    n = samples.shape[axis]
    if band is None:
        band = max(1, min(n // 4, (n - 2 * int(mask.sum())) // 2 - 1))
    th = 2 * np.pi * np.arange(n) / n
    k = np.arange(-band, band + 1)
    vand = np.exp(1j * np.outer(th, k))
    moved = np.moveaxis(samples, axis, 0)
    flat = moved.reshape(n, -1)
    coef, *_ = np.linalg.lstsq(vand[~mask], flat[~mask], rcond=None)
    flat = flat.copy()
    flat[mask] = vand[mask] @ coef
    return np.moveaxis(flat.reshape(moved.shape), 0, axis)


def locate_circle_zeros(vals, threshold: float = ZERO_THRESHOLD, check_order: bool = True) -> list[complex]:
    """Unit-circle zeros of a nonnegative sampled function.

    Candidates are samples below ``threshold * max``; each cluster is located
    by a parabola through the three samples around its minimum.  Zeros are
    assumed to be of order exactly two.
    """
    v = np.asarray(vals, dtype=float)
    n = v.size
    vmax = v.max()
    cand = np.flatnonzero(v < threshold * vmax)
    if cand.size == 0:
        return []
    # group cyclically adjacent candidates
    groups = []
    cur = [cand[0]]
    for j in cand[1:]:
        if j == cur[-1] + 1:
            cur.append(j)
        else:
            groups.append(cur)
            cur = [j]
    groups.append(cur)
    if len(groups) > 1 and groups[0][0] == 0 and groups[-1][-1] == n - 1:
        groups[0] = groups.pop() + groups[0]
    h = 2 * np.pi / n
    zeros = []
    for grp in groups:
        j0 = grp[int(np.argmin(v[grp]))]
        fm, f0, fp = v[(j0 - 1) % n], v[j0], v[(j0 + 1) % n]
        den = fm - 2 * f0 + fp
        off = 0.5 * (fm - fp) / den if den > 0 else 0.0
        off = float(np.clip(off, -1.0, 1.0))
        theta = (j0 + off) * h
        if check_order:
            # local order from the decay of two neighbours on the far side
            s = 1 if off <= 0 else -1
            d1 = abs(s - off) * h
            d2 = abs(2 * s - off) * h
            f1, f2 = v[(j0 + s) % n], v[(j0 + 2 * s) % n]
            if f1 > 0 and f2 > 0:
                order = np.log(f2 / f1) / np.log(d2 / d1)
                if order > 3.0:
                    raise ZeroMultiplicityError(f"zero near theta={theta:.4f} has order about {order:.1f}")
        zeros.append(complex(np.exp(1j * theta)))
    return zeros


@dataclass
class ScalarFactorization:
    h: ScalarLoop
    zeros: list
    residual: float


def scalar_spectral_factor(f: ScalarLoop, tol: float = 1e-10) -> ScalarFactorization:
    """Factor a nonnegative scalar loop as f = h* h with h plus and h(0) > 0."""
    s = np.asarray(f.samples)
    n = s.size
    scale = np.abs(s).max()
    if scale == 0:
        raise IdenticallyZero("f vanishes identically")
    if np.abs(f.coeffs - np.conj(f.coeffs[::-1])).max() > tol * max(1.0, scale):
        raise NotRealSymmetric("f is not real on the unit circle")
    v = s.real
    if v.min() < -tol * max(1.0, scale):
        raise NegativeSamples(f"f has negative samples (min {v.min():.3e})")
    v = np.maximum(v, 0.0)
    lam = loops.unit_samples(n)
    zeros = locate_circle_zeros(v)
    g = v.copy()
    mask = np.zeros(n, dtype=bool)
    for a in zeros:
        d2 = np.abs(lam - a) ** 2
        mask |= np.abs(lam - a) < 0.6 * 2 * np.pi / n
        with np.errstate(divide="ignore", invalid="ignore"):
            g = g / d2
    g = fill_masked(g, mask).real
    if g.min() <= 0:
        raise NegativeSamples("quotient by circle zeros is not positive")
    logg = np.log(g)
    gp = np.exp(loops.plus_part(logg[:, None, None], half_constant=True)[:, 0, 0])
    h = gp
    for a in zeros:
        h = h * (1 - np.conj(a) * lam)
    resid = float(np.abs(np.abs(h) ** 2 - v).max())
    band = (n - 2) // 2
    return ScalarFactorization(ScalarLoop.from_samples(h, band, radius=f.radius), zeros, resid)


# ---------------------------------------------------------------------------
# matrix singular Birkhoff

class BirkhoffResult:
    """C, f with f X = C* C; unpacks as the pair (C, f)."""

    def __init__(self, C, f, zeros, residual, c_samples):
        self.C = C
        self.f = f
        self.zeros = zeros
        self.residual = residual
        self.c_samples = c_samples

    def __iter__(self):
        yield self.C
        yield self.f


def _extraction_factor(lam, a, p):
    """E(lambda) = I - P + (1 - conj(a) lambda) P on samples."""
    e = (1 - np.conj(a) * lam)[:, None, None] * p + (_EYE - p)
    einv = (1.0 / (1 - np.conj(a) * lam))[:, None, None] * p + (_EYE - p)
    return e, einv


def birkhoff_samples(g, max_zeros: int = 8, tol: float = STEP_TOL):
    """Factor PSD sampled G = C* C allowing double zeros of det G on the circle."""
    g = np.array(g, dtype=complex)
    n = g.shape[0]
    lam = loops.unit_samples(n)
    factors = []
    zeros = []
    for _ in range(max_zeros):
        d = det2(g).real
        found = locate_circle_zeros(np.maximum(d, 0.0), check_order=False)
        if not found:
            break
        a = found[0]
        ga = loops.value_at(g, a, axis=0)
        w, v = np.linalg.eigh(0.5 * (ga + dagger(ga)))
        vec = v[:, 0]
        p = np.outer(vec, vec.conj())
        e, einv = _extraction_factor(lam, a, p)
        mask = np.abs(lam - a) < 0.6 * 2 * np.pi / n
        with np.errstate(divide="ignore", invalid="ignore"):
            g = dagger(einv) @ g @ einv
        g = fill_masked(g, mask)
        g = 0.5 * (g + dagger(g))
        factors.append(e)
        zeros.append(a)
    _check_pd(g)
    c, _, _ = spectral_factor_samples(g, tol=tol)
    for e in reversed(factors):
        c = c @ e
    return c, zeros


def _hermitian_check(x: LaurentLoop, tol: float):
    c = x.coeffs
    err = np.abs(c - dagger(c[::-1])).max()
    if err > tol * max(1.0, np.abs(c).max()):
        raise NotHermitianSymmetric(f"X differs from X* by {err:.2e}")


def matrix_singular_birkhoff(x: LaurentLoop, tol: float = 1e-9) -> BirkhoffResult:
    """Return (C, f) with f = x11 and f X = C* C, C plus, C(0) upper triangular.

    Double zeros of det(f X) on the unit circle are split off one at a time
    with the factor E = I - P + (1 - conj(a) lambda) P, P the projection on
    the kernel of (f X)(a); the regular remainder goes to the Wilson iteration.
    """
    _hermitian_check(x, tol)
    s = np.asarray(x.samples)
    n = s.shape[0]
    sh = 0.5 * (s + dagger(s))
    ev = np.linalg.eigvalsh(sh)
    scale = np.abs(ev).max()
    if ev.min() < -tol * max(1.0, scale):
        raise NotPSD(f"X has a negative eigenvalue {ev.min():.3e}")
    d = det2(sh).real
    if np.abs(d).max() <= 1e-14 * max(scale, 1e-300) ** 2:
        raise DegenerateDeterminant("det X vanishes identically")
    fvals = sh[:, 0, 0].real
    if fvals.max() <= 0:
        raise DegenerateDeterminant("x11 vanishes identically")
    g = fvals[:, None, None] * sh
    c, zeros = birkhoff_samples(g)
    band = (n - 2) // 2
    resid = float(np.abs(dagger(c) @ c - g).max())
    cl = LaurentLoop.from_samples(c, band, radius=x.radius)
    fl = ScalarLoop.from_samples(fvals, band, radius=x.radius)
    return BirkhoffResult(cl, fl, zeros, resid, c)
