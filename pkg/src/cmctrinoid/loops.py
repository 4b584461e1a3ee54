"""Matrix and scalar Laurent loops on circles in the spectral plane.

A loop is stored as a coefficient band X_k, k = -K..K, together with the
number N of equispaced unit-circle samples used for pointwise work.  The
sample and coefficient views are related by the FFT,

    X(lambda_j) = sum_k X_k lambda_j**k,    lambda_j = exp(2 pi i j / N).

Most of the pipeline works directly on sample arrays of shape (..., N, 2, 2)
for speed; the array helpers at the bottom of this module are shared by the
factorization and integration code.
"""

from __future__ import annotations

import numpy as np

from .errors import LoopError

K_MAX = 64


def unit_samples(n: int) -> np.ndarray:
    """The N-th roots of unity exp(2 pi i j / N), j = 0..N-1."""
    return np.exp(2j * np.pi * np.arange(n) / n)


def mode_numbers(n: int) -> np.ndarray:
    """Integer Fourier mode of each FFT slot, with the Nyquist slot set to 0."""
    k = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
    if n % 2 == 0:
        k[n // 2] = 0
    return k


def samples_to_coeffs(samples, band: int, axis: int = -3) -> np.ndarray:
    """Coefficients X_{-K..K} of a sampled loop (stacked along ``axis``)."""
    samples = np.asarray(samples, dtype=complex)
    n = samples.shape[axis]
    if n < 2 * band + 1:
        raise LoopError(f"{n} samples cannot resolve band {band}")
    c = np.fft.fft(samples, axis=axis) / n
    idx = np.arange(-band, band + 1) % n
    return np.take(c, idx, axis=axis)


def coeffs_to_samples(coeffs, n: int, axis: int = -3) -> np.ndarray:
    """Samples at the N-th roots of unity of a band given as X_{-K..K}."""
    coeffs = np.asarray(coeffs, dtype=complex)
    band = (coeffs.shape[axis] - 1) // 2
    if n < 2 * band + 1:
        raise LoopError(f"{n} samples cannot resolve band {band}")
    shape = list(coeffs.shape)
    shape[axis] = n
    wrapped = np.zeros(shape, dtype=complex)
    idx = np.arange(-band, band + 1) % n
    sl = [slice(None)] * coeffs.ndim
    sl[axis] = idx
    wrapped[tuple(sl)] = coeffs
    return np.fft.ifft(wrapped, axis=axis) * n


def spectral_derivative(samples, axis: int = -3) -> np.ndarray:
    """d/dtheta of a sampled loop (Nyquist mode dropped)."""
    samples = np.asarray(samples, dtype=complex)
    n = samples.shape[axis]
    c = np.fft.fft(samples, axis=axis)
    shape = [1] * samples.ndim
    shape[axis] = n
    c = c * (1j * mode_numbers(n)).reshape(shape)
    return np.fft.ifft(c, axis=axis)


def spectral_derivative_at(samples, lam0: complex = 1.0, axis: int = -3) -> np.ndarray:
    """Value of d/dtheta of a sampled loop at the unit-circle point ``lam0``."""
    samples = np.asarray(samples, dtype=complex)
    n = samples.shape[axis]
    k = mode_numbers(n)
    c = np.fft.fft(samples, axis=axis) / n
    w = 1j * k * lam0 ** k
    return np.tensordot(np.moveaxis(c, axis, -1), w, axes=([-1], [0]))


def value_at(samples, lam0: complex = 1.0, axis: int = -3) -> np.ndarray:
    """Trigonometric interpolant of a sampled loop evaluated at ``lam0``."""
    samples = np.asarray(samples, dtype=complex)
    n = samples.shape[axis]
    k = mode_numbers(n)
    if np.isclose(lam0, 1.0):
        return np.take(samples, 0, axis=axis)
    c = np.fft.fft(samples, axis=axis) / n
    return np.tensordot(np.moveaxis(c, axis, -1), lam0 ** k, axes=([-1], [0]))


def plus_part(samples, axis: int = -3, half_constant: bool = False) -> np.ndarray:
    """Project a sampled loop onto its non-negative Fourier modes."""
    samples = np.asarray(samples, dtype=complex)
    n = samples.shape[axis]
    c = np.fft.fft(samples, axis=axis)
    k = np.fft.fftfreq(n, 1.0 / n)
    keep = (k > 0).astype(float)
    keep[0] = 0.5 if half_constant else 1.0
    shape = [1] * samples.ndim
    shape[axis] = n
    return np.fft.ifft(c * keep.reshape(shape), axis=axis)


def negative_mass(samples, axis: int = -3) -> np.ndarray:
    """Largest magnitude of a negative-index coefficient (per leading batch)."""
    samples = np.asarray(samples, dtype=complex)
    n = samples.shape[axis]
    c = np.fft.fft(samples, axis=axis) / n
    neg = np.abs(np.take(c, np.arange(n // 2 + 1, n), axis=axis))
    axes = tuple(range(samples.ndim + axis, samples.ndim))
    if neg.size == 0:
        return np.zeros(samples.shape[: samples.ndim + axis])
    return neg.max(axis=axes)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def inv2(a: np.ndarray) -> np.ndarray:
    """Closed-form inverse of stacked 2x2 matrices."""
    d = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    out = np.empty_like(a)
    out[..., 0, 0] = a[..., 1, 1]
    out[..., 1, 1] = a[..., 0, 0]
    out[..., 0, 1] = -a[..., 0, 1]
    out[..., 1, 0] = -a[..., 1, 0]
    return out / d[..., None, None]


def det2(a: np.ndarray) -> np.ndarray:
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def tracefree(a: np.ndarray) -> np.ndarray:
    t = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    out = a.copy()
    out[..., 0, 0] -= t
    out[..., 1, 1] -= t
    return out


class LaurentLoop:
    """2x2 matrix loop with coefficients X_{-K..K} and N unit-circle samples.

    Instances are treated as immutable; the sample view is cached lazily.
    """

    shape_tail = (2, 2)

    def __init__(self, coeffs, nsamples: int | None = None, radius: float = 1.0):
        c = np.array(coeffs, dtype=complex)
        if c.ndim != 1 + len(self.shape_tail) or c.shape[1:] != self.shape_tail or c.shape[0] % 2 == 0:
            raise LoopError(f"coefficient array has bad shape {c.shape}")
        band = (c.shape[0] - 1) // 2
        if nsamples is None:
            nsamples = max(2 * band + 2, 8)
        if nsamples < 2 * band + 2:
            raise LoopError("need nsamples >= 2K+2")
        if not 0 < radius <= 1:
            raise LoopError("radius must lie in (0, 1]")
        c.setflags(write=False)
        self._c = c
        self.nsamples = int(nsamples)
        self.radius = float(radius)
        self._samples = None
        self.truncation_residual = 0.0

    # construction -----------------------------------------------------
    @classmethod
    def from_samples(cls, samples, band: int | None = None, radius: float = 1.0):
        samples = np.asarray(samples, dtype=complex)
        n = samples.shape[0]
        if band is None:
            band = (n - 2) // 2
        axis = -1 - len(cls.shape_tail)
        out = cls(samples_to_coeffs(samples, band, axis=axis), nsamples=n, radius=radius)
        return out

    @classmethod
    def constant(cls, value, nsamples: int = 8, band: int = 0):
        value = np.asarray(value, dtype=complex).reshape(cls.shape_tail)
        c = np.zeros((2 * band + 1,) + cls.shape_tail, dtype=complex)
        c[band] = value
        return cls(c, nsamples=nsamples)

    @classmethod
    def identity(cls, nsamples: int = 8, band: int = 0):
        return cls.constant(np.eye(2) if cls.shape_tail else 1.0, nsamples, band)

    @classmethod
    def monomial(cls, k: int, value, nsamples: int | None = None):
        band = abs(k)
        c = np.zeros((2 * band + 1,) + cls.shape_tail, dtype=complex)
        c[band + k] = np.asarray(value, dtype=complex).reshape(cls.shape_tail)
        return cls(c, nsamples=nsamples)

    # views -------------------------------------------------------------
    @property
    def band(self) -> int:
        return (self._c.shape[0] - 1) // 2

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    def coeff(self, k: int) -> np.ndarray:
        if abs(k) > self.band:
            return np.zeros(self.shape_tail, dtype=complex)
        return self._c[self.band + k]

    @property
    def samples(self) -> np.ndarray:
        if self._samples is None:
            s = coeffs_to_samples(self._c, self.nsamples, axis=-1 - len(self.shape_tail))
            s.setflags(write=False)
            self._samples = s
        return self._samples

    @property
    def lambdas(self) -> np.ndarray:
        return unit_samples(self.nsamples)

    def _new(self, coeffs, nsamples=None):
        return type(self)(coeffs, nsamples=nsamples or self.nsamples, radius=self.radius)

    # algebra -------------------------------------------------------------
    def star(self):
        """X*(lambda) = X(1/conj(lambda))^dagger, i.e. (X*)_k = X_{-k}^dagger."""
        c = self._c[::-1]
        if self.shape_tail:
            c = dagger(c)
        else:
            c = np.conj(c)
        return self._new(c)

    def theta_derivative(self):
        k = np.arange(-self.band, self.band + 1)
        shape = (-1,) + (1,) * len(self.shape_tail)
        return self._new(1j * k.reshape(shape) * self._c)

    def eval(self, lam: complex) -> np.ndarray:
        """Sum X_k lam**k by Horner evaluation in lam and 1/lam."""
        lam = complex(lam)
        band = self.band
        if lam == 0:
            if band and np.any(self._c[:band] != 0):
                raise LoopError("loop has a pole at lambda = 0")
            return self._c[band].copy()
        pos = np.zeros(self.shape_tail, dtype=complex)
        for k in range(band, -1, -1):
            pos = pos * lam + self._c[band + k]
        neg = np.zeros(self.shape_tail, dtype=complex)
        inv = 1.0 / lam
        for k in range(band, 0, -1):
            neg = (neg + self._c[band - k]) * inv
        return pos + neg

    def __call__(self, lam):
        return self.eval(lam)

    def sup_norm(self, rho: float = 1.0, refine: int = 4) -> float:
        """Max over C_rho of the matrix 2-norm, sampled at refine*N points."""
        m = refine * self.nsamples
        lam = rho * unit_samples(m)
        k = np.arange(-self.band, self.band + 1)
        vals = np.tensordot(lam[:, None] ** k[None, :], self._c, axes=([1], [0]))
        if not self.shape_tail:
            return float(np.abs(vals).max())
        return float(np.linalg.norm(vals, ord=2, axis=(-2, -1)).max())

    def _binary(self, other, op_coeff):
        if not isinstance(other, LaurentLoop):
            return NotImplemented
        n = max(self.nsamples, other.nsamples)
        return op_coeff(n)

    def __add__(self, other):
        def go(n):
            band = max(self.band, other.band)
            c = np.zeros((2 * band + 1,) + self.shape_tail, dtype=complex)
            c[band - self.band: band + self.band + 1] += self._c
            c[band - other.band: band + other.band + 1] += other._c
            return self._new(c, n)
        return self._binary(other, go)

    def __neg__(self):
        return self._new(-self._c)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, s: complex):
        return self._new(s * self._c)

    def matmul(self, other, kmax: int = K_MAX):
        """Product loop; the band is truncated to ``kmax`` and the dropped mass recorded."""
        c1, c2 = self._c, other._c
        b1, b2 = self.band, other.band
        band = b1 + b2
        scalar = not self.shape_tail or not other.shape_tail
        tail = self.shape_tail if self.shape_tail else other.shape_tail
        out = np.zeros((2 * band + 1,) + tail, dtype=complex)
        for i in range(2 * b1 + 1):
            for j in range(2 * b2 + 1):
                out[i + j] += c1[i] * c2[j] if scalar else c1[i] @ c2[j]
        resid = 0.0
        if band > kmax:
            drop = np.concatenate([out[: band - kmax], out[band + kmax + 1:]])
            resid = float(np.abs(drop).max())
            out = out[band - kmax: band + kmax + 1]
        cls = LaurentLoop if tail else ScalarLoop
        n = max(self.nsamples, other.nsamples, 2 * min(band, kmax) + 2)
        res = cls(out, nsamples=n, radius=min(self.radius, other.radius))
        res.truncation_residual = max(resid, self.truncation_residual, other.truncation_residual)
        return res

    def __matmul__(self, other):
        return self.matmul(other)

    def __mul__(self, other):
        if isinstance(other, LaurentLoop):
            return self.matmul(other)
        return self.scale(other)

    __rmul__ = scale

    def truncated(self, band: int):
        if band >= self.band:
            return self
        off = self.band - band
        return self._new(self._c[off: off + 2 * band + 1])

    def resampled(self, n: int):
        return self._new(self._c, n)

    def __repr__(self):
        return f"{type(self).__name__}(band={self.band}, nsamples={self.nsamples}, radius={self.radius})"


class ScalarLoop(LaurentLoop):
    """Scalar (1x1) Laurent loop; same conventions as LaurentLoop."""

    shape_tail = ()

    def __init__(self, coeffs, nsamples: int | None = None, radius: float = 1.0):
        super().__init__(np.asarray(coeffs, dtype=complex).reshape(-1), nsamples, radius)

    @classmethod
    def identity(cls, nsamples: int = 8, band: int = 0):
        return cls.constant(1.0, nsamples, band)


def star(x: LaurentLoop) -> LaurentLoop:
    return x.star()


def theta_derivative(x: LaurentLoop) -> LaurentLoop:
    return x.theta_derivative()


def sup_norm(x: LaurentLoop, rho: float = 1.0) -> float:
    return x.sup_norm(rho)


def eval_loop(x: LaurentLoop, lam: complex) -> np.ndarray:
    return x.eval(lam)
