"""Integration of d(Phi) = Phi xi along paths, and monodromy at the punctures.

The ODE decouples in the spectral parameter, so frames are carried as
unit-circle sample arrays of shape (B, N, 2, 2): B independent paths, N
lambda samples.  Each path keeps its own adaptive step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import loops
from .errors import DiscontinuousBranch, PoleTooClose, StepUnderflow
from .loops import LaurentLoop, det2, inv2, unit_samples
from .potentials import Potential

# Dormand-Prince 5(4)
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

RTOL = 1e-10
ATOL = 1e-12
MAX_STEPS = 10 ** 6
MIN_POLE_DISTANCE = 1e-3


# ---------------------------------------------------------------------------
# paths

class Segments:
    """Straight segments za[i] -> zb[i], parametrized by s in [0, 1]."""

    def __init__(self, za, zb):
        self.za = np.atleast_1d(np.asarray(za, dtype=complex))
        self.zb = np.atleast_1d(np.asarray(zb, dtype=complex))

    def __len__(self):
        return self.za.size

    def z(self, s, idx):
        return self.za[idx] + s * (self.zb[idx] - self.za[idx])

    def dz(self, s, idx):
        return self.zb[idx] - self.za[idx]

    def sample(self, m=257):
        s = np.linspace(0, 1, m)
        return self.za[:, None] + s[None, :] * (self.zb - self.za)[:, None]


class Arcs:
    """Circular arcs p + r exp(i theta), theta from ta to tb."""

    def __init__(self, center, radius, ta, tb):
        self.center = np.atleast_1d(np.asarray(center, dtype=complex))
        self.radius = np.broadcast_to(np.asarray(radius, dtype=float), self.center.shape).copy()
        self.ta = np.broadcast_to(np.asarray(ta, dtype=float), self.center.shape).copy()
        self.tb = np.broadcast_to(np.asarray(tb, dtype=float), self.center.shape).copy()

    def __len__(self):
        return self.center.size

    def z(self, s, idx):
        th = self.ta[idx] + s * (self.tb[idx] - self.ta[idx])
        return self.center[idx] + self.radius[idx] * np.exp(1j * th)

    def dz(self, s, idx):
        th = self.ta[idx] + s * (self.tb[idx] - self.ta[idx])
        return 1j * (self.tb[idx] - self.ta[idx]) * self.radius[idx] * np.exp(1j * th)

    def sample(self, m=257):
        s = np.linspace(0, 1, m)
        th = self.ta[:, None] + s[None, :] * (self.tb - self.ta)[:, None]
        return self.center[:, None] + self.radius[:, None] * np.exp(1j * th)


def _check_poles(xi: Potential, path):
    d = xi.pole_distance(path.sample())
    if np.min(d) < MIN_POLE_DISTANCE:
        raise PoleTooClose(f"path passes within {np.min(d):.2e} of a pole")


@dataclass
class TransportStats:
    steps: int = 0
    rejected: int = 0
    max_error: float = 0.0


def transport(xi: Potential, path, y0, lam, rtol: float = RTOL, atol: float = ATOL,
              max_steps: int = MAX_STEPS, stats: TransportStats | None = None) -> np.ndarray:
    """Solve dY/ds = Y M(z(s)) z'(s) on s in [0, 1] for every path in the batch.

    ``y0`` has shape (B, N, 2, 2) matching ``len(path)`` and ``lam`` (N,).
    """
    _check_poles(xi, path)
    y = np.array(y0, dtype=complex)
    nb = y.shape[0]
    lam = np.asarray(lam, dtype=complex)
    s = np.zeros(nb)
    # initial step from the size of the right-hand side
    m0 = xi.matrix(path.z(0.0, np.arange(nb))[:, None], lam[None, :])
    scale = np.abs(m0).reshape(nb, -1).max(axis=1) * np.abs(path.dz(0.0, np.arange(nb)))
    h = np.minimum(1.0, 0.05 / np.maximum(scale, 1e-12))
    st = stats if stats is not None else TransportStats()
    active = np.arange(nb)
    steps = 0
    while active.size:
        steps += 1
        if steps > max_steps:
            raise StepUnderflow("maximum number of steps exceeded")
        ha = np.minimum(h[active], 1.0 - s[active])
        ya = y[active]
        k = []
        for i in range(7):
            yi = ya
            for j, aij in enumerate(_A[i]):
                if aij:
                    yi = yi + (ha * aij)[:, None, None, None] * k[j]
            si = s[active] + _C[i] * ha
            zi = path.z(si, active)
            mi = xi.matrix(zi[:, None], lam[None, :]) * path.dz(si, active)[:, None, None, None]
            k.append(yi @ mi)
        ynew = ya
        err = 0
        for i in range(7):
            if _B5[i]:
                ynew = ynew + (ha * _B5[i])[:, None, None, None] * k[i]
            err = err + _E[i] * k[i]
        err = err * ha[:, None, None, None]
        sc = atol + rtol * np.maximum(np.abs(ya), np.abs(ynew))
        en = (np.abs(err) / sc).reshape(len(active), -1).max(axis=1)
        ok = en <= 1.0
        acc = active[ok]
        y[acc] = ynew[ok]
        s[acc] += ha[ok]
        st.steps += int(ok.sum())
        st.rejected += int((~ok).sum())
        if ok.any():
            st.max_error = max(st.max_error, float(np.max(np.abs(err[ok]))))
        fac = np.clip(0.9 * np.maximum(en, 1e-10) ** (-0.2), 0.2, 5.0)
        h[active] = ha * fac
        if np.any(h[active] < 1e-14):
            raise StepUnderflow("step size underflow")
        done = s >= 1.0 - 1e-15
        active = active[~done[active]]
    return y


def _as_samples(phi0, nsamples):
    if isinstance(phi0, LaurentLoop):
        return np.array(phi0.resampled(nsamples).samples), phi0
    return np.array(phi0, dtype=complex), None


def integrate(xi: Potential, path, phi0, nsamples: int = 128, rtol: float = RTOL, atol: float = ATOL):
    """Phi at the end of a polyline, starting from Phi = phi0 at path[0].

    ``phi0`` may be a LaurentLoop (a LaurentLoop is returned) or an array of
    samples of shape (N, 2, 2).
    """
    pts = np.asarray(path, dtype=complex).ravel()
    y, loop = _as_samples(phi0, nsamples)
    n = y.shape[-3]
    lam = unit_samples(n)
    y = y[None]
    for za, zb in zip(pts[:-1], pts[1:]):
        y = transport(xi, Segments([za], [zb]), y, lam, rtol, atol)
    y = y[0]
    if loop is not None:
        return LaurentLoop.from_samples(y, (n - 2) // 2, radius=loop.radius)
    return y


def integrate_arc(xi: Potential, center, radius, ta, tb, phi0, nsamples: int = 128,
                  rtol: float = RTOL, atol: float = ATOL):
    y, loop = _as_samples(phi0, nsamples)
    lam = unit_samples(y.shape[-3])
    y = transport(xi, Arcs([center], [radius], [ta], [tb]), y[None], lam, rtol, atol)[0]
    if loop is not None:
        return LaurentLoop.from_samples(y, (y.shape[0] - 2) // 2, radius=loop.radius)
    return y


class FrameSolution:
    """Solution of d(Phi) = Phi xi with Phi(z0) = phi0, evaluated along paths."""

    def __init__(self, xi: Potential, z0: complex, phi0, nsamples: int = 128):
        self.xi = xi
        self.z0 = complex(z0)
        self.phi0, _ = _as_samples(phi0, nsamples)
        self.nsamples = self.phi0.shape[0]
        self.stats = TransportStats()

    def along(self, path) -> np.ndarray:
        pts = np.concatenate([[self.z0], np.asarray(path, dtype=complex).ravel()])
        y = self.phi0[None]
        lam = unit_samples(self.nsamples)
        for za, zb in zip(pts[:-1], pts[1:]):
            y = transport(self.xi, Segments([za], [zb]), y, lam, stats=self.stats)
        return y[0]

    def det_drift(self, phi) -> float:
        return float(np.abs(det2(phi) - det2(self.phi0)).max())


# ---------------------------------------------------------------------------
# monodromy

@dataclass
class MonodromySet:
    M1: LaurentLoop
    M2: LaurentLoop
    M3: LaurentLoop
    product_residual: float
    z0: complex
    big_loop: np.ndarray = field(repr=False, default=None)

    @property
    def samples(self) -> np.ndarray:
        return np.stack([self.M1.samples, self.M2.samples, self.M3.samples])

    @property
    def nsamples(self) -> int:
        return self.M1.nsamples

    def det_residual(self) -> float:
        return float(np.abs(det2(self.samples) - 1).max())


def loop_monodromy(xi: Potential, z0, centers, radii, phi0, lam, rtol=1e-12, atol=1e-14):
    """Monodromies of counterclockwise circles around ``centers`` joined to z0."""
    centers = np.asarray(centers, dtype=complex)
    radii = np.asarray(radii, dtype=float)
    nb = centers.size
    dirn = (z0 - centers) / np.abs(z0 - centers)
    q = centers + radii * dirn
    th = np.angle(dirn)
    y = np.broadcast_to(phi0, (nb,) + phi0.shape).copy()
    y = transport(xi, Segments(np.full(nb, z0), q), y, lam, rtol, atol)
    y = transport(xi, Arcs(centers, radii, th, th + 2 * np.pi), y, lam, rtol, atol)
    y = transport(xi, Segments(q, np.full(nb, z0)), y, lam, rtol, atol)
    return y @ inv2(phi0)[None]


def monodromies(xi: Potential, z0: complex = 0.5 - 0.5j, phi0=None, nsamples: int = 128,
                big_radius: float = 2.0, rtol: float = 1e-12, atol: float = 1e-14) -> MonodromySet:
    """Monodromies M1, M2 around 0, 1 (counterclockwise, based at z0) and M3 = (M1 M2)^-1.

    The product residual compares M2 M1 with an independent integration
    around the large circle |z - 1/2| = big_radius; with z0 below the real
    axis that loop passes the puncture 1 first.
    """
    if phi0 is None:
        phi0 = np.broadcast_to(np.eye(2, dtype=complex), (nsamples, 2, 2)).copy()
    phi0, _ = _as_samples(phi0, nsamples)
    n = phi0.shape[0]
    lam = unit_samples(n)
    centers = np.array([0.0, 1.0])
    radii = np.minimum(np.abs(z0 - centers) / 2, 0.3)
    m12 = loop_monodromy(xi, z0, centers, radii, phi0, lam, rtol, atol)
    big = loop_monodromy(xi, z0, [0.5], [big_radius], phi0, lam, rtol, atol)[0]
    m1, m2 = m12
    m3 = inv2(m1 @ m2)
    resid = float(np.abs(big - m2 @ m1).max())
    band = (n - 2) // 2
    mk = [LaurentLoop.from_samples(m, band) for m in (m1, m2, m3)]
    return MonodromySet(mk[0], mk[1], mk[2], resid, complex(z0), big)


# ---------------------------------------------------------------------------
# eigenvalues

@dataclass
class EigenCurves:
    rho: np.ndarray           # (N, 2)
    rho_at_1: np.ndarray      # (2,)
    drho_at_1: np.ndarray     # (2,) d/dtheta
    collisions: list
    max_jump: float


def eigenvalue_curves(m, jump_limit: float = 0.5) -> EigenCurves:
    """Eigenvalues of M(lambda) at the samples, ordered continuously along the circle."""
    s = np.asarray(m.samples if isinstance(m, LaurentLoop) else m, dtype=complex)
    n = s.shape[0]
    tr = s[:, 0, 0] + s[:, 1, 1]
    d = det2(s)
    disc = np.sqrt(tr ** 2 / 4 - d)
    raw = np.stack([tr / 2 + disc, tr / 2 - disc], axis=1)
    rho = np.empty_like(raw)
    rho[0] = raw[0]
    max_jump = 0.0
    collisions = []
    for j in range(1, n):
        if j == 1:
            pred = rho[0]
        elif j == 2:
            pred = 2 * rho[1] - rho[0]
        else:
            # quadratic prediction separates branches that touch tangentially
            pred = 3 * rho[j - 1] - 3 * rho[j - 2] + rho[j - 3]
        a, b = raw[j]
        keep = abs(a - pred[0]) + abs(b - pred[1])
        swap = abs(b - pred[0]) + abs(a - pred[1])
        rho[j] = (a, b) if keep <= swap else (b, a)
        jump = float(np.max(np.abs(rho[j] - rho[j - 1])))
        max_jump = max(max_jump, jump)
        if abs(a - b) < 1e-6 * max(1.0, abs(a)):
            collisions.append(j)
    if abs(raw[0, 0] - raw[0, 1]) < 1e-6:
        collisions.insert(0, 0)
    if max_jump > jump_limit:
        raise DiscontinuousBranch(f"eigenvalue branch jumps by {max_jump:.3f}")
    r1 = rho[0]
    dr = loops.spectral_derivative_at(rho, 1.0, axis=0)
    return EigenCurves(rho, r1, dr, collisions, max_jump)


# ---------------------------------------------------------------------------
# fixed-step eighth order transport (for the log-polar end charts)

try:  # the coefficient table ships with scipy's DOP853 integrator
    from scipy.integrate._ivp import dop853_coefficients as _dop
    _RK8_A = _dop.A[:12, :12]
    _RK8_B = _dop.B
    _RK8_C = _dop.C[:12]
except Exception:  # pragma: no cover
    _RK8_A = _RK8_B = _RK8_C = None


def rk8_step(y, rhs, t, h):
    """One step of the 12-stage eighth order Dormand-Prince method for Y' = Y rhs(t)."""
    k = []
    for i in range(12):
        yi = y
        for j in range(i):
            a = _RK8_A[i, j]
            if a:
                yi = yi + (h * a) * k[j]
        k.append(yi @ rhs(t + _RK8_C[i] * h))
    out = y
    for i in range(12):
        if _RK8_B[i]:
            out = out + (h * _RK8_B[i]) * k[i]
    return out
