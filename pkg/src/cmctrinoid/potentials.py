"""DPW potentials: Delaunay residues, the trinoid family and gauges.

All potentials are holomorphic 1-forms xi = M(z, lambda) dz with values in
the twisted loop algebra; ``matrix(z, lam)`` returns M broadcast over the
shapes of ``z`` and ``lam`` with two trailing matrix axes.

Conventions for the three ends.  End 0 uses the coordinate u = z, end 1 uses
u = 1 - z and end infinity uses u = 1/z.  Pulled back by these Moebius maps
and gauged by a constant (end 1) or single-valued (end infinity) lower
triangular plus gauge, the trinoid potential with weights (w1, w2, w3)
becomes the trinoid potential in u with weights permuted to
(w2, w1, w3) and (w3, w2, w1) respectively, so every end is treated as
the end at u = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidWeights, SingularGauge, WeightOutOfRange, ZeroUpperEntry
from .loops import LaurentLoop, det2, inv2, unit_samples

E12 = np.array([[0, 1], [0, 0]], dtype=complex)
E21 = np.array([[0, 0], [1, 0]], dtype=complex)
ENDS = (0, 1, "inf")


def _as_end(end):
    if end in (0, "0"):
        return 0
    if end in (1, "1"):
        return 1
    if end in ("inf", "infinity", np.inf, float("inf"), 2, "2", "∞"):
        return "inf"
    raise ValueError(f"unknown end {end!r}")


# ---------------------------------------------------------------------------
# weights

def weight_from_necksize(n, H: float = 1.0):
    """w = 4 n (1/H - n)."""
    return 4.0 * np.asarray(n, dtype=float) * (1.0 / H - np.asarray(n, dtype=float))


def necksize_from_weight(w, H: float = 1.0):
    """Inverse of weight_from_necksize on the branch n <= 1/(2H)."""
    w = np.asarray(w, dtype=float)
    return 0.5 * (1.0 / H - np.sqrt(np.maximum(1.0 / H ** 2 - w, 0.0)))


@dataclass(frozen=True)
class Weights:
    """End weights of a trinoid; necksizes are derived."""

    w1: float
    w2: float
    w3: float
    H: float = 1.0

    @classmethod
    def from_necksizes(cls, n1, n2, n3, H: float = 1.0):
        for n in (n1, n2, n3):
            if n > 0.5 / H:
                raise InvalidWeights(f"necksize {n} exceeds 1/(2H)", [f"necksize {n} exceeds 1/(2H) = {0.5 / H:g}"])
        w = weight_from_necksize([n1, n2, n3], H)
        return cls(float(w[0]), float(w[1]), float(w[2]), H)

    @property
    def w(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3])

    @property
    def n(self) -> np.ndarray:
        return necksize_from_weight(self.w, self.H)

    @property
    def n1(self):
        return float(self.n[0])

    @property
    def n2(self):
        return float(self.n[1])

    @property
    def n3(self):
        return float(self.n[2])

    @property
    def sign_class(self) -> str:
        s = "".join("+" if x > 0 else "-" for x in sorted(self.w, reverse=True))
        return f"[{s}]"

    def permuted(self, end):
        end = _as_end(end)
        if end == 0:
            return self
        if end == 1:
            return Weights(self.w2, self.w1, self.w3, self.H)
        return Weights(self.w3, self.w2, self.w1, self.H)

    def failures(self, allow_cylinder: bool = False) -> list[str]:
        """Human readable list of violated conditions (empty when valid)."""
        out = []
        wmax = 1.0 / self.H ** 2
        for i, wi in enumerate(self.w, 1):
            if wi == 0:
                out.append(f"weight w{i} must be nonzero")
            elif wi > wmax or (wi == wmax and not allow_cylinder):
                out.append(f"weight w{i} = {wi:g} outside (-inf, 1)")
        rep = check_admissible(self)
        out.extend(rep.failures)
        return out

    def validate(self, allow_cylinder: bool = False):
        bad = self.failures(allow_cylinder)
        if bad:
            raise InvalidWeights("; ".join(bad), bad)
        return self


# ---------------------------------------------------------------------------
# Delaunay residue and eigenvalues

def delaunay_ab(w: float, H: float = 1.0) -> tuple[float, float]:
    """Real a, b with a + b = 1/2 and 16 a b = w H^2."""
    if w == 0 or w * H * H > 1:
        raise WeightOutOfRange(f"weight {w} outside (-inf, 1/H^2] minus 0")
    s = np.sqrt(1.0 - w * H * H)
    return (1 + s) / 4, (1 - s) / 4


def delaunay_residue(w: float, H: float = 1.0, nsamples: int = 128) -> LaurentLoop:
    """A = [[0, a/lam + b], [b + a lam, 0]] as a band-1 loop."""
    a, b = delaunay_ab(w, H)
    c = np.zeros((3, 2, 2), dtype=complex)
    c[0, 0, 1] = a
    c[1, 0, 1] = b
    c[1, 1, 0] = b
    c[2, 1, 0] = a
    return LaurentLoop(c, nsamples=nsamples)


def delaunay_residue_samples(w: float, lam, H: float = 1.0) -> np.ndarray:
    a, b = delaunay_ab(w, H)
    lam = np.asarray(lam, dtype=complex)
    out = np.zeros(lam.shape + (2, 2), dtype=complex)
    out[..., 0, 1] = a / lam + b
    out[..., 1, 0] = b + a * lam
    return out


def mu_w(w, lam):
    """Eigenvalue (1/2) sqrt(1 + w (lam-1)^2 / (4 lam)) of a Delaunay residue."""
    lam = np.asarray(lam, dtype=complex)
    return 0.5 * np.sqrt(1 + w * (lam - 1) ** 2 / (4 * lam))


def nu_w(w, lam):
    return 0.5 - mu_w(w, lam)


# ---------------------------------------------------------------------------
# admissibility

@dataclass
class AdmissibilityReport:
    neck_ok: bool
    weight_ok: bool
    tetrahedron_ok: np.ndarray
    open_interval_ok: bool
    failures: list = field(default_factory=list)
    margins: np.ndarray | None = None

    @property
    def admissible(self) -> bool:
        return bool(self.neck_ok and self.weight_ok and np.all(self.tetrahedron_ok))

    def as_dict(self):
        return {
            "admissible": self.admissible,
            "neck_ok": bool(self.neck_ok),
            "weight_ok": bool(self.weight_ok),
            "tetrahedron_ok": bool(np.all(self.tetrahedron_ok)),
            "open_interval_ok": bool(self.open_interval_ok),
            "failures": list(self.failures),
            "min_tetrahedron_margin": None if self.margins is None else float(np.min(self.margins)),
        }


def reduce_nu(nu) -> np.ndarray:
    """Orbit representative in [0, 1/2] under nu -> nu + 1 and nu -> -nu."""
    x = np.mod(np.real(np.asarray(nu)), 1.0)
    return np.minimum(x, 1.0 - x)


def tetrahedron_margin(nu) -> np.ndarray:
    """Signed distance-like margin of reduced nu triples (last axis) to T0."""
    r = reduce_nu(nu)
    s = r.sum(axis=-1)
    m = [1.0 - s]
    for i in range(3):
        j, k = [x for x in range(3) if x != i]
        m.append(r[..., j] + r[..., k] - r[..., i])
    return np.min(np.stack(m, axis=-1), axis=-1)


def _tri_failures(vals, label, names):
    out = []
    for i in range(3):
        j, k = [x for x in range(3) if x != i]
        if abs(vals[i]) > abs(vals[j]) + abs(vals[k]) + 1e-12:
            out.append(f"{label} inequality |{names}{i+1}| ≤ |{names}{j+1}|+|{names}{k+1}| violated")
    return out


def check_admissible(W: Weights, nsamples: int = 256, tol: float = 1e-12) -> AdmissibilityReport:
    n = W.n
    w = W.w
    failures = []
    if np.any(W.w * W.H ** 2 > 1):
        failures.append("weight above 1/H^2 has no real necksize")
    if np.abs(n).sum() > 1 + tol:
        failures.append("necksize inequality |n1|+|n2|+|n3| ≤ 1 violated")
    failures += _tri_failures(n, "necksize", "n")
    neck_ok = not any("necksize" in f for f in failures)
    wf = _tri_failures(w, "weight", "w")
    failures += wf
    weight_ok = not wf
    lam = unit_samples(nsamples)
    nu = np.stack([nu_w(wk * W.H ** 2, lam) for wk in w], axis=-1)
    margins = tetrahedron_margin(nu)
    tet = margins >= -1e-9
    if not np.all(tet):
        failures.append(f"nu leaves the tetrahedral region at {int((~tet).sum())} of {nsamples} samples")
    open_ok = bool(np.all(w * W.H ** 2 < 1) and np.all(w != 0))
    return AdmissibilityReport(neck_ok, weight_ok, tet, open_ok, failures, margins)


# ---------------------------------------------------------------------------
# potentials

class Potential:
    """Base class: xi = matrix(z, lam) dz."""

    poles: tuple = ()

    def matrix(self, z, lam) -> np.ndarray:
        raise NotImplementedError

    def pole_distance(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if not self.poles:
            return np.full(z.shape, np.inf)
        return np.min(np.stack([np.abs(z - p) for p in self.poles]), axis=0)


def _bcast(z, lam):
    z = np.asarray(z, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    return z, lam, np.broadcast_shapes(z.shape, lam.shape)


class DelaunayPotential(Potential):
    """xi = A dz / z with a Delaunay residue A."""

    kind = "Delaunay"

    def __init__(self, w: float, H: float = 1.0):
        self.w = float(w)
        self.H = float(H)
        self.a, self.b = delaunay_ab(w, H)
        self.poles = (0.0,)

    def residue(self, lam) -> np.ndarray:
        return delaunay_residue_samples(self.w, lam, self.H)

    def matrix(self, z, lam):
        z, lam, shape = _bcast(z, lam)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 1] = (self.a / lam + self.b) / z
        out[..., 1, 0] = (self.b + self.a * lam) / z
        return out


def Q_coefficient(W: Weights, z):
    """Q_W / dz^2 = (w3 z^2 - (w1 - w2 + w3) z + w1) / (16 z^2 (z - 1)^2)."""
    z = np.asarray(z, dtype=complex)
    w1, w2, w3 = W.w * W.H ** 2
    return (w3 * z ** 2 - (w1 - w2 + w3) * z + w1) / (16 * z ** 2 * (z - 1) ** 2)


class TrinoidPotential(Potential):
    """xi_W = [[0, lam^-1], [(lam - 1)^2 Q_W/dz^2, 0]] dz."""

    kind = "Trinoid"

    def __init__(self, W: Weights):
        self.weights = W
        self.poles = (0.0, 1.0)

    def Q(self, z):
        return Q_coefficient(self.weights, z)

    def matrix(self, z, lam):
        z, lam, shape = _bcast(z, lam)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 1] = 1.0 / lam
        out[..., 1, 0] = (lam - 1) ** 2 * self.Q(z)
        return out


PotentialSpec = Potential


def trinoid_potential(W: Weights, allow_cylinder: bool = False) -> TrinoidPotential:
    W.validate(allow_cylinder)
    return TrinoidPotential(W)


def quadratic_residue(Q: Callable, p, radius: float = 1e-2, npts: int = 64) -> complex:
    """Coefficient of (z-p)^-2 in Q (or of u^-2 in the coordinate u = 1/z at infinity)."""
    th = 2 * np.pi * np.arange(npts) / npts
    u = radius * np.exp(1j * th)
    if p == "inf":
        vals = Q(1 / u) / u ** 4  # Q(z) dz^2 with z = 1/u, dz = -du/u^2
    else:
        vals = Q(p + u)
    return complex(np.mean(vals * u ** 2))


# ---------------------------------------------------------------------------
# gauges

class GaugeMap:
    """g(z, lam) with its analytic z-derivative.

    ``center`` and ``annulus`` record the domain of validity
    {r0 < |z - center| < r1}.
    """

    def __init__(self, value: Callable, deriv: Callable, center=0.0, annulus=(0.0, np.inf), name="g"):
        self._value = value
        self._deriv = deriv
        self.center = center
        self.annulus = annulus
        self.name = name

    def __call__(self, z, lam):
        return self._value(z, lam)

    def value(self, z, lam):
        return self._value(z, lam)

    def deriv(self, z, lam):
        return self._deriv(z, lam)

    def __matmul__(self, other: "GaugeMap") -> "GaugeMap":
        def val(z, lam):
            return self._value(z, lam) @ other._value(z, lam)

        def der(z, lam):
            return self._deriv(z, lam) @ other._value(z, lam) + self._value(z, lam) @ other._deriv(z, lam)

        lo = max(self.annulus[0], other.annulus[0])
        hi = min(self.annulus[1], other.annulus[1])
        return GaugeMap(val, der, self.center, (lo, hi), f"{self.name}{other.name}")

    @classmethod
    def constant(cls, m, name="c"):
        m = np.asarray(m, dtype=complex)

        def val(z, lam):
            _, _, shape = _bcast(z, lam)
            return np.broadcast_to(m, shape + (2, 2)).copy()

        def der(z, lam):
            _, _, shape = _bcast(z, lam)
            return np.zeros(shape + (2, 2), dtype=complex)

        return cls(val, der, name=name)

    @classmethod
    def identity(cls):
        return cls.constant(np.eye(2), name="I")


class GaugedPotential(Potential):
    """xi.g = g^-1 xi g + g^-1 dg."""

    def __init__(self, xi: Potential, g: GaugeMap):
        self.xi = xi
        self.g = g
        self.poles = xi.poles

    def matrix(self, z, lam):
        gv = self.g.value(z, lam)
        d = det2(gv)
        if np.any(np.abs(d) < 1e-12):
            raise SingularGauge("gauge is singular at a sample point")
        gi = inv2(gv)
        return gi @ self.xi.matrix(z, lam) @ gv + gi @ self.g.deriv(z, lam)


def apply_gauge(xi: Potential, g: GaugeMap) -> GaugedPotential:
    """Gauged potential xi.g; evaluate with ``.matrix(z, lam)``."""
    if isinstance(xi, GaugedPotential):
        return GaugedPotential(xi.xi, xi.g @ g)
    return GaugedPotential(xi, g)


def offdiag_gauge(a: Callable, da: Callable, d2a: Callable, c: Callable | None = None,
                  dc: Callable | None = None) -> GaugeMap:
    """Gauge of [[c, a/lam], [b, -c]] dz to off-diagonal form with upper entry dz/lam.

    ``a``, ``c`` and their z-derivatives are callables of (z, lam).
    g = [[a^1/2, 0], [lam (d(a^-1/2)/dz - c a^-1/2), a^-1/2]].
    """
    if c is None:
        def c(z, lam):
            return np.zeros(np.broadcast_shapes(np.shape(z), np.shape(lam)), dtype=complex)

        dc = c

    def parts(z, lam):
        z, lam, shape = _bcast(z, lam)
        av = np.broadcast_to(a(z, lam), shape).astype(complex)
        if np.any(np.abs(av) < 1e-300):
            raise ZeroUpperEntry("upper-right entry vanishes")
        s = np.sqrt(av)
        return z, lam, shape, av, s

    def val(z, lam):
        z, lam, shape, av, s = parts(z, lam)
        out = np.zeros(shape + (2, 2), dtype=complex)
        d_ms = -0.5 * da(z, lam) / (av * s)
        out[..., 0, 0] = s
        out[..., 1, 1] = 1 / s
        out[..., 1, 0] = lam * (d_ms - c(z, lam) / s)
        return out

    def der(z, lam):
        z, lam, shape, av, s = parts(z, lam)
        a1 = da(z, lam)
        a2 = d2a(z, lam)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 0] = 0.5 * a1 / s
        out[..., 1, 1] = -0.5 * a1 / (av * s)
        d_ms = -0.5 * a1 / (av * s)
        dd_ms = 0.75 * a1 ** 2 / (av ** 2 * s) - 0.5 * a2 / (av * s)
        out[..., 1, 0] = lam * (dd_ms - dc(z, lam) / s - c(z, lam) * d_ms)
        return out

    return GaugeMap(val, der, name="offdiag")


def mobius(end):
    """(z(u), dz/du, u(z)) for the end-local coordinate u."""
    end = _as_end(end)
    if end == 0:
        return (lambda u: u), (lambda u: np.ones_like(np.asarray(u, dtype=complex))), (lambda z: z)
    if end == 1:
        return (lambda u: 1 - u), (lambda u: -np.ones_like(np.asarray(u, dtype=complex))), (lambda z: 1 - z)
    return (lambda u: 1 / u), (lambda u: -1 / np.asarray(u, dtype=complex) ** 2), (lambda z: 1 / z)


def mobius_gauge(end) -> GaugeMap:
    """Plus gauge h(u) with (m* xi_W).h = xi_W' in the end-local coordinate."""
    end = _as_end(end)
    if end == 0:
        return GaugeMap.identity()
    if end == 1:
        return GaugeMap.constant(np.diag([1j, -1j]), name="h1")

    def val(u, lam):
        u, lam, shape = _bcast(u, lam)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 0] = 1j / u
        out[..., 1, 0] = -1j * lam
        out[..., 1, 1] = -1j * u
        return out

    def der(u, lam):
        u, lam, shape = _bcast(u, lam)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 0] = -1j / u ** 2
        out[..., 1, 1] = -1j
        return out

    return GaugeMap(val, der, name="hinf")


class PulledBackPotential(Potential):
    """m* xi in the end-local coordinate u (no gauge)."""

    def __init__(self, xi: Potential, end):
        self.xi = xi
        self.end = _as_end(end)
        self.zof, self.dz, self.uof = mobius(self.end)
        self.poles = (0.0, 1.0)

    def matrix(self, u, lam):
        return self.xi.matrix(self.zof(u), lam) * np.asarray(self.dz(u))[..., None, None]


@dataclass
class EndGauge:
    """Local data at one trinoid end, expressed in the end coordinate u.

    ``g`` = g1 g2 g3 acts on the permuted trinoid potential xi_W' in u;
    ``h`` is the Moebius gauge with (m* xi_W).h = xi_W'.  The quadratic
    coordinate change u = zt - k zt^2 removes the constant term.
    """

    end: object
    weights: Weights
    a: float
    b: float
    k: float
    g: GaugeMap
    g12: GaugeMap
    h: GaugeMap

    def coordinate_change(self, zt):
        return zt - self.k * zt ** 2

    def coordinate_change_deriv(self, zt):
        return 1 - 2 * self.k * zt

    def residue(self, lam) -> np.ndarray:
        return delaunay_residue_samples(self.weights.w1, lam, self.weights.H)

    @property
    def w(self) -> float:
        return self.weights.w1

    def r_of_u(self, u):
        """u^2 q(u) - w1/16 for the g1 g2 gauged potential, in closed form."""
        u = np.asarray(u, dtype=complex)
        w1, w2, w3 = self.weights.w * self.weights.H ** 2
        s = w1 - w2 + w3
        return u * ((w3 - w1) * u + (2 * w1 - s)) / (16 * (u - 1) ** 2)

    def perturbation_scalar(self, u, lam):
        """eps with u * (xi_W'.g1g2) = A + eps * E21 (lower-left entry only)."""
        u, lam, _ = _bcast(u, lam)
        return (lam - 1) ** 2 * self.r_of_u(u) / (self.a + self.b * lam)

    def log_matrix(self, u, lam):
        """u * (xi_W'.g1g2)(u): the potential in t = log u."""
        out = np.array(self.residue(np.broadcast_to(lam, np.broadcast_shapes(np.shape(u), np.shape(lam)))))
        out[..., 1, 0] += self.perturbation_scalar(u, lam)
        return out


def _g1():
    def val(u, lam):
        u, lam, shape = _bcast(u, lam)
        s = np.sqrt(u)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 0] = s
        out[..., 1, 1] = 1 / s
        return out

    def der(u, lam):
        u, lam, shape = _bcast(u, lam)
        s = np.sqrt(u)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 0] = 0.5 / s
        out[..., 1, 1] = -0.5 / (u * s)
        return out

    return GaugeMap(val, der, annulus=(0.0, 1.0), name="g1")


def _g2(a, b):
    def val(u, lam):
        u, lam, shape = _bcast(u, lam)
        out = np.zeros(shape + (2, 2), dtype=complex)
        out[..., 0, 0] = 1
        out[..., 1, 0] = -0.5 * lam
        out[..., 1, 1] = a + b * lam
        return out

    def der(u, lam):
        _, _, shape = _bcast(u, lam)
        return np.zeros(shape + (2, 2), dtype=complex)

    return GaugeMap(val, der, name="g2")


def _g3(a, b, k):
    def mat(lam):
        lam = np.asarray(lam, dtype=complex)
        m = np.zeros(lam.shape + (2, 2), dtype=complex)
        m[..., 0, 0] = -1
        m[..., 1, 0] = lam / (a + b * lam)  # 1/p with p = a/lam + b
        m[..., 1, 1] = 1
        return 0.5 * k * m

    def val(u, lam):
        u, lam, shape = _bcast(u, lam)
        return np.eye(2) + mat(np.broadcast_to(lam, shape)) * np.broadcast_to(u, shape)[..., None, None]

    def der(u, lam):
        u, lam, shape = _bcast(u, lam)
        return mat(np.broadcast_to(lam, shape))

    return GaugeMap(val, der, name="g3")


def end_gauge(W: Weights, end, allow_cylinder: bool = False) -> EndGauge:
    """Local gauge at an end: residue aλ^-1+b off-diagonal, no constant term in zt."""
    W.validate(allow_cylinder)
    Wp = W.permuted(end)
    a, b = delaunay_ab(Wp.w1, Wp.H)
    w1, w2, w3 = Wp.w
    k = (w1 + w2 - w3) / (2 * w1)
    g12 = _g1() @ _g2(a, b)
    g = g12 @ _g3(a, b, k)
    return EndGauge(_as_end(end), Wp, a, b, k, g, g12, mobius_gauge(end))
