"""Simultaneous unitarization of the monodromy by a dressing loop C.

At each unit-circle sample the Hermitian X = C*C solving
X M_k = (M_k^dagger)^-1 X for k = 1, 2, 3 spans the kernel of a linear map
L_lambda.  The kernel vector is normalized by its trace, which is positive
where X is definite, so no phase alignment between samples is needed.  The
resulting positive section is split as f X = C* C.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import loops
from .errors import KernelDimensionCollapse, UnitarityResidualExceeded
from .factorize import fill_masked, matrix_singular_birkhoff
from .holonomy import MonodromySet
from .loops import LaurentLoop, ScalarLoop, dagger, inv2
from .potentials import reduce_nu, tetrahedron_margin

SPECTRAL_GAP = 10.0
MAX_FLAGGED_FRACTION = 0.05
UNITARITY_LIMIT = 1e-4


# ---------------------------------------------------------------------------
# pointwise test

@dataclass
class UnitarizabilityReport:
    reduced_nu: np.ndarray       # (N, 3) in [0, 1/2]
    margin: np.ndarray           # (N,) margin to the closed tetrahedron
    in_tetrahedron: np.ndarray   # (N,) closed inequalities
    nondegenerate: np.ndarray    # (N,) strict inequalities, nu in (0, 1/2)
    flagged: list
    verdict: bool

    def as_dict(self):
        return {
            "verdict": bool(self.verdict),
            "flagged_samples": [int(j) for j in self.flagged],
            "min_margin": float(self.margin.min()),
            "margin": self.margin.tolist(),
        }


def pointwise_unitarizability(nu, tol: float = 1e-12) -> UnitarizabilityReport:
    """Spherical triangle test on nu = (nu1, nu2, nu3) per sample.

    ``nu`` has shape (3, N) or (N, 3).  The global verdict holds when the
    closed inequalities hold everywhere and the strict ones fail only on a
    small (finite) set of samples.
    """
    nu = np.asarray(nu)
    if nu.ndim == 1:
        nu = nu[None, :]
    if nu.shape[-1] != 3:
        nu = nu.T
    r = reduce_nu(nu)
    margin = tetrahedron_margin(nu)
    inside = margin >= -tol
    strict = (margin > tol) & np.all(r > tol, axis=-1) & np.all(r < 0.5 - tol, axis=-1)
    flagged = list(np.flatnonzero(~strict))
    frac = len(flagged) / max(1, r.shape[0])
    verdict = bool(np.all(inside) and frac <= MAX_FLAGGED_FRACTION)
    return UnitarizabilityReport(r, margin, inside, strict, flagged, verdict)


# ---------------------------------------------------------------------------
# kernel section

@dataclass
class KernelSection:
    X: np.ndarray                 # (N, 2, 2) Hermitian, unit trace
    singular_values: np.ndarray   # (N, 4) descending
    degenerate_samples: list
    discarded_energy: float
    monodromy: MonodromySet = field(repr=False, default=None)
    raw: np.ndarray = field(repr=False, default=None)

    @property
    def nsamples(self):
        return self.X.shape[0]

    @property
    def smallest(self):
        return self.singular_values[:, -1]

    @property
    def second_smallest(self):
        return self.singular_values[:, -2]

    def kernel_residual(self, good_only: bool = True) -> float:
        m = self.monodromy.samples
        x = self.X[None]
        r = np.abs(x @ m - inv2(dagger(m)) @ x).max(axis=(0, 2, 3))
        if good_only and self.degenerate_samples:
            r = np.delete(r, self.degenerate_samples)
        return float(r.max())


def kernel_matrix(m: np.ndarray) -> np.ndarray:
    """Stacked L_lambda acting on row-major vec(X): shape (N, 4k, 4)."""
    eye = np.eye(2)
    blocks = []
    for mk in m:
        minvh = inv2(dagger(mk))
        # vec(X M) = (I kron M^T) vec X,  vec(A X) = (A kron I) vec X
        a = np.einsum("ij,nkl->nikjl", eye, np.swapaxes(mk, -1, -2)).reshape(-1, 4, 4)
        b = np.einsum("nij,kl->nikjl", minvh, eye).reshape(-1, 4, 4)
        blocks.append(a - b)
    return np.concatenate(blocks, axis=1)


def kernel_section(M: MonodromySet, band: int | None = None, fill_band: int = 40,
                   gap: float = SPECTRAL_GAP) -> KernelSection:
    m = M.samples
    n = m.shape[1]
    L = kernel_matrix(m)
    _, s, vh = np.linalg.svd(L)
    k = vh[:, -1, :].conj().reshape(n, 2, 2)
    k = 0.5 * (k + dagger(k))
    tr = (k[:, 0, 0] + k[:, 1, 1]).real
    ok = np.abs(tr) > 1e-8
    x = np.zeros_like(k)
    x[ok] = k[ok] / tr[ok, None, None]
    ev = np.full((n, 2), -1.0)
    ev[ok] = np.linalg.eigvalsh(x[ok])
    scale = np.maximum(s[:, 0], 1e-300)
    bad = (s[:, -2] < gap * s[:, -1]) | (s[:, -2] < 1e-10 * scale) | ~ok | (ev[:, 0] < -1e-9)
    flagged = list(np.flatnonzero(bad))
    if len(flagged) > MAX_FLAGGED_FRACTION * n:
        raise KernelDimensionCollapse(
            f"kernel is not one dimensional at {len(flagged)} of {n} samples")
    raw = x.copy()
    if flagged:
        fb = min(fill_band, (n - len(flagged)) // 2 - 1)
        x = fill_masked(x, bad, band=fb, axis=0)
        x = 0.5 * (x + dagger(x))
    mid = (n - 2) // 2
    band = mid if band is None else min(band, mid)
    c = loops.samples_to_coeffs(x, mid, axis=0)
    total = float((np.abs(c) ** 2).sum())
    keep = np.zeros(c.shape[0], dtype=bool)
    keep[mid - band: mid + band + 1] = True
    dropped = float((np.abs(c[~keep]) ** 2).sum())
    if band < mid:
        x = loops.coeffs_to_samples(c[keep], n, axis=0)
    tr = (x[:, 0, 0] + x[:, 1, 1]).real
    x = x / tr[:, None, None]
    return KernelSection(x, s, flagged, dropped / max(total, 1e-300), M, raw)


# ---------------------------------------------------------------------------
# unitarizer

@dataclass
class Unitarizer:
    C: LaurentLoop
    f: ScalarLoop
    residual_unitarity: float
    det_zeros: list
    birkhoff_residual: float
    c_samples: np.ndarray = field(repr=False, default=None)

    def dress(self, phi: np.ndarray) -> np.ndarray:
        """C Phi on samples; phi has shape (..., N, 2, 2)."""
        return self.c_samples @ phi

    def dressed_monodromy(self, M: MonodromySet) -> np.ndarray:
        c = self.c_samples
        return c[None] @ M.samples @ inv2(c)[None]


def unitarity_residual(u: np.ndarray, lam: np.ndarray, det_zeros=(), exclude: float | None = None) -> float:
    n = lam.size
    r = np.abs(u @ dagger(u) - np.eye(2)).max(axis=(0, 2, 3)) if u.ndim == 4 else \
        np.abs(u @ dagger(u) - np.eye(2)).max(axis=(1, 2))
    if det_zeros:
        exclude = 2 * np.pi / n if exclude is None else exclude
        keep = np.ones(n, dtype=bool)
        for a in det_zeros:
            keep &= np.abs(lam - a) > exclude
        r = r[keep]
    return float(r.max()) if r.size else 0.0


def build_unitarizer(section: KernelSection, M: MonodromySet | None = None,
                     limit: float = UNITARITY_LIMIT) -> Unitarizer:
    M = section.monodromy if M is None else M
    n = section.nsamples
    xl = LaurentLoop.from_samples(section.X, (n - 2) // 2)
    res = matrix_singular_birkhoff(xl)
    c = res.c_samples
    lam = loops.unit_samples(n)
    u = c[None] @ M.samples @ inv2(c)[None]
    resid = unitarity_residual(u, lam, res.zeros)
    out = Unitarizer(res.C, res.f, resid, list(res.zeros), res.residual, c)
    if resid > limit:
        raise UnitarityResidualExceeded(f"dressed monodromy unitarity residual {resid:.2e}")
    return out


def scalar_ratio_residual(c1: np.ndarray, c2: np.ndarray) -> float:
    """How far C2 C1^-1 is from a scalar loop, relative to its size."""
    r = c2 @ inv2(c1)
    t = 0.5 * (r[:, 0, 0] + r[:, 1, 1])
    dev = np.abs(r - t[:, None, None] * np.eye(2)).max(axis=(1, 2))
    return float((dev / np.abs(t)).max())
