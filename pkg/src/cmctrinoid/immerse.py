"""From dressed frames to surfaces in R^3.

Frames are carried as sampled loops of shape (..., N, 2, 2).  Every vertex
gets an Iwasawa split X = F B, then the Sym formula
    S = -(2/H) tracefree(F' F^-1)      (F' = d/dtheta at lambda0)
is read off and mapped to R^3 in the basis

    e1 = [[0, i], [i, 0]],  e2 = [[0, -1], [1, 0]],  e3 = [[i, 0], [0, -i]],

via x_k = -1/2 Re tr(S e_k).  Since tr(e_j e_k) = -2 delta_jk this is the
inverse of x -> sum x_k e_k, and with it the w = 1 cylinder at H = 1 has
radius 1/2.

Deep into an end the frame Phi grows exponentially, so it is never formed.
Instead (F, B) is marched ring by ring: over a step the transport Y of
B Phi^-1 dPhi B^-1 is well conditioned, Y = U P is split, and F <- F U,
B <- P B.  This keeps the error near machine precision times the local
growth per step instead of the accumulated growth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sint
from scipy import optimize, spatial

from . import loops
from .errors import ClosureFailure, InsufficientEndDepth, WeightOutOfRange
from .factorize import iwasawa_samples
from .holonomy import rk8_step
from .loops import LaurentLoop, dagger, det2, inv2, tracefree
from .potentials import delaunay_ab, delaunay_residue_samples, necksize_from_weight

SU2_BASIS = np.array([
    [[0, 1j], [1j, 0]],
    [[0, -1], [1, 0]],
    [[1j, 0], [0, -1j]],
])

_E21 = np.array([[0, 0], [1, 0]], dtype=complex)


@dataclass
class ImmersionParams:
    H: float = 1.0
    lambda0: complex = 1.0
    nsamples: int = 128
    band: int = 64
    tol: float = 1e-12
    ridge: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if abs(abs(self.lambda0) - 1) > 1e-12:
            raise ValueError("lambda0 must lie on the unit circle")
        if self.H == 0:
            raise ValueError("H must be nonzero")
        if self.nsamples < 2 * self.band:
            raise ValueError("need nsamples >= 2*band")

    @property
    def effective_band(self) -> int:
        """Band actually resolved: K = N/2 is clamped below the Nyquist mode."""
        return min(self.band, (self.nsamples - 2) // 2)

    @property
    def lam(self) -> np.ndarray:
        return loops.unit_samples(self.nsamples)


# ---------------------------------------------------------------------------
# su2 <-> R^3 and the Sym formula

def su2_to_r3(s: np.ndarray) -> np.ndarray:
    return -0.5 * np.einsum("...ij,kji->...k", s, SU2_BASIS).real


def r3_to_su2(x: np.ndarray) -> np.ndarray:
    return np.einsum("...k,kij->...ij", np.asarray(x, dtype=complex), SU2_BASIS)


def sym_frames(F: np.ndarray, H: float = 1.0, lam0: complex = 1.0):
    """Sym points for unitary frames F of shape (..., N, 2, 2).

    Returns (points (..., 3), skew residual (...)), the residual being the
    size of the Hermitian part discarded by the su2 projection.
    """
    F = np.asarray(F, dtype=complex)
    f0 = loops.value_at(F, lam0)
    df = loops.spectral_derivative_at(F, lam0)
    s = (-2.0 / H) * tracefree(df @ inv2(f0))
    anti = 0.5 * (s - dagger(s))
    resid = 0.5 * np.abs(s + dagger(s)).max(axis=(-2, -1))
    return su2_to_r3(anti), resid


def frame_split(x: np.ndarray, params: ImmersionParams):
    """Iwasawa split of sampled frames; thin wrapper carrying the params."""
    return iwasawa_samples(x, regularization=params.ridge, threads=params.threads, tol=params.tol)


def sym_point(Phi: LaurentLoop, params: ImmersionParams | None = None):
    """Point in R^3 for one frame, with factorization diagnostics."""
    params = params or ImmersionParams(nsamples=Phi.nsamples, band=min(Phi.band, (Phi.nsamples - 2) // 2))
    res = frame_split(Phi.resampled(params.nsamples).samples, params)
    p, skew = sym_frames(res.F, params.H, params.lambda0)
    diag = {
        "residual_recon": float(res.residual_recon),
        "residual_reality": float(res.residual_reality),
        "residual_plus": float(res.residual_plus),
        "skew_residual": float(skew),
    }
    return p, diag


# ---------------------------------------------------------------------------
# mesh container

@dataclass
class EndChart:
    """Log-polar chart of one end: ``index[i, j]`` is ring i (going into the
    end) and ray j (angle ``phi[j]``, full circle without repetition)."""
    end: object
    weight: float
    H: float
    t: np.ndarray
    phi: np.ndarray
    index: np.ndarray


@dataclass
class SurfaceMesh:
    vertices: np.ndarray                        # (V, 3)
    tris: np.ndarray                            # (T, 3)
    quads: np.ndarray                           # (Q, 4)
    residual: np.ndarray                        # (V,) factorization residual
    metric_density: np.ndarray | None = None    # (V,) predicted conformal factor
    param: np.ndarray | None = None             # (V,) domain coordinate z
    param_period: complex = 0.0                 # deck translation of ``param``, if any
    ends: dict = field(default_factory=dict)
    seams: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def nvertices(self) -> int:
        return self.vertices.shape[0]

    def triangles(self) -> np.ndarray:
        """All faces as triangles (quads split fan-wise from their first corner)."""
        q = self.quads
        parts = [self.tris.reshape(-1, 3),
                 q[:, [0, 1, 2]], q[:, [0, 2, 3]]]
        return np.concatenate(parts).astype(np.int64)

    @property
    def normals(self) -> np.ndarray:
        t = self.triangles()
        v = self.vertices
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        n = np.zeros_like(v)
        for k in range(3):
            np.add.at(n, t[:, k], fn)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def bbox_diagonal(self) -> float:
        v = self.vertices[np.all(np.isfinite(self.vertices), axis=1)]
        return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))

    def seam_residual(self, name: str) -> float:
        a, b = self.seams[name]
        if len(a) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices[a] - self.vertices[b], axis=1).max())


# ---------------------------------------------------------------------------
# stable marching of (F, B) along log-polar rays

def _expm_tracefree(m: np.ndarray, mu2: np.ndarray) -> np.ndarray:
    """exp(m) for trace-free m with m^2 = mu2 I."""
    mu = np.sqrt(mu2 + 0j)
    c = np.cosh(mu)
    sh = np.sinc(-1j * mu / np.pi)  # sinh(mu)/mu, regular at mu = 0
    return c[..., None, None] * np.eye(2) + sh[..., None, None] * m


@dataclass
class MarchState:
    """Frames split as X = F B plus V = B A B^-1, batched over rays.

    det B is carried as a running product: recomputing it from the entries
    of B (which grow like exp(|t|/2)) would cancel catastrophically.

    V = B A B^-1 with B in the positive loop group and A a Laurent
    polynomial with modes -1..1, so V has no modes below -1.  Roundoff
    there is expanded by every later conjugation P V P^-1 and acts as a
    perturbation of the potential of size cond(B); the filter removes it.
    Modes above ``vband`` are dropped as well.
    """
    F: np.ndarray
    B: np.ndarray
    V: np.ndarray
    detB: np.ndarray
    vband: int | None = None

    def _filter(self):
        if self.vband is None:
            return
        n = self.V.shape[-3]
        c = np.fft.fft(self.V, axis=-3)
        k = np.fft.fftfreq(n, 1.0 / n)
        c[..., (k < -1) | (k > self.vband), :, :] = 0
        self.V = np.fft.ifft(c, axis=-3)

    def resplit(self, y: np.ndarray, params: ImmersionParams):
        res = frame_split(y, params)
        p = res.B
        self.F = self.F @ res.F
        self.B = p @ self.B
        self.detB = det2(p) * self.detB
        self.V = p @ self.V @ inv2(p)
        self._filter()
        return res

    def binv(self) -> np.ndarray:
        b = self.B
        adj = np.empty_like(b)
        adj[..., 0, 0] = b[..., 1, 1]
        adj[..., 1, 1] = b[..., 0, 0]
        adj[..., 0, 1] = -b[..., 0, 1]
        adj[..., 1, 0] = -b[..., 1, 0]
        return adj / self.detB[..., None, None]


def march_band(params: ImmersionParams) -> int:
    """Band kept in V while marching: a third of the samples."""
    return min(params.effective_band, params.nsamples // 3)


def start_march(x: np.ndarray, A: np.ndarray, params: ImmersionParams) -> tuple[MarchState, object]:
    res = frame_split(x, params)
    b = res.B
    st = MarchState(res.F, b, b @ A @ inv2(b), det2(b), march_band(params))
    st._filter()
    return st, res


def march_delaunay(state: MarchState, dt: float, mu2: np.ndarray, params: ImmersionParams, substeps: int = 1):
    """Advance an unperturbed Delaunay frame by dt in the log coordinate."""
    h = dt / substeps
    for _ in range(substeps):
        y = _expm_tracefree(h * state.V, (h * h) * mu2)
        state.resplit(y, params)
    return state


def march_perturbed(state: MarchState, t0: float, dt: float, eps, params: ImmersionParams,
                    max_h: float = 0.05):
    """Advance X' = X (A + eps(t) E21) from t0 to t0 + dt.

    ``eps(t)`` returns the perturbation scalar with shape (R, N).  B is
    frozen over the step so K = B E21 B^-1 is constant; the transport of
    B X^-1 X' B^-1 = V + eps K is integrated with fixed-step RK8.
    The step count is chosen per ray, so the result for a ray does not
    depend on which other rays share the batch.
    Returns the state and the largest number of RK8 steps.
    """
    K = state.B @ _E21 @ state.binv()
    V = state.V
    scale = np.abs(V).reshape(V.shape[0], -1).max(axis=1)
    steps = np.maximum(1, np.ceil(abs(dt) * np.maximum(scale, 1.0) / max_h)).astype(int)
    y = np.empty_like(V)
    for m in np.unique(steps):
        rows = np.flatnonzero(steps == m)
        Vr, Kr = V[rows], K[rows]

        def rhs(t, Vr=Vr, Kr=Kr, rows=rows):
            return Vr + eps(t)[rows][..., None, None] * Kr

        yr = np.broadcast_to(np.eye(2, dtype=complex), Vr.shape).copy()
        h = dt / m
        t = t0
        for _ in range(m):
            yr = rk8_step(yr, rhs, t, h)
            t += h
        y[rows] = yr
    state.resplit(y, params)
    return state, int(steps.max())


# ---------------------------------------------------------------------------
# Delaunay reference surfaces

def delaunay_frame(w: float, zeta, params: ImmersionParams) -> np.ndarray:
    """Phi = exp(zeta A) in closed form, shape zeta.shape + (N, 2, 2)."""
    lam = params.lam
    A = delaunay_residue_samples(w, lam, params.H)
    mu2 = A[:, 0, 1] * A[:, 1, 0]
    zeta = np.asarray(zeta, dtype=complex)[..., None]
    return _expm_tracefree(zeta[..., None, None] * A, zeta ** 2 * mu2)


def _delaunay_frames_along(w: float, xs: np.ndarray, params: ImmersionParams, max_dx: float = 0.25):
    """(F, B) at real zeta = xs, marched outward from zeta = 0."""
    lam = params.lam
    A = delaunay_residue_samples(w, lam, params.H)
    mu2 = A[:, 0, 1] * A[:, 1, 0]
    n = lam.size
    F = np.zeros((xs.size, n, 2, 2), dtype=complex)
    B = np.zeros_like(F)
    resid = np.zeros(xs.size)
    for sign in (1.0, -1.0):
        sel = np.flatnonzero(sign * xs >= 0) if sign > 0 else np.flatnonzero(xs < 0)
        order = sel[np.argsort(sign * xs[sel])]
        st = MarchState(np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy(),
                        np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy(), A.copy(),
                        np.ones(n, dtype=complex), march_band(params))
        x = 0.0
        for i in order:
            dx = xs[i] - x
            if dx != 0:
                sub = max(1, int(np.ceil(abs(dx) / max_dx)))
                march_delaunay(st, dx, mu2, params, substeps=sub)
                x = xs[i]
            F[i], B[i] = st.F, st.B
            resid[i] = float(np.abs(st.F @ dagger(st.F) - np.eye(2)).max())
    return F, B, resid


def delaunay_surface(w: float, params: ImmersionParams | None = None, grid=None,
                     xrange=(-10.0, 10.0), nx: int = 121, ny: int = 64) -> SurfaceMesh:
    """Delaunay surface of weight w on a zeta-rectangle.

    ``grid`` is (xs, ys) with ys covering one turn [0, 2 pi) without the
    endpoint; the vertex for y = 2 pi is computed separately as a closure
    check.  The mesh carries an end chart running towards decreasing x.
    """
    params = params or ImmersionParams()
    if not np.isfinite(w) or w == 0 or w > 1 / params.H ** 2 + 1e-15:
        raise WeightOutOfRange(f"Delaunay weight {w} outside (-inf, 1/H^2] minus 0")
    if grid is None:
        xs = np.linspace(xrange[0], xrange[1], nx)
        ys = 2 * np.pi * np.arange(ny) / ny
    else:
        xs, ys = (np.asarray(g, dtype=float) for g in grid)
    lam = params.lam
    A = delaunay_residue_samples(w, lam, params.H)
    mu2 = A[:, 0, 1] * A[:, 1, 0]
    F, B, resid = _delaunay_frames_along(w, xs, params)
    # F(x + i y) = exp(i y A) F(x); exp(i y A) is unitary on the circle
    yy = np.append(ys, 2 * np.pi)
    rot = _expm_tracefree(1j * yy[:, None, None, None] * A, -(yy ** 2)[:, None] * mu2)
    frames = rot[None, :] @ F[:, None]
    pts, skew = sym_frames(frames, params.H, params.lambda0)
    closure = float(np.linalg.norm(pts[:, -1] - pts[:, 0], axis=-1).max())
    pts = pts[:, :-1]
    nxs, nys = pts.shape[:2]
    idx = np.arange(nxs * nys).reshape(nxs, nys)
    quads = _grid_quads(idx, periodic=True)
    b0 = B.mean(axis=1)  # lambda^0 coefficient of the plus factor
    a, _ = delaunay_ab(w, params.H)
    dens = metric_density(b0, a, params.H)
    zeta = xs[:, None] + 1j * ys[None, :]
    order = np.argsort(-xs)
    chart = EndChart("delaunay", float(w), params.H, xs[order], ys, idx[order])
    mesh = SurfaceMesh(
        vertices=pts.reshape(-1, 3),
        tris=np.zeros((0, 3), dtype=np.int64),
        quads=quads,
        residual=np.repeat(resid, nys),
        metric_density=np.repeat(dens, nys),
        param=zeta.reshape(-1),
        param_period=2j * np.pi,
        ends={"delaunay": chart},
    )
    mesh.diagnostics.update({
        "kind": "delaunay",
        "weight": float(w),
        "closure_residual": closure,
        "skew_residual": float(skew.max()),
        "factorization_residual": float(resid.max()),
    })
    return mesh


def _grid_quads(idx: np.ndarray, periodic: bool) -> np.ndarray:
    """Quads (i,j),(i+1,j),(i+1,j+1),(i,j+1) over an index grid."""
    a = idx
    b = np.roll(idx, -1, axis=1) if periodic else idx[:, 1:]
    if not periodic:
        a = idx[:, :-1]
    q = np.stack([a[:-1], a[1:], b[1:], b[:-1]], axis=-1)
    return q.reshape(-1, 4)


# ---------------------------------------------------------------------------
# Delaunay profile (oracle for fits)

@dataclass
class DelaunayProfile:
    """Meridian of the Delaunay surface of weight w in the conformal coordinate x.

    axial(x), radius(x) with the neck at x = 0; ``period`` is the x-period
    and ``axial_period`` the translation along the axis over one period.
    """
    w: float
    H: float
    period: float
    axial_period: float
    x: np.ndarray
    axial: np.ndarray
    radius: np.ndarray
    daxial: np.ndarray
    dradius: np.ndarray

    @property
    def neck(self) -> float:
        return float(self.radius[np.argmin(np.abs(self.x))])


def delaunay_profile(w: float, H: float = 1.0, periods: float = 1.0, pts_per_period: int = 4000) -> DelaunayProfile:
    """Integrate r'' = r - 2 r (r^2 + c), s' = r^2 + c with c = w/4 (H = 1),
    then rescale lengths by 1/H.  For w = 1 this is the cylinder r = 1/2."""
    wh = w * H * H
    if not np.isfinite(wh) or wh == 0 or wh > 1 + 1e-15:
        raise WeightOutOfRange(f"Delaunay weight {w} outside (-inf, 1/H^2] minus 0")
    c = wh / 4.0
    r0 = abs(float(necksize_from_weight(wh)))

    def rhs(x, y):
        s, r, dr = y
        return [r * r + c, dr, r - 2 * r * (r * r + c)]

    if abs(wh - 1.0) < 1e-14:
        period = 2 * np.pi  # any period works for the cylinder; pick the angular one
    else:
        # half period: neck to bulge, where r' returns to zero
        def ev(x, y):
            return y[2]
        ev.terminal = True
        ev.direction = -1
        sol_half = sint.solve_ivp(rhs, (0, 100), [0.0, r0, 0.0], method="DOP853", rtol=1e-13,
                                  atol=1e-15, events=ev, first_step=1e-3)
        if not sol_half.t_events[0].size:
            raise WeightOutOfRange(f"no Delaunay period for weight {w}")
        period = 2 * float(sol_half.t_events[0][0])
    span = periods * period
    n = max(16, int(round(pts_per_period * periods)))
    grid = span * np.arange(n + 1) / n
    sol = sint.solve_ivp(rhs, (0, span), [0.0, r0, 0.0], method="DOP853",
                         rtol=1e-13, atol=1e-15, t_eval=grid)
    y = sol.y
    # s is odd and r even about the neck
    xs = np.concatenate([-grid[::-1], grid[1:]])
    s = np.concatenate([-y[0][::-1], y[0][1:]])
    r = np.concatenate([y[1][::-1], y[1][1:]])
    dr = np.concatenate([-y[2][::-1], y[2][1:]])
    ds = r * r + c
    if abs(wh - 1.0) < 1e-14:
        axial_period = 0.5 * period
    else:
        # the bulge is a symmetry point, so one period advances 2 s(P/2)
        axial_period = 2.0 * float(sol_half.y_events[0][0][0])
    return DelaunayProfile(w, H, period, axial_period / H, xs, s / H, r / H, ds / H, dr / H)


# ---------------------------------------------------------------------------
# metric and Hopf differential

def metric_density(b0: np.ndarray, alpha, H: float = 1.0) -> np.ndarray:
    """Conformal factor 4 H^-2 R^2 |alpha|^2 with R = B11/B22 at lambda = 0."""
    b0 = np.asarray(b0)
    R = np.abs(b0[..., 0, 0] / b0[..., 1, 1])
    return 4.0 / H ** 2 * R ** 2 * np.abs(alpha) ** 2


def hopf_differential(alpha, beta, H: float = 1.0, lam0: complex = 1.0):
    """-2 H^-1 alpha beta lambda^-1, with beta the lambda^0 lower-left coefficient."""
    return -2.0 / H * np.asarray(alpha) * np.asarray(beta) / lam0


def discrete_metric_ratio(mesh: SurfaceMesh, tri: np.ndarray | None = None) -> np.ndarray:
    """Per triangle: (surface area / domain area) / mean predicted density."""
    t = mesh.triangles() if tri is None else tri
    v = mesh.vertices
    z = mesh.param
    a3 = 0.5 * np.linalg.norm(np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1)
    dz1 = z[t[:, 1]] - z[t[:, 0]]
    dz2 = z[t[:, 2]] - z[t[:, 0]]
    per = mesh.param_period
    if per:
        dz1 = dz1 - per * np.round((dz1 / per).real)
        dz2 = dz2 - per * np.round((dz2 / per).real)
    a2 = 0.5 * np.abs((dz1.conj() * dz2).imag)
    pred = mesh.metric_density[t].mean(axis=1)
    return a3 / (a2 * pred)


def metric_hopf_diagnostics(mesh: SurfaceMesh, tri: np.ndarray | None = None, alpha=1.0, beta=None,
                            H: float = 1.0, lam0: complex = 1.0) -> dict:
    """Compare the mesh's area distortion with the predicted conformal factor.

    Boundary-adjacent triangles are included; pass ``tri`` to restrict to
    interior cells.  ``beta`` (if given) yields the predicted Hopf
    differential at the same points.
    """
    ratio = discrete_metric_ratio(mesh, tri)
    rel = np.abs(ratio - 1.0)
    out = {
        "max_relative_metric_error": float(rel.max()),
        "median_relative_metric_error": float(np.median(rel)),
        "within_5_percent": bool(rel.max() <= 0.05),
    }
    if beta is not None:
        out["hopf"] = hopf_differential(alpha, beta, H, lam0)
    return out


# ---------------------------------------------------------------------------
# trinoids

@dataclass
class MeshSpec:
    rays: int = 64                 # rays per full circle in each end chart
    rho: float = 0.4               # chart radius in the end coordinate
    end_depth: float = 3.5         # chart depth, in Delaunay periods
    rings_per_period: int = 26
    density: float = 1.0           # central patch refinement factor
    seed: int = 0
    max_h: float = 0.05            # RK8 step bound (times |V|) in the end charts
    unitarity_limit: float = 1e-9  # end charts stop where the frame drifts further from SU2


@dataclass
class TrinoidFrames:
    """Everything upstream of the geometry: potential, monodromy, dressing."""
    weights: object
    xi: object
    monodromy: object
    section: object
    unitarizer: object
    z0: complex = 0.5 - 0.5j


def prepare_trinoid(W, params: ImmersionParams | None = None, allow_cylinder: bool = False,
                    z0: complex = 0.5 - 0.5j) -> TrinoidFrames:
    from .holonomy import monodromies
    from .potentials import trinoid_potential
    from .unitarize import build_unitarizer, kernel_section

    params = params or ImmersionParams()
    xi = trinoid_potential(W, allow_cylinder=allow_cylinder)
    M = monodromies(xi, z0, nsamples=params.nsamples)
    sec = kernel_section(M, band=params.effective_band)
    U = build_unitarizer(sec, M)
    return TrinoidFrames(W, xi, M, sec, U, z0)


def _propagate(xi, z: np.ndarray, levels, phi: np.ndarray, lam: np.ndarray, stats=None):
    from .holonomy import Segments, transport

    for par, chi in levels:
        phi[chi] = transport(xi, Segments(z[par], z[chi]), phi[par], lam, stats=stats)
    return phi


def _chart_rays(dom, end, lower_glob, upper_glob):
    """Ray list for one end: (phi, global ring-0 vertex, half), ordered by angle.

    The half holding arg u in [-pi, 0] comes first.  Returns also the
    positions after which consecutive rays are not joined and the cut pairs.
    """
    L, U = dom.lower, dom.upper
    lo = [(p, lower_glob[i], -1) for p, i in zip(L.ring_phi[end], L.ring[end])]
    up = [(p, upper_glob[i], +1) for p, i in zip(U.ring_phi[end], U.ring[end])]
    first, second = (lo, up) if end == 0 else (up, lo)
    first = sorted(first, key=lambda r: r[0])
    second = sorted(second, key=lambda r: r[0])
    breaks, cuts = [], []
    if first[-1][1] == second[0][1]:       # shared vertex on (0, 1)
        rays = first + second[1:]
    else:                                  # both copies of a cut ray
        rays = first + second
        breaks.append(len(first) - 1)
        cuts.append((len(first) - 1, len(first)))
    cuts.append((0, len(rays) - 1))
    return rays, breaks, cuts


def _march_end_rays(x0: np.ndarray, ph: np.ndarray, g, A: np.ndarray, tt: np.ndarray,
                    params: ImmersionParams, max_h: float, limit: float = np.inf):
    """March dressed frames x0 (one per ray of angle ph) through the rings tt.

    Returns points (rings, rays, 3), unitarity residuals and predicted
    metric densities (rings, rays), and the RK8 substep count per ray.
    Marching stops before the first ring whose unitarity residual exceeds
    ``limit``, so fewer rings than requested may come back.
    """
    H = params.H
    lam = params.lam
    state, _ = start_march(x0, np.broadcast_to(A, x0.shape), params)
    eiph = np.exp(1j * ph)[:, None]

    def eps(t):
        return g.perturbation_scalar(np.exp(t) * eiph, lam[None, :])

    dudz2 = (lambda u: np.abs(u) ** 4) if g.end == "inf" else (lambda u: 1.0)
    a2 = abs(g.a) ** 2
    pts, res, dens = [], [], []
    substeps = 0
    for i in range(1, tt.size):
        state, m = march_perturbed(state, tt[i - 1], tt[i] - tt[i - 1], eps, params, max_h)
        substeps += m
        r = np.abs(state.F @ dagger(state.F) - np.eye(2)).max(axis=(-3, -2, -1))
        if r.max() > limit:
            break
        p, _ = sym_frames(state.F, H, params.lambda0)
        u = np.exp(tt[i]) * eiph[:, 0]
        R = np.abs(state.B.mean(axis=-3))
        R = R[:, 0, 0] / R[:, 1, 1]
        pts.append(p)
        res.append(r)
        dens.append(4 / H ** 2 * R ** 2 * a2 * dudz2(u) / np.abs(u) ** 2)
    if not pts:
        return np.zeros((0, ph.size, 3)), np.zeros((0, ph.size)), np.zeros((0, ph.size)), substeps
    return np.array(pts), np.array(res), np.array(dens), substeps


def trinoid_surface(W, params: ImmersionParams | None = None, meshspec: MeshSpec | None = None,
                    frames: TrinoidFrames | None = None, closure_tol: float = 1e-5,
                    check_closure: bool = True, allow_cylinder: bool = False) -> SurfaceMesh:
    """Trinoid mesh: central patch plus three log-polar end charts."""
    from .domain import bfs_levels, build_domain, end_point
    from .holonomy import Segments, TransportStats, transport
    from .potentials import end_gauge

    timing = {}
    t_start = time.perf_counter()
    params = params or ImmersionParams()
    spec = meshspec or MeshSpec()
    frames = frames or prepare_trinoid(W, params, allow_cylinder)
    timing["monodromy_and_unitarizer"] = time.perf_counter() - t_start
    xi = frames.xi
    lam = params.lam
    n = lam.size
    C = frames.unitarizer.c_samples
    H = params.H

    # -- central patch
    t0 = time.perf_counter()
    dom = build_domain(spec.rho, spec.rays, spec.density, spec.seed)
    L, Up = dom.lower, dom.upper
    nh = L.z.size
    stats = TransportStats()
    eye = np.broadcast_to(np.eye(2, dtype=complex), (1, n, 2, 2))
    root = int(np.argmin(np.abs(L.z - frames.z0)))
    phiL = np.zeros((nh, n, 2, 2), dtype=complex)
    phiL[root] = transport(xi, Segments([frames.z0], [L.z[root]]), eye, lam, stats=stats)[0]
    _propagate(xi, L.z, bfs_levels(nh, L.tris, [root]), phiL, lam, stats)
    phiU = np.zeros_like(phiL)
    phiU[L.axis01] = phiL[L.axis01]
    _propagate(xi, Up.z, bfs_levels(nh, Up.tris, list(L.axis01)), phiU, lam, stats)
    timing["central_transport"] = time.perf_counter() - t0

    lower_glob = np.arange(nh)
    upper_glob = np.full(nh, -1)
    shared = np.zeros(nh, dtype=bool)
    shared[L.axis01] = True
    upper_glob[shared] = lower_glob[shared]
    upper_glob[~shared] = nh + np.arange((~shared).sum())
    ncore = nh + int((~shared).sum())
    core_phi = np.zeros((ncore, n, 2, 2), dtype=complex)
    core_phi[lower_glob] = phiL
    core_phi[upper_glob] = phiU
    core_z = np.zeros(ncore, dtype=complex)
    core_z[lower_glob] = L.z
    core_z[upper_glob] = Up.z
    t0 = time.perf_counter()
    res = frame_split(C[None] @ core_phi, params)
    pts, skew = sym_frames(res.F, H, params.lambda0)
    core_res = np.maximum(res.residual_reality, res.residual_recon)
    core_dens = metric_density(res.B.mean(axis=-3), 1.0, H)
    timing["central_sym"] = time.perf_counter() - t0
    tris = [lower_glob[L.tris], upper_glob[Up.tris]]
    mirror = np.zeros(ncore, dtype=np.int64)
    mirror[lower_glob] = upper_glob
    mirror[upper_glob] = lower_glob
    seams_a = [lower_glob[L.cut_neg], lower_glob[L.cut_pos]]
    seams_b = [upper_glob[Up.cut_neg], upper_glob[Up.cut_pos]]
    labels = ["core"] * 2

    # -- end charts
    verts = [pts]
    resid = [core_res]
    dens = [core_dens]
    params_z = [core_z]
    quads = []
    mirror_parts = [mirror]
    ends = {}
    count = ncore
    t0 = time.perf_counter()
    march_info = {}
    for end in ("0", "1", "inf"):
        e = 0 if end == "0" else (1 if end == "1" else "inf")
        g = end_gauge(W, e, allow_cylinder)
        w = g.w
        prof = delaunay_profile(w, H, periods=0.5, pts_per_period=200)
        dt = prof.period / spec.rings_per_period
        nr = int(np.ceil(spec.end_depth * spec.rings_per_period))
        rays, breaks, cuts = _chart_rays(dom, e, lower_glob, upper_glob)
        ph = np.array([r[0] for r in rays])
        ring0 = np.array([r[1] for r in rays])
        nray = ph.size
        u0 = spec.rho * np.exp(1j * ph)
        psi = core_phi[ring0] @ g.h(u0[:, None], lam[None, :]) @ g.g12(u0[:, None], lam[None, :])
        A = g.residue(lam)
        tt = float(np.log(spec.rho)) - dt * np.arange(nr + 1)
        chunks = np.array_split(np.arange(nray), max(1, min(params.threads, nray)))
        jobs = [(C[None] @ psi[c], ph[c]) for c in chunks]

        def run(job, g=g, A=A, tt=tt):
            return _march_end_rays(job[0], job[1], g, A, tt, params, spec.max_h, spec.unitarity_limit)

        if len(jobs) > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(len(jobs)) as ex:
                outs = list(ex.map(run, jobs))
        else:
            outs = [run(jobs[0])]
        nr_req = nr
        nr = min(o[0].shape[0] for o in outs)
        if nr < 1:
            raise InsufficientEndDepth(f"end {end}: frame unitarity lost before the first ring")
        tt = tt[:nr + 1]
        end_pts = np.concatenate([o[0][:nr] for o in outs], axis=1)
        end_res = np.concatenate([o[1][:nr] for o in outs], axis=1)
        end_dens = np.concatenate([o[2][:nr] for o in outs], axis=1)
        substeps = max(o[3] for o in outs)
        u = np.exp(tt[1:, None] + 1j * ph[None, :])
        end_z = end_point(e, u)
        idx = np.zeros((nr + 1, nray), dtype=np.int64)
        idx[0] = ring0
        idx[1:] = count + np.arange(nr * nray).reshape(nr, nray)
        count += nr * nray
        verts.append(end_pts.reshape(-1, 3))
        resid.append(end_res.ravel())
        dens.append(end_dens.ravel())
        params_z.append(end_z.ravel())
        # quads, counterclockwise in u (hence in z)
        ok = np.ones(nray - 1, dtype=bool)
        ok[breaks] = False
        jj = np.flatnonzero(ok)
        q = np.stack([idx[:-1][:, jj], idx[:-1][:, jj + 1], idx[1:][:, jj + 1], idx[1:][:, jj]], axis=-1)
        quads.append(q.reshape(-1, 4))
        for a, b in cuts:
            seams_a.append(idx[1:, a])
            seams_b.append(idx[1:, b])
            labels.append(f"end_{end}")
        # mirror: ray with angle -phi in the other half
        halves = np.array([r[2] for r in rays])
        mir = np.zeros(nray, dtype=np.int64)
        for j in range(nray):
            cand = np.flatnonzero(np.isclose(ph, -ph[j]) & ((halves != halves[j]) | np.isclose(ph[j], 0)))
            cand = cand[np.argmin(np.abs(cand - (nray - 1 - j)))]
            mir[j] = cand
        mirror_parts.append(idx[1:, mir].reshape(-1))
        keep = np.ones(nray, dtype=bool)
        keep[[b for _, b in cuts]] = False
        ends[end] = EndChart(e, float(w), H, tt, ph, idx, )
        ends[end].fit_rays = np.flatnonzero(keep)
        march_info[end] = {"rings": nr, "rings_requested": nr_req, "dt": float(dt),
                           "rk8_substeps": int(substeps), "period": float(prof.period),
                           "depth_periods": nr * dt / prof.period, "truncated": nr < nr_req}
    timing["end_charts"] = time.perf_counter() - t0

    V = np.concatenate(verts)
    mesh = SurfaceMesh(
        vertices=V,
        tris=np.concatenate(tris),
        quads=np.concatenate(quads),
        residual=np.concatenate(resid),
        metric_density=np.concatenate(dens),
        param=np.concatenate(params_z),
        ends=ends,
    )
    mesh.mirror = np.concatenate(mirror_parts)
    mesh.core_tris = np.concatenate(tris)
    sa = np.concatenate(seams_a)
    sb = np.concatenate(seams_b)
    mesh.seams["cuts"] = (sa, sb)
    diag = mesh.bbox_diagonal()
    cres = mesh.seam_residual("cuts")
    mesh.diagnostics.update({
        "kind": "trinoid",
        "weights": [float(x) for x in W.w],
        "vertices": int(V.shape[0]),
        "faces": int(mesh.triangles().shape[0]),
        "bbox_diagonal": diag,
        "closure_residual": cres,
        "closure_relative": cres / diag,
        "max_factorization_residual": float(mesh.residual.max()),
        "skew_residual_core": float(skew.max()),
        "transport_steps": int(stats.steps),
        "domain": dom.info,
        "ends": march_info,
        "timing": timing,
    })
    if check_closure and not (cres <= closure_tol * diag):
        err = ClosureFailure(f"cut-seam mismatch {cres:.3e} exceeds {closure_tol:g} x diagonal {diag:.3g}")
        err.mesh = mesh
        raise err
    return mesh


# ---------------------------------------------------------------------------
# symmetry and asymptotics

def symmetry_residual(mesh: SurfaceMesh) -> dict:
    """Best rigid motion (reflections allowed) taking f(z) to f(conj z)."""
    from scipy.linalg import orthogonal_procrustes

    p = mesh.vertices
    q = p[mesh.mirror]
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    R, _ = orthogonal_procrustes(p - pc, q - qc)
    d = np.linalg.norm((p - pc) @ R + qc - q, axis=1)
    diag = mesh.bbox_diagonal()
    return {"max_abs": float(d.max()), "relative": float(d.max() / diag),
            "determinant": float(np.linalg.det(R))}


class _MeridianCurve:
    """Delaunay meridian (axial, radius) as a C1 cubic Hermite curve in x."""

    def __init__(self, prof: DelaunayProfile):
        from scipy.interpolate import CubicHermiteSpline

        self.x = prof.x
        self.poly = np.c_[prof.axial, prof.radius]
        self.tree = spatial.cKDTree(self.poly)
        self.s = CubicHermiteSpline(prof.x, prof.axial, prof.daxial)
        self.r = CubicHermiteSpline(prof.x, prof.radius, prof.dradius)
        self.ds, self.dr = self.s.derivative(), self.r.derivative()
        self.dds, self.ddr = self.ds.derivative(), self.dr.derivative()

    def nearest(self, q: np.ndarray, newton: int = 4):
        """Distance from planar points q, and the unit tangent at the foot point."""
        _, k = self.tree.query(q)
        x = self.x[k].astype(float)
        lo, hi = self.x[0], self.x[-1]
        for _ in range(newton):
            es, er = self.s(x) - q[:, 0], self.r(x) - q[:, 1]
            d1s, d1r = self.ds(x), self.dr(x)
            g = es * d1s + er * d1r
            h = d1s ** 2 + d1r ** 2 + es * self.dds(x) + er * self.ddr(x)
            x = np.clip(x - g / np.where(h > 0, h, d1s ** 2 + d1r ** 2), lo, hi)
        d = np.hypot(self.s(x) - q[:, 0], self.r(x) - q[:, 1])
        t = np.c_[self.ds(x), self.dr(x)]
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        return d, t


@dataclass
class AsymptoticsReport:
    end: object
    weight: float
    neck: float
    period: float
    c0: list
    c1: list
    axis: np.ndarray
    center: np.ndarray
    phase: float
    decreasing: bool

    def as_dict(self):
        return {"end": str(self.end), "weight": self.weight, "neck_radius": self.neck,
                "period": self.period, "c0_deviation": self.c0, "normal_deviation": self.c1,
                "axis": self.axis.tolist(), "center": self.center.tolist(), "phase": self.phase,
                "decreasing_last_two": self.decreasing}


def end_asymptotics(mesh: SurfaceMesh, end, W=None, H: float | None = None, fit_periods: int = 2,
                    min_periods: int = 3) -> AsymptoticsReport:
    """Per-period distance from the end to its best-fitting Delaunay surface.

    The axis is the principal direction of the ring centroids over the last
    ``fit_periods`` periods; the phase along the axis minimizes the largest
    distance there.  Distances are measured in the meridian half plane.
    """
    key = str(end) if str(end) in mesh.ends else end
    chart = mesh.ends[key]
    H = chart.H if H is None else H
    w = chart.weight if W is None else float(W.permuted(chart.end).w1)
    rays = getattr(chart, "fit_rays", np.arange(chart.index.shape[1]))
    idx = chart.index[:, rays]
    pts = mesh.vertices[idx]
    nrm = mesh.normals[idx]
    depth = np.abs(chart.t - chart.t[0])
    prof0 = delaunay_profile(w, H, periods=0.5, pts_per_period=100)
    P = prof0.period
    nper = int(np.floor(depth[-1] / P + 1e-9))
    if nper < min_periods:
        raise InsufficientEndDepth(f"end reaches {depth[-1] / P:.2f} periods, need {min_periods}")
    per = np.minimum((depth / P).astype(int), nper - 1)
    per[depth > nper * P + 1e-9] = -1
    fit = (per >= nper - fit_periods) & (per >= 0)
    cent = pts[fit].mean(axis=1)
    c = cent.mean(axis=0)
    _, _, vt = np.linalg.svd(cent - c)
    ax = vt[0]
    if (cent[-1] - cent[0]) @ ax < 0:
        ax = -ax
    prof = delaunay_profile(w, H, periods=depth[-1] / P + 2, pts_per_period=2000)
    curve = _MeridianCurve(prof)

    def meridian(p):
        d = p - c
        s = d @ ax
        r = np.linalg.norm(d - s[:, None] * ax, axis=1)
        return s, r

    fp = pts[fit].reshape(-1, 3)
    s_fit, r_fit = meridian(fp)

    def obj(sig):
        return curve.nearest(np.c_[s_fit - sig, r_fit])[0].max()

    T = abs(prof.axial_period) if abs(prof.axial_period) > 1e-9 else 1.0
    grid = np.linspace(-T / 2, T / 2, 65)
    vals = [obj(g) for g in grid]
    g0 = grid[int(np.argmin(vals))]
    opt = optimize.minimize_scalar(obj, bounds=(g0 - T / 64, g0 + T / 64), method="bounded",
                                   options={"xatol": 1e-10})
    sig = float(opt.x)
    c0, c1 = [], []
    for k in range(nper):
        sel = per == k
        q = pts[sel].reshape(-1, 3)
        nq = nrm[sel].reshape(-1, 3)
        s, r = meridian(q)
        d, tng = curve.nearest(np.c_[s - sig, r])
        # reference normal in the meridian plane, lifted to R^3
        dq = q - c
        er = dq - (dq @ ax)[:, None] * ax
        er /= np.maximum(np.linalg.norm(er, axis=1, keepdims=True), 1e-300)
        nref = (-tng[:, 1])[:, None] * ax + tng[:, 0][:, None] * er
        cosang = np.clip(np.abs((nref * nq).sum(1)), 0, 1)
        c0.append(float(d.max()))
        c1.append(float(np.arccos(cosang).max()))
    dec = bool(len(c0) >= 3 and c0[-1] < c0[-2] < c0[-3])
    return AsymptoticsReport(chart.end, w, float(prof.neck), float(P), c0, c1, ax, c, sig, dec)
