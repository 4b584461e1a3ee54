"""Planar meshes of the thrice-punctured sphere.

The domain is split along the real axis into the closed half planes H-
and H+.  Each end gets a log-polar chart |u| < rho (u = z, 1 - z, 1/z);
what remains is a central patch, triangulated per half plane from
boundary rings, axis points and a dart-thrown interior filling whose
spacing follows the cylinder metric |dz| / d(z) of the punctured sphere.

H+ is the mirror image of H- (z -> conj z), vertex by vertex, so the
reflection symmetry can be checked without any matching.  Vertices on the
segment (0, 1) are shared by both halves; the rays (-inf, 0) and (1, inf)
are the cuts and their vertices appear twice, once per half.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import spatial

ENDS = (0, 1, "inf")


def end_point(end, u):
    """z for the end-local coordinate u."""
    u = np.asarray(u, dtype=complex)
    if end == 0:
        return u
    if end == 1:
        return 1 - u
    return 1 / u


def cyl_scale(z):
    """Local length scale d(z): |z| near 0, |z - 1| near 1 and |z| near infinity."""
    z = np.asarray(z, dtype=complex)
    a = np.abs(z)
    return 1.0 / (1.0 / a + 1.0 / np.abs(z - 1) - 1.0 / (1.0 + a))


@dataclass
class HalfPatch:
    z: np.ndarray          # vertex coordinates
    tris: np.ndarray       # (T, 3) local indices, counterclockwise in z
    ring: dict             # end -> local indices of ring vertices, by ray
    ring_phi: dict         # end -> ray angles
    axis01: np.ndarray     # local indices on the segment (0, 1), ring ends included
    cut_neg: np.ndarray    # local indices on (-inf, 0)
    cut_pos: np.ndarray    # local indices on (1, inf)


@dataclass
class DomainMesh:
    rho: float
    nrays: int
    lower: HalfPatch
    upper: HalfPatch
    info: dict = field(default_factory=dict)


def _axis_points(a: float, b: float, scale: float) -> np.ndarray:
    """Points from a to b (inclusive) spaced by scale * d(x)."""
    xs = [a]
    x = a
    while True:
        x = x + scale * float(cyl_scale(x))
        if x >= b:
            break
        xs.append(x)
    xs = np.array(xs + [b])
    # stretch so the last gap is not a sliver
    if len(xs) > 2 and (b - xs[-2]) < 0.5 * scale * float(cyl_scale(b)):
        xs = np.delete(xs, -2)
    return xs


def _dart_fill(fixed: np.ndarray, keep, scale: float, bbox, seed: int = 0) -> np.ndarray:
    """Greedy Poisson-disk filling with radius scale * d(z), avoiding ``fixed``."""
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = bbox
    # candidates: hex lattices refined where d(z) is small
    cands = []
    gx, gy = np.meshgrid(np.linspace(x0, x1, 200), np.linspace(y0, y1, 100))
    g = (gx + 1j * gy).ravel()
    g = g[keep(g)]
    h = 0.5 * scale * float(cyl_scale(g).min())
    while h < (x1 - x0):
        step = 0.3 * h
        xs = np.arange(x0, x1, step)
        ys = np.arange(y0, y1, step * np.sqrt(3) / 2)
        X, Y = np.meshgrid(xs, ys)
        X = X + 0.5 * step * (np.arange(ys.size)[:, None] % 2)
        z = (X + 1j * Y).ravel()
        s = scale * cyl_scale(z)
        z = z[(s >= h) & (s < 2 * h) & keep(z)]
        cands.append(z)
        h *= 2
    cand = np.concatenate(cands)
    cand = cand + (rng.random(cand.size) - 0.5) * 1e-3 * scale * cyl_scale(cand)
    cand = cand[keep(cand)]
    order = rng.permutation(cand.size)
    cand = cand[order]
    rad = 0.9 * scale * cyl_scale(cand)
    tree = spatial.cKDTree(np.c_[cand.real, cand.imag])
    blocked = np.zeros(cand.size, dtype=bool)
    frad = 0.8 * scale * cyl_scale(fixed)
    for zf, r in zip(fixed, frad):
        blocked[tree.query_ball_point([zf.real, zf.imag], r)] = True
    out = []
    for i in range(cand.size):
        if blocked[i]:
            continue
        out.append(cand[i])
        blocked[tree.query_ball_point([cand[i].real, cand[i].imag], rad[i])] = True
    return np.array(out, dtype=complex)


def build_domain(rho: float = 0.4, nrays: int = 64, density: float = 1.0, seed: int = 0) -> DomainMesh:
    """Central patch for end charts of radius ``rho`` with ``nrays`` rays per full circle."""
    if nrays % 2:
        raise ValueError("nrays must be even")
    m = nrays // 2
    scale = (np.pi / m) / density
    phi = np.pi * np.arange(-m, m + 1) / m

    # lower half plane: rings, axis, fill
    pts = []
    ring_idx, ring_phi = {}, {}
    count = 0
    for end in ENDS:
        # rays whose points lie in the closed lower half plane
        ph = phi[phi <= 0] if end == 0 else phi[phi >= 0]
        zr = end_point(end, rho * np.exp(1j * ph))
        zr = zr.real + 1j * np.minimum(zr.imag, 0.0)
        zr[np.abs(zr.imag) < 1e-14] = zr[np.abs(zr.imag) < 1e-14].real
        pts.append(zr)
        ring_idx[end] = np.arange(count, count + zr.size)
        ring_phi[end] = ph
        count += zr.size
    a01 = _axis_points(rho, 1 - rho, scale)[1:-1]
    aneg = _axis_points(-1 / rho, -rho, scale)[1:-1]
    apos = _axis_points(1 + rho, 1 / rho, scale)[1:-1]
    base = count
    axis = np.concatenate([a01, aneg, apos]).astype(complex)
    pts.append(axis)
    i01 = np.arange(base, base + a01.size)
    ineg = np.arange(base + a01.size, base + a01.size + aneg.size)
    ipos = np.arange(base + a01.size + aneg.size, base + axis.size)
    count += axis.size
    fixed = np.concatenate(pts)

    def keep(z):
        s = 0.5 * scale * cyl_scale(z)
        return ((np.abs(z) > rho + s) & (np.abs(z - 1) > rho + s) & (np.abs(z) < 1 / rho - s)
                & (z.imag < -s))

    fill = _dart_fill(fixed, keep, scale, (-1 / rho, 1 / rho, -1 / rho, 0.0), seed)
    z = np.concatenate([fixed, fill])

    # ring end points on the axis
    def ring_on_axis(end, value):
        k = ring_idx[end][np.isclose(ring_phi[end], value)]
        return k

    axis01 = np.concatenate([ring_on_axis(0, 0.0), i01, ring_on_axis(1, 0.0)])
    cut_neg = np.concatenate([ring_on_axis(0, -np.pi), ineg, ring_on_axis("inf", np.pi)])
    cut_pos = np.concatenate([ring_on_axis(1, np.pi), ipos, ring_on_axis("inf", 0.0)])
    tris = _triangulate(z, rho)
    lower = HalfPatch(z, tris, ring_idx, ring_phi, axis01, cut_neg, cut_pos)
    upper = HalfPatch(z.conj(), tris[:, ::-1].copy(),
                      ring_idx, {e: -p for e, p in ring_phi.items()}, axis01, cut_neg, cut_pos)
    info = {"rho": rho, "nrays": nrays, "vertices_per_half": int(z.size),
            "triangles_per_half": int(tris.shape[0]), "min_angle_deg": float(min_angle(z, tris))}
    return DomainMesh(rho, nrays, lower, upper, info)


def _triangulate(z: np.ndarray, rho: float) -> np.ndarray:
    tri = spatial.Delaunay(np.c_[z.real, z.imag]).simplices
    c = z[tri].mean(axis=1)
    ok = (np.abs(c) > rho) & (np.abs(c - 1) > rho) & (np.abs(c) < 1 / rho) & (c.imag < 0)
    tri = tri[ok]
    # counterclockwise in z
    a = z[tri]
    area = ((a[:, 1] - a[:, 0]).conj() * (a[:, 2] - a[:, 0])).imag
    tri[area < 0] = tri[area < 0][:, ::-1]
    return tri


def min_angle(z: np.ndarray, tris: np.ndarray) -> float:
    a = z[tris]
    ang = []
    for k in range(3):
        u = a[:, (k + 1) % 3] - a[:, k]
        v = a[:, (k + 2) % 3] - a[:, k]
        ang.append(np.abs(np.angle(v / u)))
    return float(np.degrees(np.min(ang)))


def edges(tris: np.ndarray) -> np.ndarray:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def bfs_levels(nv: int, tris: np.ndarray, roots) -> list[tuple[np.ndarray, np.ndarray]]:
    """Breadth-first spanning forest: list of (parents, children) per level."""
    e = edges(tris)
    adj = [[] for _ in range(nv)]
    for a, b in e:
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(nv, dtype=bool)
    frontier = list(roots)
    seen[frontier] = True
    levels = []
    while frontier:
        par, chi = [], []
        for p in frontier:
            for q in adj[p]:
                if not seen[q]:
                    seen[q] = True
                    par.append(p)
                    chi.append(q)
        if chi:
            levels.append((np.array(par), np.array(chi)))
        frontier = chi
    if not seen.all():
        raise RuntimeError(f"{int((~seen).sum())} domain vertices unreachable from the base point")
    return levels
