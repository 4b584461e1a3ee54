"""Delaunay surfaces: the one-end building block of every trinoid.

A Delaunay potential has a single constant residue, so its frame is a matrix
exponential and the whole DPW pipeline (Iwasawa splitting, Sym formula) can
be checked against the classical surfaces of revolution:

  w = 1     cylinder of radius 1/2
  0 < w < 1 unduloid with necksize n, w = 4 n (1 - n)
  w < 0     nodoid (negative necksize), which self-intersects

Run:  python demos/01_delaunay_calibration.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from cmctrinoid.export import write_mesh
from cmctrinoid.immerse import delaunay_profile, delaunay_surface
from cmctrinoid.potentials import necksize_from_weight


def radii(mesh, nx):
    """Ring radii about the best-fit axis of a surface of revolution."""
    v = mesh.vertices.reshape(nx, -1, 3)
    cent = v.mean(axis=1)
    c = cent.mean(axis=0)
    _, _, vt = np.linalg.svd(cent - c)
    d = v - c
    return np.linalg.norm(d - (d @ vt[0])[..., None] * vt[0], axis=-1)


outdir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
outdir.mkdir(exist_ok=True)

print(f"{'w':>6} {'necksize':>10} {'min r':>10} {'max r':>10} {'period':>9}")
for w in (1.0, 0.75, 0.5, -1.0):
    nx = 241
    mesh = delaunay_surface(w, xrange=(-6, 6), nx=nx, ny=64)
    r = radii(mesh, nx)
    n = necksize_from_weight(w)
    period = delaunay_profile(w).axial_period if w != 1 else float("nan")
    print(f"{w:6.2f} {n:10.6f} {r.min():10.6f} {r.max():10.6f} {period:9.5f}")
    write_mesh(outdir / f"delaunay_w{w:+.2f}.ply", mesh, f"Delaunay surface, weight {w}")

# For the nodoid |necksize| is the inner loop radius; min r matches it.
# The unduloid's bulge radius is 1 - n, so min r + max r = 1 when H = 1.
print(f"meshes written to {outdir}/")
