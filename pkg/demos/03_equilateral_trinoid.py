"""The equilateral trinoid, stage by stage.

Necksizes 1/4 at all three ends (weights 3/4).  Each stage prints the
residual that certifies it:

  monodromy    eigenvalues exp(+-2 pi i nu) and M(1) = I
  unitarizer   C M_k C^-1 unitary on the lambda circle
  surface      the three sheets meet across the cuts (period closure)
  geometry     mirror symmetry and Delaunay-like ends

Takes about a minute on one core.
Run:  python demos/03_equilateral_trinoid.py [out.ply]
"""
import sys
import time

import numpy as np

from cmctrinoid.export import write_mesh
from cmctrinoid.holonomy import eigenvalue_curves
from cmctrinoid.immerse import (ImmersionParams, MeshSpec, end_asymptotics, prepare_trinoid,
                                symmetry_residual, trinoid_surface)
from cmctrinoid.loops import unit_samples
from cmctrinoid.potentials import Weights, nu_w

out = sys.argv[1] if len(sys.argv) > 1 else "trinoid.ply"
W = Weights.from_necksizes(0.25, 0.25, 0.25)
params = ImmersionParams(nsamples=128, band=64)

t = time.perf_counter()
frames = prepare_trinoid(W, params)
M = frames.monodromy
lam = unit_samples(params.nsamples)
for k, m in enumerate((M.M1, M.M2, M.M3), 1):
    ec = eigenvalue_curves(m)
    ref = np.exp(2j * np.pi * nu_w(W.w[k - 1], lam))
    dev = np.minimum(np.abs(ec.rho - ref[:, None]), np.abs(ec.rho - ref.conj()[:, None])).max()
    print(f"M{k}: eigenvalue deviation {dev:.1e}, |rho(1) - 1| {np.abs(ec.rho_at_1 - 1).max():.1e}")
print(f"M1 M2 M3 = I to {M.product_residual:.1e}")

U = frames.unitarizer
print(f"unitarizer: residual {U.residual_unitarity:.1e}, "
      f"kernel energy beyond band {frames.section.discarded_energy:.1e}, "
      f"{len(frames.section.degenerate_samples)} flagged sample(s)")
print(f"  ({time.perf_counter() - t:.1f} s)")

mesh = trinoid_surface(W, params, MeshSpec(), frames)
d = mesh.diagnostics
print(f"surface: {mesh.nvertices} vertices, closure {d['closure_relative']:.1e} of the bbox diagonal")
print(f"  ({time.perf_counter() - t:.1f} s)")

s = symmetry_residual(mesh)
print(f"mirror symmetry residual {s['relative']:.1e} of the bbox diagonal")
for end in ("0", "1", "inf"):
    rep = end_asymptotics(mesh, end, W)
    print(f"end {end:>3}: distance to Delaunay per period",
          " ".join(f"{c:.1e}" for c in rep.c0), f"(neck {rep.neck:.3f})")

write_mesh(out, mesh, "equilateral CMC trinoid, necksizes 1/4")
print(f"wrote {out}")
