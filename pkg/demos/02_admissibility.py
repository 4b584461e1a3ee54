"""Which three necksizes close up into a trinoid?

The gate has two layers.  The necksizes (and the weights) must satisfy
spherical triangle inequalities; then, pointwise on the unit lambda circle,
the monodromy half-angles nu_k must lie in the region where three SU2
rotations with product I exist.  The gate is cheap, so it runs before any
ODE or mesh work.

Run:  python demos/02_admissibility.py
"""
import numpy as np

from cmctrinoid.loops import unit_samples
from cmctrinoid.potentials import Weights, check_admissible, nu_w
from cmctrinoid.unitarize import pointwise_unitarizability

cases = {
    "equilateral boundary": (1 / 3, 1 / 3, 1 / 3),
    "cylinder end": (1 / 2, 1 / 4, 1 / 4),
    "scalene": (1 / 2, 1 / 3, 1 / 6),
    "one nodoid end": (1 / 6, 1 / 6, -1 / 6),
    "three nodoid ends": (-1 / 4, -1 / 4, -1 / 4),
    "one fat end": (0.45, 0.1, 0.1),
    "fat nodoid end": (-0.49, 0.25, 0.25),
}

lam = unit_samples(256)
for name, ns in cases.items():
    W = Weights.from_necksizes(*ns)
    adm = check_admissible(W)
    nu = np.stack([nu_w(w, lam) for w in W.w], axis=-1)
    pu = pointwise_unitarizability(nu)
    ok = adm.admissible and pu.verdict
    print(f"{name:22s} n = {np.round(W.n, 4)}  w = {np.round(W.w, 4)}  ->",
          "admissible" if ok else "rejected")
    for f in adm.failures:
        print(f"{'':24s}{f}")

# The fat nodoid end passes the necksize inequalities but not the weight
# inequalities: w(n) = 4 n (1 - n) is not monotone in |n| for n < 0.
