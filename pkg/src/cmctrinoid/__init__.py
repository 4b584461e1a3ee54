"""CMC trinoids in R^3 by the DPW loop-group method.

Pipeline: trinoid potential -> monodromy -> unitarizing dressing ->
Iwasawa splitting -> Sym formula -> mesh.  See the README for a tour.
"""

__version__ = "0.1.0"

from .errors import (ClosureFailure, InsufficientEndDepth, InvalidWeights, PipelineFailure,
                     TrinoidError, WeightOutOfRange)
from .loops import LaurentLoop, ScalarLoop, eval_loop, star, sup_norm, theta_derivative
from .potentials import (Weights, check_admissible, delaunay_residue, end_gauge, mu_w, nu_w,
                         trinoid_potential)
from .factorize import iwasawa, matrix_singular_birkhoff, scalar_spectral_factor
from .holonomy import eigenvalue_curves, integrate, monodromies
from .unitarize import build_unitarizer, kernel_section, pointwise_unitarizability
from .immerse import (ImmersionParams, MeshSpec, SurfaceMesh, delaunay_surface, end_asymptotics,
                      prepare_trinoid, sym_point, symmetry_residual, trinoid_surface)

__all__ = [
    "ClosureFailure", "InsufficientEndDepth", "InvalidWeights", "PipelineFailure", "TrinoidError",
    "WeightOutOfRange", "LaurentLoop", "ScalarLoop", "eval_loop", "star", "sup_norm",
    "theta_derivative", "Weights", "check_admissible", "delaunay_residue", "end_gauge", "mu_w",
    "nu_w", "trinoid_potential", "iwasawa", "matrix_singular_birkhoff", "scalar_spectral_factor",
    "eigenvalue_curves", "integrate", "monodromies", "build_unitarizer", "kernel_section",
    "pointwise_unitarizability", "ImmersionParams", "MeshSpec", "SurfaceMesh", "delaunay_surface",
    "end_asymptotics", "prepare_trinoid", "sym_point", "symmetry_residual", "trinoid_surface",
]
