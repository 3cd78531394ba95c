"""Operator-splitting finite element schemes for convection-dominated flow.

Explicit Taylor convection substeps are paired with an implicit diffusion
correction, for scalar convection-diffusion (P1) and incompressible
Navier-Stokes (Taylor-Hood P2/P1) on the unit square.
"""

import os

# Must run before numpy loads its BLAS.
_threads = os.environ.get("SPLITFEM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
