"""Numerical toolkit for Dirac resolvent kernels and dispersive estimates.

Builds free and perturbed Dirac operators in dimensions 2 and 3 from
closed-form resolvent kernels, and measures weighted-resolvent bounds,
threshold regularity, high-energy kernel-product decay, and space-time
(Strichartz / local smoothing) norms on finite grids.
"""

__version__ = "0.1.0"

from ._backend import BACKEND, active_backend  # noqa: F401
from .clifford import DiracMatrices, build_dirac_matrices, dirac_symbol  # noqa: F401
