"""Energy-stability laboratory for the discontinuous Galerkin spectral element method.

Linear symmetric hyperbolic systems with variable coefficients on curved
quadrilateral meshes, with standard, volume-overintegrated and fully
overintegrated discretizations and the energy budgets that separate
dissipation from aliasing.
"""

from . import analysis, geometry, solver, spectral_ops, system

__version__ = "0.1.0"

__all__ = ["analysis", "geometry", "solver", "spectral_ops", "system", "__version__"]
