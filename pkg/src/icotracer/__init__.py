"""Tracer transport on icosahedral triangular grids of the sphere.

Forward flux-form finite-volume advection (first order and linear
reconstruction, optional flux-corrected transport), two discrete adjoint
solvers (operator transpose and retro transport with an artificial source
term), and a variational assimilation loop driven by L-BFGS.
"""

from icotracer.grid import EARTH_RADIUS, SphereGrid, build_grid

__version__ = "0.1.0"

__all__ = [
    "EARTH_RADIUS",
    "SphereGrid",
    "build_grid",
    "__version__",
]
