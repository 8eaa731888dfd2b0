"""Kernel backend selection: compiled extension if present, numpy otherwise."""

try:
    from icotracer import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    from icotracer import _kernels_py as _impl
    BACKEND = "python"

ls_gradients = _impl.ls_gradients
ls_quadratic = _impl.ls_quadratic
edge_fluxes = _impl.edge_fluxes
edge_fluxes_quad = _impl.edge_fluxes_quad
flux_divergence = _impl.flux_divergence
