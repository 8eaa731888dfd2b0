"""Pure numpy implementations of the per-step hot loops.

Same signatures as the compiled module; `icotracer.kernels` picks whichever
is importable.  These stay the reference implementation: the compiled
variant is tested against them element by element.
"""

from __future__ import annotations

import numpy as np


def ls_gradients(q, nbr, gmat):
    """Least-squares tangent-plane gradients, (n_cells, 2).

    gmat is the precomputed (n_cells, 2, 3) solve matrix mapping the three
    neighbor differences to gradient coefficients.
    """
    dq = q[nbr] - q[:, None]
    # written as an explicit three-term sum so the compiled kernel, which
    # accumulates left to right, reproduces it bit for bit
    out = np.empty((q.shape[0], 2))
    out[:, 0] = gmat[:, 0, 0] * dq[:, 0] + gmat[:, 0, 1] * dq[:, 1] + gmat[:, 0, 2] * dq[:, 2]
    out[:, 1] = gmat[:, 1, 0] * dq[:, 0] + gmat[:, 1, 1] * dq[:, 1] + gmat[:, 1, 2] * dq[:, 2]
    return out


def ls_quadratic(q, stencil, qmat):
    """Least-squares quadratic coefficients, (n_cells, 5).

    qmat is the precomputed (n_cells, 5, 9) solve matrix mapping the nine
    two-ring neighbor differences to the coefficients of the basis
    [x1, x2, x1^2/2, x2^2/2, x1*x2] in the cell's tangent frame.
    """
    dq = q[stencil] - q[:, None]
    # accumulated strictly left to right, matching the compiled kernel
    out = qmat[:, :, 0] * dq[:, 0, None]
    for j in range(1, 9):
        out = out + qmat[:, :, j] * dq[:, j, None]
    return out


def edge_fluxes(q, grad, vn, vt, half_dt_over_r, rhobar,
                owner, neighbor, mid, normal, tangent, length,
                center, e1, e2):
    """High-order (reconstructed) and low-order (upwind) edge fluxes.

    The reconstruction of the upwind cell is evaluated at the edge midpoint
    pulled back along the velocity by half a step (gnomonic projection into
    the upwind cell's tangent frame).  Returns (flux_high, flux_low); both
    are line-integrated, i.e. already multiplied by rhobar * v_n * length.
    """
    up = np.where(vn >= 0.0, owner, neighbor)
    # component-by-component so the compiled kernel matches bit for bit
    dx = mid[:, 0] - (vn * normal[:, 0] + vt * tangent[:, 0]) * half_dt_over_r
    dy = mid[:, 1] - (vn * normal[:, 1] + vt * tangent[:, 1]) * half_dt_over_r
    dz = mid[:, 2] - (vn * normal[:, 2] + vt * tangent[:, 2]) * half_dt_over_r
    cu = center[up]
    dot = dx * cu[:, 0] + dy * cu[:, 1] + dz * cu[:, 2]
    xix = dx / dot - cu[:, 0]
    xiy = dy / dot - cu[:, 1]
    xiz = dz / dot - cu[:, 2]
    f1, f2 = e1[up], e2[up]
    x1 = xix * f1[:, 0] + xiy * f1[:, 1] + xiz * f1[:, 2]
    x2 = xix * f2[:, 0] + xiy * f2[:, 1] + xiz * f2[:, 2]
    qup = q[up]
    qrec = qup + grad[up, 0] * x1 + grad[up, 1] * x2
    gamma = rhobar * vn * length
    return gamma * qrec, gamma * qup


def edge_fluxes_quad(q, coef, vn, vt, half_dt_over_r, half_over_r, rhobar,
                     owner, neighbor, mid, normal, tangent, length,
                     center, e1, e2):
    """Edge fluxes from the quadratic reconstruction, plus upwind ones.

    Same pullback as edge_fluxes, but the upwind cell's quadratic fit is
    averaged over the region the edge sweeps in half a step: a
    parallelogram centered at the pulled-back midpoint, spanned by the
    half edge (a) and the half displacement (b), whose second moments
    contribute the (a*a + b*b)/6 style corrections below.
    """
    up = np.where(vn >= 0.0, owner, neighbor)
    dx = mid[:, 0] - (vn * normal[:, 0] + vt * tangent[:, 0]) * half_dt_over_r
    dy = mid[:, 1] - (vn * normal[:, 1] + vt * tangent[:, 1]) * half_dt_over_r
    dz = mid[:, 2] - (vn * normal[:, 2] + vt * tangent[:, 2]) * half_dt_over_r
    cu = center[up]
    dot = dx * cu[:, 0] + dy * cu[:, 1] + dz * cu[:, 2]
    xix = dx / dot - cu[:, 0]
    xiy = dy / dot - cu[:, 1]
    xiz = dz / dot - cu[:, 2]
    f1, f2 = e1[up], e2[up]
    x1 = xix * f1[:, 0] + xiy * f1[:, 1] + xiz * f1[:, 2]
    x2 = xix * f2[:, 0] + xiy * f2[:, 1] + xiz * f2[:, 2]
    t1 = tangent[:, 0] * f1[:, 0] + tangent[:, 1] * f1[:, 1] + tangent[:, 2] * f1[:, 2]
    t2 = tangent[:, 0] * f2[:, 0] + tangent[:, 1] * f2[:, 1] + tangent[:, 2] * f2[:, 2]
    n1 = normal[:, 0] * f1[:, 0] + normal[:, 1] * f1[:, 1] + normal[:, 2] * f1[:, 2]
    n2 = normal[:, 0] * f2[:, 0] + normal[:, 1] * f2[:, 1] + normal[:, 2] * f2[:, 2]
    a1 = length * half_over_r * t1
    a2 = length * half_over_r * t2
    b1 = -(vn * n1 + vt * t1) * half_dt_over_r
    b2 = -(vn * n2 + vt * t2) * half_dt_over_r
    qup = q[up]
    cf = coef[up]
    qrec = (qup + cf[:, 0] * x1 + cf[:, 1] * x2
            + cf[:, 2] * (0.5 * x1 * x1 + (a1 * a1 + b1 * b1) / 6.0)
            + cf[:, 3] * (0.5 * x2 * x2 + (a2 * a2 + b2 * b2) / 6.0)
            + cf[:, 4] * (x1 * x2 + (a1 * a2 + b1 * b2) / 3.0))
    gamma = rhobar * vn * length
    return gamma * qrec, gamma * qup


def flux_divergence(flux, cell_edges, signs):
    """Signed sum of edge fluxes per cell."""
    return (signs * flux[cell_edges]).sum(axis=1)
