# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-step hot loops; mirrors _kernels_py exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def ls_gradients(double[::1] q, long[:, ::1] nbr, double[:, :, ::1] gmat):
    cdef Py_ssize_t c, n = q.shape[0]
    cdef double d0, d1, d2
    out_arr = np.empty((n, 2), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for c in range(n):
        d0 = q[nbr[c, 0]] - q[c]
        d1 = q[nbr[c, 1]] - q[c]
        d2 = q[nbr[c, 2]] - q[c]
        out[c, 0] = gmat[c, 0, 0] * d0 + gmat[c, 0, 1] * d1 + gmat[c, 0, 2] * d2
        out[c, 1] = gmat[c, 1, 0] * d0 + gmat[c, 1, 1] * d1 + gmat[c, 1, 2] * d2
    return out_arr


def ls_quadratic(double[::1] q, long[:, ::1] stencil, double[:, :, ::1] qmat):
    cdef Py_ssize_t c, j, k, n = q.shape[0]
    cdef double acc
    cdef double dq[9]
    out_arr = np.empty((n, 5), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for c in range(n):
        for j in range(9):
            dq[j] = q[stencil[c, j]] - q[c]
        for k in range(5):
            acc = qmat[c, k, 0] * dq[0]
            for j in range(1, 9):
                acc = acc + qmat[c, k, j] * dq[j]
            out[c, k] = acc
    return out_arr


def edge_fluxes(double[::1] q, double[:, ::1] grad, double[::1] vn,
                double[::1] vt, double half_dt_over_r, double[::1] rhobar,
                long[::1] owner, long[::1] neighbor,
                double[:, ::1] mid, double[:, ::1] normal,
                double[:, ::1] tangent, double[::1] length,
                double[:, ::1] center, double[:, ::1] e1, double[:, ::1] e2):
    cdef Py_ssize_t e, n = vn.shape[0]
    cdef Py_ssize_t up
    cdef double dx, dy, dz, cx, cy, cz, dot, xix, xiy, xiz
    cdef double x1, x2, qrec, gamma
    hi_arr = np.empty(n, dtype=np.float64)
    lo_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] hi = hi_arr
    cdef double[::1] lo = lo_arr
    for e in range(n):
        up = owner[e] if vn[e] >= 0.0 else neighbor[e]
        dx = mid[e, 0] - (vn[e] * normal[e, 0] + vt[e] * tangent[e, 0]) * half_dt_over_r
        dy = mid[e, 1] - (vn[e] * normal[e, 1] + vt[e] * tangent[e, 1]) * half_dt_over_r
        dz = mid[e, 2] - (vn[e] * normal[e, 2] + vt[e] * tangent[e, 2]) * half_dt_over_r
        cx = center[up, 0]
        cy = center[up, 1]
        cz = center[up, 2]
        dot = dx * cx + dy * cy + dz * cz
        xix = dx / dot - cx
        xiy = dy / dot - cy
        xiz = dz / dot - cz
        x1 = xix * e1[up, 0] + xiy * e1[up, 1] + xiz * e1[up, 2]
        x2 = xix * e2[up, 0] + xiy * e2[up, 1] + xiz * e2[up, 2]
        qrec = q[up] + grad[up, 0] * x1 + grad[up, 1] * x2
        gamma = rhobar[e] * vn[e] * length[e]
        hi[e] = gamma * qrec
        lo[e] = gamma * q[up]
    return hi_arr, lo_arr


def edge_fluxes_quad(double[::1] q, double[:, ::1] coef, double[::1] vn,
                     double[::1] vt, double half_dt_over_r, double half_over_r,
                     double[::1] rhobar, long[::1] owner, long[::1] neighbor,
                     double[:, ::1] mid, double[:, ::1] normal,
                     double[:, ::1] tangent, double[::1] length,
                     double[:, ::1] center, double[:, ::1] e1, double[:, ::1] e2):
    cdef Py_ssize_t e, n = vn.shape[0]
    cdef Py_ssize_t up
    cdef double dx, dy, dz, cx, cy, cz, dot, xix, xiy, xiz
    cdef double x1, x2, t1, t2, n1, n2, a1, a2, b1, b2, qrec, gamma
    hi_arr = np.empty(n, dtype=np.float64)
    lo_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] hi = hi_arr
    cdef double[::1] lo = lo_arr
    for e in range(n):
        up = owner[e] if vn[e] >= 0.0 else neighbor[e]
        dx = mid[e, 0] - (vn[e] * normal[e, 0] + vt[e] * tangent[e, 0]) * half_dt_over_r
        dy = mid[e, 1] - (vn[e] * normal[e, 1] + vt[e] * tangent[e, 1]) * half_dt_over_r
        dz = mid[e, 2] - (vn[e] * normal[e, 2] + vt[e] * tangent[e, 2]) * half_dt_over_r
        cx = center[up, 0]
        cy = center[up, 1]
        cz = center[up, 2]
        dot = dx * cx + dy * cy + dz * cz
        xix = dx / dot - cx
        xiy = dy / dot - cy
        xiz = dz / dot - cz
        x1 = xix * e1[up, 0] + xiy * e1[up, 1] + xiz * e1[up, 2]
        x2 = xix * e2[up, 0] + xiy * e2[up, 1] + xiz * e2[up, 2]
        t1 = tangent[e, 0] * e1[up, 0] + tangent[e, 1] * e1[up, 1] + tangent[e, 2] * e1[up, 2]
        t2 = tangent[e, 0] * e2[up, 0] + tangent[e, 1] * e2[up, 1] + tangent[e, 2] * e2[up, 2]
        n1 = normal[e, 0] * e1[up, 0] + normal[e, 1] * e1[up, 1] + normal[e, 2] * e1[up, 2]
        n2 = normal[e, 0] * e2[up, 0] + normal[e, 1] * e2[up, 1] + normal[e, 2] * e2[up, 2]
        a1 = length[e] * half_over_r * t1
        a2 = length[e] * half_over_r * t2
        b1 = -(vn[e] * n1 + vt[e] * t1) * half_dt_over_r
        b2 = -(vn[e] * n2 + vt[e] * t2) * half_dt_over_r
        qrec = (q[up] + coef[up, 0] * x1 + coef[up, 1] * x2
                + coef[up, 2] * (0.5 * x1 * x1 + (a1 * a1 + b1 * b1) / 6.0)
                + coef[up, 3] * (0.5 * x2 * x2 + (a2 * a2 + b2 * b2) / 6.0)
                + coef[up, 4] * (x1 * x2 + (a1 * a2 + b1 * b2) / 3.0))
        gamma = rhobar[e] * vn[e] * length[e]
        hi[e] = gamma * qrec
        lo[e] = gamma * q[up]
    return hi_arr, lo_arr


def flux_divergence(double[::1] flux, long[:, ::1] cell_edges,
                    double[:, ::1] signs):
    cdef Py_ssize_t c, n = cell_edges.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for c in range(n):
        out[c] = (signs[c, 0] * flux[cell_edges[c, 0]]
                  + signs[c, 1] * flux[cell_edges[c, 1]]
                  + signs[c, 2] * flux[cell_edges[c, 2]])
    return out_arr
