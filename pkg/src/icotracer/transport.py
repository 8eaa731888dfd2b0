"""Flux-form finite-volume advection on icosahedral grids.

One explicit Euler stage per step: least-squares reconstruction (linear
over the edge neighbors, or quadratic over the two-ring stencil) in each
cell's gnomonic tangent frame, upwind evaluation at the half-step
departure point of every edge midpoint, signed flux divergence.  Optional
Zalesak flux-corrected transport blends these fluxes with first-order
upwind ones to enforce local bounds or positivity.

Everything here is linear in the tracer when the limiter is off; the
assembled sparse operator form of a step (flux_operator) reproduces the
stepped result to machine precision, which is what the transpose adjoint
relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from icotracer import cases, kernels
from icotracer.grid import SphereGrid

LIMITERS = ("none", "minmax", "positive")


class CflError(RuntimeError):
    """Raised when an edge Courant number exceeds the configured cap."""

    def __init__(self, courant: float, edge: int, cap: float):
        super().__init__(f"Courant number {courant:.3f} at edge {edge} exceeds cap {cap}")
        self.courant = courant
        self.edge = edge
        self.cap = cap


@dataclass
class ForwardTrajectory:
    """Stored tracer levels q^0 .. q^{n_steps} of one forward run.

    Carries the wind configuration of the run so a backward sweep can
    resample the same edge winds level by level.
    """

    dt: float
    t0: float
    levels: np.ndarray  # (n_steps + 1, n_cells)
    wind_case: str = "solid_rotation"
    period: float = cases.DEFAULT_PERIOD
    wind_mode: str = "midpoint"

    @property
    def n_steps(self) -> int:
        return self.levels.shape[0] - 1

    def field(self, n: int) -> np.ndarray:
        return self.levels[n]

    def time(self, n: int) -> float:
        return self.t0 + n * self.dt


def _tangent_frames(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent basis at each unit point, pole-safe."""
    ref = np.tile(np.array([0.0, 0.0, 1.0]), (len(points), 1))
    ref[np.abs(points[:, 2]) > 0.9999] = [1.0, 0.0, 0.0]
    e1 = np.cross(ref, points)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(points, e1)
    return e1, e2


def _gnomonic(points: np.ndarray, center: np.ndarray,
              e1: np.ndarray, e2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project points onto the tangent plane at center (rows paired)."""
    xi = points / np.einsum("ij,ij->i", points, center)[:, None] - center
    return np.einsum("ij,ij->i", xi, e1), np.einsum("ij,ij->i", xi, e2)


class Transport:
    """Forward solver bound to one grid and one scheme configuration.

    order 1 is plain first-order upwind; order 2 adds the linear
    reconstruction; order 3 fits a quadratic over the two-ring stencil and
    averages it over the swept edge region.  rho is an optional static
    density field (default 1).
    """

    def __init__(self, grid: SphereGrid, order: int = 2, limiter: str = "none",
                 cfl_max: float = 0.8, rho: np.ndarray | None = None):
        if order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {order}")
        if limiter not in LIMITERS:
            raise ValueError(f"limiter must be one of {LIMITERS}, got {limiter!r}")
        if not 0.0 < cfl_max <= 1.0:
            raise ValueError("cfl_max must lie in (0, 1]")
        self.grid = grid
        self.order = order
        self.limiter = limiter
        self.cfl_max = cfl_max
        self.rho = np.ones(grid.n_cells) if rho is None else np.asarray(rho, dtype=np.float64)
        if self.rho.shape != (grid.n_cells,) or (self.rho <= 0).any():
            raise ValueError("rho must be a positive cell field")

        # contiguous copies: the compiled kernels reject strided views
        self.edge_own = np.ascontiguousarray(grid.edge_cells[:, 0])
        self.edge_nbh = np.ascontiguousarray(grid.edge_cells[:, 1])
        self.rhobar = 0.5 * (self.rho[self.edge_own] + self.rho[self.edge_nbh])
        self.nbr = np.ascontiguousarray(grid.cell_neighbors())
        self.cell_e1, self.cell_e2 = _tangent_frames(grid.cell_center)
        self.gmat, self.degenerate_stencils = self._build_ls_matrices()
        if order == 3:
            self.quad_stencil, self.qmat, self.degenerate_stencils = \
                self._build_quad_matrices()
        self.last_courant = 0.0
        self.courant_seen = 0.0

    def _build_ls_matrices(self) -> tuple[np.ndarray, int]:
        g = self.grid
        c = g.n_cells
        x = np.empty((c, 3, 2))
        for m in range(3):
            p = g.cell_center[self.nbr[:, m]]
            x[:, m, 0], x[:, m, 1] = _gnomonic(p, g.cell_center, self.cell_e1, self.cell_e2)
        a00 = np.einsum("cm,cm->c", x[:, :, 0], x[:, :, 0])
        a01 = np.einsum("cm,cm->c", x[:, :, 0], x[:, :, 1])
        a11 = np.einsum("cm,cm->c", x[:, :, 1], x[:, :, 1])
        det = a00 * a11 - a01 * a01
        bad = det <= 1e-12 * (0.5 * (a00 + a11)) ** 2
        safe_det = np.where(bad, 1.0, det)
        inv = np.empty((c, 2, 2))
        inv[:, 0, 0] = a11 / safe_det
        inv[:, 1, 1] = a00 / safe_det
        inv[:, 0, 1] = -a01 / safe_det
        inv[:, 1, 0] = -a01 / safe_det
        gmat = np.einsum("cef,cmf->cem", inv, x)
        gmat[bad] = 0.0  # constant fallback for degenerate stencils
        return np.ascontiguousarray(gmat), int(bad.sum())

    def _two_ring_stencil(self) -> np.ndarray:
        """Edge neighbors plus their neighbors: 9 distinct cells per row."""
        c = self.grid.n_cells
        nn = self.nbr[self.nbr]
        keep = nn != np.arange(c)[:, None, None]
        if not (keep.sum(axis=2) == 2).all():
            raise ValueError("cell adjacency is not mutual")
        stencil = np.concatenate([self.nbr, nn[keep].reshape(c, 6)], axis=1)
        srt = np.sort(stencil, axis=1)
        if (srt[:, 1:] == srt[:, :-1]).any() or (stencil == np.arange(c)[:, None]).any():
            raise ValueError("two-ring stencil has repeated cells")
        return np.ascontiguousarray(stencil)

    def _build_quad_matrices(self) -> tuple[np.ndarray, np.ndarray, int]:
        g = self.grid
        stencil = self._two_ring_stencil()
        c = g.n_cells
        x = np.empty((c, 9, 2))
        for m in range(9):
            p = g.cell_center[stencil[:, m]]
            x[:, m, 0], x[:, m, 1] = _gnomonic(p, g.cell_center, self.cell_e1, self.cell_e2)
        a = np.empty((c, 9, 5))
        a[:, :, 0] = x[:, :, 0]
        a[:, :, 1] = x[:, :, 1]
        a[:, :, 2] = 0.5 * x[:, :, 0] ** 2
        a[:, :, 3] = 0.5 * x[:, :, 1] ** 2
        a[:, :, 4] = x[:, :, 0] * x[:, :, 1]
        s = np.linalg.svd(a, compute_uv=False)
        bad = s[:, -1] <= 1e-10 * s[:, 0]
        qmat = np.linalg.pinv(a)
        qmat[bad] = 0.0  # constant fallback for degenerate stencils
        return stencil, np.ascontiguousarray(qmat), int(bad.sum())

    # -- per-step pieces ---------------------------------------------------

    def reconstruct(self, q: np.ndarray) -> np.ndarray:
        """Reconstruction coefficients in each cell's tangent frame.

        (n_cells, 2) linear gradients up to order 2 (zeros at order 1);
        (n_cells, 5) coefficients of [x1, x2, x1^2/2, x2^2/2, x1*x2] at
        order 3.
        """
        if self.order == 1:
            return np.zeros((self.grid.n_cells, 2))
        if self.order == 3:
            return kernels.ls_quadratic(q, self.quad_stencil, self.qmat)
        return kernels.ls_gradients(q, self.nbr, self.gmat)

    def courant_numbers(self, vn: np.ndarray, dt: float) -> np.ndarray:
        g = self.grid
        up = np.where(vn >= 0.0, g.edge_cells[:, 0], g.edge_cells[:, 1])
        return np.abs(vn) * dt / g.cell_inradius[up]

    def _check_cfl(self, vn: np.ndarray, dt: float) -> None:
        c = self.courant_numbers(vn, dt)
        worst = int(np.argmax(c))
        self.last_courant = float(c[worst])
        if self.last_courant > self.courant_seen:
            self.courant_seen = self.last_courant
        if self.last_courant > self.cfl_max:
            raise CflError(self.last_courant, worst, self.cfl_max)

    def raw_fluxes(self, q: np.ndarray, vn: np.ndarray, vt: np.ndarray | None,
                   dt: float) -> tuple[np.ndarray, np.ndarray]:
        """(high, low) edge fluxes before any limiting."""
        g = self.grid
        if vt is None:
            vt = np.zeros_like(vn)
        if self.order == 3:
            coef = self.reconstruct(q)
            return kernels.edge_fluxes_quad(
                q, coef, vn, vt, 0.5 * dt / g.radius, 0.5 / g.radius, self.rhobar,
                self.edge_own, self.edge_nbh,
                g.edge_mid, g.edge_normal, g.edge_tangent, g.edge_length,
                g.cell_center, self.cell_e1, self.cell_e2)
        grad = self.reconstruct(q)
        return kernels.edge_fluxes(
            q, grad, vn, vt, 0.5 * dt / g.radius, self.rhobar,
            self.edge_own, self.edge_nbh,
            g.edge_mid, g.edge_normal, g.edge_tangent, g.edge_length,
            g.cell_center, self.cell_e1, self.cell_e2)

    def fluxes(self, q: np.ndarray, vn: np.ndarray, vt: np.ndarray | None,
               dt: float) -> np.ndarray:
        """Final per-edge fluxes with the configured limiter applied."""
        self._check_cfl(vn, dt)
        hi, lo = self.raw_fluxes(q, vn, vt, dt)
        if self.limiter == "none" or self.order == 1:
            return hi
        return self._fct(q, hi, lo, dt)

    def _fct(self, q: np.ndarray, hi: np.ndarray, lo: np.ndarray,
             dt: float) -> np.ndarray:
        """Zalesak flux correction of hi against the upwind reference lo."""
        g = self.grid
        anti = hi - lo
        q_td = self._apply_divergence(q, lo, dt)

        scale = dt / (self.rho * g.cell_area)
        signed = g.cell_edge_signs * anti[g.cell_edges]
        p_in = scale * np.maximum(0.0, -signed).sum(axis=1)
        p_out = scale * np.maximum(0.0, signed).sum(axis=1)

        if self.limiter == "minmax":
            stack = np.stack([q, q[self.nbr[:, 0]], q[self.nbr[:, 1]], q[self.nbr[:, 2]]])
            q_min = stack.min(axis=0)
            q_max = stack.max(axis=0)
            r_in = np.where(p_in > 0.0,
                            np.minimum(1.0, np.maximum(0.0, q_max - q_td) / np.where(p_in > 0, p_in, 1.0)),
                            1.0)
        else:  # positive: only a lower bound of zero
            q_min = np.zeros_like(q)
            r_in = np.ones_like(q)
        r_out = np.where(p_out > 0.0,
                         np.minimum(1.0, np.maximum(0.0, q_td - q_min) / np.where(p_out > 0, p_out, 1.0)),
                         1.0)

        own, nbh = g.edge_cells[:, 0], g.edge_cells[:, 1]
        c_edge = np.where(anti >= 0.0,
                          np.minimum(r_out[own], r_in[nbh]),
                          np.minimum(r_in[own], r_out[nbh]))
        return lo + c_edge * anti

    def _apply_divergence(self, q: np.ndarray, flux: np.ndarray, dt: float) -> np.ndarray:
        g = self.grid
        div = kernels.flux_divergence(flux, g.cell_edges, g.cell_edge_signs)
        return q - dt * div / (self.rho * g.cell_area)

    # -- stepping ------------------------------------------------------------

    def step_winds(self, q: np.ndarray, vn: np.ndarray, vt: np.ndarray | None,
                   dt: float) -> np.ndarray:
        """One explicit step with the given edge winds."""
        return self._apply_divergence(q, self.fluxes(q, vn, vt, dt), dt)

    def step(self, q: np.ndarray, t: float, dt: float, wind_case: str,
             period: float = cases.DEFAULT_PERIOD, wind_mode: str = "midpoint") -> np.ndarray:
        """One step from time t, winds sampled at the step midpoint."""
        vn, vt = cases.edge_winds(self.grid, wind_case, t + 0.5 * dt, period, wind_mode)
        return self.step_winds(q, vn, vt, dt)

    # -- operator form (limiter-free) ----------------------------------------

    def edge_weight_table(self, vn: np.ndarray, vt: np.ndarray | None,
                          dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Stencil cells and weights reproducing the unlimited reconstruction.

        Returns (cols, w), both (n_edges, k): the flux through edge e is
        rhobar*vn*l * sum_k w[e,k] * q[cols[e,k]].  Column 0 is the upwind
        cell, the rest its reconstruction stencil (k = 4 up to order 2,
        k = 10 for the quadratic fit).
        """
        g = self.grid
        if vt is None:
            vt = np.zeros_like(vn)
        up = np.where(vn >= 0.0, g.edge_cells[:, 0], g.edge_cells[:, 1])
        if self.order == 3:
            cols = np.concatenate([up[:, None], self.quad_stencil[up]], axis=1)
            w = np.zeros((g.n_edges, 10))
            basis = self._edge_basis(vn, vt, dt, up)
            w[:, 1:] = np.einsum("em,emj->ej", basis, self.qmat[up])
            w[:, 0] = 1.0 - w[:, 1:].sum(axis=1)
            return cols, w
        cols = np.concatenate([up[:, None], self.nbr[up]], axis=1)
        w = np.zeros((g.n_edges, 4))
        if self.order == 1:
            w[:, 0] = 1.0
            return cols, w
        xd = g.edge_mid - (vn[:, None] * g.edge_normal + vt[:, None] * g.edge_tangent) \
            * (0.5 * dt / g.radius)
        x1, x2 = _gnomonic(xd, g.cell_center[up], self.cell_e1[up], self.cell_e2[up])
        a = self.gmat[up]  # (E, 2, 3)
        w[:, 1:] = a[:, 0, :] * x1[:, None] + a[:, 1, :] * x2[:, None]
        w[:, 0] = 1.0 - w[:, 1:].sum(axis=1)
        return cols, w

    def _edge_basis(self, vn: np.ndarray, vt: np.ndarray, dt: float,
                    up: np.ndarray) -> np.ndarray:
        """Swept-region averages of the quadratic basis, (n_edges, 5).

        The reconstruction is averaged over the parallelogram the edge
        sweeps in half a step: centered at the pulled-back midpoint,
        spanned by the half edge and the half displacement.  Its second
        moments add the (a*a + b*b)/6 style terms to the pure point values.
        """
        g = self.grid
        xd = g.edge_mid - (vn[:, None] * g.edge_normal + vt[:, None] * g.edge_tangent) \
            * (0.5 * dt / g.radius)
        x1, x2 = _gnomonic(xd, g.cell_center[up], self.cell_e1[up], self.cell_e2[up])
        f1, f2 = self.cell_e1[up], self.cell_e2[up]
        t1 = np.einsum("ij,ij->i", g.edge_tangent, f1)
        t2 = np.einsum("ij,ij->i", g.edge_tangent, f2)
        n1 = np.einsum("ij,ij->i", g.edge_normal, f1)
        n2 = np.einsum("ij,ij->i", g.edge_normal, f2)
        a1 = 0.5 * g.edge_length / g.radius * t1
        a2 = 0.5 * g.edge_length / g.radius * t2
        b1 = -(vn * n1 + vt * t1) * (0.5 * dt / g.radius)
        b2 = -(vn * n2 + vt * t2) * (0.5 * dt / g.radius)
        return np.stack([x1, x2,
                         0.5 * x1 ** 2 + (a1 ** 2 + b1 ** 2) / 6.0,
                         0.5 * x2 ** 2 + (a2 ** 2 + b2 ** 2) / 6.0,
                         x1 * x2 + (a1 * a2 + b1 * b2) / 3.0], axis=1)

    def flux_operator(self, vn: np.ndarray, vt: np.ndarray | None, dt: float) -> sp.csr_matrix:
        """Sparse matrix M with (M q)_j = signed flux divergence of cell j.

        Only valid for the limiter-free scheme: a step is then exactly
        q - dt * (M q) / (rho * area).
        """
        g = self.grid
        gamma = self.rhobar * vn * g.edge_length
        cols, w = self.edge_weight_table(vn, vt, dt)
        data = (gamma[:, None] * w)
        own, nbh = g.edge_cells[:, 0], g.edge_cells[:, 1]
        k = cols.shape[1]
        rows = np.concatenate([np.repeat(own, k), np.repeat(nbh, k)])
        cidx = np.concatenate([cols.ravel(), cols.ravel()])
        vals = np.concatenate([data.ravel(), -data.ravel()])
        m = sp.coo_matrix((vals, (rows, cidx)), shape=(g.n_cells, g.n_cells))
        return m.tocsr()

    def apply_operator(self, m: sp.csr_matrix, q: np.ndarray, dt: float) -> np.ndarray:
        """Step q using an assembled flux operator."""
        return q - dt * (m @ q) / (self.rho * self.grid.cell_area)


def run_forward(transport: Transport, q0: np.ndarray, dt: float, t_end: float,
                wind_case: str, period: float = cases.DEFAULT_PERIOD,
                wind_mode: str = "midpoint", record: bool = False,
                t0: float = 0.0) -> tuple[np.ndarray, ForwardTrajectory | None]:
    """March q0 from t0 to t0 + t_end; optionally record every level."""
    n_steps = steps_for(dt, t_end)
    q = np.asarray(q0, dtype=np.float64).copy()
    traj = None
    if record:
        levels = np.empty((n_steps + 1, transport.grid.n_cells))
        levels[0] = q
    for n in range(n_steps):
        q = transport.step(q, t0 + n * dt, dt, wind_case, period, wind_mode)
        if record:
            levels[n + 1] = q
    if record:
        traj = ForwardTrajectory(dt=dt, t0=t0, levels=levels, wind_case=wind_case,
                                 period=period, wind_mode=wind_mode)
    return q, traj


def steps_for(dt: float, t_end: float) -> int:
    """Number of steps covering t_end, which must be an exact multiple of dt."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if t_end < 0.0:
        raise ValueError("t_end must be nonnegative")
    n = int(round(t_end / dt))
    if not math.isclose(n * dt, t_end, rel_tol=1e-12, abs_tol=0.0) or (t_end > 0 and n == 0):
        raise ValueError(f"t_end={t_end} is not an integer multiple of dt={dt}")
    return n
