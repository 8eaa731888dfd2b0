"""Two backward integrators for the advection adjoint.

The standard method assembles the sparse operator of the (limiter-free)
forward step at each level and applies its transpose, which makes the
resulting gradient the exact algebraic derivative of the discrete cost.
The artificial-source method instead reuses the forward flux machinery
with the wind reversed and compensates the spurious divergence with a
per-cell source; that keeps the limiter usable during the backward sweep
at the price of an approximate gradient.

Both sweeps start from q*(T) = 0 and accumulate the observation forcing
level by level down to q*(0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from icotracer import cases, kernels
from icotracer.transport import ForwardTrajectory, Transport

METHODS = ("standard", "artsource")


@dataclass(frozen=True)
class LinearFluxOperator:
    """One level's assembled flux-divergence matrix plus its cell scaling.

    matrix maps a tracer field to the signed flux divergence of every cell
    (line-integrated, not yet divided by cell measure); level records which
    time level the winds were sampled for.
    """

    matrix: sp.csr_matrix
    level: int
    area: np.ndarray
    rho: np.ndarray

    def apply(self, q: np.ndarray, dt: float) -> np.ndarray:
        """The forward step this operator was assembled from."""
        return q - dt * (self.matrix @ q) / (self.rho * self.area)

    def apply_transpose(self, p: np.ndarray, dt: float) -> np.ndarray:
        """The measure-weighted transpose step used by the backward sweep."""
        return p - dt * (self.matrix.T @ p) / (self.rho * self.area)


def assemble_forward_operator(transport: Transport, vn: np.ndarray,
                              vt: np.ndarray | None, dt: float,
                              level: int = 0,
                              self_check: bool = False) -> LinearFluxOperator:
    """Build the sparse step operator for one set of edge winds.

    With self_check on, a spread of unit-vector columns is pushed through
    both the assembled matrix and the stepping code; any disagreement
    beyond 1e-13 aborts.
    """
    if transport.limiter != "none":
        raise ValueError("standard adjoint undefined for limited scheme")
    op = LinearFluxOperator(matrix=transport.flux_operator(vn, vt, dt),
                            level=level, area=transport.grid.cell_area,
                            rho=transport.rho)
    if self_check:
        n = transport.grid.n_cells
        for i in np.linspace(0, n - 1, num=min(n, 64), dtype=int):
            e_i = np.zeros(n)
            e_i[i] = 1.0
            direct = transport.step_winds(e_i, vn, vt, dt)
            via_op = op.apply(e_i, dt)
            worst = np.abs(direct - via_op).max()
            if worst > 1e-13:
                raise RuntimeError(
                    f"operator column {i} deviates from the step by {worst:.3e}")
    return op


@dataclass
class AdjointForcing:
    """Observation-misfit forcing, one cell field per trajectory level.

    cells/coeff select and weight the observed subset; values holds the
    observations per level.  Everything off the observed cells is zero.
    """

    cells: np.ndarray    # (n_obs,) observed cell ids
    coeff: np.ndarray    # (n_obs,) per-cell weight applied to the misfit
    values: np.ndarray   # (n_levels, n_obs) observed values
    traj: ForwardTrajectory

    def __post_init__(self):
        if self.values.shape != (self.traj.n_steps + 1, len(self.cells)):
            raise ValueError("observation values do not cover every trajectory level")

    def __call__(self, n: int) -> np.ndarray:
        q_n = self.traj.field(n)
        out = np.zeros_like(q_n)
        out[self.cells] = self.coeff * (q_n[self.cells] - self.values[n])
        return out


def standard_adjoint_step(qstar: np.ndarray, op: LinearFluxOperator,
                          forcing_n: np.ndarray | None, dt: float,
                          level: int | None = None) -> np.ndarray:
    """One transpose step down to level n, then the level-n forcing."""
    if level is not None and op.level != level:
        raise ValueError(f"operator was assembled for level {op.level}, not {level}")
    out = op.apply_transpose(qstar, dt)
    if forcing_n is not None:
        out -= dt * forcing_n / op.rho
    return out


def artsource_adjoint_step(transport: Transport, qstar: np.ndarray,
                           forcing_n: np.ndarray | None,
                           vn: np.ndarray, vt: np.ndarray | None,
                           dt: float) -> np.ndarray:
    """One backward step with the forward machinery on the reversed wind.

    vn/vt are the forward winds at the step midpoint; the transport term is
    an ordinary (optionally limited) step against them, and the artificial
    source re-adds each cell's share of the reversed wind's discrete
    divergence so that pure advection remains.
    """
    g = transport.grid
    wn = -vn
    wt = None if vt is None else -vt
    flux = transport.fluxes(qstar, wn, wt, dt)
    div = kernels.flux_divergence(flux, g.cell_edges, g.cell_edge_signs)
    gamma = transport.rhobar * wn * g.edge_length
    wind_div = kernels.flux_divergence(gamma, g.cell_edges, g.cell_edge_signs)
    out = qstar + dt * (qstar * wind_div - div) / (transport.rho * g.cell_area)
    if forcing_n is not None:
        out -= dt * forcing_n / transport.rho
    return out


def run_adjoint(method: str, traj: ForwardTrajectory, forcing,
                transport: Transport, record: bool = False,
                qstar_init: np.ndarray | None = None):
    """Sweep q* from the terminal state down to level 0.

    forcing is any callable mapping a level index to a cell field (or None
    for the homogeneous problem).  qstar_init seeds q*(T) when the sweep
    should start from something other than zero, e.g. when exercising the
    adjoint solvers as plain backward transport.  Returns q*(0), or
    (q*(0), levels) with record on, levels indexed like the trajectory.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    g = transport.grid
    if traj.levels.shape[1] != g.n_cells:
        raise ValueError("trajectory does not match the transport grid")
    n_steps = traj.n_steps
    dt = traj.dt

    if qstar_init is None:
        qstar = np.zeros(g.n_cells)
    else:
        qstar = np.array(qstar_init, dtype=np.float64)
        if qstar.shape != (g.n_cells,):
            raise ValueError("qstar_init must be a cell field")
    f_end = None if forcing is None else forcing(n_steps)
    if f_end is not None:
        # terminal level: q*(T) = 0, so only its forcing survives
        qstar -= dt * f_end / transport.rho

    levels = None
    if record:
        levels = np.empty((n_steps + 1, g.n_cells))
        levels[n_steps] = qstar

    for n in range(n_steps - 1, -1, -1):
        vn, vt = cases.edge_winds(g, traj.wind_case, traj.time(n) + 0.5 * dt,
                                  traj.period, traj.wind_mode)
        f_n = None if forcing is None else forcing(n)
        if method == "standard":
            op = assemble_forward_operator(transport, vn, vt, dt, level=n)
            qstar = standard_adjoint_step(qstar, op, f_n, dt, level=n)
        else:
            qstar = artsource_adjoint_step(transport, qstar, f_n, vn, vt, dt)
        if record:
            levels[n] = qstar
    return (qstar, levels) if record else qstar


def run_retro(transport: Transport, q_end: np.ndarray, dt: float, duration: float,
              wind_case: str, period: float = cases.DEFAULT_PERIOD,
              wind_mode: str = "midpoint", t_end: float | None = None) -> np.ndarray:
    """Transport q_end backward through the time window ending at t_end.

    Plain forward stepping on the sign-reversed wind, sampled at the same
    midpoints the forward run would use.
    """
    from icotracer.transport import steps_for

    n_steps = steps_for(dt, duration)
    if t_end is None:
        t_end = duration
    q = np.asarray(q_end, dtype=np.float64).copy()
    for m in range(n_steps):
        t_mid = t_end - (m + 0.5) * dt
        vn, vt = cases.edge_winds(transport.grid, wind_case, t_mid, period, wind_mode)
        q = transport.step_winds(q, -vn, -vt, dt)
    return q


def duality_residual(op: LinearFluxOperator, q: np.ndarray, p: np.ndarray) -> float:
    """Relative gap between the two measure-weighted pairings of M and M^T."""
    d = op.area
    lhs = float(np.sum(d * p * ((op.matrix @ q) / d)))
    rhs = float(np.sum(d * q * ((op.matrix.T @ p) / d)))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale
