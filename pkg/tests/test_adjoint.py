"""Backward-integrator checks.

The transpose path is validated against a dense matrix-product oracle and
duality identities; the artificial-source path against retro-transport,
an exactly back-advected manufactured solution, and the transpose method
itself.  Sign conventions are exercised end to end in test_assim.py via
finite differences.
"""

import math

import numpy as np
import pytest

from icotracer import adjoint, cases
from icotracer.adjoint import (AdjointForcing, artsource_adjoint_step,
                               assemble_forward_operator, duality_residual,
                               run_adjoint, run_retro, standard_adjoint_step)
from icotracer.fields import compute_norms
from icotracer.grid import build_grid
from icotracer.transport import ForwardTrajectory, Transport, run_forward

DT = 600.0
T = cases.DEFAULT_PERIOD


def _winds(grid, case, t=300.0, mode="midpoint"):
    return cases.edge_winds(grid, case, t, T, mode)


def _empty_traj(grid, dt, n_steps, wind_case, wind_mode="midpoint"):
    return ForwardTrajectory(dt=dt, t0=0.0,
                             levels=np.zeros((n_steps + 1, grid.n_cells)),
                             wind_case=wind_case, wind_mode=wind_mode)


def test_zero_wind_gives_zero_operator(grid_r2b1):
    tr = Transport(grid_r2b1)
    op = assemble_forward_operator(tr, np.zeros(grid_r2b1.n_edges), None, DT)
    assert op.matrix.nnz == 0 or np.abs(op.matrix.data).max() == 0.0


def test_constant_field_image_is_wind_divergence(grid_r2b2):
    g = grid_r2b2
    tr = Transport(g)
    vn, vt = _winds(g, "deform_div")
    op = assemble_forward_operator(tr, vn, vt, DT)
    image = op.matrix @ np.ones(g.n_cells)
    gamma = tr.rhobar * vn * g.edge_length
    expect = (g.cell_edge_signs * gamma[g.cell_edges]).sum(axis=1)
    assert np.allclose(image, expect, rtol=1e-12, atol=1e-9 * np.abs(gamma).max())


def test_assemble_rejects_limited_scheme(grid_r2b0):
    tr = Transport(grid_r2b0, limiter="minmax")
    vn, vt = _winds(grid_r2b0, "solid_rotation")
    with pytest.raises(ValueError, match="undefined for limited scheme"):
        assemble_forward_operator(tr, vn, vt, DT)


def test_self_check_accepts_correct_assembly(grid_r2b1):
    tr = Transport(grid_r2b1)
    vn, vt = _winds(grid_r2b1, "moving_vortices")
    assemble_forward_operator(tr, vn, vt, DT, self_check=True)


@pytest.mark.parametrize("wind_case", cases.WIND_CASES)
def test_duality_identity(grid_r2b2, wind_case):
    g = grid_r2b2
    tr = Transport(g)
    vn, vt = _winds(g, wind_case)
    op = assemble_forward_operator(tr, vn, vt, DT)
    rng = np.random.default_rng(1)
    for _ in range(25):
        q = rng.normal(size=g.n_cells)
        p = rng.normal(size=g.n_cells)
        assert duality_residual(op, q, p) <= 1e-12


def test_whole_trajectory_duality(grid_r2b2):
    # <q^N, p>_D must equal <q^0, backward-propagated p>_D exactly: the
    # measure-weighted transpose is the adjoint of the composed steps
    g = grid_r2b2
    tr = Transport(g)
    rng = np.random.default_rng(3)
    q0 = rng.normal(size=g.n_cells)
    p_end = rng.normal(size=g.n_cells)
    n_steps = 20
    q_end, traj = run_forward(tr, q0, DT, n_steps * DT, "moving_vortices", record=True)
    p = p_end.copy()
    for n in range(n_steps - 1, -1, -1):
        vn, vt = _winds(g, "moving_vortices", traj.time(n) + 0.5 * DT)
        op = assemble_forward_operator(tr, vn, vt, DT, level=n)
        p = op.apply_transpose(p, DT)
    d = tr.rho * g.cell_area
    lhs = float(np.sum(d * q_end * p_end))
    rhs = float(np.sum(d * q0 * p))
    assert abs(lhs - rhs) <= 1e-11 * max(abs(lhs), abs(rhs))


def test_standard_step_identity_and_level_guard(grid_r2b1):
    g = grid_r2b1
    tr = Transport(g)
    op = assemble_forward_operator(tr, np.zeros(g.n_edges), None, DT, level=7)
    p = np.linspace(-1.0, 1.0, g.n_cells)
    assert np.array_equal(standard_adjoint_step(p, op, None, DT, level=7), p)
    with pytest.raises(ValueError, match="level"):
        standard_adjoint_step(p, op, None, DT, level=6)


def test_artsource_step_identity_at_zero_wind(grid_r2b1):
    g = grid_r2b1
    tr = Transport(g)
    p = np.linspace(0.0, 2.0, g.n_cells)
    out = artsource_adjoint_step(tr, p, None, np.zeros(g.n_edges), None, DT)
    assert np.array_equal(out, p)


def test_forcing_zero_outside_observed_cells(grid_r2b1):
    g = grid_r2b1
    traj = _empty_traj(g, DT, 3, "solid_rotation")
    traj.levels[:] = 1.0
    cells = np.array([5, 17, 100])
    forcing = AdjointForcing(cells=cells, coeff=np.full(3, 2.0),
                             values=np.zeros((4, 3)), traj=traj)
    f = forcing(2)
    mask = np.zeros(g.n_cells, dtype=bool)
    mask[cells] = True
    assert np.array_equal(f[mask], np.full(3, 2.0))
    assert not f[~mask].any()
    with pytest.raises(ValueError, match="every trajectory level"):
        AdjointForcing(cells=cells, coeff=np.ones(3), values=np.zeros((3, 3)), traj=traj)


def test_run_adjoint_homogeneous_is_zero(grid_r2b1):
    g = grid_r2b1
    tr = Transport(g)
    traj = _empty_traj(g, DT, 5, "solid_rotation")
    assert not run_adjoint("standard", traj, None, tr).any()
    assert not run_adjoint("artsource", traj, None, tr).any()
    with pytest.raises(ValueError, match="method"):
        run_adjoint("transpose", traj, None, tr)


def test_run_adjoint_rejects_grid_mismatch(grid_r2b0, grid_r2b1):
    traj = _empty_traj(grid_r2b0, DT, 2, "solid_rotation")
    with pytest.raises(ValueError, match="grid"):
        run_adjoint("standard", traj, None, Transport(grid_r2b1))


def test_standard_sweep_matches_dense_matrix_product(grid_r2b1):
    # single observation at the final level: q*(0) must equal the dense
    # product of transposed per-step matrices applied to the terminal load
    g = grid_r2b1
    tr = Transport(g)
    q0 = cases.initial_field(g, "cosine_bell")
    n_steps = 12
    q_end, traj = run_forward(tr, q0, DT, n_steps * DT, "moving_vortices", record=True)
    i0 = 37
    vals = traj.levels[:, [i0]].copy()
    vals[-1] += 0.5
    forcing = AdjointForcing(cells=np.array([i0]), coeff=np.array([2.0]),
                             values=vals, traj=traj)
    got = run_adjoint("standard", traj, forcing, tr)

    d = tr.rho * g.cell_area
    load = np.zeros(g.n_cells)
    load[i0] = 2.0 * (q_end[i0] - vals[-1, 0])
    p = d * (-DT * load / tr.rho)
    for n in range(n_steps - 1, -1, -1):
        vn, vt = _winds(g, "moving_vortices", traj.time(n) + 0.5 * DT)
        dense = np.eye(g.n_cells) - DT * (tr.flux_operator(vn, vt, DT).toarray() / d[:, None])
        p = dense.T @ p
    ref = p / d
    assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()


def test_forcing_applied_at_every_level(grid_r2b1):
    # drop any single level's forcing and q*(0) must change: guards the
    # terminal injection and the n=0 term alike
    g = grid_r2b1
    tr = Transport(g)
    n_steps = 4
    traj = _empty_traj(g, DT, n_steps, "solid_rotation")
    base_f = np.zeros(g.n_cells)
    base_f[11] = 1.0
    full = run_adjoint("standard", traj, lambda n: base_f, tr)
    for skip in range(n_steps + 1):
        partial = run_adjoint(
            "standard", traj, lambda n, s=skip: None if n == s else base_f, tr)
        assert np.abs(full - partial).max() > 0.0


@pytest.mark.parametrize("method,order", [("standard", 1), ("artsource", 1), ("artsource", 2)])
def test_backward_equals_retro_transport_divfree(grid_r2b2, method, order):
    # homogeneous backward sweep == forward solver on the reversed wind,
    # exactly, when the edge winds are discretely divergence free
    g = grid_r2b2
    tr = Transport(g, order=order)
    q_end = cases.initial_field(g, "cosine_bell")
    n_steps = 20
    traj = _empty_traj(g, DT, n_steps, "solid_rotation", wind_mode="streamfunction")
    qs = q_end.copy()
    for n in range(n_steps - 1, -1, -1):
        vn, vt = _winds(g, "solid_rotation", traj.time(n) + 0.5 * DT, "streamfunction")
        if method == "standard":
            op = assemble_forward_operator(tr, vn, vt, DT, level=n)
            qs = standard_adjoint_step(qs, op, None, DT)
        else:
            qs = artsource_adjoint_step(tr, qs, None, vn, vt, DT)
    retro = run_retro(tr, q_end, DT, n_steps * DT, "solid_rotation",
                      wind_mode="streamfunction")
    assert np.abs(qs - retro).max() <= 1e-12 * np.abs(retro).max()


def test_standard_order2_is_not_retro_transport(grid_r2b2):
    # the reconstruction upwinds from opposite cells under transposition,
    # so at second order the transpose is not a reversed-wind solver
    g = grid_r2b2
    tr = Transport(g, order=2)
    q_end = cases.initial_field(g, "cosine_bell")
    n_steps = 20
    traj = _empty_traj(g, DT, n_steps, "solid_rotation", wind_mode="streamfunction")
    qs = q_end.copy()
    for n in range(n_steps - 1, -1, -1):
        vn, vt = _winds(g, "solid_rotation", traj.time(n) + 0.5 * DT, "streamfunction")
        op = assemble_forward_operator(tr, vn, vt, DT, level=n)
        qs = standard_adjoint_step(qs, op, None, DT)
    retro = run_retro(tr, q_end, DT, n_steps * DT, "solid_rotation",
                      wind_mode="streamfunction")
    assert np.abs(qs - retro).max() > 1e-3


def test_methods_agree_on_moving_vortices_forcing(grid_r2b3):
    g = grid_r2b3
    tr = Transport(g)
    dt, horizon = 1200.0, 86400.0
    truth0 = cases.initial_field(g, "vortex")
    _, truth_traj = run_forward(tr, truth0, dt, horizon, "moving_vortices", record=True)
    _, traj = run_forward(tr, 1.1 * truth0, dt, horizon, "moving_vortices", record=True)
    stride = np.arange(0, g.n_cells, 4)
    forcing = AdjointForcing(cells=stride, coeff=np.ones(len(stride)),
                             values=truth_traj.levels[:, stride], traj=traj)
    qs_std = run_adjoint("standard", traj, forcing, tr)
    qs_art = run_adjoint("artsource", traj, forcing, tr)
    assert compute_norms(g, qs_art, qs_std).l2_rel <= 5e-2


def test_artsource_converges_to_back_advected_field():
    # terminal spike forcing turns the sweep into backward advection of a
    # cosine bell, whose solid-rotation solution is known in closed form
    errs = {}
    duration = 86400.0
    omega = 2.0 * math.pi / T
    for nb, dt in ((2, 2400.0), (3, 1200.0)):
        g = build_grid(2, nb)
        tr = Transport(g)
        n_steps = int(round(duration / dt))
        q_end = cases.initial_field(g, "cosine_bell")
        traj = _empty_traj(g, dt, n_steps, "solid_rotation")

        def forcing(level, q_end=q_end, tr=tr, dt=dt, n_steps=n_steps):
            return -(q_end * tr.rho / dt) if level == n_steps else None

        qs0 = run_adjoint("artsource", traj, forcing, tr)
        lon, lat = g.cell_lonlat()
        exact = cases.scalar_field("cosine_bell", lon + omega * duration, lat)
        errs[nb] = compute_norms(g, qs0, exact).l2_rel
    assert math.log2(errs[2] / errs[3]) >= 1.3


def test_artsource_negativity_with_limiter(grid_r2b2):
    # small version of the backward negativity bound; the acceptance test
    # runs the full R2B3 window
    g = grid_r2b2
    tr_plain = Transport(g)
    dt, horizon = 1200.0, 43200.0
    truth0 = cases.initial_field(g, "vortex")
    _, traj = run_forward(tr_plain, truth0, dt, horizon, "moving_vortices",
                          wind_mode="streamfunction", record=True)
    stride = np.arange(0, g.n_cells, 4)
    forcing = AdjointForcing(cells=stride, coeff=np.ones(len(stride)),
                             values=1.1 * traj.levels[:, stride], traj=traj)
    for limiter, floor in (("minmax", -1e-10), ("positive", -1e-13)):
        tr = Transport(g, limiter=limiter)
        _, levels = run_adjoint("artsource", traj, forcing, tr, record=True)
        assert levels.min() >= floor * levels.max()


def test_artsource_backward_norm_stays_bounded():
    # dissipative across refinements, mirroring the forward growth check
    for nb, dt in ((2, 1200.0), (3, 600.0)):
        g = build_grid(2, nb)
        tr = Transport(g)
        rng = np.random.default_rng(5)
        q = rng.normal(size=g.n_cells)
        d = tr.rho * g.cell_area
        norm0 = float(np.sqrt(np.sum(d * q * q)))
        traj = _empty_traj(g, dt, 50, "moving_vortices", wind_mode="streamfunction")
        for n in range(49, -1, -1):
            vn, vt = _winds(g, "moving_vortices", traj.time(n) + 0.5 * dt,
                            "streamfunction")
            q = artsource_adjoint_step(tr, q, None, vn, vt, dt)
        assert float(np.sqrt(np.sum(d * q * q))) <= 1.05 * norm0


def test_run_retro_window_end_default(grid_r2b1):
    # with t_end omitted the window is [0, duration]; passing it shifts
    # the wind sampling times
    g = grid_r2b1
    tr = Transport(g)
    q = cases.initial_field(g, "two_cosine_bells")
    a = run_retro(tr, q, DT, 5 * DT, "deform_nondiv")
    b = run_retro(tr, q, DT, 5 * DT, "deform_nondiv", t_end=5 * DT)
    c = run_retro(tr, q, DT, 5 * DT, "deform_nondiv", t_end=9 * DT)
    assert np.array_equal(a, b)
    assert np.abs(a - c).max() > 0.0
