"""Analytic case checks.

Pointwise values pinned by the catalogue tables, finite-difference oracles
for the hand-derived divergences, a characteristics oracle for the
moving-vortices closed form (the exact field must be constant along
trajectories built from the two composed rotations), and streamfunction
consistency for the edge-wind modes.
"""

import math

import numpy as np
import pytest

from icotracer import cases
from icotracer.grid import EARTH_RADIUS

R = EARTH_RADIUS
T = cases.DEFAULT_PERIOD
U0 = 2.0 * math.pi * R / T


def random_points(n, seed):
    rng = np.random.default_rng(seed)
    lon = rng.uniform(0.0, 2.0 * math.pi, n)
    lat = np.arcsin(rng.uniform(-0.999, 0.999, n))
    return lon, lat


def test_cosine_bell_center_and_antipode():
    q_c = cases.scalar_field("cosine_bell", 1.5 * math.pi, 0.0)
    assert q_c == pytest.approx(1.0, abs=1e-15)
    q_a = cases.scalar_field("cosine_bell", 0.5 * math.pi, 0.0)
    assert q_a == 0.0


def test_slotted_cylinder_geometry():
    c_lon = 1.5 * math.pi
    # solid part of the cylinder away from the slot band
    assert cases.scalar_field("slotted_cylinder", c_lon + 0.3, 0.0) == 1.0
    # inside the band but below the slot cut: still tracer
    assert cases.scalar_field("slotted_cylinder", c_lon + 0.01, 0.1) == 1.0
    # inside the band above the cut: carved out
    assert cases.scalar_field("slotted_cylinder", c_lon + 0.01, 0.4) == 0.0
    # outside the cylinder entirely
    assert cases.scalar_field("slotted_cylinder", c_lon, 0.7) == 0.0


def test_two_slotted_cylinders_geometry():
    lon1, lon2 = 0.75 * math.pi, 1.25 * math.pi
    # slots open in opposite directions
    assert cases.scalar_field("two_slotted_cylinders", lon1 + 0.01, -0.3) == 1.0
    assert cases.scalar_field("two_slotted_cylinders", lon1 + 0.01, 0.0) == 0.0
    assert cases.scalar_field("two_slotted_cylinders", lon2 + 0.01, 0.3) == 1.0
    assert cases.scalar_field("two_slotted_cylinders", lon2 + 0.01, 0.0) == 0.0
    assert cases.scalar_field("two_slotted_cylinders", lon1 + 0.3, 0.0) == 1.0
    assert cases.scalar_field("two_slotted_cylinders", lon2 - 0.3, 0.0) == 1.0


def test_vortex_value_at_rotated_pole():
    q = cases.scalar_field("vortex", cases.VORTEX_POLE_LON, cases.VORTEX_POLE_LAT)
    assert q == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("case", cases.SCALAR_CASES)
def test_initial_fields_within_bounds(grid_r2b2, case):
    q = cases.initial_field(grid_r2b2, case)
    lo, hi = cases.scalar_bounds(case)
    assert np.isfinite(q).all()
    assert q.min() >= lo - 1e-14
    assert q.max() <= hi + 1e-14


def test_solid_rotation_at_equator():
    u, v = cases.wind_at("solid_rotation", 0.0, 0.0, 0.0, R, T)
    assert u == pytest.approx(U0, rel=1e-15)
    assert v == 0.0


def test_deformational_winds_stop_at_half_period():
    lon, lat = random_points(50, 1)
    for case in ("deform_nondiv", "deform_div"):
        u, v = cases.wind_at(case, T / 2.0, lon, lat, R, T)
        assert np.allclose(u, 0.0, atol=1e-9)
        assert np.allclose(v, 0.0, atol=1e-9)


def test_moving_vortices_wind_at_center_is_solid_body():
    for t in (0.0, 86400.0, 5 * 86400.0):
        lon_c = cases.VORTEX_POLE_LON + (U0 / R) * t
        lat_c = cases.VORTEX_POLE_LAT
        u, v = cases.wind_at("moving_vortices", t, lon_c, lat_c, R, T)
        assert u == pytest.approx(U0 * math.cos(lat_c), rel=1e-9)
        assert v == pytest.approx(0.0, abs=1e-9)


def _fd_divergence(case, t, lon, lat, h=1e-5):
    """Centered finite difference of (1/(R cos)) [d(u)/dlon + d(v cos)/dlat]."""
    up, _ = cases.wind_at(case, t, lon + h, lat, R, T)
    um, _ = cases.wind_at(case, t, lon - h, lat, R, T)
    _, vp = cases.wind_at(case, t, lon, lat + h, R, T)
    _, vm = cases.wind_at(case, t, lon, lat - h, R, T)
    du = (up - um) / (2.0 * h)
    dv = (vp * np.cos(lat + h) - vm * np.cos(lat - h)) / (2.0 * h)
    return (du + dv) / (R * np.cos(lat))


def test_divergent_wind_matches_fd_oracle():
    lon, lat = random_points(300, 2)
    t = 0.3 * T
    ana = cases.analytic_divergence("deform_div", t, lon, lat, R, T)
    fd = _fd_divergence("deform_div", t, lon, lat)
    scale = np.abs(ana).max()
    assert scale > 0
    assert np.abs(ana - fd).max() < 1e-6 * scale


@pytest.mark.parametrize("case", cases.DIVERGENCE_FREE)
def test_divergence_free_cases(case):
    lon, lat = random_points(1000, 3)
    ana = cases.analytic_divergence(case, 0.25 * T, lon, lat, R, T)
    assert np.abs(ana).max() <= 1e-13 * (U0 / R)
    fd = _fd_divergence(case, 0.25 * T, lon, lat, h=1e-4)
    assert np.abs(fd).max() <= 1e-6 * (U0 / R)


def _unit(lon, lat):
    return np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])


def _rodrigues(axis, angle, x):
    return (x * math.cos(angle) + np.cross(axis, x) * math.sin(angle)
            + axis * np.dot(axis, x) * (1.0 - math.cos(angle)))


def _lonlat(p):
    return math.atan2(p[1], p[0]) % (2.0 * math.pi), math.asin(max(-1.0, min(1.0, p[2])))


def test_moving_vortex_exact_constant_along_trajectories():
    # trajectory of the moving-vortices flow: spin about the z axis composed
    # with a rotation about the (co-rotating) vortex axis at the parcel's own
    # angular rate; the closed-form field must be constant along it
    pole = _unit(cases.VORTEX_POLE_LON, cases.VORTEX_POLE_LAT)
    big_omega = 2.0 * math.pi / T
    lon0, lat0 = random_points(40, 4)
    for k in range(40):
        x0 = _unit(lon0[k], lat0[k])
        _, lat_r = cases._rotated_coords(np.array(lon0[k]), np.array(lat0[k]),
                                         cases.VORTEX_POLE_LON, cases.VORTEX_POLE_LAT)
        omega, _ = cases._vortex_omega(lat_r, R, T)
        omega = float(omega)
        q0 = float(cases.scalar_field("vortex", lon0[k], lat0[k]))
        for t in (0.2 * T, 0.5 * T, 0.9 * T):
            xt = _rodrigues(np.array([0.0, 0.0, 1.0]), big_omega * t,
                            _rodrigues(pole, omega * t, x0))
            lon_t, lat_t = _lonlat(xt)
            qt = float(cases._moving_vortex_exact(np.array(lon_t), np.array(lat_t),
                                                  t, R, T, "forward"))
            assert qt == pytest.approx(q0, abs=1e-12)


def test_moving_vortex_backward_constant_along_reversed_trajectories():
    pole = _unit(cases.VORTEX_POLE_LON, cases.VORTEX_POLE_LAT)
    big_omega = 2.0 * math.pi / T
    lon0, lat0 = random_points(20, 5)
    for k in range(20):
        x0 = _unit(lon0[k], lat0[k])
        _, lat_r = cases._rotated_coords(np.array(lon0[k]), np.array(lat0[k]),
                                         cases.VORTEX_POLE_LON, cases.VORTEX_POLE_LAT)
        omega, _ = cases._vortex_omega(lat_r, R, T)
        omega = float(omega)
        q0 = float(cases.scalar_field("vortex", lon0[k], lat0[k]))
        for s in (0.1 * T, 0.4 * T):
            xs = _rodrigues(np.array([0.0, 0.0, 1.0]), -big_omega * s,
                            _rodrigues(pole, -omega * s, x0))
            lon_s, lat_s = _lonlat(xs)
            qs = float(cases._moving_vortex_exact(np.array(lon_s), np.array(lat_s),
                                                  s, R, T, "backward"))
            assert qs == pytest.approx(q0, abs=1e-12)


def test_exact_solution_dispatch(grid_r2b0):
    q0 = cases.initial_field(grid_r2b0, "cosine_bell")
    assert np.array_equal(cases.exact_solution(grid_r2b0, "cosine_bell", "solid_rotation", 0.0), q0)
    assert np.array_equal(cases.exact_solution(grid_r2b0, "cosine_bell", "solid_rotation", T), q0)
    with pytest.raises(ValueError):
        cases.exact_solution(grid_r2b0, "cosine_bell", "solid_rotation", 0.5 * T)
    with pytest.raises(ValueError):
        cases.exact_solution(grid_r2b0, "cosine_bell", "moving_vortices", T)
    mv = cases.exact_solution(grid_r2b0, "vortex", "moving_vortices", 0.37 * T)
    assert np.isfinite(mv).all()
    mv0 = cases.exact_solution(grid_r2b0, "vortex", "moving_vortices", 0.0)
    assert np.array_equal(mv0, cases.initial_field(grid_r2b0, "vortex"))


def test_streamfunction_reproduces_velocity():
    # v_lon = -(1/R) dpsi/dlat, v_lat = (1/(R cos lat)) dpsi/dlon
    lon, lat = random_points(200, 6)
    h = 1e-6
    for case in cases.HAS_STREAMFUNCTION:
        t = 0.2 * T
        u, v = cases.wind_at(case, t, lon, lat, R, T)
        dpsi_dlat = (cases.streamfunction(case, t, lon, lat + h, R, T)
                     - cases.streamfunction(case, t, lon, lat - h, R, T)) / (2 * h)
        dpsi_dlon = (cases.streamfunction(case, t, lon + h, lat, R, T)
                     - cases.streamfunction(case, t, lon - h, lat, R, T)) / (2 * h)
        assert np.abs(-dpsi_dlat / R - u).max() < 1e-4 * max(1.0, np.abs(u).max())
        assert np.abs(dpsi_dlon / (R * np.cos(lat)) - v).max() < 1e-4 * max(1.0, np.abs(v).max())


def test_streamfunction_edge_winds_are_discretely_divergence_free(grid_r2b2):
    g = grid_r2b2
    for case in cases.HAS_STREAMFUNCTION:
        vn, vt = cases.edge_winds(g, case, 0.15 * T, mode="streamfunction")
        flux = vn * g.edge_length
        div = (g.cell_edge_signs * flux[g.cell_edges]).sum(axis=1) / g.cell_area
        assert np.abs(div).max() < 1e-12 * (U0 / R)
        # and the streamfunction winds stay close to the midpoint-sampled ones
        vn_mid, vt_mid = cases.edge_winds(g, case, 0.15 * T, mode="midpoint")
        assert np.array_equal(vt, vt_mid)
        assert np.abs(vn - vn_mid).max() < 0.02 * max(1.0, np.abs(vn_mid).max())


def test_midpoint_edge_winds_nearly_divergence_free(grid_r2b3):
    g = grid_r2b3
    vn, _ = cases.edge_winds(g, "solid_rotation", 0.0)
    flux = vn * g.edge_length
    div = (g.cell_edge_signs * flux[g.cell_edges]).sum(axis=1) / g.cell_area
    # midpoint sampling leaves an O(h^2) residual (h ~ 0.075 rad on R2B3),
    # far from roundoff but small against the advective rate u0/R
    assert np.abs(div).max() < 1e-2 * (U0 / R)
    assert np.abs(div).max() > 1e-10 * (U0 / R)


def test_divergent_wind_discrete_divergence_matches_analytic(grid_r2b3):
    g = grid_r2b3
    t = 0.1 * T
    vn, _ = cases.edge_winds(g, "deform_div", t)
    flux = vn * g.edge_length
    div = (g.cell_edge_signs * flux[g.cell_edges]).sum(axis=1) / g.cell_area
    lon, lat = g.cell_lonlat()
    ana = cases.analytic_divergence("deform_div", t, lon, lat, g.radius, T)
    scale = np.abs(ana).max()
    assert np.abs(div - ana).max() < 0.05 * scale


def test_unknown_cases_rejected():
    with pytest.raises(ValueError):
        cases.scalar_field("gauss", 0.0, 0.0)
    with pytest.raises(ValueError):
        cases.wind_at("jet", 0.0, 0.0, 0.0, R, T)
    with pytest.raises(ValueError):
        cases.streamfunction("deform_div", 0.0, 0.0, 0.0, R, T)
