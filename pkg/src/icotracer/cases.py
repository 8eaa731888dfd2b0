"""Analytic test cases: initial tracer shapes, wind fields, exact solutions.

Five scalar shapes (cosine bell, slotted cylinder, stationary vortex, two
cosine bells, two slotted cylinders) combined with four winds (solid-body
rotation, nondivergent and divergent deformational flows, moving vortices).
All angles are radians, longitudes in [0, 2*pi), latitudes in
[-pi/2, pi/2]; velocities are (east, north) components in m/s.

The deformational flows are dimensionalized with the velocity scale
``5*R/period`` applied to the catalogue's nondimensional amplitude k (the
published k values of 2.4 and 1 refer to a unit sphere with a 5-unit
period); without this the flows would barely move air on an Earth-sized
sphere.
"""

from __future__ import annotations

import math

import numpy as np

from icotracer.grid import SphereGrid

DEFAULT_PERIOD = 1_036_800.0  # seconds (12 days)

VORTEX_POLE_LON = math.pi - 0.8 + math.pi / 4.0
VORTEX_POLE_LAT = math.pi / 4.8
VORTEX_GAMMA = 5.0
VORTEX_RHO0 = 3.0

SCALAR_CASES = ("cosine_bell", "slotted_cylinder", "vortex",
                "two_cosine_bells", "two_slotted_cylinders")
WIND_CASES = ("solid_rotation", "deform_nondiv", "deform_div", "moving_vortices")

# winds whose analytic divergence vanishes identically
DIVERGENCE_FREE = ("solid_rotation", "deform_nondiv", "moving_vortices")


def _arc_dist(lon, lat, lon_c, lat_c):
    """Great-circle angle from (lon, lat) to a fixed center."""
    s = math.sin(lat_c) * np.sin(lat) + math.cos(lat_c) * np.cos(lat) * np.cos(lon - lon_c)
    return np.arccos(np.clip(s, -1.0, 1.0))


def _short_dlon(lon, lon_c):
    """|lon - lon_c| along the shorter arc."""
    return np.abs(np.mod(lon - lon_c + math.pi, 2.0 * math.pi) - math.pi)


def _rotated_coords(lon, lat, pole_lon, pole_lat):
    """Longitude/latitude in the frame whose north pole is (pole_lon, pole_lat)."""
    dl = lon - pole_lon
    lon_r = np.arctan2(np.cos(lat) * np.sin(dl),
                       np.cos(lat) * math.sin(pole_lat) * np.cos(dl)
                       - math.cos(pole_lat) * np.sin(lat))
    s = np.sin(lat) * math.sin(pole_lat) + np.cos(lat) * math.cos(pole_lat) * np.cos(dl)
    lat_r = np.arcsin(np.clip(s, -1.0, 1.0))
    return lon_r, lat_r


def _vortex_omega(lat_r, radius, period):
    """Angular velocity of the vortex at rotated latitude lat_r (1/s)."""
    v0 = 2.0 * math.pi * radius / period
    rho = VORTEX_RHO0 * np.cos(lat_r)
    vt = v0 * (3.0 * math.sqrt(3.0) / 2.0) * np.tanh(rho) / np.cosh(rho) ** 2
    omega = np.zeros_like(rho)
    np.divide(vt, radius * rho, out=omega, where=rho != 0.0)
    return omega, rho


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def _vortex_streamfunction(lat_r, radius, period):
    """Streamfunction of the rotation about the vortex's own axis.

    The azimuthal speed about that axis is omega(s)*R*cos(s), so psi is
    -R^2 * integral of omega(s)*cos(s) from the rotated equator up to
    lat_r; the integrand has no closed antiderivative and is evaluated by
    Gauss-Legendre quadrature (the integrand is analytic, so 48 nodes are
    plenty).
    """
    theta = np.asarray(lat_r, dtype=np.float64)
    flat = theta.ravel()
    s = 0.5 * flat[:, None] * (_GL_NODES + 1.0)
    w = 0.5 * flat[:, None] * _GL_WEIGHTS
    omega, _ = _vortex_omega(s, radius, period)
    integral = (omega * np.cos(s) * w).sum(axis=1)
    return (-radius ** 2 * integral).reshape(theta.shape)


def _cosine_hump(r, r_max, h_max=1.0):
    return np.where(r < r_max, 0.5 * h_max * (1.0 + np.cos(math.pi * r / r_max)), 0.0)


def _slot_mask(lon, lat, lon_c, lat_c, r_max, slot):
    """Cylinder of radius r_max with a slot carved out.

    slot is (side, frac): keep tracer where side*(lat-lat_c) < frac*r_max
    inside the slot's longitude band.
    """
    r = _arc_dist(lon, lat, lon_c, lat_c)
    dlon = _short_dlon(lon, lon_c)
    side, frac = slot
    in_band = dlon < r_max / 6.0
    keep = side * (lat - lat_c) < frac * r_max
    return (r <= r_max) & (~in_band | keep)


def scalar_field(case: str, lon, lat) -> np.ndarray:
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if case == "cosine_bell":
        r = _arc_dist(lon, lat, 1.5 * math.pi, 0.0)
        return _cosine_hump(r, 1.0 / 3.0)
    if case == "slotted_cylinder":
        return _slot_mask(lon, lat, 1.5 * math.pi, 0.0, 0.5, (+1, 2.0 / 3.0)).astype(np.float64)
    if case == "vortex":
        lon_r, lat_r = _rotated_coords(lon, lat, VORTEX_POLE_LON, VORTEX_POLE_LAT)
        rho = VORTEX_RHO0 * np.cos(lat_r)
        return 1.0 - np.tanh(rho / VORTEX_GAMMA * np.sin(lon_r))
    if case == "two_cosine_bells":
        r1 = _arc_dist(lon, lat, 0.75 * math.pi, 0.0)
        r2 = _arc_dist(lon, lat, 1.25 * math.pi, 0.0)
        return _cosine_hump(r1, 0.5) + _cosine_hump(r2, 0.5)
    if case == "two_slotted_cylinders":
        m1 = _slot_mask(lon, lat, 0.75 * math.pi, 0.0, 0.5, (+1, -5.0 / 12.0))
        m2 = _slot_mask(lon, lat, 1.25 * math.pi, 0.0, 0.5, (-1, -5.0 / 12.0))
        return (m1 | m2).astype(np.float64)
    raise ValueError(f"unknown scalar case {case!r}")


def scalar_bounds(case: str) -> tuple[float, float]:
    """Admissible [min, max] of the case, used for violation counting."""
    if case == "vortex":
        t = math.tanh(VORTEX_RHO0 / VORTEX_GAMMA)
        return 1.0 - t, 1.0 + t
    if case in SCALAR_CASES:
        return 0.0, 1.0
    raise ValueError(f"unknown scalar case {case!r}")


def initial_field(grid: SphereGrid, case: str) -> np.ndarray:
    lon, lat = grid.cell_lonlat()
    return scalar_field(case, lon, lat)


def wind_at(case: str, t: float, lon, lat, radius: float,
            period: float = DEFAULT_PERIOD) -> tuple[np.ndarray, np.ndarray]:
    """(east, north) velocity components in m/s at time t."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    u0 = 2.0 * math.pi * radius / period
    if case == "solid_rotation":
        return u0 * np.cos(lat), np.zeros_like(lat)
    if case == "deform_nondiv":
        amp = 2.4 * 5.0 * radius / period
        ct = math.cos(math.pi * t / period)
        u = amp * np.sin(0.5 * lon) ** 2 * np.sin(2.0 * lat) * ct
        v = 0.5 * amp * np.sin(lon) * np.cos(lat) * ct
        return u, v
    if case == "deform_div":
        amp = 1.0 * 5.0 * radius / period
        ct = math.cos(math.pi * t / period)
        u = -amp * np.sin(0.5 * lon) ** 2 * np.sin(2.0 * lat) * np.cos(lat) ** 2 * ct
        v = 0.5 * amp * np.sin(lon) * np.cos(lat) ** 3 * ct
        return u, v
    if case == "moving_vortices":
        lon_c = VORTEX_POLE_LON + (u0 / radius) * t
        lat_c = VORTEX_POLE_LAT
        _, lat_r = _rotated_coords(lon, lat, lon_c, lat_c)
        omega, _ = _vortex_omega(lat_r, radius, period)
        u = u0 * np.cos(lat) + radius * omega * (
            math.sin(lat_c) * np.cos(lat) - math.cos(lat_c) * np.cos(lon - lon_c) * np.sin(lat))
        v = radius * omega * math.cos(lat_c) * np.sin(lon - lon_c)
        return u, v
    raise ValueError(f"unknown wind case {case!r}")


def analytic_divergence(case: str, t: float, lon, lat, radius: float,
                        period: float = DEFAULT_PERIOD) -> np.ndarray:
    """Horizontal divergence of the wind, derived by hand per case."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if case in DIVERGENCE_FREE:
        return np.zeros(np.broadcast(lon, lat).shape)
    if case == "deform_div":
        amp = 1.0 * 5.0 * radius / period
        ct = math.cos(math.pi * t / period)
        return (-1.5 * amp / radius) * np.sin(lon) * np.sin(2.0 * lat) * np.cos(lat) * ct
    raise ValueError(f"unknown wind case {case!r}")


def streamfunction(case: str, t: float, lon, lat, radius: float,
                   period: float = DEFAULT_PERIOD) -> np.ndarray:
    """Streamfunction (m^2/s) for winds that have an elementary one.

    The velocity is recovered as v_lon = -(1/R) d(psi)/d(lat) and
    v_lat = (1/(R cos lat)) d(psi)/d(lon).
    """
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    u0 = 2.0 * math.pi * radius / period
    if case == "solid_rotation":
        return -u0 * radius * np.sin(lat)
    if case == "deform_nondiv":
        amp = 2.4 * 5.0 * radius / period
        ct = math.cos(math.pi * t / period)
        return amp * radius * np.sin(0.5 * lon) ** 2 * np.cos(lat) ** 2 * ct
    if case == "moving_vortices":
        lon_c = VORTEX_POLE_LON + (u0 / radius) * t
        _, lat_r = _rotated_coords(lon, lat, lon_c, VORTEX_POLE_LAT)
        return -u0 * radius * np.sin(lat) + _vortex_streamfunction(lat_r, radius, period)
    raise ValueError(f"no elementary streamfunction for wind case {case!r}")

HAS_STREAMFUNCTION = ("solid_rotation", "deform_nondiv", "moving_vortices")


def exact_solution(grid: SphereGrid, scalar_case: str, wind_case: str, t: float,
                   period: float = DEFAULT_PERIOD, direction: str = "forward") -> np.ndarray:
    """Exact cell-sampled solution where one is known.

    Available at t = 0 for every pair, at t = period for the periodic winds
    (solid rotation and both deformational flows return the tracer to its
    starting position), and at any t for the vortex shape advected by the
    moving-vortices wind (closed form, forward and backward variants).
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    if t == 0.0:
        return initial_field(grid, scalar_case)
    if wind_case == "moving_vortices":
        if scalar_case != "vortex":
            raise ValueError("moving_vortices has a closed-form solution only "
                             "for the vortex shape")
        lon, lat = grid.cell_lonlat()
        return _moving_vortex_exact(lon, lat, t, grid.radius, period, direction)
    if t == period:
        # one full revolution of the periodic winds recovers the start
        return initial_field(grid, scalar_case)
    raise ValueError(f"no exact solution for {scalar_case}:{wind_case} at t={t}")


def _moving_vortex_exact(lon, lat, t, radius, period, direction):
    """Closed-form moving-vortices field.

    forward: t is physical time since the start, the vortex center drifts
    east and the spiral angle is lon_r - omega*t.  backward: t counts
    seconds of retro transport (advection by the reversed wind) from the
    initial shape, so the center drifts west and the angle is
    lon_r + omega*t; this is the reference for adjoint transport runs.
    """
    big_omega = 2.0 * math.pi / period
    if direction == "forward":
        lon_c = VORTEX_POLE_LON + big_omega * t
        sgn = 1.0
    else:
        lon_c = VORTEX_POLE_LON - big_omega * t
        sgn = -1.0
    lon_r, lat_r = _rotated_coords(lon, lat, lon_c, VORTEX_POLE_LAT)
    omega, rho = _vortex_omega(lat_r, radius, period)
    return 1.0 - np.tanh(rho / VORTEX_GAMMA * np.sin(lon_r - sgn * omega * t))


def _east_north(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    east = np.cross([0.0, 0.0, 1.0], points)
    east /= np.linalg.norm(east, axis=1, keepdims=True)
    north = np.cross(points, east)
    return east, north


def edge_winds(grid: SphereGrid, case: str, t: float,
               period: float = DEFAULT_PERIOD,
               mode: str = "midpoint") -> tuple[np.ndarray, np.ndarray]:
    """Normal and tangential wind components on every edge at time t.

    mode "midpoint" samples the analytic wind at the edge midpoint.  mode
    "streamfunction" instead differences the streamfunction between the
    edge endpoints, which makes the discrete divergence of v_n vanish to
    roundoff on every cell (the differences telescope around a cell); the
    tangential component is still midpoint sampled.  Only winds in
    HAS_STREAMFUNCTION support it.
    """
    lon, lat = _mid_lonlat(grid)
    u, v = wind_at(case, t, lon, lat, grid.radius, period)
    east, north = _east_north(grid.edge_mid)
    vec = u[:, None] * east + v[:, None] * north
    vt = np.einsum("ij,ij->i", vec, grid.edge_tangent)
    if mode == "midpoint":
        vn = np.einsum("ij,ij->i", vec, grid.edge_normal)
        return vn, vt
    if mode == "streamfunction":
        vlon, vlat = _lonlat_of(grid.verts)
        psi = streamfunction(case, t, vlon, vlat, grid.radius, period)
        a = grid.edge_verts[:, 0]
        b = grid.edge_verts[:, 1]
        chord = grid.verts[b] - grid.verts[a]
        along = np.einsum("ij,ij->i", chord, grid.edge_tangent) > 0.0
        first = np.where(along, psi[a], psi[b])
        second = np.where(along, psi[b], psi[a])
        vn = (first - second) / grid.edge_length
        return vn, vt
    raise ValueError(f"unknown edge wind mode {mode!r}")


def _mid_lonlat(grid: SphereGrid) -> tuple[np.ndarray, np.ndarray]:
    return _lonlat_of(grid.edge_mid)


def _lonlat_of(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lon = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2.0 * math.pi)
    lat = np.arcsin(np.clip(p[:, 2], -1.0, 1.0))
    return lon, lat
