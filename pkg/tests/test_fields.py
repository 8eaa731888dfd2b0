"""Norm-report and mass checks.

The 3-cell case is a frozen hand computation (the arithmetic is written
out term by term as the oracle); the cosine-bell mass is checked against a
1-D radial quadrature of the analytic shape, which the grid sampling must
reproduce within its own quadrature error.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from icotracer import cases
from icotracer.fields import NORM_COLUMNS, compute_norms, load_fields, mass, save_fields


def toy_grid(areas):
    a = np.asarray(areas, dtype=np.float64)
    return SimpleNamespace(cell_area=a, n_cells=len(a))


def test_identity_gives_zero_norms(grid_r2b2):
    q = cases.initial_field(grid_r2b2, "cosine_bell")
    r = compute_norms(grid_r2b2, q, q, bounds=(0.0, 1.0))
    assert r.l1_rel == 0 and r.l2_rel == 0 and r.linf_rel == 0
    assert r.l1_abs == 0 and r.l2_abs == 0 and r.linf_abs == 0
    assert r.undershoot_count == 0 and r.overshoot_count == 0


def test_constant_shift():
    g = toy_grid([1.0, 2.0, 4.0, 0.5])
    q_true = np.array([0.0, 1.0, 2.0, 3.0])
    c = 0.25
    r = compute_norms(g, q_true + c, q_true, bounds=(0.0, 3.0))
    assert r.linf_abs == pytest.approx(c, abs=0)
    assert r.l1_abs == pytest.approx(4 * c)
    assert r.overshoot_count == 1          # only the cell at the upper bound
    assert r.undershoot_count == 0
    assert r.max_value == pytest.approx(3.0 + c)


def test_violation_count_ignores_roundoff_dust():
    g = toy_grid([1.0, 1.0, 1.0])
    q_true = np.array([0.0, 0.5, 1.0])
    q = np.array([-1e-16, 0.5, 1.0 + 1e-16])
    r = compute_norms(g, q, q_true, bounds=(0.0, 1.0))
    assert r.undershoot_count == 0 and r.overshoot_count == 0
    # genuine violations still register
    r = compute_norms(g, np.array([-1e-3, 0.5, 1.001]), q_true, bounds=(0.0, 1.0))
    assert r.undershoot_count == 1 and r.overshoot_count == 1


def test_three_cell_hand_computation():
    g = toy_grid([2.0, 1.0, 3.0])
    q = np.array([1.0, -1.0, 2.0])
    q_true = np.array([0.5, 0.0, 2.5])
    r = compute_norms(g, q, q_true, bounds=(0.0, 2.5))
    # diff = [0.5, -1.0, -0.5]
    assert r.l1_rel == pytest.approx((2 * 0.5 + 1 * 1.0 + 3 * 0.5) / (2 * 0.5 + 0.0 + 3 * 2.5), rel=1e-15)
    assert r.l1_abs == pytest.approx(2.0, rel=1e-15)
    assert r.l2_rel == pytest.approx(
        math.sqrt(2 * 0.25 + 1 * 1.0 + 3 * 0.25) / math.sqrt(2 * 0.25 + 0.0 + 3 * 6.25), rel=1e-15)
    assert r.l2_abs == pytest.approx(math.sqrt(0.25 + 1.0 + 0.25), rel=1e-15)
    assert r.linf_rel == pytest.approx(1.0 / 2.5, rel=1e-15)
    assert r.linf_abs == pytest.approx(1.0, rel=1e-15)
    assert r.undershoot_count == 1
    assert r.overshoot_count == 0
    assert r.min_value == -1.0 and r.max_value == 2.0


def test_norms_permutation_invariant():
    rng = np.random.default_rng(7)
    w = rng.uniform(0.5, 2.0, 40)
    q = rng.normal(size=40)
    q_true = rng.normal(size=40) + 2.0
    perm = rng.permutation(40)
    a = compute_norms(toy_grid(w), q, q_true, bounds=(-5.0, 5.0))
    b = compute_norms(toy_grid(w[perm]), q[perm], q_true[perm], bounds=(-5.0, 5.0))
    assert a.l1_rel == pytest.approx(b.l1_rel, rel=1e-13)
    assert a.l2_rel == pytest.approx(b.l2_rel, rel=1e-13)
    assert a.linf_abs == b.linf_abs
    assert a.undershoot_count == b.undershoot_count


def test_zero_true_field_rejected():
    g = toy_grid([1.0, 1.0])
    with pytest.raises(ValueError):
        compute_norms(g, np.ones(2), np.zeros(2))


def test_size_mismatch_rejected(grid_r2b0):
    with pytest.raises(ValueError):
        compute_norms(grid_r2b0, np.ones(3), np.ones(grid_r2b0.n_cells))


def test_mass_of_unit_field(grid_r2b1):
    total = mass(grid_r2b1, np.ones(grid_r2b1.n_cells))
    assert total == pytest.approx(4.0 * math.pi * grid_r2b1.radius**2, rel=1e-12)
    assert mass(grid_r2b1, np.zeros(grid_r2b1.n_cells)) == 0.0


def test_mass_with_density(grid_r2b0):
    rho = np.full(grid_r2b0.n_cells, 2.0)
    q = np.ones(grid_r2b0.n_cells)
    assert mass(grid_r2b0, q, rho) == pytest.approx(8.0 * math.pi * grid_r2b0.radius**2, rel=1e-12)


def test_cosine_bell_mass_matches_quadrature(grid_r2b2):
    # analytic mass: the bell is radially symmetric about its center, so
    # integrate h(r) * 2*pi*sin(r) over [0, r_max] on the unit sphere
    r_max = 1.0 / 3.0
    r = np.linspace(0.0, r_max, 200_001)
    h = 0.5 * (1.0 + np.cos(math.pi * r / r_max))
    exact = np.trapezoid(h * 2.0 * math.pi * np.sin(r), r) * grid_r2b2.radius**2
    q = cases.initial_field(grid_r2b2, "cosine_bell")
    assert mass(grid_r2b2, q) == pytest.approx(exact, rel=1e-2)


def test_norm_columns_order():
    assert NORM_COLUMNS == ("l1_rel", "l2_rel", "linf_rel", "l1_abs", "l2_abs",
                            "linf_abs", "undershoot", "min", "overshoot", "max")
    g = toy_grid([1.0, 1.0, 1.0])
    r = compute_norms(g, np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 2.0]), bounds=(1.0, 2.0))
    row = r.as_row()
    assert len(row) == len(NORM_COLUMNS)
    assert row[0] == r.l1_rel and row[1] == r.l2_rel and row[2] == r.linf_rel
    assert row[6] == r.undershoot_count and row[8] == r.overshoot_count
    assert row[7] == r.min_value and row[9] == r.max_value


def test_field_dump_round_trip(tmp_path, grid_r2b0):
    rng = np.random.default_rng(3)
    recs = [(0, 0.0, rng.normal(size=grid_r2b0.n_cells)),
            (5, 3000.0, rng.normal(size=grid_r2b0.n_cells))]
    path = str(tmp_path / "fields.txt")
    save_fields(path, grid_r2b0, recs)
    back = load_fields(path)
    assert len(back) == 2
    for (n0, t0, v0), (n1, t1, v1) in zip(recs, back):
        assert n0 == n1 and t0 == t1
        assert np.array_equal(v0, v1)
