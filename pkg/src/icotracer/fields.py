"""Cell-field diagnostics: error norms, bound-violation counts, tracer mass.

The relative l1/l2 norms are area weighted while the absolute norms and
both max norms are plain sums/maxima over cells; the mixed weighting is
intentional and matched verbatim to the reference tables this code is
compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from icotracer.grid import SphereGrid

NORM_COLUMNS = ("l1_rel", "l2_rel", "linf_rel", "l1_abs", "l2_abs", "linf_abs",
                "undershoot", "min", "overshoot", "max")


@dataclass(frozen=True)
class NormReport:
    l1_rel: float
    l1_abs: float
    l2_rel: float
    l2_abs: float
    linf_rel: float
    linf_abs: float
    undershoot_count: int
    overshoot_count: int
    min_value: float
    max_value: float

    def as_row(self) -> list:
        """Values in the canonical CSV column order (NORM_COLUMNS)."""
        return [self.l1_rel, self.l2_rel, self.linf_rel,
                self.l1_abs, self.l2_abs, self.linf_abs,
                self.undershoot_count, self.min_value,
                self.overshoot_count, self.max_value]


def compute_norms(grid: SphereGrid, q: np.ndarray, q_true: np.ndarray,
                  bounds: tuple[float, float] | None = None) -> NormReport:
    """Error norms of q against q_true, plus bound-violation bookkeeping.

    bounds is the admissible [lo, hi] interval of the true solution;
    undershoots/overshoots are counted outside it beyond a roundoff
    allowance of 1e-13 of the bound scale, so limiter dust at 1e-17 does
    not register as a violation.  Raises on a grid/size mismatch and when
    q_true is identically zero (the relative norms would divide by zero).
    """
    q = np.asarray(q, dtype=np.float64)
    q_true = np.asarray(q_true, dtype=np.float64)
    if q.shape != (grid.n_cells,) or q_true.shape != (grid.n_cells,):
        raise ValueError("field size does not match the grid")

    w = grid.cell_area
    diff = q - q_true
    denom1 = float(np.sum(w * np.abs(q_true)))
    denom2 = float(np.sqrt(np.sum(w * q_true**2)))
    denom_inf = float(np.max(np.abs(q_true)))
    if denom_inf == 0.0:
        raise ValueError("true field is identically zero; relative norms undefined")

    if bounds is None:
        lo, hi = float(q_true.min()), float(q_true.max())
    else:
        lo, hi = float(bounds[0]), float(bounds[1])
    tol = 1e-13 * max(abs(lo), abs(hi))

    return NormReport(
        l1_rel=float(np.sum(w * np.abs(diff))) / denom1,
        l1_abs=float(np.sum(np.abs(diff))),
        l2_rel=float(np.sqrt(np.sum(w * diff**2))) / denom2,
        l2_abs=float(np.sqrt(np.sum(diff**2))),
        linf_rel=float(np.max(np.abs(diff))) / denom_inf,
        linf_abs=float(np.max(np.abs(diff))),
        undershoot_count=int(np.count_nonzero(q < lo - tol)),
        overshoot_count=int(np.count_nonzero(q > hi + tol)),
        min_value=float(q.min()),
        max_value=float(q.max()),
    )


def mass(grid: SphereGrid, q: np.ndarray, rho: np.ndarray | None = None) -> float:
    """Total tracer mass sum_j |Omega_j| rho_j q_j (rho defaults to 1)."""
    if rho is None:
        return float(np.sum(grid.cell_area * q))
    return float(np.sum(grid.cell_area * rho * q))


def save_fields(path: str, grid: SphereGrid, records: list[tuple[int, float, np.ndarray]],
                mode: str = "w") -> None:
    """Append cell-field snapshots as text blocks.

    Each block is a header line ``FIELD step time n_cells`` followed by one
    repr-precision value per line, so rewrites are byte identical.
    """
    with open(path, mode, encoding="ascii") as fh:
        for step, time, values in records:
            fh.write(f"FIELD {step} {float(time)!r} {grid.n_cells}\n")
            for v in np.asarray(values, dtype=np.float64).tolist():
                fh.write(f"{v!r}\n")


def load_fields(path: str) -> list[tuple[int, float, np.ndarray]]:
    records = []
    with open(path, encoding="ascii") as fh:
        line = fh.readline()
        while line:
            tag, step, time, n = line.split()
            if tag != "FIELD":
                raise ValueError(f"bad field block header: {line!r}")
            vals = np.array([float(fh.readline()) for _ in range(int(n))])
            records.append((int(step), float(time), vals))
            line = fh.readline()
    return records
