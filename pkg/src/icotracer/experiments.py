"""Canned multi-run studies emitting CSV tables and a JSON manifest.

run_experiment resolves a small declarative spec (family name plus string
parameters) into concrete solver runs.  Every family writes its tables and
cost histories into one output directory together with manifest.json
recording inputs, library versions, grid counts, step counts, the largest
Courant number seen, and wall-clock timings.  For a fixed spec and seed the
CSV payloads are byte identical across reruns; timings live only in the
manifest.
"""

from __future__ import annotations

import json
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from icotracer import __version__, adjoint, assim, cases, kernels, lbfgs
from icotracer.fields import NORM_COLUMNS, compute_norms, mass
from icotracer.grid import build_grid
from icotracer.transport import Transport, run_forward, steps_for

FAMILIES = ("advect-table", "adjoint-compare", "assim-convergence",
            "assim-obs-sweep", "assim-mesh-sweep", "assim-weight-sweep")

# scheme tokens used in tables: solver kind and limiter in one id
SCHEMES = {
    "forward-nolim": ("forward", "none"),
    "forward+minmax": ("forward", "minmax"),
    "forward+positive": ("forward", "positive"),
    "standard-adjoint": ("standard", "none"),
    "standard": ("standard", "none"),
    "artsource-nolim": ("artsource", "none"),
    "artsource+minmax": ("artsource", "minmax"),
    "artsource+positive": ("artsource", "positive"),
}

# default step sizes for the R2 grid series, halving per bisection level
DEFAULT_DT = {0: 9600.0, 1: 4800.0, 2: 2400.0, 3: 1200.0, 4: 600.0,
              5: 300.0, 6: 150.0, 7: 75.0}


class ExperimentError(RuntimeError):
    """An experiment stage failed; the message names the stage."""


@dataclass
class ExperimentSpec:
    family: str
    out_dir: str = "."
    seed: int = 0
    full: bool = False
    params: dict[str, str] = field(default_factory=dict)


# -- small shared helpers ------------------------------------------------------


def split_case(token: str) -> tuple[str, str]:
    scalar, _, wind = token.partition(":")
    if not wind:
        raise ValueError(f"case must be '<scalar>:<wind>', got {token!r}")
    return scalar, wind


def parse_grid_name(name: str) -> tuple[int, int]:
    m = name.strip().upper()
    if not (m.startswith("R") and "B" in m[1:]):
        raise ValueError(f"grid must look like R2B3, got {name!r}")
    n_r, n_b = m[1:].split("B", 1)
    return int(n_r), int(n_b)


def _dt_for(grid_name: str, override: str) -> float:
    if override:
        return float(override)
    return DEFAULT_DT[parse_grid_name(grid_name)[1]]


def _scheme_parts(token: str) -> tuple[str, str]:
    if token not in SCHEMES:
        raise ValueError(f"unknown scheme {token!r} "
                         f"(known: {', '.join(sorted(SCHEMES))})")
    return SCHEMES[token]


def _merge_params(spec: ExperimentSpec, defaults: dict[str, str]) -> dict[str, str]:
    p = dict(defaults)
    for key, value in spec.params.items():
        if key not in defaults:
            raise ExperimentError(
                f"unknown parameter {key!r} for family {spec.family!r} "
                f"(known: {', '.join(sorted(defaults))})")
        p[key] = value
    return p


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, header: tuple[str, ...], rows: list[list]) -> None:
    """Plain CSV with repr-precision floats, so reruns are byte identical."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


@contextmanager
def _stage(name: str, timings: dict[str, float]):
    start = time.perf_counter()
    try:
        yield
    except ExperimentError:
        raise
    except Exception as err:
        raise ExperimentError(f"stage {name!r} failed: {err}") from err
    timings[name] = round(time.perf_counter() - start, 3)


def _run_entry(grid, dt: float, n_steps: int, cfl: float) -> dict:
    return {"grid": grid.name, "cells": grid.n_cells, "edges": grid.n_edges,
            "vertices": grid.n_verts, "dt": dt, "n_steps": n_steps,
            "cfl_max": float(cfl)}


def _history_stats(history) -> tuple[float, float, float, int, int]:
    j0 = history[0].j_total
    j_best = min(rec.j_total for rec in history)
    reduction = j0 / j_best if j_best > 0.0 else float("inf")
    iterations = max(rec.iteration for rec in history)
    restarts = sum(1 for rec in history if rec.restart)
    return j0, j_best, reduction, iterations, restarts


def _twin_config(case: str, grid: str, dt: float, t_end: float, n_obs: int,
                 background: str, w_b: float, w_o: float,
                 scheme: str) -> dict[str, str]:
    method, limiter = _scheme_parts(scheme)
    if method == "forward":
        raise ValueError(f"scheme {scheme!r} has no adjoint; "
                         "assimilation needs standard or artsource")
    return {"case": case, "grid": grid, "dt": repr(dt), "T": repr(t_end),
            "n_obs": str(n_obs), "background_mode": background,
            "w_b": repr(w_b), "w_o": repr(w_o),
            "method": method, "limiter": limiter}


def _run_twin(cfg: dict[str, str], iters: int):
    """One assimilation run from a config dict; returns everything observable."""
    problem, options = assim.problem_from_config(cfg)
    config = lbfgs.LbfgsConfig(max_iters=iters)
    x, history = lbfgs.minimize(problem, method=options["method"], config=config)
    return problem, options, x, history


# -- advect-table --------------------------------------------------------------

ADVECT_SCHEMES = ("forward-nolim", "standard-adjoint", "artsource-nolim",
                  "forward+minmax", "artsource+minmax")

ADVECT_COLUMNS = ("scheme",) + NORM_COLUMNS + ("mass_drift_rel",)


def _backward_sweep(method: str, transport: Transport, q_end: np.ndarray,
                    dt: float, n_steps: int, wind_case: str, period: float,
                    wind_mode: str) -> np.ndarray:
    """Zero-forcing adjoint sweep from q*(T) = q_end without storing levels."""
    qstar = q_end.copy()
    for n in range(n_steps - 1, -1, -1):
        vn, vt = cases.edge_winds(transport.grid, wind_case, (n + 0.5) * dt,
                                  period, wind_mode)
        if method == "standard":
            op = adjoint.assemble_forward_operator(transport, vn, vt, dt, level=n)
            qstar = adjoint.standard_adjoint_step(qstar, op, None, dt)
        else:
            qstar = adjoint.artsource_adjoint_step(transport, qstar, None, vn, vt, dt)
    return qstar


def _advect_table(spec: ExperimentSpec, out_dir: str, timings: dict):
    defaults = {"case": "cosine_bell:solid_rotation",
                "grid": "R2B4" if spec.full else "R2B3",
                "dt": "", "revolutions": "1", "order": "2",
                "wind_mode": "midpoint",
                "schemes": ",".join(ADVECT_SCHEMES)}
    p = _merge_params(spec, defaults)
    scalar_case, wind_case = split_case(p["case"])
    period = cases.DEFAULT_PERIOD
    revs = int(p["revolutions"])
    if revs < 1:
        raise ExperimentError("revolutions must be a positive integer")
    t_end = revs * period
    if wind_case == "moving_vortices" and scalar_case != "vortex":
        raise ExperimentError("moving_vortices only has a reference solution "
                              "for the vortex field")

    with _stage("build-grid", timings):
        grid = build_grid(*parse_grid_name(p["grid"]))
    dt = _dt_for(p["grid"], p["dt"])
    n_steps = steps_for(dt, t_end)
    order = int(p["order"])
    q0 = cases.initial_field(grid, scalar_case)
    bounds = cases.scalar_bounds(scalar_case)
    m0 = mass(grid, q0)

    if wind_case == "moving_vortices":
        ref_fwd = cases.exact_solution(grid, scalar_case, wind_case, t_end)
        ref_bwd = cases.exact_solution(grid, scalar_case, wind_case, t_end,
                                       direction="backward")
    else:
        # the periodic winds return the tracer after whole revolutions,
        # forward and backward alike
        ref_fwd = q0
        ref_bwd = q0

    rows: list[list] = []
    cfl = 0.0
    for scheme in p["schemes"].split(","):
        scheme = scheme.strip()
        kind, limiter = _scheme_parts(scheme)
        with _stage(scheme, timings):
            transport = Transport(grid, order=order, limiter=limiter)
            if kind == "forward":
                q_end, _ = run_forward(transport, q0, dt, t_end, wind_case,
                                       period=period, wind_mode=p["wind_mode"])
                report = compute_norms(grid, q_end, ref_fwd, bounds=bounds)
                drift = abs(mass(grid, q_end) - m0) / abs(m0)
            else:
                qstar = _backward_sweep(kind, transport, q0, dt, n_steps,
                                        wind_case, period, p["wind_mode"])
                report = compute_norms(grid, qstar, ref_bwd, bounds=bounds)
                drift = abs(mass(grid, qstar) - m0) / abs(m0)
            cfl = max(cfl, transport.courant_seen)
        rows.append([scheme] + report.as_row() + [drift])

    table = os.path.join(out_dir, "advect_table.csv")
    write_csv(table, ADVECT_COLUMNS, rows)
    runs = [_run_entry(grid, dt, n_steps, cfl)]
    return ["advect_table.csv"], runs, p


# -- adjoint-compare -----------------------------------------------------------

COMPARE_COLUMNS = ("check", "method", "order", "limiter", "value")


def _adjoint_compare(spec: ExperimentSpec, out_dir: str, timings: dict):
    defaults = {"case": "vortex:moving_vortices", "grid": "R2B2", "dt": "",
                "retro_steps": "20", "pairs": "20",
                "twin_t_end": "86400", "n_obs": ""}
    p = _merge_params(spec, defaults)
    scalar_case, wind_case = split_case(p["case"])
    with _stage("build-grid", timings):
        grid = build_grid(*parse_grid_name(p["grid"]))
    dt = _dt_for(p["grid"], p["dt"])
    rng = np.random.default_rng(spec.seed)
    rows: list[list] = []
    cfl = 0.0

    with _stage("duality", timings):
        transport = Transport(grid, order=2, limiter="none")
        vn, vt = cases.edge_winds(grid, wind_case, 0.5 * dt)
        op = adjoint.assemble_forward_operator(transport, vn, vt, dt, level=0)
        worst = 0.0
        for _ in range(int(p["pairs"])):
            q = rng.standard_normal(grid.n_cells)
            s = rng.standard_normal(grid.n_cells)
            worst = max(worst, adjoint.duality_residual(op, q, s))
        rows.append(["duality", "standard", 2, "none", worst])

    if wind_case not in cases.HAS_STREAMFUNCTION:
        raise ExperimentError(f"retro checks need a divergence-free wind, "
                              f"not {wind_case!r}")
    n_retro = int(p["retro_steps"])
    q_end = cases.initial_field(grid, scalar_case)
    for method, order in (("standard", 1), ("artsource", 2)):
        with _stage(f"retro-{method}", timings):
            tr = Transport(grid, order=order, limiter="none")
            qs = q_end.copy()
            qr = q_end.copy()
            worst = 0.0
            for n in range(n_retro - 1, -1, -1):
                vn, vt = cases.edge_winds(grid, wind_case, (n + 0.5) * dt,
                                          mode="streamfunction")
                if method == "standard":
                    op = adjoint.assemble_forward_operator(tr, vn, vt, dt, level=n)
                    qs = adjoint.standard_adjoint_step(qs, op, None, dt)
                else:
                    qs = adjoint.artsource_adjoint_step(tr, qs, None, vn, vt, dt)
                qr = tr.step_winds(qr, -vn, -vt, dt)
                worst = max(worst, float(np.abs(qs - qr).max() / np.abs(qr).max()))
            cfl = max(cfl, tr.courant_seen)
        rows.append(["retro", method, order, "none", worst])

    t_twin = float(p["twin_t_end"])
    n_obs = int(p["n_obs"]) if p["n_obs"] else grid.n_cells // 4
    base = _twin_config(p["case"], p["grid"], dt, t_twin, n_obs,
                        "uniform10pct", 0.5, 0.5, "standard")

    with _stage("gradient-gap", timings):
        problem, _ = assim.problem_from_config(base)
        x0 = problem.background.copy()
        g_std = problem.gradient(x0, "standard")
        g_art = problem.gradient(x0, "artsource")
        gap = float(np.linalg.norm(g_art - g_std) / np.linalg.norm(g_std))
        cfl = max(cfl, problem.transport.courant_seen)
    rows.append(["gradient-l2-gap", "artsource", 2, "none", gap])

    with _stage("fd-plateau", timings):
        d = rng.standard_normal(grid.n_cells)
        d /= np.linalg.norm(d)
        rows.append(["fd-plateau", "standard", 2, "none",
                     fd_error(problem, "standard", x0, d,
                               [10.0 ** -k for k in range(2, 7)])])

    with _stage("fd-descent", timings):
        lim = assim.problem_from_config(dict(base, method="artsource",
                                             limiter="minmax"))[0]
        xl = lim.background.copy()
        g = lim.gradient(xl, "artsource")
        d = g / np.linalg.norm(g)
        rows.append(["fd-descent", "artsource", 2, "minmax",
                     fd_error(lim, "artsource", xl, d,
                               [1e-2, 1e-3, 1e-4])])
        cfl = max(cfl, lim.transport.courant_seen)

    table = os.path.join(out_dir, "adjoint_compare.csv")
    write_csv(table, COMPARE_COLUMNS, rows)
    runs = [_run_entry(grid, dt, steps_for(dt, t_twin), cfl)]
    return ["adjoint_compare.csv"], runs, p


def fd_error(problem, method: str, x: np.ndarray, d: np.ndarray,
              epsilons: list[float]) -> float:
    """Best central-difference agreement of dJ/dd over an epsilon sweep."""
    g = problem.gradient(x, method)
    slope = float(g @ d)
    best = float("inf")
    for eps in epsilons:
        jp = problem.cost(x + eps * d).j_total
        jm = problem.cost(x - eps * d).j_total
        fd = (jp - jm) / (2.0 * eps)
        best = min(best, abs(fd - slope) / max(abs(slope), 1e-300))
    return best


# -- assimilation families -----------------------------------------------------

SUMMARY_COLUMNS = ("scheme", "j_initial", "j_best", "reduction",
                   "iterations", "restarts", "l1_rel", "l2_rel", "linf_rel")


def _recovery_norms(problem, options, x) -> list[float]:
    report = compute_norms(problem.grid, x, options["truth"],
                           bounds=cases.scalar_bounds(options["scalar_case"]))
    return [report.l1_rel, report.l2_rel, report.linf_rel]


def _assim_convergence(spec: ExperimentSpec, out_dir: str, timings: dict):
    defaults = {"case": "vortex:moving_vortices", "grid": "R2B3", "dt": "",
                "t_end": "345600", "n_obs": "", "background": "uniform10pct",
                "iters": "50", "w_b": "0.5", "w_o": "0.5",
                "schemes": "standard,artsource-nolim,artsource+minmax"}
    p = _merge_params(spec, defaults)
    dt = _dt_for(p["grid"], p["dt"])
    t_end = float(p["t_end"])
    iters = int(p["iters"])
    n_cells = build_grid(*parse_grid_name(p["grid"])).n_cells
    n_obs = int(p["n_obs"]) if p["n_obs"] else n_cells // 4

    outputs, rows, runs = [], [], []
    for scheme in p["schemes"].split(","):
        scheme = scheme.strip()
        with _stage(scheme, timings):
            cfg = _twin_config(p["case"], p["grid"], dt, t_end, n_obs,
                               p["background"], float(p["w_b"]), float(p["w_o"]),
                               scheme)
            problem, options, x, history = _run_twin(cfg, iters)
            name = f"costs_{scheme}.csv"
            lbfgs.save_history(os.path.join(out_dir, name), history)
            outputs.append(name)
            j0, j_best, reduction, n_it, restarts = _history_stats(history)
            rows.append([scheme, j0, j_best, reduction, n_it, restarts]
                        + _recovery_norms(problem, options, x))
            runs.append(_run_entry(problem.grid, dt, problem.obs.n_levels - 1,
                                   problem.transport.courant_seen))
    write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, rows)
    outputs.append("summary.csv")
    return outputs, runs, p


def _assim_obs_sweep(spec: ExperimentSpec, out_dir: str, timings: dict):
    defaults = {"case": "vortex:moving_vortices", "grid": "R2B2", "dt": "",
                "t_end": "172800", "background": "uniform10pct",
                "iters": "25", "w_b": "0.5", "w_o": "0.5",
                "scheme": "standard", "obs": ""}
    p = _merge_params(spec, defaults)
    dt = _dt_for(p["grid"], p["dt"])
    t_end = float(p["t_end"])
    iters = int(p["iters"])
    n_cells = build_grid(*parse_grid_name(p["grid"])).n_cells
    if p["obs"]:
        obs_counts = [int(tok) for tok in p["obs"].split(",")]
    else:
        obs_counts = [n_cells, n_cells // 4, n_cells // 16]

    outputs, rows, runs = [], [], []
    for n_obs in obs_counts:
        with _stage(f"obs-{n_obs}", timings):
            cfg = _twin_config(p["case"], p["grid"], dt, t_end, n_obs,
                               p["background"], float(p["w_b"]), float(p["w_o"]),
                               p["scheme"])
            problem, options, x, history = _run_twin(cfg, iters)
            name = f"costs_obs{n_obs:05d}.csv"
            lbfgs.save_history(os.path.join(out_dir, name), history)
            outputs.append(name)
            j0, j_best, reduction, _, _ = _history_stats(history)
            rows.append([n_obs, j0, j_best, reduction]
                        + _recovery_norms(problem, options, x))
            runs.append(_run_entry(problem.grid, dt, problem.obs.n_levels - 1,
                                   problem.transport.courant_seen))
    write_csv(os.path.join(out_dir, "obs_sweep.csv"),
              ("n_obs", "j_initial", "j_best", "reduction",
               "l1_rel", "l2_rel", "linf_rel"), rows)
    outputs.append("obs_sweep.csv")
    return outputs, runs, p


def _assim_mesh_sweep(spec: ExperimentSpec, out_dir: str, timings: dict):
    defaults = {"case": "vortex:moving_vortices",
                "grids": "R2B2,R2B3,R2B4" if spec.full else "R2B2,R2B3",
                "dt": "", "t_end": "172800", "background": "uniform10pct",
                "iters": "25", "w_b": "0.5", "w_o": "0.5", "n_obs": "",
                "schemes": "artsource-nolim,artsource+minmax"}
    p = _merge_params(spec, defaults)
    t_end = float(p["t_end"])
    iters = int(p["iters"])
    grid_names = [tok.strip() for tok in p["grids"].split(",")]
    # same observation count on every mesh, so refinement is the only change
    coarse_cells = build_grid(*parse_grid_name(grid_names[0])).n_cells
    n_obs = int(p["n_obs"]) if p["n_obs"] else coarse_cells // 4

    outputs, rows, runs = [], [], []
    for grid_name in grid_names:
        dt = _dt_for(grid_name, p["dt"])
        for scheme in p["schemes"].split(","):
            scheme = scheme.strip()
            with _stage(f"{grid_name}-{scheme}", timings):
                cfg = _twin_config(p["case"], grid_name, dt, t_end, n_obs,
                                   p["background"], float(p["w_b"]),
                                   float(p["w_o"]), scheme)
                problem, options, x, history = _run_twin(cfg, iters)
                name = f"costs_{grid_name}_{scheme}.csv"
                lbfgs.save_history(os.path.join(out_dir, name), history)
                outputs.append(name)
                j0, j_best, reduction, _, _ = _history_stats(history)
                rows.append([grid_name, problem.grid.n_cells, dt, scheme,
                             j0, j_best, reduction]
                            + _recovery_norms(problem, options, x))
                runs.append(_run_entry(problem.grid, dt,
                                       problem.obs.n_levels - 1,
                                       problem.transport.courant_seen))
    write_csv(os.path.join(out_dir, "mesh_sweep.csv"),
              ("grid", "cells", "dt", "scheme", "j_initial", "j_best",
               "reduction", "l1_rel", "l2_rel", "linf_rel"), rows)
    outputs.append("mesh_sweep.csv")
    return outputs, runs, p


def _assim_weight_sweep(spec: ExperimentSpec, out_dir: str, timings: dict):
    defaults = {"case": "two_slotted_cylinders:deform_nondiv", "grid": "R2B2",
                "dt": "", "t_end": "518400", "n_obs": "",
                "background": "uniform10pct", "iters": "50",
                "weights": "0.5,0.6,0.7,0.8,0.9,1.0",
                "schemes": "standard,artsource+minmax"}
    p = _merge_params(spec, defaults)
    dt = _dt_for(p["grid"], p["dt"])
    t_end = float(p["t_end"])
    iters = int(p["iters"])
    n_cells = build_grid(*parse_grid_name(p["grid"])).n_cells
    n_obs = int(p["n_obs"]) if p["n_obs"] else n_cells // 4

    outputs, rows, runs = [], [], []
    for tok in p["weights"].split(","):
        w_o = float(tok)
        if not 0.0 < w_o <= 1.0:
            raise ExperimentError(f"observation weight must lie in (0, 1], got {w_o}")
        w_b = 1.0 - w_o
        for scheme in p["schemes"].split(","):
            scheme = scheme.strip()
            with _stage(f"w{w_o:.2f}-{scheme}", timings):
                cfg = _twin_config(p["case"], p["grid"], dt, t_end, n_obs,
                                   p["background"], w_b, w_o, scheme)
                problem, options, x, history = _run_twin(cfg, iters)
                name = f"costs_w{int(round(100 * w_o)):03d}_{scheme}.csv"
                lbfgs.save_history(os.path.join(out_dir, name), history)
                outputs.append(name)
                j0, j_best, _, _, _ = _history_stats(history)
                rows.append([w_o, w_b, scheme, j0, j_best]
                            + _recovery_norms(problem, options, x))
                runs.append(_run_entry(problem.grid, dt,
                                       problem.obs.n_levels - 1,
                                       problem.transport.courant_seen))
    write_csv(os.path.join(out_dir, "weight_sweep.csv"),
              ("w_o", "w_b", "scheme", "j_initial", "j_best",
               "l1_rel", "l2_rel", "linf_rel"), rows)
    outputs.append("weight_sweep.csv")
    return outputs, runs, p


# -- dispatcher ----------------------------------------------------------------

_FAMILY_FUNCS = {
    "advect-table": _advect_table,
    "adjoint-compare": _adjoint_compare,
    "assim-convergence": _assim_convergence,
    "assim-obs-sweep": _assim_obs_sweep,
    "assim-mesh-sweep": _assim_mesh_sweep,
    "assim-weight-sweep": _assim_weight_sweep,
}


def _collapse(values: list):
    uniq: list = []
    for v in values:
        if v not in uniq:
            uniq.append(v)
    return uniq[0] if len(uniq) == 1 else uniq


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run one family and write its outputs; returns the manifest dict."""
    if spec.family not in FAMILIES:
        raise ExperimentError(f"unknown family {spec.family!r} "
                              f"(known: {', '.join(FAMILIES)})")
    os.makedirs(spec.out_dir, exist_ok=True)
    timings: dict[str, float] = {}
    start = time.perf_counter()
    outputs, runs, params = _FAMILY_FUNCS[spec.family](spec, spec.out_dir, timings)
    timings["total"] = round(time.perf_counter() - start, 3)

    manifest = {
        "family": spec.family,
        "seed": spec.seed,
        "full": spec.full,
        "params": params,
        "versions": {"python": platform.python_version(),
                     "numpy": np.__version__,
                     "icotracer": __version__,
                     "kernel_backend": kernels.BACKEND},
        "grid": _collapse([{k: r[k] for k in ("grid", "cells", "edges", "vertices")}
                           for r in runs]),
        "dt": _collapse([r["dt"] for r in runs]),
        "n_steps": _collapse([r["n_steps"] for r in runs]),
        "cfl_max": max(r["cfl_max"] for r in runs),
        "runs": runs,
        "timings_s": timings,
        "outputs": outputs,
    }
    with open(os.path.join(spec.out_dir, "manifest.json"), "w",
              encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
