"""Command-line front end: grid, advect, adjoint-test, assimilate, experiment."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from icotracer import __version__, adjoint, assim, cases, lbfgs
from icotracer.experiments import (DEFAULT_DT, FAMILIES, ExperimentError,
                                   ExperimentSpec, fd_error, parse_grid_name,
                                   run_experiment, split_case, write_csv)
from icotracer.fields import NORM_COLUMNS, compute_norms, mass, save_fields
from icotracer.grid import EARTH_RADIUS, build_grid, format_report, save_grid
from icotracer.transport import LIMITERS, Transport, steps_for

TOLERANCES = {"duality": 1e-12, "retro": 1e-12,
              "gradient-standard": 1e-6, "gradient-artsource": 5e-2}


def _add_common(parser: argparse.ArgumentParser, with_out: bool = True) -> None:
    """Global flags, repeated on each subcommand so they work in either position."""
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for any randomized check (default 0)")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker cap for external schedulers; the bundled "
                             "kernels are single threaded, so results do not "
                             "depend on it (0 = all cores)")
    if with_out:
        parser.add_argument("--out", dest="out_dir", metavar="DIR",
                            default=argparse.SUPPRESS,
                            help="directory for output files (default .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icotracer",
        description="Tracer advection, discrete adjoints, and variational "
                    "assimilation on icosahedral grids of the sphere.")
    parser.add_argument("--version", action="version",
                        version=f"icotracer {__version__}")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for any randomized check")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker cap for external schedulers (0 = all cores)")
    parser.add_argument("--out", dest="out_dir", metavar="DIR", default=".",
                        help="directory for output files")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    g = sub.add_parser("grid", help="build a grid, print counts, dump it as text")
    g.add_argument("--nr", type=int, default=2, help="root subdivision (default 2)")
    g.add_argument("--nb", type=int, required=True, help="bisection level")
    g.add_argument("--radius", type=float, default=EARTH_RADIUS,
                   help="sphere radius in meters")
    g.add_argument("--out", dest="out_file", metavar="FILE", default=None,
                   help="write the grid arrays to FILE")
    g.add_argument("--report", action="store_true",
                   help="print the full metrics report")
    _add_common(g, with_out=False)
    g.set_defaults(func=cmd_grid)

    a = sub.add_parser("advect", help="run one forward advection case")
    a.add_argument("--case", required=True, metavar="SCALAR:WIND",
                   help="initial field and wind, e.g. cosine_bell:solid_rotation")
    a.add_argument("--grid-nb", type=int, required=True, help="bisection level")
    a.add_argument("--grid-nr", type=int, default=2, help="root subdivision")
    a.add_argument("--dt", type=float, required=True, help="step size in seconds")
    a.add_argument("--t-end", type=float, default=None,
                   help="window length in seconds (default: one revolution)")
    a.add_argument("--limiter", choices=LIMITERS, default="none")
    a.add_argument("--order", type=int, choices=(1, 2), default=2)
    a.add_argument("--wind-mode", choices=("midpoint", "streamfunction"),
                   default="midpoint")
    a.add_argument("--out", dest="out_file", metavar="FILE", default="norms.csv",
                   help="error-norm CSV (default norms.csv)")
    a.add_argument("--dump-every", nargs=2, metavar=("K", "FILE"), default=None,
                   help="write the field every K steps to FILE")
    _add_common(a, with_out=False)
    a.set_defaults(func=cmd_advect)

    t = sub.add_parser("adjoint-test",
                       help="verify an adjoint property, print JSON pass/fail")
    t.add_argument("--method", choices=adjoint.METHODS, default="standard")
    t.add_argument("--case", required=True, metavar="SCALAR:WIND")
    t.add_argument("--check", choices=("duality", "retro", "gradient"),
                   required=True)
    t.add_argument("--grid", default="R2B2", help="grid name such as R2B2")
    t.add_argument("--dt", type=float, default=None,
                   help="step size (default by grid level)")
    t.add_argument("--t-end", type=float, default=172800.0,
                   help="twin window for the gradient check")
    t.add_argument("--steps", type=int, default=20,
                   help="steps for the retro check")
    t.add_argument("--pairs", type=int, default=100,
                   help="random pairs for the duality check")
    t.add_argument("--n-obs", type=int, default=None,
                   help="observed cells for the gradient check (default: all)")
    t.add_argument("--dirs", type=int, default=5,
                   help="random directions for the standard gradient check")
    t.add_argument("--limiter", choices=LIMITERS, default="none")
    t.add_argument("--order", type=int, choices=(1, 2), default=None,
                   help="spatial order (default: per check)")
    t.add_argument("--json-out", metavar="FILE", default=None,
                   help="also write the JSON result to FILE")
    _add_common(t)
    t.set_defaults(func=cmd_adjoint_test)

    s = sub.add_parser("assimilate", help="run the variational twin experiment")
    s.add_argument("--config", required=True, metavar="FILE",
                   help="key=value run configuration")
    s.add_argument("--iters", type=int, default=50,
                   help="optimizer iteration cap")
    s.add_argument("--out", dest="out_file", metavar="FILE", default="costs.csv",
                   help="cost-history CSV (default costs.csv)")
    s.add_argument("--xout", metavar="FILE", default=None,
                   help="write the recovered initial field to FILE")
    _add_common(s, with_out=False)
    s.set_defaults(func=cmd_assimilate)

    e = sub.add_parser("experiment", help="run a canned experiment family")
    e.add_argument("--family", choices=FAMILIES, default=None)
    e.add_argument("-p", "--param", action="append", default=[],
                   metavar="KEY=VALUE", help="override a family parameter")
    e.add_argument("--full", action="store_true",
                   help="use the larger grids instead of the desk-scale defaults")
    _add_common(e)
    e.set_defaults(func=cmd_experiment)

    return parser


def _outpath(args, filename: str) -> str:
    if os.path.isabs(filename):
        return filename
    out_dir = getattr(args, "out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, filename)


# -- subcommands ----------------------------------------------------------------


def cmd_grid(args) -> int:
    grid = build_grid(args.nr, args.nb, radius=args.radius)
    print(f"{grid.name}: {grid.n_cells} cells, {grid.n_edges} edges, "
          f"{grid.n_verts} vertices")
    if args.report:
        print(format_report(grid))
    if args.out_file:
        path = _outpath(args, args.out_file)
        save_grid(grid, path)
        print(f"wrote {path}")
    return 0


def cmd_advect(args) -> int:
    scalar_case, wind_case = split_case(args.case)
    grid = build_grid(args.grid_nr, args.grid_nb)
    period = cases.DEFAULT_PERIOD
    t_end = period if args.t_end is None else args.t_end
    n_steps = steps_for(args.dt, t_end)
    try:
        ref = cases.exact_solution(grid, scalar_case, wind_case, t_end, period)
    except ValueError as err:
        raise ValueError(
            f"no reference solution for error norms at t_end={t_end}; "
            f"use a whole revolution or the vortex:moving_vortices case "
            f"({err})") from err

    transport = Transport(grid, order=args.order, limiter=args.limiter)
    q0 = cases.initial_field(grid, scalar_case)
    m0 = mass(grid, q0)

    dump = None
    if args.dump_every is not None:
        every, dump_file = int(args.dump_every[0]), args.dump_every[1]
        if every < 1:
            raise ValueError("dump interval must be a positive step count")
        dump = (every, _outpath(args, dump_file), [(0, 0.0, q0.copy())])

    q = q0.copy()
    for n in range(n_steps):
        q = transport.step(q, n * args.dt, args.dt, wind_case, period,
                           args.wind_mode)
        if dump and ((n + 1) % dump[0] == 0 or n + 1 == n_steps):
            dump[2].append((n + 1, (n + 1) * args.dt, q.copy()))
    if dump:
        save_fields(dump[1], grid, dump[2])
        print(f"wrote {dump[1]} ({len(dump[2])} snapshots)")

    report = compute_norms(grid, q, ref, bounds=cases.scalar_bounds(scalar_case))
    drift = abs(mass(grid, q) - m0) / abs(m0)
    header = ("scalar", "wind", "grid", "dt", "n_steps", "order",
              "limiter") + NORM_COLUMNS + ("mass_drift_rel", "cfl_max")
    row = [scalar_case, wind_case, grid.name, args.dt, n_steps, args.order,
           args.limiter] + report.as_row() + [drift, transport.courant_seen]
    path = _outpath(args, args.out_file)
    write_csv(path, header, [row])
    print(f"{grid.name} {args.case} order={args.order} limiter={args.limiter}: "
          f"l2_rel={report.l2_rel:.4e} linf_rel={report.linf_rel:.4e} "
          f"mass_drift={drift:.2e} cfl={transport.courant_seen:.3f}")
    print(f"wrote {path}")
    return 0


def cmd_adjoint_test(args) -> int:
    scalar_case, wind_case = split_case(args.case)
    grid = build_grid(*parse_grid_name(args.grid))
    dt = args.dt if args.dt else DEFAULT_DT[parse_grid_name(args.grid)[1]]
    rng = np.random.default_rng(getattr(args, "seed", 0))
    result = {"check": args.check, "method": args.method, "case": args.case,
              "grid": grid.name, "dt": dt}

    if args.check == "duality":
        order = 2 if args.order is None else args.order
        transport = Transport(grid, order=order, limiter="none")
        vn, vt = cases.edge_winds(grid, wind_case, 0.5 * dt)
        op = adjoint.assemble_forward_operator(transport, vn, vt, dt, level=0)
        worst = 0.0
        for _ in range(args.pairs):
            q = rng.standard_normal(grid.n_cells)
            s = rng.standard_normal(grid.n_cells)
            worst = max(worst, adjoint.duality_residual(op, q, s))
        tol = TOLERANCES["duality"]
        result.update(order=order, pairs=args.pairs, tolerance=tol,
                      residuals={"max": worst})
        result["pass"] = worst <= tol

    elif args.check == "retro":
        if args.limiter != "none":
            raise ValueError("the retro identity is stated for the unlimited scheme")
        if wind_case not in cases.HAS_STREAMFUNCTION:
            raise ValueError(f"retro needs a divergence-free wind, not {wind_case!r}")
        order = (1 if args.method == "standard" else 2) \
            if args.order is None else args.order
        if args.method == "standard" and order != 1:
            raise ValueError("the transpose equals reversed-wind transport "
                             "at order 1 only; use --order 1")
        transport = Transport(grid, order=order, limiter="none")
        q_end = cases.initial_field(grid, scalar_case)
        qs, qr = q_end.copy(), q_end.copy()
        worst = 0.0
        for n in range(args.steps - 1, -1, -1):
            vn, vt = cases.edge_winds(grid, wind_case, (n + 0.5) * dt,
                                      mode="streamfunction")
            if args.method == "standard":
                op = adjoint.assemble_forward_operator(transport, vn, vt, dt,
                                                       level=n)
                qs = adjoint.standard_adjoint_step(qs, op, None, dt)
            else:
                qs = adjoint.artsource_adjoint_step(transport, qs, None,
                                                    vn, vt, dt)
            qr = transport.step_winds(qr, -vn, -vt, dt)
            worst = max(worst, float(np.abs(qs - qr).max() / np.abs(qr).max()))
        tol = TOLERANCES["retro"]
        result.update(order=order, steps=args.steps, tolerance=tol,
                      residuals={"worst_step": worst})
        result["pass"] = worst <= tol

    else:  # gradient
        order = 2 if args.order is None else args.order
        n_obs = grid.n_cells if args.n_obs is None else args.n_obs
        cfg = {"case": args.case, "grid": grid.name, "dt": repr(dt),
               "T": repr(args.t_end), "n_obs": str(n_obs),
               "background_mode": "uniform10pct", "method": args.method,
               "limiter": args.limiter, "order": str(order)}
        problem, _ = assim.problem_from_config(cfg)
        x0 = problem.background.copy()
        if args.method == "standard":
            tol = TOLERANCES["gradient-standard"]
            eps = [10.0 ** -k for k in range(2, 8)]
            errors = []
            for _ in range(args.dirs):
                d = rng.standard_normal(grid.n_cells)
                d /= np.linalg.norm(d)
                errors.append(fd_error(problem, "standard", x0, d, eps))
            worst = max(errors)
            result.update(order=order, t_end=args.t_end, n_obs=n_obs,
                          tolerance=tol,
                          residuals={"per_direction": errors, "worst": worst})
        else:
            # limited costs are only piecewise smooth, so probe along the
            # gradient itself instead of a random direction
            tol = TOLERANCES["gradient-artsource"]
            g = problem.gradient(x0, "artsource")
            d = g / np.linalg.norm(g)
            worst = fd_error(problem, "artsource", x0, d, [1e-2, 1e-3, 1e-4])
            result.update(order=order, t_end=args.t_end, n_obs=n_obs,
                          limiter=args.limiter, tolerance=tol,
                          residuals={"descent_direction": worst, "worst": worst})
        result["pass"] = worst <= tol

    text = json.dumps(result, indent=2)
    print(text)
    if args.json_out:
        path = _outpath(args, args.json_out)
        with open(path, "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    return 0 if result["pass"] else 1


def cmd_assimilate(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        cfg = assim.parse_config(fh.read())
    try:
        problem, options = assim.problem_from_config(cfg)
    except KeyError as err:
        raise ValueError(f"config is missing required key {err}") from err
    config = lbfgs.LbfgsConfig(max_iters=args.iters)
    x, history = lbfgs.minimize(problem, method=options["method"], config=config)

    path = _outpath(args, args.out_file)
    lbfgs.save_history(path, history)
    j0 = history[0].j_total
    j_best = min(rec.j_total for rec in history)
    restarts = sum(1 for rec in history if rec.restart)
    factor = j0 / j_best if j_best > 0.0 else float("inf")
    print(f"J {j0:.6e} -> {j_best:.6e} (factor {factor:.3e}) in "
          f"{max(rec.iteration for rec in history)} iterations, "
          f"{restarts} restarts [{options['method']}]")
    print(f"wrote {path}")
    if args.xout:
        xpath = _outpath(args, args.xout)
        save_fields(xpath, problem.grid, [(0, 0.0, x)])
        print(f"wrote {xpath}")
    return 0


def cmd_experiment(args) -> int:
    if args.family is None:
        print("experiment: --family is required; families: "
              + ", ".join(FAMILIES), file=sys.stderr)
        return 2
    params = {}
    for item in args.param:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--param needs KEY=VALUE, got {item!r}")
        params[key.strip()] = value.strip()
    spec = ExperimentSpec(family=args.family, out_dir=args.out_dir,
                          seed=getattr(args, "seed", 0), full=args.full,
                          params=params)
    manifest = run_experiment(spec)
    for name in manifest["outputs"] + ["manifest.json"]:
        print(f"wrote {os.path.join(spec.out_dir, name)}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError, ExperimentError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
