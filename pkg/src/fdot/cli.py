"""Command-line entry point: load a config, run a solver, write artifacts.

Outputs per run directory: ``rho_t{k}.csv`` / ``m{axis}_t{k}.csv`` field
dumps (headerless, 17 significant digits), ``convergence.csv``,
``fd_scatter_t{k}.csv``, ``mass.csv`` and ``manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .diagram import DiagramField, FundamentalDiagram
from .grid import COLLOCATED, STAGGERED, Grid, TransportState, estimate_operator_norm, midpoint_average
from .problems import (
    CONSTRAINED,
    UNCONSTRAINED,
    ProblemSpec,
    gaussian_1d,
    gaussian_2d,
    toll_gate_mask,
    validate,
)
from .solver_cp import run_cp
from .solver_drs import ConvergenceRecord, SolverConfig, SolverDivergence, run_drs

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_IO = 3

FMT = "%.17g"


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


def _require_keys(section: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {', '.join(sorted(missing))}")


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    _require_keys(cfg, {"problem", "solver"}, {"problem"}, "config")
    return cfg


def _build_diagram(section: dict) -> FundamentalDiagram:
    _require_keys(section, {"family", "v0", "rho_hat", "rho_c", "w", "alpha", "beta"},
                  {"family", "v0", "rho_hat"}, "problem.diagram")
    fam = section["family"]
    v0, rh = float(section["v0"]), float(section["rho_hat"])
    if fam == "greenshields":
        return FundamentalDiagram.greenshields(v0, rh)
    if fam == "triangular":
        return FundamentalDiagram.triangular(
            v0, rh, rho_c=section.get("rho_c"), w=section.get("w"))
    if fam in ("beta_family", "smulders"):
        rho_c = float(section["rho_c"])
        if fam == "smulders":
            return FundamentalDiagram.smulders(v0, rh, rho_c)
        return FundamentalDiagram.beta_family(
            v0, rh, rho_c, float(section["alpha"]), float(section["beta"]))
    raise ConfigError(f"unknown diagram family {fam!r}")


def build_problem(cfg: dict) -> ProblemSpec:
    prob = cfg["problem"]
    _require_keys(prob, {"grid", "marginals", "diagram", "obstacles", "mode", "layout"},
                  {"grid", "marginals"}, "problem")
    gsec = prob["grid"]
    _require_keys(gsec, {"N", "P"}, {"N", "P"}, "problem.grid")
    grid = Grid(tuple(np.atleast_1d(gsec["N"]).astype(int)), int(gsec["P"]))

    msec = prob["marginals"]
    _require_keys(msec, {"type", "centers", "scale"}, {"type", "centers", "scale"},
                  "problem.marginals")
    if msec["type"] != "gaussian":
        raise ConfigError(f"unknown marginal type {msec['type']!r}")
    c0, c1 = msec["centers"]
    scale = float(msec["scale"])
    if grid.d == 1:
        mu, nu = gaussian_1d(float(c0), scale, grid), gaussian_1d(float(c1), scale, grid)
    else:
        mu, nu = gaussian_2d(c0, scale, grid), gaussian_2d(c1, scale, grid)

    mode = prob.get("mode", CONSTRAINED)
    if mode not in (CONSTRAINED, UNCONSTRAINED):
        raise ConfigError(f"unknown mode {mode!r}")
    layout = prob.get("layout", COLLOCATED)
    if layout not in (COLLOCATED, STAGGERED):
        raise ConfigError(f"unknown layout {layout!r}")

    diagram = None
    if "diagram" in prob:
        diagram = DiagramField(_build_diagram(prob["diagram"]))

    mask = None
    if prob.get("obstacles") is not None:
        osec = prob["obstacles"]
        _require_keys(osec, {"num_blocks", "gap_width", "band_rows"},
                      {"num_blocks", "gap_width", "band_rows"}, "problem.obstacles")
        mask = toll_gate_mask(int(osec["num_blocks"]), int(osec["gap_width"]),
                              tuple(osec["band_rows"]), grid)

    return ProblemSpec.build(grid, mu, nu, diagram, mask, mode, layout)


def build_solver_config(cfg: dict, overrides: dict | None = None) -> tuple[str, SolverConfig]:
    sec = dict(cfg.get("solver", {}))
    _require_keys(sec, {"name", "steps", "tolerances", "max_iters", "seed", "log_every"},
                  set(), "solver")
    steps = sec.get("steps", {})
    _require_keys(steps, {"alpha", "tau", "sigma"}, set(), "solver.steps")
    tols = sec.get("tolerances", {})
    _require_keys(tols, {"objective", "feasibility"}, set(), "solver.tolerances")

    name = sec.get("name", "cp")
    kwargs = dict(
        max_iters=int(sec.get("max_iters", 5000)),
        tol_obj=float(tols.get("objective", 1e-7)),
        tol_feas=float(tols.get("feasibility", 1e-6)),
        alpha=float(steps.get("alpha", 1.0)),
        log_every=int(sec.get("log_every", 1)),
        seed=int(sec.get("seed", 0)),
        tau=None if steps.get("tau") is None else float(steps["tau"]),
        sigma=None if steps.get("sigma") is None else float(steps["sigma"]),
    )
    for key, val in (overrides or {}).items():
        if val is not None:
            if key == "solver":
                name = val
            else:
                kwargs[key] = val
    if name not in ("drs", "cp"):
        raise ConfigError(f"unknown solver name {name!r}")
    return name, SolverConfig(**kwargs)


# ---------------------------------------------------------------------------
# writers


@dataclass
class RunManifest:
    config: dict
    solver: str
    grid: dict
    iterations: int
    final_objective: float
    final_continuity_residual: float
    final_fd_violation: float
    files: list[str]
    wall_time_s: float
    seed: int
    version: str = __version__


def _save_field(path: Path, arr: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(arr), fmt=FMT, delimiter=",")


def write_outputs(solution: TransportState, records: list[ConvergenceRecord],
                  out_dir, problem: ProblemSpec, config_echo: dict,
                  solver_name: str, wall_time: float, seed: int,
                  timing: str = "none") -> RunManifest:
    """Write all run artifacts; returns the manifest (also saved as JSON).

    ``timing='none'`` (default) zeroes the elapsed_s column so repeated runs
    are byte-identical; ``timing='wall'`` records measured seconds.
    """
    g = problem.grid
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if solution.layout == STAGGERED:
        solution = midpoint_average(solution, g)
    files: list[str] = []

    for k in range(g.P + 1):
        name = f"rho_t{k}.csv"
        _save_field(out / name, solution.rho[k])
        files.append(name)
    # momentum (and the interval density it is paired with) live on the P
    # time intervals; file index k refers to the interval [k, k+1]
    for k in range(g.P):
        for ax in range(g.d):
            name = f"m{ax}_t{k}.csv"
            _save_field(out / name, solution.m[ax, k])
            files.append(name)

    smag = np.sqrt(np.sum(solution.m**2, axis=0))
    cap = problem.diagram.flux(solution.u)
    for k in range(g.P):
        name = f"fd_scatter_t{k}.csv"
        cols = np.column_stack([solution.u[k].ravel(), smag[k].ravel(),
                                np.asarray(cap[k]).ravel()])
        np.savetxt(out / name, cols, fmt=FMT, delimiter=",",
                   header="rho,flux_magnitude,capacity", comments="")
        files.append(name)

    has_erg = any(r.ergodic_objective is not None for r in records)
    header = "iter,objective,continuity_residual,fd_violation,step_change,elapsed_s"
    if has_erg:
        header += ",ergodic_objective"
    lines = [header]
    for r in records:
        elapsed = r.elapsed if timing == "wall" else 0.0
        row = [f"{r.iter}"] + [FMT % v for v in
                               (r.objective, r.continuity_residual,
                                r.fd_violation, r.step_change, elapsed)]
        if has_erg:
            row.append(FMT % (r.ergodic_objective or 0.0))
        lines.append(",".join(row))
    (out / "convergence.csv").write_text("\n".join(lines) + "\n")
    files.append("convergence.csv")

    mass_lines = ["time_index,mass"]
    for k in range(g.P + 1):
        mass_lines.append(f"{k}," + FMT % solution.rho[k].sum())
    (out / "mass.csv").write_text("\n".join(mass_lines) + "\n")
    files.append("mass.csv")

    last = records[-1] if records else None
    manifest = RunManifest(
        config=config_echo,
        solver=solver_name,
        grid={"N": list(g.N), "P": g.P, "layout": problem.layout},
        iterations=last.iter if last else 0,
        final_objective=last.objective if last else 0.0,
        final_continuity_residual=last.continuity_residual if last else 0.0,
        final_fd_violation=last.fd_violation if last else 0.0,
        files=files + ["manifest.json"],
        wall_time_s=wall_time,
        seed=seed,
    )
    (out / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    return manifest


def _echo_config(cfg: dict, solver_name: str, solver_cfg: SolverConfig,
                 problem: ProblemSpec) -> dict:
    echo = json.loads(json.dumps(cfg))  # deep copy, JSON-clean
    echo.setdefault("solver", {})
    echo["solver"]["name"] = solver_name
    echo["solver"]["max_iters"] = solver_cfg.max_iters
    echo["solver"]["seed"] = solver_cfg.seed
    echo["solver"]["log_every"] = solver_cfg.log_every
    echo["solver"]["steps"] = {"alpha": solver_cfg.alpha,
                               "tau": solver_cfg.tau, "sigma": solver_cfg.sigma}
    echo["solver"]["tolerances"] = {"objective": solver_cfg.tol_obj,
                                    "feasibility": solver_cfg.tol_feas}
    echo["problem"]["mode"] = problem.mode
    echo["problem"]["layout"] = problem.layout
    return echo


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        problem = build_problem(cfg)
        overrides = {"solver": args.solver, "max_iters": args.max_iters,
                     "seed": args.seed}
        name, solver_cfg = build_solver_config(cfg, overrides)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore" if args.quiet else "default")
            runner = run_drs if name == "drs" else run_cp
            solution, records = runner(problem, solver_cfg)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverDivergence as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    wall = time.perf_counter() - t0

    try:
        echo = _echo_config(cfg, name, solver_cfg, problem)
        manifest = write_outputs(solution, records, args.out, problem, echo,
                                 name, wall, solver_cfg.seed, timing=args.timing)
    except OSError as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return EXIT_IO
    last = records[-1]
    print(f"{name}: {last.iter} iterations, objective {last.objective:.6g}, "
          f"continuity {last.continuity_residual:.3g}, "
          f"fd violation {last.fd_violation:.3g} -> {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
        problem = build_problem(cfg)
        build_solver_config(cfg)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    diags = validate(problem)
    for d in diags:
        print(f"{d.level}: {d.message}")
    if any(d.level == "error" for d in diags):
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


def cmd_norm_estimate(args) -> int:
    grid = Grid(tuple(args.N), args.P)
    est = estimate_operator_norm(grid, args.iters, args.layout)
    print(FMT % est)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fdot",
        description="Dynamic optimal transport under congestion caps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a solver from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--solver", choices=["drs", "cp"], default=None)
    p_run.add_argument("--max-iters", type=int, dest="max_iters", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--timing", choices=["none", "wall"], default="none",
                       help="elapsed_s column source (none keeps outputs "
                            "reproducible byte-for-byte)")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a config without solving")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_norm = sub.add_parser("norm-estimate", help="print the operator norm of K")
    p_norm.add_argument("--N", type=int, nargs="+", required=True)
    p_norm.add_argument("--P", type=int, required=True)
    p_norm.add_argument("--layout", choices=[COLLOCATED, STAGGERED],
                        default=COLLOCATED)
    p_norm.add_argument("--iters", type=int, default=50)
    p_norm.set_defaults(func=cmd_norm_estimate)

    p_ver = sub.add_parser("version", help="print the package version")
    p_ver.set_defaults(func=lambda a: (print(__version__), EXIT_OK)[1])

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
