"""Command-line entry point.

Subcommands
-----------
simulate    one trajectory; writes the final state and per-step solver
            diagnostics as CSV
converge    Monte Carlo strong-convergence study; writes report.csv,
            plotdata_<scheme>.csv and timing.csv, prints fitted orders
stability   closed-form scalar amplification table for the three schemes
darcy       pressure/velocity precomputation; writes velocity.csv and
            prints the wall flux balance

Configuration is one JSON file with nested keys; every omitted key takes the
documented default (the reactive transport setup on [0,2]^2), unknown keys
are rejected with their full path, and the resolved configuration is echoed
into the output directory so any run can be reproduced bit for bit.  All
randomness derives from the single ``master_seed`` key.  Exit codes: 0
success, 1 numerical failure, 2 configuration error.

Sign convention of the drift registry: the model carries the reaction on the
left-hand side, d X + [A X + F(X)] dt = B(X) dW, so the built-in
``reactive_fraction`` drift with coefficient 10 is F(u) = 10 u / (1 + u).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import darcy as darcy_mod
from . import harness, mesh_fem
from .integrators import SCHEMES, SchemeConfig, StepError, StepWorkspace, \
    integrate, scalar_stability_sweep
from .linsolve import BreakdownError
from .problem import Problem, ProblemConfig, VelocityConfig, build_problem
from .darcy import PermeabilitySpec

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


DEFAULT_CONFIG = {
    "master_seed": 8927451,
    "workers": max(1, os.cpu_count() or 1),
    "output_dir": "rosenspde_out",
    "problem": {
        "L1": 2.0,
        "L2": 2.0,
        "nx": 16,
        "ny": 16,
        "bc_layout": "left_dirichlet",
        "dirichlet_value": 1.0,
        "diffusion_tensor": [[1.0, 0.0], [0.0, 0.1]],
        "drift": {"name": "reactive_fraction", "coefficient": 10.0},
        "noise": {"kind": "additive", "beta": 2.0, "eps": 0.1, "n_modes": [32, 32]},
        "velocity": {
            "kind": "darcy",
            "mu": 10.0,
            "q": [0.0, 0.0],
            "permeability": {
                "kind": "constant",
                "k0": 1.0,
                "mean": 0.0,
                "variance": 1.0,
                "correlation_length": 0.5,
                "n_modes": 16,
            },
        },
        "initial_value": 0.0,
        "T": 1.0,
    },
    "solver": {"tol": 1e-10, "max_iter": 1000},
    "simulate": {"scheme": "sros", "dt": 0.015625, "store_history": False},
    "study": {
        "dt_reference": 1.0 / 512.0,
        "dt_list": [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
        "n_realizations": 50,
        "schemes": ["sros"],
    },
    "stability": {
        "a": 0.01,
        "c": -100.0,
        "dt_list": [1e-3, 5e-3, 1e-2, 1.9e-2, 2.1e-2, 1e-1, 1.0, 10.0],
    },
    "darcy": {"p_left": 1.0, "p_right": 0.0},
}


def _merge(default, user, path=""):
    """Deep-merge user values over defaults; unknown keys and gross type
    mismatches are configuration errors naming the key path."""
    if isinstance(default, dict):
        if not isinstance(user, dict):
            raise ConfigError(f"{path or 'config'}: expected an object")
        out = {}
        for key in user:
            if key not in default:
                raise ConfigError(f"unknown configuration key: {path}{key}")
        for key, dval in default.items():
            if key in user:
                out[key] = _merge(dval, user[key], f"{path}{key}.")
            else:
                out[key] = copy.deepcopy(dval)
        return out
    p = path.rstrip(".")
    if isinstance(default, bool):
        if not isinstance(user, bool):
            raise ConfigError(f"{p}: expected true/false")
        return user
    if isinstance(default, (int, float)):
        if isinstance(user, bool) or not isinstance(user, (int, float)):
            raise ConfigError(f"{p}: expected a number")
        return user
    if isinstance(default, str):
        if not isinstance(user, str):
            raise ConfigError(f"{p}: expected a string")
        return user
    if isinstance(default, list):
        if not isinstance(user, list):
            raise ConfigError(f"{p}: expected a list")
        return copy.deepcopy(user)
    return copy.deepcopy(user)


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {message}")


def _validate(cfg: dict) -> None:
    prob = cfg["problem"]
    _require(prob["L1"] > 0 and prob["L2"] > 0, "problem.L1/L2",
             "domain sides must be positive")
    _require(prob["nx"] >= 1 and prob["ny"] >= 1, "problem.nx/ny",
             "cell counts must be >= 1")
    _require(prob["bc_layout"] in mesh_fem.BC_LAYOUTS, "problem.bc_layout",
             f"must be one of {mesh_fem.BC_LAYOUTS}")
    _require(prob["T"] >= 0, "problem.T", "must be >= 0")
    _require(prob["noise"]["kind"] in ("additive", "multiplicative", "none"),
             "problem.noise.kind", "must be additive, multiplicative or none")
    _require(prob["noise"]["beta"] + prob["noise"]["eps"] > 0,
             "problem.noise.beta", "beta + eps must be positive")
    _require(len(prob["noise"]["n_modes"]) == 2, "problem.noise.n_modes",
             "must be a pair [N1, N2]")
    _require(prob["velocity"]["kind"] in ("darcy", "constant", "zero"),
             "problem.velocity.kind", "must be darcy, constant or zero")
    _require(prob["velocity"]["mu"] > 0, "problem.velocity.mu", "must be positive")
    _require(cfg["solver"]["tol"] > 0, "solver.tol", "must be positive")
    _require(cfg["solver"]["max_iter"] >= 1, "solver.max_iter", "must be >= 1")
    _require(cfg["simulate"]["dt"] > 0, "simulate.dt", "must be positive")
    _require(cfg["simulate"]["scheme"] in SCHEMES, "simulate.scheme",
             f"must be one of {SCHEMES}")
    _require(cfg["study"]["dt_reference"] > 0, "study.dt_reference",
             "must be positive")
    _require(cfg["study"]["n_realizations"] >= 1, "study.n_realizations",
             "must be >= 1")
    for s in cfg["study"]["schemes"]:
        _require(s in SCHEMES, "study.schemes", f"unknown scheme {s!r}")
    for dt in cfg["study"]["dt_list"]:
        _require(dt > 0, "study.dt_list", "step sizes must be positive")


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}")
    cfg = _merge(DEFAULT_CONFIG, user)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    _validate(cfg)
    return cfg


def problem_config(cfg: dict) -> ProblemConfig:
    prob = cfg["problem"]
    vel = prob["velocity"]
    perm = vel["permeability"]
    return ProblemConfig(
        L1=float(prob["L1"]), L2=float(prob["L2"]),
        nx=int(prob["nx"]), ny=int(prob["ny"]),
        bc_layout=prob["bc_layout"],
        dirichlet_value=float(prob["dirichlet_value"]),
        diffusion_tensor=tuple(tuple(float(v) for v in row)
                               for row in prob["diffusion_tensor"]),
        drift_name=prob["drift"]["name"],
        drift_coefficient=float(prob["drift"]["coefficient"]),
        noise_kind=prob["noise"]["kind"],
        beta=float(prob["noise"]["beta"]), eps=float(prob["noise"]["eps"]),
        n_modes=(int(prob["noise"]["n_modes"][0]), int(prob["noise"]["n_modes"][1])),
        velocity=VelocityConfig(
            kind=vel["kind"], q=(float(vel["q"][0]), float(vel["q"][1])),
            mu=float(vel["mu"]),
            permeability=PermeabilitySpec(
                kind=perm["kind"], k0=float(perm["k0"]),
                mean=float(perm["mean"]), variance=float(perm["variance"]),
                correlation_length=float(perm["correlation_length"]),
                n_modes=int(perm["n_modes"]),
                seed=int(cfg["master_seed"]))),
        initial_value=float(prob["initial_value"]),
        T=float(prob["T"]),
        master_seed=int(cfg["master_seed"]),
    )


def _echo_config(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config_resolved.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_state_csv(path, problem: Problem, x_free: np.ndarray) -> None:
    full = problem.full_state(x_free)
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for (x, y), v in zip(problem.mesh.nodes, full):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")


def cmd_simulate(cfg: dict, out_dir: str) -> int:
    prob = build_problem(problem_config(cfg))
    sim = cfg["simulate"]
    T = prob.cfg.T
    dt = float(sim["dt"])
    if T > 0:
        n = T / dt
        _require(abs(n - round(n)) < 1e-9 * max(n, 1.0), "simulate.dt",
                 "must divide problem.T")
    scfg = SchemeConfig(sim["scheme"], dt, T, store_history=bool(sim["store_history"]),
                        solver_tol=float(cfg["solver"]["tol"]),
                        solver_max_iter=int(cfg["solver"]["max_iter"]))
    fields = None
    if prob.noise_spec is not None and scfg.n_steps > 0:
        path = prob.sample_path(scfg.n_steps, realization=0)
        fields = prob.noise_fields(path)
    ws = StepWorkspace(prob.M, prob.K, dt, prob.drift, prob.diff, prob.xy,
                       load=prob.load, solver_tol=scfg.solver_tol,
                       solver_max_iter=scfg.solver_max_iter)
    traj = integrate(prob.x0, fields, scfg, ws)
    _write_state_csv(os.path.join(out_dir, "final_state.csv"), prob, traj.final)
    with open(os.path.join(out_dir, "diagnostics.csv"), "w") as fh:
        fh.write("step,iterations,residual\n")
        for m, (it, res) in enumerate(zip(traj.iterations, traj.residuals)):
            fh.write(f"{m},{it},{res:.17g}\n")
    if traj.diverged:
        print("simulate: trajectory diverged", file=sys.stderr)
        return EXIT_NUMERICAL
    norm = prob.l2_norm(traj.final)
    print(f"simulate: scheme={scfg.scheme} dt={dt:.17g} steps={scfg.n_steps} "
          f"final_l2_norm={norm:.17g}")
    print(f"simulate: outputs in {out_dir}")
    return EXIT_OK


def cmd_converge(cfg: dict, out_dir: str) -> int:
    study = harness.StudyConfig(
        problem=problem_config(cfg),
        dt_reference=float(cfg["study"]["dt_reference"]),
        dt_list=tuple(float(d) for d in cfg["study"]["dt_list"]),
        n_realizations=int(cfg["study"]["n_realizations"]),
        schemes=tuple(cfg["study"]["schemes"]),
        solver_tol=float(cfg["solver"]["tol"]),
        solver_max_iter=int(cfg["solver"]["max_iter"]),
        workers=int(cfg["workers"]))
    if study.n_realizations < 2:
        print("converge: warning: a single realization gives unreliable "
              "statistics", file=sys.stderr)
    report = harness.run_study(study)
    harness.write_report_csv(os.path.join(out_dir, "report.csv"), report)
    harness.write_timing_csv(os.path.join(out_dir, "timing.csv"), report)
    for scheme in study.schemes:
        harness.write_plotdata_csv(
            os.path.join(out_dir, f"plotdata_{scheme}.csv"), report, scheme)
        order = report.orders.get(scheme)
        if order is not None:
            print(f"converge: scheme={scheme} fitted_order={order[0]:.4f} "
                  f"fit_residual={order[1]:.2e}")
    if report.n_diverged_total:
        print(f"converge: warning: {report.n_diverged_total} diverged runs "
              f"excluded", file=sys.stderr)
    print(f"converge: outputs in {out_dir}")
    return EXIT_OK


def cmd_stability(cfg: dict, out_dir: str, as_csv: bool = False) -> int:
    st = cfg["stability"]
    rows = scalar_stability_sweep(float(st["a"]), float(st["c"]), st["dt_list"])
    header = ("dt,semi_implicit,rosenbrock,explicit,"
              "semi_implicit_stable,rosenbrock_stable,explicit_stable")
    lines = [header]
    for r in rows:
        lines.append(f"{r.dt:.17g},{r.semi_implicit:.17g},{r.rosenbrock:.17g},"
                     f"{r.explicit:.17g},{int(r.semi_implicit_stable)},"
                     f"{int(r.rosenbrock_stable)},{int(r.explicit_stable)}")
    text = "\n".join(lines) + "\n"
    if as_csv:
        sys.stdout.write(text)
    else:
        a, c = float(st["a"]), float(st["c"])
        print(f"stability: a={a:.17g} c={c:.17g} "
              f"semi-implicit threshold 2/(a-c)={2.0 / (a - c):.17g}")
        print(f"{'dt':>12} {'semi_impl':>14} {'rosenbrock':>14} {'explicit':>14}  flags")
        for r in rows:
            flags = "".join("S" if s else "u" for s in
                            (r.semi_implicit_stable, r.rosenbrock_stable,
                             r.explicit_stable))
            print(f"{r.dt:12.5g} {r.semi_implicit:14.5g} {r.rosenbrock:14.5g} "
                  f"{r.explicit:14.5g}  {flags}")
    with open(os.path.join(out_dir, "stability.csv"), "w") as fh:
        fh.write(text)
    return EXIT_OK


def cmd_darcy(cfg: dict, out_dir: str) -> int:
    pcfg = problem_config(cfg)
    mesh = mesh_fem.build_structured_mesh(pcfg.L1, pcfg.L2, pcfg.nx, pcfg.ny,
                                          bc_layout=pcfg.bc_layout)
    perm = pcfg.velocity.permeability
    k = darcy_mod.generate_permeability(mesh, perm)
    p = darcy_mod.solve_pressure(mesh, k, pcfg.velocity.mu,
                                 p_left=float(cfg["darcy"]["p_left"]),
                                 p_right=float(cfg["darcy"]["p_right"]))
    vel = darcy_mod.velocity_from_pressure(mesh, p, k, pcfg.velocity.mu)
    darcy_mod.write_velocity_csv(os.path.join(out_dir, "velocity.csv"), mesh, vel)
    fx = darcy_mod.residual_wall_fluxes(mesh, k, pcfg.velocity.mu, p)
    imbalance = abs(fx["left"] + fx["right"]) / max(abs(fx["right"]), 1e-300)
    print(f"darcy: inflow={-fx['left']:.17g} outflow={fx['right']:.17g} "
          f"relative_imbalance={imbalance:.3e} max_speed="
          f"{np.abs(vel.q_per_triangle).max():.17g}")
    print(f"darcy: outputs in {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rosenspde",
        description="Rosenbrock time stepping for semilinear stochastic "
                    "transport problems on P1 finite elements")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "run one trajectory"),
                            ("converge", "Monte Carlo convergence study"),
                            ("stability", "scalar amplification table"),
                            ("darcy", "velocity precomputation")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="JSON configuration file")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (default from config)")
        p.add_argument("--seed", metavar="U64", type=int, default=None,
                       help="override master_seed")
        p.add_argument("--workers", metavar="N", type=int, default=None,
                       help="parallel realization workers")
        p.add_argument("--csv", action="store_true",
                       help="machine-readable stdout where supported")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config,
                          overrides={"master_seed": args.seed,
                                     "workers": args.workers,
                                     "output_dir": args.out})
        out_dir = cfg["output_dir"]
        _echo_config(cfg, out_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "converge":
            return cmd_converge(cfg, out_dir)
        if args.command == "stability":
            return cmd_stability(cfg, out_dir, as_csv=args.csv)
        if args.command == "darcy":
            return cmd_darcy(cfg, out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, TypeError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepError, BreakdownError, harness.StudyAbort,
            np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
