"""Monte Carlo strong-convergence studies.

For each realization one noise path is drawn on the reference grid; the
reference run consumes it directly and every coarse run consumes its block
sums, so all step sizes (and all schemes) of a realization see the same
Brownian path.  Errors are the L2 distances between coarse and reference
final states, averaged in root mean square over realizations, and the
convergence order is the least-squares slope of log error against log dt.

Realizations are the unit of parallelism; their seeds are derived from the
master seed and the realization index alone, so results do not depend on the
execution order or the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .integrators import SchemeConfig, StepWorkspace, integrate
from .noise import coarsen
from .problem import Problem, ProblemConfig, build_problem


class StudyAbort(RuntimeError):
    """Too many diverged realizations for the statistics to be meaningful."""


@dataclass(frozen=True)
class StudyConfig:
    problem: ProblemConfig
    dt_reference: float
    dt_list: tuple
    n_realizations: int = 50
    schemes: tuple = ("sros",)
    solver_tol: float = 1e-10
    solver_max_iter: int = 1000
    max_divergence_fraction: float = 0.10
    workers: int = 1

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if self.dt_reference <= 0.0:
            raise ValueError("dt_reference must be positive")
        T = self.problem.T
        nref = T / self.dt_reference
        if abs(nref - round(nref)) > 1e-9 * max(nref, 1.0):
            raise ValueError("dt_reference must divide T")
        for dt in self.dt_list:
            f = dt / self.dt_reference
            if abs(f - round(f)) > 1e-9 * max(f, 1.0) or round(f) < 1:
                raise ValueError(f"dt {dt} is not an integer multiple of dt_reference")
            n = T / dt
            if abs(n - round(n)) > 1e-9 * max(n, 1.0):
                raise ValueError(f"dt {dt} does not divide T")

    @property
    def n_steps_reference(self) -> int:
        return int(round(self.problem.T / self.dt_reference))


@dataclass
class SchemeDtStats:
    scheme: str
    dt: float
    rms_error: float
    n_ok: int
    n_diverged: int
    mean_cpu_s: float
    solver_iterations: int
    error_samples: tuple = ()            # per-realization L2 errors, study order


@dataclass
class ConvergenceReport:
    stats: list[SchemeDtStats]
    orders: dict                                  # scheme -> (slope, residual)
    n_realizations: int
    n_diverged_total: int
    reference_dt: float
    seed_keys: list = field(default_factory=list)

    def rows(self, scheme: str) -> list[SchemeDtStats]:
        return sorted((s for s in self.stats if s.scheme == scheme),
                      key=lambda s: -s.dt)

    def errors(self, scheme: str) -> list[tuple[float, float]]:
        return [(s.dt, s.rms_error) for s in self.rows(scheme)]


def fit_order(errors) -> tuple[float, float]:
    """Least-squares slope of log(rms) versus log(dt) and the maximum
    absolute residual of the fit."""
    pts = [(float(dt), float(e)) for dt, e in errors]
    if len(pts) < 2:
        raise ValueError("need at least two (dt, error) points")
    if any(dt <= 0.0 or e <= 0.0 for dt, e in pts):
        raise ValueError("step sizes and errors must be positive")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = np.max(np.abs(y - (slope * x + intercept)))
    return float(slope), float(resid)


def _run_realization(problem: Problem, study: StudyConfig, r: int) -> dict:
    """All trajectories of one realization; returns per (scheme, dt) records
    (err_sq, cpu_seconds, iterations, diverged)."""
    n_fine = study.n_steps_reference
    if problem.noise_spec is not None:
        path = problem.sample_path(n_fine, realization=r)
        fields_fine = problem.noise_fields(path)
        seed_key = path.seed_key
    else:
        path = None
        fields_fine = None
        seed_key = (problem.cfg.master_seed, r)
    T = problem.cfg.T
    out: dict = {"seed_key": seed_key, "records": {}}
    for scheme in study.schemes:
        ws_ref = StepWorkspace(problem.M, problem.K, study.dt_reference,
                               problem.drift, problem.diff, problem.xy,
                               load=problem.load,
                               solver_tol=study.solver_tol,
                               solver_max_iter=study.solver_max_iter)
        cfg_ref = SchemeConfig(scheme, study.dt_reference, T,
                               solver_tol=study.solver_tol,
                               solver_max_iter=study.solver_max_iter)
        ref = integrate(problem.x0, fields_fine, cfg_ref, ws_ref)
        for dt in study.dt_list:
            factor = int(round(dt / study.dt_reference))
            fields = None
            if path is not None:
                fields = problem.noise_matrix @ coarsen(path, factor).increments
            ws = StepWorkspace(problem.M, problem.K, dt,
                               problem.drift, problem.diff, problem.xy,
                               load=problem.load,
                               solver_tol=study.solver_tol,
                               solver_max_iter=study.solver_max_iter)
            cfg = SchemeConfig(scheme, dt, T, solver_tol=study.solver_tol,
                               solver_max_iter=study.solver_max_iter)
            t0 = time.perf_counter()
            traj = integrate(problem.x0, fields, cfg, ws)
            cpu = time.perf_counter() - t0
            diverged = traj.diverged or ref.diverged
            err_sq = math.nan
            if not diverged:
                err_sq = problem.l2_norm(ref.final - traj.final) ** 2
            out["records"][(scheme, dt)] = (
                err_sq, cpu, int(traj.iterations.sum()), diverged)
    return out


def _realization_task(args):
    return _run_realization(*args)


def run_study(study: StudyConfig, problem: Problem | None = None) -> ConvergenceReport:
    """Execute the full Monte Carlo study and aggregate the error table.

    Diverged realizations are excluded per (scheme, dt) pair with a count;
    the study aborts if more than ``max_divergence_fraction`` of all runs
    diverged.  The aggregation order is fixed by the realization index, so
    reports are identical for any worker count.
    """
    if problem is None:
        problem = build_problem(study.problem)

    tasks = [(problem, study, r) for r in range(study.n_realizations)]
    if study.workers > 1:
        with ProcessPoolExecutor(max_workers=study.workers) as ex:
            results = list(ex.map(_realization_task, tasks, chunksize=1))
    else:
        results = [_run_realization(*t) for t in tasks]

    stats: list[SchemeDtStats] = []
    n_div_total = 0
    n_runs_total = 0
    for scheme in study.schemes:
        for dt in study.dt_list:
            errs = []
            cpus = []
            iters = 0
            n_div = 0
            for res in results:                       # realization order
                err_sq, cpu, it, diverged = res["records"][(scheme, dt)]
                n_runs_total += 1
                if diverged:
                    n_div += 1
                    continue
                errs.append(err_sq)
                cpus.append(cpu)
                iters += it
            n_div_total += n_div
            n_ok = len(errs)
            rms = math.sqrt(math.fsum(errs) / n_ok) if n_ok else math.nan
            stats.append(SchemeDtStats(
                scheme=scheme, dt=float(dt), rms_error=rms, n_ok=n_ok,
                n_diverged=n_div, mean_cpu_s=float(np.mean(cpus)) if cpus else math.nan,
                solver_iterations=iters,
                error_samples=tuple(math.sqrt(e) for e in errs)))

    if n_runs_total and n_div_total / n_runs_total > study.max_divergence_fraction:
        raise StudyAbort(
            f"{n_div_total} of {n_runs_total} runs diverged "
            f"(> {study.max_divergence_fraction:.0%}); study aborted")

    orders = {}
    for scheme in study.schemes:
        pts = [(s.dt, s.rms_error) for s in stats
               if s.scheme == scheme and s.n_ok > 0 and s.rms_error > 0.0]
        if len(pts) >= 2:
            orders[scheme] = fit_order(pts)
    return ConvergenceReport(stats=stats, orders=orders,
                             n_realizations=study.n_realizations,
                             n_diverged_total=n_div_total,
                             reference_dt=study.dt_reference,
                             seed_keys=[res["seed_key"] for res in results])


def timing_profile(report: ConvergenceReport) -> list[tuple[str, float, float, float]]:
    """Rows (scheme, dt, rms_error, mean_cpu_s): cost per sample against the
    error it buys, the data behind work-precision comparisons."""
    rows = []
    for s in report.stats:
        rows.append((s.scheme, s.dt, s.rms_error, s.mean_cpu_s))
    return rows


def write_report_csv(path, report: ConvergenceReport) -> None:
    with open(path, "w") as fh:
        fh.write("scheme,dt,rms_error,n_ok,n_diverged,mean_cpu_s,"
                 "solver_iterations,fitted_order,fit_residual\n")
        for s in report.stats:
            order = report.orders.get(s.scheme)
            o = f"{order[0]:.17g}" if order else ""
            rr = f"{order[1]:.17g}" if order else ""
            fh.write(f"{s.scheme},{s.dt:.17g},{s.rms_error:.17g},{s.n_ok},"
                     f"{s.n_diverged},{s.mean_cpu_s:.17g},{s.solver_iterations},"
                     f"{o},{rr}\n")


def write_plotdata_csv(path, report: ConvergenceReport, scheme: str) -> None:
    with open(path, "w") as fh:
        fh.write("log10_dt,log10_rms_error\n")
        for dt, err in report.errors(scheme):
            fh.write(f"{math.log10(dt):.17g},{math.log10(err):.17g}\n")


def write_timing_csv(path, report: ConvergenceReport) -> None:
    with open(path, "w") as fh:
        fh.write("scheme,dt,rms_error,mean_cpu_s\n")
        for scheme, dt, err, cpu in timing_profile(report):
            fh.write(f"{scheme},{dt:.17g},{err:.17g},{cpu:.17g}\n")
