"""Time-stepping schemes for the semi-discrete semilinear system.

All schemes advance  M dX + [K X + M_l f(X)] dt = M_l b(X) dW  on the free
nodes, with M_l the lumped mass and an optional constant load carrying
eliminated Dirichlet data:

* ``sros``            linearly implicit Rosenbrock step: linearize f at X_m,
                      move the remainder to the right-hand side, one solve
                      with M + dt K + dt M_l diag(f_u) per step.
* ``semi_implicit``   linear implicit Euler: constant matrix M + dt K,
                      f treated explicitly.
* ``explicit_em``     Euler-Maruyama with lumped mass (no solve; stability
                      demonstrations only).
* ``expo_rosenbrock`` comparison baseline, interpreted: dense matrix
                      exponential of -(M^{-1}K + diag(f_u)) applied to the
                      same bracket as the Rosenbrock step.  Usable only for
                      small free-node counts.

The per-step system of ``sros`` is preconditioned with a single ILU(0) of
the deterministic part M + dt K, factored once per step size and reused
across all steps and realizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .linsolve import FactorizationError, Ilu0Preconditioner, SolveReport, \
    ilu0, solve_with_fallback
from .operators import DiffusionSpec, DriftSpec, LinearizedFactory, \
    apply_diffusion, eval_drift, eval_drift_jacobian, eval_remainder

SCHEMES = ("sros", "semi_implicit", "explicit_em", "expo_rosenbrock")

DIVERGENCE_THRESHOLD = 1e12
EXPO_DENSE_CAP = 2000


class StepError(RuntimeError):
    """Linear solve failed inside a time step."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str
    dt: float
    T: float
    store_history: bool = False
    solver_tol: float = 1e-10
    solver_max_iter: int = 1000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.T < 0.0:
            raise ValueError("T must be >= 0")
        n = self.T / self.dt
        if self.T > 0.0 and abs(n - round(n)) > 1e-9 * max(n, 1.0):
            raise ValueError(f"T/dt = {n} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    final: np.ndarray
    states: np.ndarray | None            # (n_steps+1, n) when history kept
    iterations: np.ndarray               # per-step solver iterations
    residuals: np.ndarray                # per-step final relative residuals
    diverged: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


class StepWorkspace:
    """Matrices, preconditioner and coefficients shared by every step of a
    run at one step size; immutable after construction."""

    def __init__(self, M: sp.spmatrix, K: sp.spmatrix, dt: float,
                 drift: DriftSpec, diff: DiffusionSpec, xy: np.ndarray,
                 load: np.ndarray | None = None,
                 solver_tol: float = 1e-10, solver_max_iter: int = 1000,
                 use_precond: bool = True):
        self.M = M.tocsr()
        self.K = K.tocsr()
        self.dt = float(dt)
        self.drift = drift
        self.diff = diff
        self.xy = np.asarray(xy, dtype=float)
        n = self.M.shape[0]
        self.mlump = np.asarray(self.M.sum(axis=1)).ravel()
        self.load = np.zeros(n) if load is None else np.asarray(load, dtype=float)
        self.solver_tol = solver_tol
        self.solver_max_iter = solver_max_iter
        self.factory = LinearizedFactory(self.M, self.K, self.dt, self.mlump)
        self.base = self.factory.base                     # M + dt K
        self.precond: Ilu0Preconditioner | None = None
        if use_precond:
            try:
                self.precond = ilu0(self.base)
            except FactorizationError:
                self.precond = None                       # iterate unpreconditioned
        self._dense: tuple[np.ndarray, np.ndarray] | None = None

    def dense_operator(self) -> tuple[np.ndarray, np.ndarray]:
        """(M^{-1} K, M^{-1} load) as dense arrays, cached; exponential
        scheme only, capped at EXPO_DENSE_CAP unknowns."""
        if self._dense is None:
            n = self.M.shape[0]
            if n > EXPO_DENSE_CAP:
                raise ValueError(
                    f"exponential comparison scheme is capped at {EXPO_DENSE_CAP} "
                    f"free nodes, got {n}")
            Md = self.M.toarray()
            A = np.linalg.solve(Md, self.K.toarray())
            g = np.linalg.solve(Md, self.load)
            self._dense = (A, g)
        return self._dense


def rosenbrock_step(x: np.ndarray, dw: np.ndarray, ws: StepWorkspace
                    ) -> tuple[np.ndarray, SolveReport]:
    """One linearly implicit Rosenbrock step; exactly one linear solve."""
    j = eval_drift_jacobian(x, ws.drift, ws.xy)
    g = eval_remainder(x, j, ws.drift, ws.xy)
    rhs = ws.M @ x + ws.dt * (ws.mlump * g - ws.load) \
        + ws.mlump * apply_diffusion(x, dw, ws.diff, ws.xy)
    A = ws.factory.system(j)
    return solve_with_fallback(A, rhs, ws.precond, ws.solver_tol,
                               ws.solver_max_iter, x0=x)


def semi_implicit_step(x: np.ndarray, dw: np.ndarray, ws: StepWorkspace
                       ) -> tuple[np.ndarray, SolveReport]:
    """Linear implicit Euler step with the drift treated explicitly."""
    fv = eval_drift(x, ws.drift, ws.xy)
    rhs = ws.M @ x - ws.dt * (ws.mlump * fv + ws.load) \
        + ws.mlump * apply_diffusion(x, dw, ws.diff, ws.xy)
    return solve_with_fallback(ws.base, rhs, ws.precond, ws.solver_tol,
                               ws.solver_max_iter, x0=x)


def explicit_em_step(x: np.ndarray, dw: np.ndarray, ws: StepWorkspace
                     ) -> tuple[np.ndarray, SolveReport]:
    """Euler-Maruyama step; the lumped mass makes the solve trivial."""
    fv = eval_drift(x, ws.drift, ws.xy)
    with np.errstate(over="ignore", invalid="ignore"):
        x1 = x - ws.dt * ((ws.K @ x + ws.load) / ws.mlump + fv) \
            + apply_diffusion(x, dw, ws.diff, ws.xy)
    return x1, SolveReport(0, 0.0, True)


def expo_rosenbrock_step(x: np.ndarray, dw: np.ndarray, ws: StepWorkspace
                         ) -> tuple[np.ndarray, SolveReport]:
    """Comparison step: dense exponential of the locally linearized operator
    applied to state, remainder and noise (scaling-and-squaring Pade)."""
    A, ginv = ws.dense_operator()
    j = eval_drift_jacobian(x, ws.drift, ws.xy)
    g = eval_remainder(x, j, ws.drift, ws.xy)
    bracket = x + ws.dt * (g - ginv) + apply_diffusion(x, dw, ws.diff, ws.xy)
    Am = A + np.diag(j)
    phi = scipy.linalg.expm(-ws.dt * Am)
    return phi @ bracket, SolveReport(0, 0.0, True)


_STEP_FUNCTIONS = {
    "sros": rosenbrock_step,
    "semi_implicit": semi_implicit_step,
    "explicit_em": explicit_em_step,
    "expo_rosenbrock": expo_rosenbrock_step,
}


def integrate(x0: np.ndarray, noise_fields: np.ndarray | None,
              cfg: SchemeConfig, ws: StepWorkspace) -> Trajectory:
    """March the chosen scheme over the uniform grid t_m = m dt.

    Parameters
    ----------
    x0 : initial coefficients on the free nodes
    noise_fields : (n_free, n_steps) nodal Wiener increments, or None for a
        deterministic run.  Column m drives the step from t_m to t_{m+1}.
    cfg : scheme, dt, T
    ws : workspace built for the same matrices and dt

    A state with non-finite entries or max-norm above DIVERGENCE_THRESHOLD
    flags the trajectory as diverged and stops the march.
    """
    n_steps = cfg.n_steps
    if abs(ws.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise ValueError("workspace dt differs from scheme dt")
    if noise_fields is not None and noise_fields.shape[1] < n_steps:
        raise ValueError("noise path has fewer steps than the time grid")
    step = _STEP_FUNCTIONS[cfg.scheme]
    x = np.array(x0, dtype=float)
    zero_dw = np.zeros_like(x)
    times = cfg.dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, x.shape[0])) if cfg.store_history else None
    if states is not None:
        states[0] = x
    iters = np.zeros(n_steps, dtype=np.int64)
    resid = np.zeros(n_steps)
    diverged = False
    for m in range(n_steps):
        dw = noise_fields[:, m] if noise_fields is not None else zero_dw
        try:
            x, rep = step(x, dw, ws)
        except FloatingPointError:
            # numerical domain failure (e.g. drift pole hit): count as divergence
            diverged = True
            break
        except (FactorizationError, BreakdownError, np.linalg.LinAlgError) as exc:
            raise StepError(f"step {m}: {exc}", step_index=m) from exc
        iters[m] = rep.iterations
        resid[m] = rep.final_residual
        if states is not None:
            states[m + 1] = x
        if _state_bad(x):
            diverged = True
            break
    return Trajectory(times=times, final=x, states=states,
                      iterations=iters, residuals=resid, diverged=diverged)


def _state_bad(x: np.ndarray) -> bool:
    return (not np.all(np.isfinite(x))) or float(np.max(np.abs(x))) > DIVERGENCE_THRESHOLD


@dataclass(frozen=True)
class StabilityRow:
    dt: float
    semi_implicit: float
    rosenbrock: float
    explicit: float
    semi_implicit_stable: bool
    rosenbrock_stable: bool
    explicit_stable: bool


def scalar_stability_sweep(a: float, c: float, dt_list) -> list[StabilityRow]:
    """Amplification factors of the three schemes on y' = a y + c y.

    Written in the growth convention (a > 0, c < 0 is the stiff regime):
    semi-implicit (1 + c dt)/(1 - a dt), Rosenbrock 1/(1 - (a+c) dt),
    explicit 1 + (a+c) dt.  A pole (zero denominator) reports inf and is
    flagged unstable.
    """
    rows = []
    for dt in dt_list:
        dt = float(dt)
        den_si = 1.0 - a * dt
        si = (1.0 + c * dt) / den_si if den_si != 0.0 else math.inf
        den_ro = 1.0 - (a + c) * dt
        ro = 1.0 / den_ro if den_ro != 0.0 else math.inf
        ex = 1.0 + (a + c) * dt
        rows.append(StabilityRow(
            dt=dt, semi_implicit=si, rosenbrock=ro, explicit=ex,
            semi_implicit_stable=abs(si) <= 1.0,
            rosenbrock_stable=abs(ro) <= 1.0,
            explicit_stable=abs(ex) <= 1.0,
        ))
    return rows
