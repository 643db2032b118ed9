"""Pointwise drift and diffusion operators and their per-step linearization.

The reaction term is a pointwise map f(x, y, u) lifted to nodal vectors by
collocation; wherever it multiplies into the weak form the lumped mass is
used, which keeps its Jacobian genuinely diagonal and the per-step system
pattern fixed.  The coercivity shift c0 folded into the stiffness is
compensated here by subtracting c0 * u from the drift (and c0 from its
derivative), so the evolved equation is unchanged.

Sign convention: the model is written with the reaction on the left,
d X + [A X + F(X)] dt = B(X) dW, so a decaying reaction has f_u > 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class DriftSpec:
    """Pointwise reaction f and its partial derivative w.r.t. the state.

    Both callables take (x, y, u) as arrays and broadcast.  `shift` is the
    coercivity constant moved out of the linear operator; `lipschitz_bound`
    is an optional known bound on |f_u| used by validation checks.
    """

    f: Callable
    f_u: Callable
    lipschitz_bound: float | None = None
    shift: float = 0.0


@dataclass(frozen=True)
class DiffusionSpec:
    """Multiplication-operator diffusion (B(v) u)(x) = b(x, v(x)) u(x)."""

    b: Callable
    kind: str = "additive"

    def __post_init__(self):
        if self.kind not in ("additive", "multiplicative"):
            raise ValueError(f"unknown diffusion kind {self.kind!r}")


def _f_zero(x, y, u):
    return np.zeros_like(u)


def _f_linear(x, y, u, coefficient):
    return coefficient * u


def _fu_linear(x, y, u, coefficient):
    return np.full_like(u, coefficient)


def _f_reactive_fraction(x, y, u, coefficient):
    return coefficient * u / (1.0 + u)


def _fu_reactive_fraction(x, y, u, coefficient):
    return coefficient / (1.0 + u) ** 2


def make_drift(name: str, coefficient: float = 1.0, shift: float = 0.0) -> DriftSpec:
    """Built-in drift registry: 'reactive_fraction', 'linear', 'zero'."""
    if name == "zero":
        return DriftSpec(f=_f_zero, f_u=_f_zero, lipschitz_bound=0.0, shift=shift)
    if name == "linear":
        return DriftSpec(f=partial(_f_linear, coefficient=coefficient),
                         f_u=partial(_fu_linear, coefficient=coefficient),
                         lipschitz_bound=abs(coefficient), shift=shift)
    if name == "reactive_fraction":
        # f(u) = c u / (1 + u), f_u = c / (1 + u)^2, max |f_u| = c at u = 0
        return DriftSpec(f=partial(_f_reactive_fraction, coefficient=coefficient),
                         f_u=partial(_fu_reactive_fraction, coefficient=coefficient),
                         lipschitz_bound=abs(coefficient), shift=shift)
    raise ValueError(f"unknown drift {name!r}; known: reactive_fraction, linear, zero")


def _b_one(x, y, u):
    return np.ones_like(u)


def _b_identity(x, y, u):
    return u


def make_diffusion(kind: str) -> DiffusionSpec:
    """'additive' is b = 1; 'multiplicative' is the linear choice b(u) = u."""
    if kind == "additive":
        return DiffusionSpec(b=_b_one, kind="additive")
    if kind == "multiplicative":
        return DiffusionSpec(b=_b_identity, kind="multiplicative")
    raise ValueError(f"unknown diffusion kind {kind!r}")


def _check_finite(u: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(u)):
        raise FloatingPointError(f"{what} contains non-finite values")


def eval_drift(u: np.ndarray, spec: DriftSpec, xy: np.ndarray) -> np.ndarray:
    """Nodal drift values f(x_n, y_n, u_n) - shift * u_n."""
    u = np.asarray(u, dtype=float)
    _check_finite(u, "state")
    out = np.asarray(spec.f(xy[:, 0], xy[:, 1], u), dtype=float)
    if spec.shift != 0.0:
        out = out - spec.shift * u
    return out


def eval_drift_jacobian(u: np.ndarray, spec: DriftSpec, xy: np.ndarray) -> np.ndarray:
    """Diagonal of the drift derivative, f_u(x_n, y_n, u_n) - shift."""
    u = np.asarray(u, dtype=float)
    _check_finite(u, "state")
    out = np.asarray(spec.f_u(xy[:, 0], xy[:, 1], u), dtype=float)
    if spec.shift != 0.0:
        out = out - spec.shift
    return out


def eval_remainder(u: np.ndarray, j_diag: np.ndarray, spec: DriftSpec,
                   xy: np.ndarray) -> np.ndarray:
    """Linearization remainder -f(u) + j_diag * u.

    With j_diag evaluated at the linearization point this vanishes
    identically for linear drift.
    """
    u = np.asarray(u, dtype=float)
    j_diag = np.asarray(j_diag, dtype=float)
    if j_diag.shape != u.shape:
        raise ValueError("jacobian diagonal and state dimensions differ")
    return -eval_drift(u, spec, xy) + j_diag * u


def apply_diffusion(u: np.ndarray, dw: np.ndarray, spec: DiffusionSpec,
                    xy: np.ndarray) -> np.ndarray:
    """Nodal diffusion increment b(x_n, u_n) * dw_n; additive returns dw."""
    dw = np.asarray(dw, dtype=float)
    if spec.kind == "additive":
        return dw
    u = np.asarray(u, dtype=float)
    if u.shape != dw.shape:
        raise ValueError("state and increment dimensions differ")
    return np.asarray(spec.b(xy[:, 0], xy[:, 1], u), dtype=float) * dw


class LinearizedFactory:
    """Builds M + dt*K + dt*M_lump*diag(j) cheaply for many diagonals.

    The base M + dt*K is assembled once; each call only rewrites a copy of
    its value array at the stored diagonal positions, so the CSR pattern is
    shared by every step of a run.
    """

    def __init__(self, M: sp.spmatrix, K: sp.spmatrix, dt: float,
                 mlump: np.ndarray | None = None):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        if M.shape != K.shape:
            raise ValueError("mass and stiffness dimensions differ")
        base = (M + dt * K).tocsr()
        base.sum_duplicates()
        base.sort_indices()
        self.base = base
        self.dt = dt
        self.mlump = np.asarray(M.sum(axis=1)).ravel() if mlump is None else mlump
        n = base.shape[0]
        diag_pos = np.empty(n, dtype=np.int64)
        for i in range(n):
            lo, hi = base.indptr[i], base.indptr[i + 1]
            k = lo + int(np.searchsorted(base.indices[lo:hi], i))
            if k >= hi or base.indices[k] != i:
                raise ValueError("base matrix is missing a diagonal entry")
            diag_pos[i] = k
        self._diag_pos = diag_pos

    def system(self, j_diag: np.ndarray) -> sp.csr_matrix:
        data = self.base.data.copy()
        data[self._diag_pos] += self.dt * self.mlump * j_diag
        A = sp.csr_matrix((data, self.base.indices, self.base.indptr),
                          shape=self.base.shape)
        return A


@dataclass(frozen=True)
class LinearizedSystem:
    """One-step implicit system matrix M + dt*(K + M_lump diag(j))."""

    matrix: sp.csr_matrix
    dt: float
    jacobian_diag: np.ndarray


def build_linearized_system(M: sp.spmatrix, K: sp.spmatrix,
                            j_diag: np.ndarray, dt: float) -> LinearizedSystem:
    """Assemble the per-step system matrix for a given Jacobian diagonal."""
    j_diag = np.asarray(j_diag, dtype=float)
    factory = LinearizedFactory(M, K, dt)
    return LinearizedSystem(matrix=factory.system(j_diag), dt=dt,
                            jacobian_diag=j_diag)
