"""Sparse linear solvers: ILU(0) preconditioning, BiCGStab, dense fallback.

The zero-fill incomplete factorization keeps exactly the sparsity pattern of
the input matrix; its unit-lower and upper factors share one CSR structure.
Factorization and the two triangular sweeps are jitted, since the solver is
called once per time step inside Monte Carlo loops.

BiCGStab is the standard preconditioned form (Saad, Iterative Methods for
Sparse Linear Systems, 2nd ed., alg. 7.7) with a deterministic iteration:
identical inputs produce bitwise-identical iterates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numba import njit


class FactorizationError(RuntimeError):
    """Zero pivot or structurally singular matrix during ILU(0)."""


class BreakdownError(RuntimeError):
    """BiCGStab scalar breakdown (rho or omega vanished)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool


@njit(cache=True)
def _ilu0_kernel(n, indptr, indices, data, diag_pos):
    # in-place IKJ incomplete factorization restricted to the pattern
    for i in range(n):
        for kk in range(indptr[i], diag_pos[i]):
            k = indices[kk]
            pivot = data[diag_pos[k]]
            if pivot == 0.0:
                return k
            lik = data[kk] / pivot
            data[kk] = lik
            # subtract lik * U[k, j] for j in row i beyond k, pattern only
            pk = diag_pos[k] + 1
            pk_end = indptr[k + 1]
            pi = kk + 1
            pi_end = indptr[i + 1]
            while pk < pk_end and pi < pi_end:
                jk = indices[pk]
                ji = indices[pi]
                if jk == ji:
                    data[pi] -= lik * data[pk]
                    pk += 1
                    pi += 1
                elif jk < ji:
                    pk += 1
                else:
                    pi += 1
        if data[diag_pos[i]] == 0.0:
            return i
    return -1


@njit(cache=True)
def _lower_unit_solve(indptr, indices, data, diag_pos, b, x):
    n = b.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(indptr[i], diag_pos[i]):
            s -= data[k] * x[indices[k]]
        x[i] = s


@njit(cache=True)
def _upper_solve(indptr, indices, data, diag_pos, b, x):
    n = b.shape[0]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(diag_pos[i] + 1, indptr[i + 1]):
            s -= data[k] * x[indices[k]]
        x[i] = s / data[diag_pos[i]]


class Ilu0Preconditioner:
    """Zero-fill incomplete LU factors sharing the pattern of the input.

    The strictly lower part stores L (unit diagonal implied); the diagonal
    and upper part store U.  ``apply(r)`` returns (LU)^{-1} r via the two
    triangular sweeps.
    """

    def __init__(self, indptr, indices, data, diag_pos, shape):
        self._indptr = indptr
        self._indices = indices
        self._data = data
        self._diag_pos = diag_pos
        self.shape = shape

    @property
    def pivots(self) -> np.ndarray:
        """Diagonal entries of U."""
        return self._data[self._diag_pos].copy()

    def apply(self, r: np.ndarray) -> np.ndarray:
        y = np.empty_like(r)
        x = np.empty_like(r)
        _lower_unit_solve(self._indptr, self._indices, self._data,
                          self._diag_pos, r, y)
        _upper_solve(self._indptr, self._indices, self._data,
                     self._diag_pos, y, x)
        return x

    def factors(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """L (unit lower) and U as separate CSR matrices."""
        n = self.shape[0]
        A = sp.csr_matrix((self._data, self._indices, self._indptr), shape=self.shape)
        L = sp.tril(A, k=-1).tocsr() + sp.eye(n, format="csr")
        U = sp.triu(A, k=0).tocsr()
        return L, U


def ilu0(A: sp.spmatrix) -> Ilu0Preconditioner:
    """Incomplete LU factorization of A with no fill-in.

    Raises FactorizationError on a zero pivot or a missing structural
    diagonal entry; callers fall back to the unpreconditioned iteration.
    """
    A = A.tocsr()
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    A.sum_duplicates()
    A.sort_indices()
    n = A.shape[0]
    diag_pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        k = lo + int(np.searchsorted(A.indices[lo:hi], i))
        if k >= hi or A.indices[k] != i:
            raise FactorizationError(f"missing diagonal entry in row {i}")
        diag_pos[i] = k
    data = A.data.copy()
    bad = _ilu0_kernel(n, A.indptr, A.indices, data, diag_pos)
    if bad >= 0:
        raise FactorizationError(f"zero pivot in row {bad}")
    return Ilu0Preconditioner(A.indptr.copy(), A.indices.copy(), data,
                              diag_pos, A.shape)


def bicgstab(A: sp.spmatrix, b: np.ndarray,
             precond: Ilu0Preconditioner | None = None,
             tol: float = 1e-10, max_iter: int = 1000,
             x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned BiCGStab for Ax = b.

    Parameters
    ----------
    A : square sparse matrix (anything supporting ``A @ v``)
    b : right-hand side
    precond : optional preconditioner with an ``apply(r)`` method
    tol : relative tolerance on ||b - Ax|| / ||b||
    max_iter : iteration cap; exceeding it returns a non-converged report
    x0 : optional initial guess (default zero)

    Returns
    -------
    (x, report) where report.converged reflects the true relative residual.

    Raises
    ------
    BreakdownError on vanishing rho or omega; the exception carries the
    partial report.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix/vector dimension mismatch")
    norm_b = float(np.linalg.norm(b))
    if not np.isfinite(norm_b):
        raise FloatingPointError("right-hand side contains non-finite values")
    if norm_b == 0.0:
        return np.zeros_like(b), SolveReport(0, 0.0, True)

    apply_m = precond.apply if precond is not None else (lambda r: r)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    r_hat = r.copy()
    rho_old = float(r_hat @ r)
    if abs(rho_old) < 1e-300:
        # initial guess already solves the system, or an exact breakdown
        res = float(np.linalg.norm(r)) / norm_b
        rep = SolveReport(0, res, res <= tol)
        if rep.converged:
            return x, rep
        raise BreakdownError("rho vanished at start", report=rep)
    p = r.copy()
    eps_break = 1e-300

    for it in range(1, max_iter + 1):
        p_hat = apply_m(p)
        v = A @ p_hat
        denom = float(r_hat @ v)
        if abs(denom) < eps_break:
            raise BreakdownError("r_hat . A p vanished",
                                 report=SolveReport(it, float(np.linalg.norm(r)) / norm_b, False))
        alpha = rho_old / denom
        s = r - alpha * v
        if float(np.linalg.norm(s)) / norm_b <= tol:
            x = x + alpha * p_hat
            res = float(np.linalg.norm(b - A @ x)) / norm_b
            return x, SolveReport(it, res, res <= tol)
        s_hat = apply_m(s)
        t = A @ s_hat
        tt = float(t @ t)
        if tt < eps_break:
            raise BreakdownError("omega denominator vanished",
                                 report=SolveReport(it, float(np.linalg.norm(s)) / norm_b, False))
        omega = float(t @ s) / tt
        if omega == 0.0:
            raise BreakdownError("omega vanished",
                                 report=SolveReport(it, float(np.linalg.norm(s)) / norm_b, False))
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        if float(np.linalg.norm(r)) / norm_b <= tol:
            res = float(np.linalg.norm(b - A @ x)) / norm_b
            if res <= tol:
                return x, SolveReport(it, res, True)
        rho = float(r_hat @ r)
        if abs(rho) < eps_break:
            raise BreakdownError("rho vanished",
                                 report=SolveReport(it, float(np.linalg.norm(r)) / norm_b, False))
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        rho_old = rho

    res = float(np.linalg.norm(b - A @ x)) / norm_b
    return x, SolveReport(max_iter, res, res <= tol)


def dense_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Partial-pivoting LU solve, the correctness oracle for small systems."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > 2000:
        raise ValueError("dense_solve is capped at n = 2000")
    with warnings.catch_warnings():
        # singularity is detected and raised below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A)
    if np.any(np.abs(np.diag(lu)) == 0.0):
        raise np.linalg.LinAlgError("matrix is singular")
    return scipy.linalg.lu_solve((lu, piv), b)


def solve_with_fallback(A: sp.spmatrix, b: np.ndarray,
                        precond: Ilu0Preconditioner | None,
                        tol: float, max_iter: int,
                        x0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """BiCGStab with the robustness ladder used by the time steppers.

    On breakdown, retry once without the preconditioner; if that also fails
    or does not converge, fall back to a dense solve for n <= 2000, else
    re-raise so the caller can abort the realization with a diagnostic.
    """
    try:
        x, rep = bicgstab(A, b, precond, tol, max_iter, x0=x0)
        if rep.converged:
            return x, rep
        err: Exception | None = None
    except BreakdownError as e:
        err = e
    if precond is not None:
        try:
            x, rep = bicgstab(A, b, None, tol, max_iter, x0=x0)
            if rep.converged:
                return x, rep
        except BreakdownError as e:
            err = e
    n = A.shape[0]
    if n <= 2000:
        x = dense_solve(A.toarray(), b)
        res = float(np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1e-300))
        return x, SolveReport(max_iter, res, res <= max(tol, 1e-8))
    if err is not None:
        raise err
    raise BreakdownError(f"BiCGStab did not converge and n={n} exceeds the dense fallback cap")
