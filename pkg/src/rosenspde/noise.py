"""Spectral sampling of Hilbert-space-valued Wiener increments.

The driving noise is expanded in the cosine basis

    e_0(x) = sqrt(1/L),   e_i(x) = sqrt(2/L) cos(i pi x / L),  i >= 1,

with product modes e_{i,j}(x, y) and covariance eigenvalues

    lambda_{i,j} = (i^2 + j^2)^{-(beta + eps)}.

The (0, 0) mode is excluded from the expansion (the power law is singular
there; any finite choice is admissible and exclusion keeps the covariance
well defined).  Increments are drawn per mode from counter-based generator
streams keyed by (seed, realization, i, j), so realizations are independent
and individually reproducible regardless of execution order, and enlarging
the truncation leaves the draws of the retained modes unchanged.

A path is generated once on the finest grid; coarser step sizes reuse it via
block summation (``coarsen``), which is what makes pathwise strong-error
comparisons across step sizes meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .mesh_fem import Mesh


@dataclass(frozen=True)
class NoiseSpec:
    """Covariance and truncation parameters of the driving noise."""

    beta: float = 2.0
    eps: float = 0.1
    N1: int = 32
    N2: int = 32
    L1: float = 2.0
    L2: float = 2.0
    kind: str = "additive"
    seed: int = 0

    def __post_init__(self):
        if self.beta + self.eps <= 0.0:
            raise ValueError("beta + eps must be positive")
        if self.N1 < 1 or self.N2 < 1:
            raise ValueError("truncation indices must be >= 1")
        if self.kind not in ("additive", "multiplicative"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def mode_index(self) -> list[tuple[int, int]]:
        """Retained modes (i, j), (0,0) excluded, ordered by i^2+j^2 then lex."""
        modes = [(i, j) for i in range(self.N1) for j in range(self.N2)
                 if (i, j) != (0, 0)]
        modes.sort(key=lambda ij: (ij[0] ** 2 + ij[1] ** 2, ij[0], ij[1]))
        return modes

    def eigenvalues(self) -> np.ndarray:
        modes = np.array(self.mode_index())
        return covariance_eigenvalue(modes[:, 0], modes[:, 1], self.beta, self.eps)

    def trace(self) -> float:
        """Truncated trace of the covariance, sum of the retained eigenvalues."""
        return float(self.eigenvalues().sum())


def covariance_eigenvalue(i, j, beta: float, eps: float):
    """Eigenvalue (i^2 + j^2)^{-(beta+eps)} of the covariance operator."""
    if beta + eps <= 0.0:
        raise ValueError("beta + eps must be positive")
    s = np.asarray(i) ** 2 + np.asarray(j) ** 2
    if np.any(s == 0):
        raise ValueError("mode (0, 0) has no power-law eigenvalue; it is excluded")
    return s ** (-(beta + eps))


def _cosine_factor(idx: int, x: np.ndarray, L: float) -> np.ndarray:
    if idx == 0:
        return np.full_like(x, np.sqrt(1.0 / L))
    return np.sqrt(2.0 / L) * np.cos(idx * np.pi * x / L)


@dataclass(frozen=True)
class EigenfunctionTable:
    """Covariance eigenfunctions evaluated at mesh nodes, one column per mode."""

    values: np.ndarray                      # (n_nodes, n_modes)
    mode_index: list[tuple[int, int]]


def build_eigenfunction_table(mesh: Mesh, spec: NoiseSpec) -> EigenfunctionTable:
    modes = spec.mode_index()
    x = mesh.nodes[:, 0]
    y = mesh.nodes[:, 1]
    E = np.empty((mesh.n_nodes, len(modes)))
    for m, (i, j) in enumerate(modes):
        E[:, m] = _cosine_factor(i, x, spec.L1) * _cosine_factor(j, y, spec.L2)
    return EigenfunctionTable(values=E, mode_index=modes)


@dataclass(frozen=True)
class NoisePath:
    """Per-mode Brownian increments on a uniform grid of step dt_fine.

    increments[m, k] is the increment of the m-th modal Brownian motion over
    step k, distributed N(0, dt_fine) at generation time.
    """

    dt_fine: float
    increments: np.ndarray                  # (n_modes, n_steps)
    mode_index: list[tuple[int, int]]
    seed_key: tuple = ()

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def n_modes(self) -> int:
        return self.increments.shape[0]

    def endpoint(self) -> np.ndarray:
        """Per-mode Brownian value at the final time (sum of increments)."""
        return self.increments.sum(axis=1)


def sample_path(spec: NoiseSpec, T: float, n_steps_fine: int,
                realization: int = 0) -> NoisePath:
    """Draw one coupled noise path on the finest time grid.

    Each mode uses its own Philox stream keyed by
    (spec.seed, realization, i, j); the draws of a given mode therefore do
    not depend on the truncation level or on how many paths were generated
    before this one.
    """
    if n_steps_fine < 1:
        raise ValueError("n_steps_fine must be >= 1")
    if T <= 0.0:
        raise ValueError("final time must be positive")
    dt = T / n_steps_fine
    modes = spec.mode_index()
    inc = np.empty((len(modes), n_steps_fine))
    root = np.sqrt(dt)
    for m, (i, j) in enumerate(modes):
        ss = np.random.SeedSequence([int(spec.seed), int(realization), i, j])
        gen = np.random.Generator(np.random.Philox(ss))
        inc[m] = root * gen.standard_normal(n_steps_fine)
    return NoisePath(dt_fine=dt, increments=inc, mode_index=modes,
                     seed_key=(int(spec.seed), int(realization)))


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Sum blocks of `factor` consecutive increments into one coarse path."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if path.n_steps % factor != 0:
        raise ValueError(f"factor {factor} does not divide n_steps {path.n_steps}")
    if factor == 1:
        return path
    n_coarse = path.n_steps // factor
    inc = path.increments.reshape(path.n_modes, n_coarse, factor).sum(axis=2)
    return NoisePath(dt_fine=path.dt_fine * factor, increments=inc,
                     mode_index=path.mode_index, seed_key=path.seed_key)


def increment_field(table: EigenfunctionTable, spec: NoiseSpec,
                    modal_increments: np.ndarray) -> np.ndarray:
    """Nodal values of the Wiener increment sum(sqrt(lambda) e_ij dbeta_ij)."""
    modal_increments = np.asarray(modal_increments, dtype=float)
    if modal_increments.shape[0] != table.values.shape[1]:
        raise ValueError("modal increment count does not match the table")
    lam = spec.eigenvalues()
    return table.values @ (np.sqrt(lam) * modal_increments)


def scaled_mode_matrix(table: EigenfunctionTable, spec: NoiseSpec) -> np.ndarray:
    """Table with columns pre-scaled by sqrt(lambda); nodal increments for a
    whole path are then one matrix product with path.increments."""
    return table.values * np.sqrt(spec.eigenvalues())[None, :]


_MAGIC = b"RSPN1\x00"


def save_path(path_obj: NoisePath, filename) -> None:
    """Binary dump: magic, seed key, dims, dt, then row-major f64 increments."""
    seed, realization = (path_obj.seed_key + (0, 0))[:2]
    with open(filename, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqqqd", seed, realization,
                             path_obj.n_modes, path_obj.n_steps, path_obj.dt_fine))
        mi = np.asarray(path_obj.mode_index, dtype="<i8")
        fh.write(mi.tobytes())
        fh.write(np.ascontiguousarray(path_obj.increments, dtype="<f8").tobytes())


def load_path(filename) -> NoisePath:
    with open(filename, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a noise path dump")
        seed, realization, n_modes, n_steps, dt = struct.unpack("<qqqqd", fh.read(40))
        mi = np.frombuffer(fh.read(16 * n_modes), dtype="<i8").reshape(n_modes, 2)
        inc = np.frombuffer(fh.read(8 * n_modes * n_steps), dtype="<f8")
        inc = inc.reshape(n_modes, n_steps).copy()
    return NoisePath(dt_fine=dt, increments=inc,
                     mode_index=[tuple(p) for p in mi],
                     seed_key=(seed, realization))
