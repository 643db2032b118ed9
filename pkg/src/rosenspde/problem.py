"""Assemble a complete transport problem: mesh, operators, noise, boundary
elimination.

Nonhomogeneous Dirichlet data is imposed by node elimination: constrained
nodes carry their fixed value at all times, the evolved system lives on the
free nodes, and the coupling column K[free, dirichlet] @ g becomes a constant
load on the right-hand side.  The coercivity shift c0 (estimated from the
assembled operators) is added to the stiffness and subtracted inside the
drift, leaving the dynamics unchanged while keeping the operator stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import darcy, mesh_fem, noise as noise_mod
from .mesh_fem import Mesh
from .noise import NoisePath, NoiseSpec
from .operators import DiffusionSpec, DriftSpec, make_diffusion, make_drift


@dataclass(frozen=True)
class VelocityConfig:
    kind: str = "darcy"                       # darcy | constant | zero
    q: tuple[float, float] = (0.0, 0.0)       # used by kind = constant
    permeability: darcy.PermeabilitySpec = field(default_factory=darcy.PermeabilitySpec)
    mu: float = 10.0

    def __post_init__(self):
        if self.kind not in ("darcy", "constant", "zero"):
            raise ValueError(f"unknown velocity kind {self.kind!r}")


@dataclass(frozen=True)
class ProblemConfig:
    """Physical and numerical parameters of one transport problem."""

    L1: float = 2.0
    L2: float = 2.0
    nx: int = 16
    ny: int = 16
    bc_layout: str = "left_dirichlet"
    dirichlet_value: float = 1.0
    diffusion_tensor: tuple = ((1.0, 0.0), (0.0, 0.1))
    drift_name: str = "reactive_fraction"
    drift_coefficient: float = 10.0
    noise_kind: str = "additive"              # additive | multiplicative | none
    beta: float = 2.0
    eps: float = 0.1
    n_modes: tuple[int, int] = (32, 32)
    velocity: VelocityConfig = field(default_factory=VelocityConfig)
    initial_value: float = 0.0
    T: float = 1.0
    master_seed: int = 8927451

    def __post_init__(self):
        if self.noise_kind not in ("additive", "multiplicative", "none"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.T < 0.0:
            raise ValueError("T must be >= 0")


@dataclass(frozen=True)
class Problem:
    """Assembled, immutable problem; safe to share across workers."""

    cfg: ProblemConfig
    mesh: Mesh
    free: np.ndarray
    dirichlet: np.ndarray
    dirichlet_values: np.ndarray
    M: sp.csr_matrix                         # free-node mass
    K: sp.csr_matrix                         # free-node stiffness incl. shift
    load: np.ndarray                         # K[free, dirichlet] @ g
    xy: np.ndarray                           # free-node coordinates
    drift: DriftSpec
    diff: DiffusionSpec
    c0: float
    velocity: darcy.VelocityField | None
    noise_spec: NoiseSpec | None
    noise_matrix: np.ndarray | None          # (n_free, n_modes), sqrt(lambda)-scaled
    x0: np.ndarray

    @property
    def n_free(self) -> int:
        return self.free.shape[0]

    def l2_norm(self, v: np.ndarray) -> float:
        """L2 norm of a free-node vector extended by zero to the boundary."""
        return mesh_fem.l2_norm(v, self.M)

    def noise_fields(self, path: NoisePath) -> np.ndarray:
        """Nodal Wiener increments on the free nodes, one column per step."""
        if self.noise_matrix is None:
            raise ValueError("problem was assembled without noise")
        return self.noise_matrix @ path.increments

    def sample_path(self, n_steps_fine: int, realization: int = 0) -> NoisePath:
        if self.noise_spec is None:
            raise ValueError("problem was assembled without noise")
        return noise_mod.sample_path(self.noise_spec, self.cfg.T, n_steps_fine,
                                     realization=realization)

    def full_state(self, x_free: np.ndarray) -> np.ndarray:
        """Complete nodal vector with the Dirichlet values filled back in."""
        out = np.zeros(self.mesh.n_nodes)
        out[self.free] = x_free
        out[self.dirichlet] = self.dirichlet_values
        return out


def build_problem(cfg: ProblemConfig) -> Problem:
    mesh = mesh_fem.build_structured_mesh(cfg.L1, cfg.L2, cfg.nx, cfg.ny,
                                          bc_layout=cfg.bc_layout)
    D = np.asarray(cfg.diffusion_tensor, dtype=float)
    M_full = mesh_fem.assemble_mass(mesh)
    K_diff = mesh_fem.assemble_stiffness(mesh, D)

    vel = None
    K_adv = None
    if cfg.velocity.kind == "darcy":
        vel = darcy.darcy_velocity(mesh, cfg.velocity.permeability, cfg.velocity.mu)
    elif cfg.velocity.kind == "constant":
        vel = darcy.VelocityField(
            q_per_triangle=np.tile(np.asarray(cfg.velocity.q, dtype=float),
                                   (mesh.n_triangles, 1)))
    if vel is not None:
        K_adv = mesh_fem.assemble_advection(mesh, vel.q_per_triangle)

    free = mesh.free_nodes
    diri = mesh.dirichlet_nodes
    K_nd = K_diff if K_adv is None else (K_diff + K_adv).tocsr()

    q_inf = 0.0 if vel is None else float(np.abs(vel.q_per_triangle).max())
    c1 = float(np.linalg.eigvalsh(D).min())
    c0 = mesh_fem.estimate_coercivity_shift(
        mesh_fem.restrict(K_nd, free), mesh_fem.restrict(M_full, free),
        q_inf=q_inf, c1=c1)

    pair = mesh_fem.compose_operator(M_full, K_diff, K_adv, c0=c0)
    g = np.full(diri.shape[0], cfg.dirichlet_value)
    load = (pair.K[free][:, diri] @ g) if diri.size else np.zeros(free.shape[0])

    drift = make_drift(cfg.drift_name, cfg.drift_coefficient, shift=c0)
    diff = make_diffusion("additive" if cfg.noise_kind in ("additive", "none")
                          else "multiplicative")

    nspec = None
    nmat = None
    if cfg.noise_kind != "none":
        nspec = NoiseSpec(beta=cfg.beta, eps=cfg.eps,
                          N1=cfg.n_modes[0], N2=cfg.n_modes[1],
                          L1=cfg.L1, L2=cfg.L2, kind=cfg.noise_kind,
                          seed=cfg.master_seed)
        table = noise_mod.build_eigenfunction_table(mesh, nspec)
        nmat = noise_mod.scaled_mode_matrix(table, nspec)[free]

    x0 = np.full(free.shape[0], cfg.initial_value)

    return Problem(cfg=cfg, mesh=mesh, free=free, dirichlet=diri,
                   dirichlet_values=g,
                   M=mesh_fem.restrict(M_full, free),
                   K=mesh_fem.restrict(pair.K, free),
                   load=np.asarray(load, dtype=float).ravel(),
                   xy=mesh.nodes[free], drift=drift, diff=diff, c0=c0,
                   velocity=vel, noise_spec=nspec, noise_matrix=nmat, x0=x0)


