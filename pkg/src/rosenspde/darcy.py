"""Divergence-free advection velocity from a Darcy pressure solve.

The pressure p solves div((k/mu) grad p) = 0 on the same triangulation as
the transport problem, with p = p_left on {x = 0}, p = p_right on {x = L1}
and no-flow conditions on the y-walls.  The per-triangle velocity is then
q_T = -(k_T / mu) grad p|_T (P1 gradients are constant per triangle).

Because the dual volumes used by the upwind advection assembly are the
median duals of the same triangulation, the piecewise-constant fluxes of the
P1 solve balance exactly around every interior node volume; no separate
flux post-processing is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import mesh_fem
from .mesh_fem import Mesh, _p1_gradients
from .noise import _cosine_factor


@dataclass(frozen=True)
class PermeabilitySpec:
    """Scalar permeability per triangle: constant, or exp of a truncated
    cosine-series Gaussian field."""

    kind: str = "constant"
    k0: float = 1.0
    mean: float = 0.0
    variance: float = 1.0
    correlation_length: float = 0.5
    n_modes: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "lognormal_spectral"):
            raise ValueError(f"unknown permeability kind {self.kind!r}")
        if self.kind == "constant" and self.k0 <= 0.0:
            raise ValueError("constant permeability must be positive")
        if self.variance < 0.0:
            raise ValueError("variance must be >= 0")


@dataclass(frozen=True)
class PermeabilityField:
    kind: str
    k_values: np.ndarray                  # per triangle, > 0


@dataclass(frozen=True)
class VelocityField:
    q_per_triangle: np.ndarray            # (n_tri, 2)


def generate_permeability(mesh: Mesh, spec: PermeabilitySpec) -> PermeabilityField:
    """Permeability sampled at triangle centroids; k = exp(g) for the
    lognormal kind, with g a cosine-series Gaussian field whose spectral
    weights decay with the correlation length and whose domain-averaged
    variance equals spec.variance."""
    if spec.kind == "constant":
        return PermeabilityField(kind=spec.kind,
                                 k_values=np.full(mesh.n_triangles, spec.k0))

    cen = mesh.triangle_centroids()
    g = np.full(mesh.n_triangles, spec.mean)
    if spec.variance > 0.0:
        L1, L2 = mesh.L1, mesh.L2
        ell = spec.correlation_length
        modes = [(i, j) for i in range(spec.n_modes) for j in range(spec.n_modes)
                 if (i, j) != (0, 0)]
        w = np.array([np.exp(-0.5 * (np.pi * ell) ** 2
                             * ((i / L1) ** 2 + (j / L2) ** 2)) for i, j in modes])
        # columns are orthonormal, so sum(w)/(L1 L2) is the average variance
        scale = np.sqrt(spec.variance / (w.sum() / (L1 * L2)))
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence([int(spec.seed), 0x6b])))
        xi = rng.standard_normal(len(modes))
        E = np.empty((mesh.n_triangles, len(modes)))
        for m, (i, j) in enumerate(modes):
            E[:, m] = _cosine_factor(i, cen[:, 0], L1) * _cosine_factor(j, cen[:, 1], L2)
        g = g + scale * (E @ (np.sqrt(w) * xi))
    return PermeabilityField(kind=spec.kind, k_values=np.exp(g))


def solve_pressure(mesh: Mesh, k: PermeabilityField, mu: float,
                   p_left: float = 1.0, p_right: float = 0.0) -> np.ndarray:
    """Nodal pressure of div((k/mu) grad p) = 0 with end-wall Dirichlet data.

    The Dirichlet sets are taken geometrically from the node coordinates
    (x = 0 and x = L1), independent of the mesh's transport boundary tags.
    """
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    if np.any(k.k_values <= 0.0):
        raise ValueError("permeability must be positive on every triangle")
    K = mesh_fem.assemble_stiffness(mesh, np.eye(2),
                                    coeff_per_triangle=k.k_values / mu)
    left = np.isclose(mesh.nodes[:, 0], 0.0)
    right = np.isclose(mesh.nodes[:, 0], mesh.L1)
    fixed = left | right
    free = np.flatnonzero(~fixed)
    p = np.where(left, p_left, 0.0) + np.where(right, p_right, 0.0)
    if free.size:
        K = K.tocsr()
        rhs = -(K[free] @ p)
        K_ff = K[free][:, free].tocsc()
        p[free] = spla.spsolve(K_ff, rhs)
    return p


def velocity_from_pressure(mesh: Mesh, p: np.ndarray, k: PermeabilityField,
                           mu: float) -> VelocityField:
    """Per-triangle q_T = -(k_T/mu) grad p restricted to each triangle."""
    q = np.empty((mesh.n_triangles, 2))
    for t, tri in enumerate(mesh.triangles):
        grad, _ = _p1_gradients(mesh.nodes[tri])
        q[t] = -(k.k_values[t] / mu) * (p[tri] @ grad)
    return VelocityField(q_per_triangle=q)


def darcy_velocity(mesh: Mesh, spec: PermeabilitySpec, mu: float,
                   p_left: float = 1.0, p_right: float = 0.0) -> VelocityField:
    """Permeability sample, pressure solve and velocity in one call."""
    k = generate_permeability(mesh, spec)
    p = solve_pressure(mesh, k, mu, p_left, p_right)
    return velocity_from_pressure(mesh, p, k, mu)


def dual_volume_divergence(mesh: Mesh, q: VelocityField) -> np.ndarray:
    """Net flux out of each node's median dual volume (boundary faces
    included); interior entries vanish for a conservative field."""
    out = np.zeros(mesh.n_nodes)
    boundary_edges = mesh_fem._boundary_edge_set(mesh)
    for t, tri in enumerate(mesh.triangles):
        qt = q.q_per_triangle[t]
        pts = mesh.nodes[tri]
        cen = pts.mean(axis=0)
        for la, lb in ((0, 1), (1, 2), (2, 0)):
            a, b = int(tri[la]), int(tri[lb])
            mid = 0.5 * (pts[la] + pts[lb])
            d = cen - mid
            normal = np.array([d[1], -d[0]])
            if normal @ (pts[lb] - pts[la]) < 0.0:
                normal = -normal
            f = float(qt @ normal)
            out[a] += f
            out[b] -= f
            if (min(a, b), max(a, b)) in boundary_edges:
                e = pts[lb] - pts[la]
                n_out = np.array([e[1], -e[0]])
                third = pts[3 - la - lb]
                if n_out @ (third - mid) > 0.0:
                    n_out = -n_out
                fb = 0.5 * float(qt @ n_out)
                out[a] += fb
                out[b] += fb
    return out


def residual_wall_fluxes(mesh: Mesh, k: PermeabilityField, mu: float,
                         p: np.ndarray) -> dict:
    """Outward flux of q = -(k/mu) grad p through each wall, evaluated from
    the stiffness residual (K p restricted to the wall nodes).

    This is the conservative flux of the P1 solve: interior and no-flow rows
    of the residual vanish, so inflow and outflow balance to rounding for any
    permeability, unlike the raw line integral of the per-triangle gradient.
    """
    K = mesh_fem.assemble_stiffness(mesh, np.eye(2),
                                    coeff_per_triangle=k.k_values / mu)
    r = K @ p
    left = np.isclose(mesh.nodes[:, 0], 0.0)
    right = np.isclose(mesh.nodes[:, 0], mesh.L1)
    return {
        "left": -float(r[left].sum()),
        "right": -float(r[right].sum()),
    }


def boundary_flux(mesh: Mesh, q: VelocityField, side: str) -> float:
    """Integral of q . n over one wall ('left', 'right', 'bottom', 'top'),
    with n the outward domain normal."""
    sides = {
        "left": (0, 0.0, np.array([-1.0, 0.0])),
        "right": (0, mesh.L1, np.array([1.0, 0.0])),
        "bottom": (1, 0.0, np.array([0.0, -1.0])),
        "top": (1, mesh.L2, np.array([0.0, 1.0])),
    }
    if side not in sides:
        raise ValueError(f"unknown side {side!r}")
    axis, coord, n_out = sides[side]
    total = 0.0
    for t, tri in enumerate(mesh.triangles):
        pts = mesh.nodes[tri]
        for la, lb in ((0, 1), (1, 2), (2, 0)):
            pa, pb = pts[la], pts[lb]
            if np.isclose(pa[axis], coord) and np.isclose(pb[axis], coord):
                length = float(np.linalg.norm(pb - pa))
                total += float(q.q_per_triangle[t] @ n_out) * length
    return total


def write_velocity_csv(path, mesh: Mesh, q: VelocityField) -> None:
    cen = mesh.triangle_centroids()
    with open(path, "w") as fh:
        fh.write("x,y,qx,qy\n")
        for c, qt in zip(cen, q.q_per_triangle):
            fh.write(f"{c[0]:.17g},{c[1]:.17g},{qt[0]:.17g},{qt[1]:.17g}\n")
