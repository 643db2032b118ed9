"""Structured triangular meshes on a rectangle and P1 finite element assembly.

The rectangle [0, L1] x [0, L2] is split into nx x ny cells, each cut along
the same diagonal into two counterclockwise triangles.  On that triangulation
this module assembles the consistent (or lumped) mass matrix, the diffusion
stiffness matrix for a constant SPD tensor (optionally scaled per triangle),
and a first-order upwind advection matrix built on the median dual volumes.
All matrices are scipy CSR.

Boundary layouts
----------------
``left_dirichlet``        Dirichlet on x = 0, Neumann elsewhere.
``left_right_dirichlet``  Dirichlet on x = 0 and x = L1, Neumann on y-walls.
``neumann``               Neumann everywhere (no constrained nodes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

BC_LAYOUTS = ("left_dirichlet", "left_right_dirichlet", "neumann")


@dataclass(frozen=True)
class Mesh:
    """Structured triangulation of [0, L1] x [0, L2].

    nodes : (n_nodes, 2) float array of coordinates
    triangles : (n_tri, 3) int array, counterclockwise vertex indices
    boundary_tag : (n_nodes,) int8 array with INTERIOR / DIRICHLET / NEUMANN
    """

    L1: float
    L2: float
    nx: int
    ny: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_tag: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tag == DIRICHLET)

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_tag != DIRICHLET)

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def triangle_centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)


@dataclass(frozen=True)
class BilinearFormSpec:
    """Coefficients of the advection-diffusion form.

    D : 2x2 symmetric positive definite diffusion tensor
    q : (n_tri, 2) per-triangle velocity, or None for no advection
    c0 : coercivity shift added as c0 * M (compensated inside the drift)
    bc_layout : one of BC_LAYOUTS
    """

    D: np.ndarray
    q: np.ndarray | None = None
    c0: float = 0.0
    bc_layout: str = "left_dirichlet"

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        object.__setattr__(self, "D", D)
        _check_spd_2x2(D)
        if self.c0 < 0.0:
            raise ValueError("c0 must be >= 0")


def _check_spd_2x2(D: np.ndarray) -> None:
    if D.shape != (2, 2):
        raise ValueError(f"diffusion tensor must be 2x2, got {D.shape}")
    if not np.allclose(D, D.T, rtol=1e-12, atol=1e-14):
        raise ValueError("diffusion tensor must be symmetric")
    ev = np.linalg.eigvalsh(0.5 * (D + D.T))
    if ev.min() <= 0.0:
        raise ValueError(f"diffusion tensor must be positive definite, eigenvalues {ev}")


def build_structured_mesh(L1: float, L2: float, nx: int, ny: int,
                          bc_layout: str = "left_dirichlet") -> Mesh:
    """Build the uniform right-triangle mesh of [0, L1] x [0, L2].

    Each of the nx * ny rectangular cells is split along the diagonal from
    its lower-left to its upper-right corner, giving 2*nx*ny triangles and
    (nx+1)*(ny+1) nodes.  Node (i, j) has index j*(nx+1) + i.
    """
    if L1 <= 0.0 or L2 <= 0.0:
        raise ValueError("domain side lengths must be positive")
    if nx < 1 or ny < 1:
        raise ValueError("cell counts must be >= 1")
    if bc_layout not in BC_LAYOUTS:
        raise ValueError(f"unknown bc_layout {bc_layout!r}, expected one of {BC_LAYOUTS}")

    x = np.linspace(0.0, L1, nx + 1)
    y = np.linspace(0.0, L2, ny + 1)
    X, Y = np.meshgrid(x, y)                       # row j = constant y
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    t = 0
    for j in range(ny):
        for i in range(nx):
            n00 = j * (nx + 1) + i
            n10 = n00 + 1
            n01 = n00 + (nx + 1)
            n11 = n01 + 1
            tris[t] = (n00, n10, n11)              # lower-right triangle
            tris[t + 1] = (n00, n11, n01)          # upper-left triangle
            t += 2

    tag = np.full(nodes.shape[0], INTERIOR, dtype=np.int8)
    on_boundary = (
        np.isclose(nodes[:, 0], 0.0) | np.isclose(nodes[:, 0], L1)
        | np.isclose(nodes[:, 1], 0.0) | np.isclose(nodes[:, 1], L2)
    )
    tag[on_boundary] = NEUMANN
    if bc_layout == "left_dirichlet":
        tag[np.isclose(nodes[:, 0], 0.0)] = DIRICHLET
    elif bc_layout == "left_right_dirichlet":
        tag[np.isclose(nodes[:, 0], 0.0)] = DIRICHLET
        tag[np.isclose(nodes[:, 0], L1)] = DIRICHLET

    return Mesh(L1=L1, L2=L2, nx=nx, ny=ny, nodes=nodes, triangles=tris,
                boundary_tag=tag)


def _p1_gradients(pts: np.ndarray) -> tuple[np.ndarray, float]:
    """Constant gradients of the three hat functions on one triangle.

    Returns (grad, area) where grad[i] = grad(phi_i), a (3, 2) array.
    """
    x = pts[:, 0]
    y = pts[:, 1]
    area2 = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
    if area2 <= 0.0:
        raise ValueError("triangle is degenerate or not counterclockwise")
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    grad = np.column_stack([b, c]) / area2
    return grad, 0.5 * area2


# Element mass matrix of P1 hat functions is area/12 * (ones + eye*1).
_ELEM_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: Mesh, lumped: bool = False) -> sp.csr_matrix:
    """Assemble M_ij = integral(phi_i * phi_j); row-sum lumped if requested."""
    tris = mesh.triangles
    areas = mesh.triangle_areas()
    if lumped:
        # row-sum lumping: each vertex receives area/3 of its triangles
        diag = np.zeros(mesh.n_nodes)
        np.add.at(diag, tris.ravel(), np.repeat(areas / 3.0, 3))
        return sp.diags(diag).tocsr()

    n_tri = tris.shape[0]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    vals = (areas[:, None] * _ELEM_MASS.ravel()[None, :]).ravel()
    M = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    M = M.tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return M


def lumped_mass_vector(M: sp.spmatrix) -> np.ndarray:
    """Row sums of the mass matrix (the lumped-mass diagonal)."""
    return np.asarray(M.sum(axis=1)).ravel()


def assemble_stiffness(mesh: Mesh, D: np.ndarray,
                       coeff_per_triangle: np.ndarray | None = None) -> sp.csr_matrix:
    """Assemble the diffusion stiffness K_ij = integral((D grad phi_j) . grad phi_i).

    Parameters
    ----------
    D : 2x2 symmetric positive definite tensor, constant over the domain.
    coeff_per_triangle : optional scalar multiplier per triangle (used by the
        pressure solve, where the tensor is (k_T / mu) * D).
    """
    D = np.asarray(D, dtype=float)
    _check_spd_2x2(D)
    tris = mesh.triangles
    coeff = np.ones(tris.shape[0]) if coeff_per_triangle is None \
        else np.asarray(coeff_per_triangle, dtype=float)
    if coeff.shape[0] != tris.shape[0]:
        raise ValueError("coeff_per_triangle must have one entry per triangle")

    rows = np.empty(9 * tris.shape[0], dtype=np.int64)
    cols = np.empty_like(rows)
    vals = np.empty(rows.shape[0])
    for t in range(tris.shape[0]):
        idx = tris[t]
        grad, area = _p1_gradients(mesh.nodes[idx])
        ke = coeff[t] * area * (grad @ D @ grad.T)
        s = 9 * t
        rows[s:s + 9] = np.repeat(idx, 3)
        cols[s:s + 9] = np.tile(idx, 3)
        vals[s:s + 9] = ke.ravel()
    K = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def _boundary_edge_set(mesh: Mesh) -> set[tuple[int, int]]:
    """Edges (sorted node pairs) that belong to exactly one triangle."""
    count: dict[tuple[int, int], int] = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    return {e for e, c in count.items() if c == 1}


def assemble_advection(mesh: Mesh, q_per_triangle: np.ndarray) -> sp.csr_matrix:
    """First-order upwind advection on the median dual volumes.

    Every triangle contributes three dual edges (edge midpoint to centroid).
    The flux q_T . n through a dual edge is upwinded between the two adjacent
    node volumes.  Domain-boundary half edges add the outflow q . n weighted
    by the node's own value; at inflow boundaries this is exact only when the
    inflow nodes carry Dirichlet data (they are eliminated there anyway).

    Multiplying by a constant vector yields zero rows at interior nodes
    whenever the per-triangle field is discretely divergence free.
    """
    q = np.asarray(q_per_triangle, dtype=float)
    if q.shape != (mesh.n_triangles, 2):
        raise ValueError(
            f"velocity must have shape ({mesh.n_triangles}, 2), got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("velocity field contains non-finite entries")

    nodes = mesh.nodes
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    boundary_edges = _boundary_edge_set(mesh)

    for t, tri in enumerate(mesh.triangles):
        qt = q[t]
        pts = nodes[tri]
        cen = pts.mean(axis=0)
        for local_a, local_b in ((0, 1), (1, 2), (2, 0)):
            a, b = int(tri[local_a]), int(tri[local_b])
            mid = 0.5 * (pts[local_a] + pts[local_b])
            d = cen - mid
            normal = np.array([d[1], -d[0]])      # length-weighted
            if normal @ (pts[local_b] - pts[local_a]) < 0.0:
                normal = -normal
            f = float(qt @ normal)                # flux from volume a to volume b
            fp, fm = max(f, 0.0), min(f, 0.0)
            rows += [a, a, b, b]
            cols += [a, b, a, b]
            vals += [fp, fm, -fp, -fm]

            # boundary closure: half edges [p_a, mid] and [mid, p_b]
            if (min(a, b), max(a, b)) in boundary_edges:
                e = pts[local_b] - pts[local_a]
                n_out = np.array([e[1], -e[0]])
                third = pts[3 - local_a - local_b]
                if n_out @ (third - mid) > 0.0:
                    n_out = -n_out
                fb = 0.5 * float(qt @ n_out)      # per half edge
                rows += [a, b]
                cols += [a, b]
                vals += [fb, fb]

    K = sp.coo_matrix((np.array(vals), (np.array(rows), np.array(cols))),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


@dataclass(frozen=True)
class OperatorPair:
    """Mass matrix and combined stiffness; together they define the spatial
    operator as M^{-1} K, which is never formed explicitly."""
    M: sp.csr_matrix
    K: sp.csr_matrix


def compose_operator(M: sp.spmatrix, K_diff: sp.spmatrix,
                     K_adv: sp.spmatrix | None = None, c0: float = 0.0) -> OperatorPair:
    """Combine K = K_diff + K_adv + c0 * M into the operator pair (M, K)."""
    if M.shape != K_diff.shape:
        raise ValueError("mass and stiffness dimensions differ")
    K = K_diff
    if K_adv is not None:
        if K_adv.shape != M.shape:
            raise ValueError("advection matrix dimension mismatch")
        K = K + K_adv
    if c0 != 0.0:
        K = K + c0 * M
    K = K.tocsr()
    K.sort_indices()
    return OperatorPair(M=M.tocsr(), K=K)


def assemble_operator(mesh: Mesh, spec: BilinearFormSpec) -> OperatorPair:
    """Assemble the full operator pair (M, K) from one coefficient container:
    K = diffusion + upwind advection + c0 * M."""
    M = assemble_mass(mesh)
    K_diff = assemble_stiffness(mesh, spec.D)
    K_adv = assemble_advection(mesh, spec.q) if spec.q is not None else None
    return compose_operator(M, K_diff, K_adv, c0=spec.c0)


def estimate_coercivity_shift(K: sp.spmatrix, M: sp.spmatrix,
                              q_inf: float = 0.0, c1: float = 1.0,
                              dense_cutoff: int = 400,
                              margin: float = 1e-8) -> float:
    """Shift c0 >= 0 making the generalized spectrum of (K + c0 M, M) stable.

    Small systems use an exact dense generalized eigensolve; larger ones fall
    back to the bound |q|_inf^2 / (2 c1) with c1 the smallest diffusion
    eigenvalue (Cauchy-Schwarz plus Young on the advection form).
    """
    n = K.shape[0]
    if n <= dense_cutoff:
        lam = np.linalg.eigvals(np.linalg.solve(M.toarray(), K.toarray()))
        lam_min = float(lam.real.min())
        return max(0.0, -lam_min) + margin
    return q_inf ** 2 / (2.0 * c1) + margin


def restrict(A: sp.spmatrix, rows: np.ndarray, cols: np.ndarray | None = None) -> sp.csr_matrix:
    """Submatrix A[rows, cols] as CSR (cols defaults to rows)."""
    if cols is None:
        cols = rows
    out = A.tocsr()[rows][:, cols].tocsr()
    out.sort_indices()
    return out


def l2_project(f, mesh: Mesh, M: sp.spmatrix | None = None) -> np.ndarray:
    """Nodal coefficients of the L2 projection of f(x, y) onto the P1 space.

    The load integrals use the three edge-midpoint quadrature points per
    triangle (exact for quadratic integrands, hence for P1 f times P1 basis).
    """
    if M is None:
        M = assemble_mass(mesh)
    b = np.zeros(mesh.n_nodes)
    tris = mesh.triangles
    areas = mesh.triangle_areas()
    pts = mesh.nodes[tris]                        # (n_tri, 3, 2)
    mids = 0.5 * (pts + np.roll(pts, -1, axis=1))  # midpoint of edge (i, i+1)
    fm = np.asarray(f(mids[..., 0], mids[..., 1]), dtype=float)
    if fm.shape != mids.shape[:2]:
        fm = np.broadcast_to(fm, mids.shape[:2])
    # hat phi_i is 1/2 on the two midpoints of edges touching vertex i
    w = (areas / 3.0)[:, None] * 0.5 * (fm + np.roll(fm, 1, axis=1))
    np.add.at(b, tris.ravel(), w.ravel())
    return spla.spsolve(M.tocsc(), b)


def l2_norm(v: np.ndarray, M: sp.spmatrix) -> float:
    """L2(domain) norm sqrt(v^T M v) of a nodal coefficient vector."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != M.shape[0]:
        raise ValueError("vector and mass matrix dimensions differ")
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def write_matrix_txt(path, A: sp.spmatrix) -> None:
    """Dump a sparse matrix as 'row col value' triples (debug format)."""
    coo = A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def write_mesh_txt(path, mesh: Mesh) -> None:
    """Dump nodes (index x y tag) and triangles (index a b c) as plain text."""
    with open(path, "w") as fh:
        fh.write(f"# nodes {mesh.n_nodes}\n")
        for i, (xy, tg) in enumerate(zip(mesh.nodes, mesh.boundary_tag)):
            fh.write(f"{i} {xy[0]:.17g} {xy[1]:.17g} {int(tg)}\n")
        fh.write(f"# triangles {mesh.n_triangles}\n")
        for t, tri in enumerate(mesh.triangles):
            fh.write(f"{t} {tri[0]} {tri[1]} {tri[2]}\n")
