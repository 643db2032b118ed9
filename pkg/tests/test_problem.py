"""Tests for the assembled-problem glue: boundary elimination, the load
vector, the coercivity shift bookkeeping, and the transport defaults."""

import numpy as np
import pytest

from rosenspde.integrators import SchemeConfig, StepWorkspace, integrate
from rosenspde.mesh_fem import assemble_mass, assemble_stiffness
from rosenspde.problem import ProblemConfig, VelocityConfig, build_problem


class TestBuildProblem:
    def test_default_reproduction_setup(self):
        prob = build_problem(ProblemConfig(nx=8, ny=8))
        assert prob.n_free == 81 - 9                   # left column eliminated
        assert prob.noise_matrix.shape == (72, 32 * 32 - 1)
        assert prob.c0 >= 0.0
        # constant unit permeability with mu = 10 on [0,2]^2: q = (0.05, 0)
        np.testing.assert_allclose(prob.velocity.q_per_triangle[:, 0], 0.05,
                                   atol=1e-12)

    def test_load_vector_carries_dirichlet_column(self):
        prob = build_problem(ProblemConfig(nx=4, ny=4, noise_kind="none",
                                           velocity=VelocityConfig(kind="zero")))
        # reassemble by hand: load = K[free, dirichlet] @ g
        from rosenspde.mesh_fem import build_structured_mesh, compose_operator
        mesh = build_structured_mesh(2.0, 2.0, 4, 4)
        M = assemble_mass(mesh)
        K = assemble_stiffness(mesh, np.diag([1.0, 0.1]))
        pair = compose_operator(M, K, None, c0=prob.c0)
        manual = pair.K[mesh.free_nodes][:, mesh.dirichlet_nodes] @ \
            np.ones(len(mesh.dirichlet_nodes))
        np.testing.assert_allclose(prob.load, np.asarray(manual).ravel(),
                                   atol=1e-14)

    def test_full_state_roundtrip(self):
        prob = build_problem(ProblemConfig(nx=4, ny=4))
        x = np.arange(prob.n_free, dtype=float)
        full = prob.full_state(x)
        np.testing.assert_array_equal(full[prob.free], x)
        np.testing.assert_array_equal(full[prob.dirichlet],
                                      prob.dirichlet_values)

    def test_neumann_layout_has_no_load(self):
        prob = build_problem(ProblemConfig(nx=4, ny=4, bc_layout="neumann",
                                           noise_kind="none",
                                           velocity=VelocityConfig(kind="zero")))
        assert prob.load.shape == (prob.n_free,)
        assert np.abs(prob.load).max() == 0.0
        assert prob.n_free == 25

    def test_shift_does_not_change_dynamics(self):
        # c0 added to K and subtracted from the drift: trajectories with and
        # without an artificial extra shift agree to solver tolerance
        base = ProblemConfig(nx=4, ny=4, noise_kind="none",
                             velocity=VelocityConfig(kind="zero"),
                             drift_name="linear", drift_coefficient=2.0)
        prob = build_problem(base)
        import scipy.sparse as sp
        extra = 0.7
        K_shifted = (prob.K + extra * sp.diags(
            np.asarray(prob.M.sum(axis=1)).ravel())).tocsr()
        from rosenspde.operators import make_drift
        drift_shifted = make_drift("linear", 2.0, shift=prob.c0 + extra)
        dt = 0.05
        cfg = SchemeConfig("sros", dt, 1.0)
        x0 = np.linspace(0.0, 1.0, prob.n_free)
        ws1 = StepWorkspace(prob.M, prob.K, dt, prob.drift, prob.diff,
                            prob.xy, load=prob.load)
        ws2 = StepWorkspace(prob.M, K_shifted, dt, drift_shifted, prob.diff,
                            prob.xy, load=prob.load)
        t1 = integrate(x0, None, cfg, ws1).final
        t2 = integrate(x0, None, cfg, ws2).final
        np.testing.assert_allclose(t1, t2, atol=1e-7)

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            ProblemConfig(noise_kind="sparkly")
        with pytest.raises(ValueError):
            ProblemConfig(T=-1.0)
        with pytest.raises(ValueError):
            VelocityConfig(kind="swirl")

    def test_noise_requires_spec(self):
        prob = build_problem(ProblemConfig(nx=4, ny=4, noise_kind="none",
                                           velocity=VelocityConfig(kind="zero")))
        with pytest.raises(ValueError):
            prob.sample_path(8)
