"""Tests for the spectral noise machinery.

Frozen oracles:
- lambda(1,1) with beta=2, eps=0.1: 2^{-2.1} = 0.23325824788420185
- truncated trace growth from N=32 to N=64 stays below 1e-3 (trace class)
- lumped-mass Gram matrix of the cosine table is the identity up to
  nodal-quadrature error (discrete cosine orthogonality)
"""

import numpy as np
import pytest

from rosenspde.mesh_fem import assemble_mass, build_structured_mesh, l2_norm
from rosenspde.noise import (NoiseSpec, _cosine_factor,
                             build_eigenfunction_table, coarsen,
                             covariance_eigenvalue, increment_field, load_path,
                             sample_path, save_path, scaled_mode_matrix)


class TestEigenvalue:
    def test_first_mode_is_one(self):
        assert covariance_eigenvalue(1, 0, 2.0, 0.1) == pytest.approx(1.0)

    def test_diagonal_mode_frozen_value(self):
        assert covariance_eigenvalue(1, 1, 2.0, 0.1) == \
            pytest.approx(0.23325824788420185, rel=1e-14)

    def test_monotone_decay(self):
        assert covariance_eigenvalue(2, 2, 2.0, 0.1) < \
            covariance_eigenvalue(1, 1, 2.0, 0.1)

    def test_origin_mode_rejected(self):
        with pytest.raises(ValueError):
            covariance_eigenvalue(0, 0, 2.0, 0.1)

    def test_nonpositive_exponent_rejected(self):
        with pytest.raises(ValueError):
            covariance_eigenvalue(1, 0, -1.0, 0.5)


class TestNoiseSpec:
    def test_mode_ordering(self):
        spec = NoiseSpec(N1=3, N2=3)
        modes = spec.mode_index()
        assert modes[0] in ((0, 1), (1, 0))
        sums = [i * i + j * j for i, j in modes]
        assert sums == sorted(sums)
        assert (0, 0) not in modes
        assert len(modes) == 8

    def test_trace_is_finite_and_converged_by_64(self):
        t32 = NoiseSpec(N1=32, N2=32).trace()
        t64 = NoiseSpec(N1=64, N2=64).trace()
        assert t32 == pytest.approx(2.510724563751048, rel=1e-12)
        assert 0.0 < t64 - t32 < 1e-3

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            NoiseSpec(beta=-2.0, eps=0.0)
        with pytest.raises(ValueError):
            NoiseSpec(N1=0)
        with pytest.raises(ValueError):
            NoiseSpec(kind="pink")


class TestEigenfunctionTable:
    def test_constant_mode_factors(self):
        # the (0,0) product would equal sqrt(1/2)*sqrt(1/2) = 0.5 on [0,2]^2
        x = np.array([0.0, 0.7, 2.0])
        f0 = _cosine_factor(0, x, 2.0)
        np.testing.assert_allclose(f0 * f0, 0.5)

    def test_first_cosine_at_origin(self):
        assert _cosine_factor(1, np.array([0.0]), 2.0)[0] == pytest.approx(1.0)

    def test_table_values_match_factors(self):
        m = build_structured_mesh(2.0, 2.0, 4, 4)
        spec = NoiseSpec(N1=3, N2=3, L1=2.0, L2=2.0)
        tab = build_eigenfunction_table(m, spec)
        k = tab.mode_index.index((2, 1))
        expected = _cosine_factor(2, m.nodes[:, 0], 2.0) * \
            _cosine_factor(1, m.nodes[:, 1], 2.0)
        np.testing.assert_allclose(tab.values[:, k], expected)

    def test_discrete_orthonormality_lumped(self):
        # nodal-quadrature Gram matrix for modes i, j <= 8 on a 32x32 mesh
        m = build_structured_mesh(2.0, 2.0, 32, 32)
        Ml = assemble_mass(m, lumped=True)
        spec = NoiseSpec(N1=9, N2=9, L1=2.0, L2=2.0)
        E = build_eigenfunction_table(m, spec).values
        G = E.T @ (Ml @ E)
        assert np.abs(G - np.eye(G.shape[0])).max() < 5e-2

    def test_discrete_orthonormality_consistent_low_modes(self):
        m = build_structured_mesh(2.0, 2.0, 32, 32)
        M = assemble_mass(m)
        spec = NoiseSpec(N1=5, N2=5, L1=2.0, L2=2.0)
        E = build_eigenfunction_table(m, spec).values
        G = E.T @ (M @ E)
        assert np.abs(G - np.eye(G.shape[0])).max() < 5e-2


class TestSamplePath:
    def test_reproducible_from_seed(self):
        spec = NoiseSpec(N1=4, N2=4, seed=99)
        p1 = sample_path(spec, 1.0, 64, realization=3)
        p2 = sample_path(spec, 1.0, 64, realization=3)
        np.testing.assert_array_equal(p1.increments, p2.increments)

    def test_realizations_differ(self):
        spec = NoiseSpec(N1=4, N2=4, seed=99)
        p1 = sample_path(spec, 1.0, 64, realization=0)
        p2 = sample_path(spec, 1.0, 64, realization=1)
        assert np.abs(p1.increments - p2.increments).max() > 0.0

    def test_truncation_keeps_common_mode_draws(self):
        # per-(realization, mode) streams: enlarging N preserves shared modes
        small = sample_path(NoiseSpec(N1=4, N2=4, seed=5), 1.0, 32)
        large = sample_path(NoiseSpec(N1=8, N2=8, seed=5), 1.0, 32)
        for k, ij in enumerate(small.mode_index):
            kl = large.mode_index.index(ij)
            np.testing.assert_array_equal(small.increments[k],
                                          large.increments[kl])

    def test_increment_variance(self):
        spec = NoiseSpec(N1=3, N2=3, seed=12)
        T, n = 5.0, 10_000
        path = sample_path(spec, T, n)
        dt = T / n
        var = path.increments.var(axis=1)
        assert np.all(var > 0.9 * dt)
        assert np.all(var < 1.1 * dt)

    def test_cross_mode_correlation_small(self):
        spec = NoiseSpec(N1=3, N2=3, seed=4)
        path = sample_path(spec, 1.0, 10_000)
        C = np.corrcoef(path.increments)
        off = C - np.diag(np.diag(C))
        assert np.abs(off).max() < 0.05

    def test_invalid_arguments(self):
        spec = NoiseSpec(N1=2, N2=2)
        with pytest.raises(ValueError):
            sample_path(spec, 1.0, 0)
        with pytest.raises(ValueError):
            sample_path(spec, -1.0, 8)


class TestCoarsen:
    def make_path(self):
        return sample_path(NoiseSpec(N1=3, N2=3, seed=21), 1.0, 32)

    def test_factor_one_is_identity(self):
        p = self.make_path()
        assert coarsen(p, 1) is p

    def test_block_sums(self):
        p = self.make_path()
        c = coarsen(p, 4)
        assert c.n_steps == 8
        assert c.dt_fine == pytest.approx(4 * p.dt_fine)
        np.testing.assert_allclose(c.increments[:, 0],
                                   p.increments[:, :4].sum(axis=1))

    def test_associativity(self):
        # equality up to summation-order rounding
        p = self.make_path()
        np.testing.assert_allclose(coarsen(coarsen(p, 2), 2).increments,
                                   coarsen(p, 4).increments,
                                   rtol=1e-14, atol=1e-16)

    def test_endpoint_invariant(self):
        p = self.make_path()
        for f in (2, 4, 8):
            np.testing.assert_allclose(coarsen(p, f).endpoint(), p.endpoint(),
                                       rtol=1e-12)

    def test_non_divisor_rejected(self):
        with pytest.raises(ValueError):
            coarsen(self.make_path(), 5)


class TestIncrementField:
    def setup_method(self):
        self.mesh = build_structured_mesh(2.0, 2.0, 8, 8)
        self.spec = NoiseSpec(N1=4, N2=4, seed=1)
        self.table = build_eigenfunction_table(self.mesh, self.spec)

    def test_zero_increments(self):
        f = increment_field(self.table, self.spec,
                            np.zeros(len(self.table.mode_index)))
        assert np.abs(f).max() == 0.0

    def test_single_mode_linearity(self):
        k = self.table.mode_index.index((1, 0))
        dbeta = np.zeros(len(self.table.mode_index))
        dbeta[k] = 1.0
        f = increment_field(self.table, self.spec, dbeta)
        lam = covariance_eigenvalue(1, 0, self.spec.beta, self.spec.eps)
        np.testing.assert_allclose(f, np.sqrt(lam) * self.table.values[:, k])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            increment_field(self.table, self.spec, np.zeros(3))

    def test_mean_square_norm_matches_trace(self):
        # E ||dW||^2 = dt * trace(Q) by orthonormality (Monte Carlo check)
        mesh = build_structured_mesh(2.0, 2.0, 16, 16)
        spec = NoiseSpec(N1=8, N2=8, seed=17)
        M = assemble_mass(mesh)
        table = build_eigenfunction_table(mesh, spec)
        S = scaled_mode_matrix(table, spec)
        path = sample_path(spec, 1.0, 1000)
        fields = S @ path.increments
        sq = np.array([l2_norm(fields[:, k], M) ** 2 for k in range(1000)])
        assert sq.mean() == pytest.approx(path.dt_fine * spec.trace(), rel=0.10)

    def test_two_point_covariance(self):
        # empirical covariance of the field at two fixed nodes against
        # dt * sum(lambda e(a) e(b)) within 3 sigma
        spec = self.spec
        S = scaled_mode_matrix(self.table, spec)
        path = sample_path(spec, 1.0, 4000)
        fields = S @ path.increments
        a, b = 12, 40
        emp = np.mean(fields[a] * fields[b])
        lam = spec.eigenvalues()
        exact = path.dt_fine * np.sum(lam * self.table.values[a]
                                      * self.table.values[b])
        second = np.mean((fields[a] * fields[b]) ** 2)
        sigma = np.sqrt(max(second - emp ** 2, 0.0) / 4000)
        assert abs(emp - exact) <= 3.0 * sigma


class TestPathIO:
    def test_roundtrip(self, tmp_path):
        p = sample_path(NoiseSpec(N1=3, N2=2, seed=8), 0.5, 16, realization=2)
        fname = tmp_path / "path.bin"
        save_path(p, fname)
        q = load_path(fname)
        assert q.dt_fine == p.dt_fine
        assert q.mode_index == p.mode_index
        assert q.seed_key == (8, 2)
        np.testing.assert_array_equal(q.increments, p.increments)

    def test_rejects_foreign_file(self, tmp_path):
        f = tmp_path / "junk.bin"
        f.write_bytes(b"not a path dump")
        with pytest.raises(ValueError):
            load_path(f)
