"""Tests for the Monte Carlo study harness.

Oracles:
- exact power-law data recovers its slope with zero residual; the two-point
  slope log(3/2.1)/log(2) = 0.5145731728297582 is frozen from a hand
  computation
- a coarse run at dt = dt_reference is the reference itself, so its error
  vanishes identically
- worker-count independence is bitwise (seeds derive from the realization
  index alone)
"""

import math
import pickle

import numpy as np
import pytest

from rosenspde.harness import (StudyAbort, StudyConfig,
                               fit_order, run_study, timing_profile,
                               write_plotdata_csv, write_report_csv,
                               write_timing_csv)
from rosenspde.integrators import SchemeConfig, StepWorkspace, integrate
from rosenspde.problem import Problem, ProblemConfig, VelocityConfig, \
    build_problem


def tiny_problem_config(noise_kind="additive", **kw):
    defaults = dict(nx=8, ny=8, noise_kind=noise_kind, n_modes=(4, 4),
                    master_seed=2024,
                    velocity=VelocityConfig(kind="constant", q=(0.05, 0.0)))
    defaults.update(kw)
    return ProblemConfig(**defaults)


class TestFitOrder:
    def test_exact_first_order(self):
        dts = [0.1, 0.05, 0.025, 0.0125]
        slope, resid = fit_order([(dt, 3.0 * dt) for dt in dts])
        assert slope == pytest.approx(1.0, abs=1e-12)
        assert resid < 1e-12

    def test_exact_half_order(self):
        dts = [0.1, 0.05, 0.025]
        slope, _ = fit_order([(dt, 0.7 * math.sqrt(dt)) for dt in dts])
        assert slope == pytest.approx(0.5, abs=1e-12)

    def test_two_point_frozen_value(self):
        slope, resid = fit_order([(1e-2, 3e-3), (5e-3, 2.1e-3)])
        assert slope == pytest.approx(0.5145731728297582, rel=1e-12)
        assert resid < 1e-14

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_order([(0.1, 1.0)])

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            fit_order([(0.1, 1.0), (0.05, 0.0)])
        with pytest.raises(ValueError):
            fit_order([(0.1, 1.0), (-0.05, 0.5)])


class TestStudyConfigValidation:
    def test_dt_must_be_multiple_of_reference(self):
        with pytest.raises(ValueError):
            StudyConfig(problem=tiny_problem_config(),
                        dt_reference=1.0 / 64.0, dt_list=(0.03,),
                        n_realizations=2)

    def test_dt_must_divide_horizon(self):
        with pytest.raises(ValueError):
            StudyConfig(problem=tiny_problem_config(),
                        dt_reference=1.0 / 64.0, dt_list=(3.0 / 64.0,),
                        n_realizations=2)

    def test_reference_must_divide_horizon(self):
        with pytest.raises(ValueError):
            StudyConfig(problem=tiny_problem_config(),
                        dt_reference=0.3, dt_list=(0.3,), n_realizations=2)

    def test_realization_count(self):
        with pytest.raises(ValueError):
            StudyConfig(problem=tiny_problem_config(),
                        dt_reference=1.0 / 64.0, dt_list=(1.0 / 16.0,),
                        n_realizations=0)


class TestRunStudy:
    def test_self_error_is_zero_without_noise(self):
        # deterministic problem: the dt = dt_reference row is the reference
        pcfg = tiny_problem_config(noise_kind="none")
        study = StudyConfig(problem=pcfg, dt_reference=1.0 / 32.0,
                            dt_list=(1.0 / 32.0, 1.0 / 8.0),
                            n_realizations=2, schemes=("sros",))
        rep = run_study(study)
        errs = dict(rep.errors("sros"))
        assert errs[1.0 / 32.0] == 0.0
        assert errs[1.0 / 8.0] > 0.0

    def test_errors_positive_and_decreasing(self):
        pcfg = tiny_problem_config()
        study = StudyConfig(problem=pcfg, dt_reference=1.0 / 128.0,
                            dt_list=(1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0),
                            n_realizations=6, schemes=("sros",))
        rep = run_study(study)
        errs = [e for _, e in rep.errors("sros")]
        assert all(e > 0.0 for e in errs)
        assert errs[0] > errs[-1]
        assert "sros" in rep.orders

    def test_worker_count_does_not_change_results(self):
        pcfg = tiny_problem_config()
        study1 = StudyConfig(problem=pcfg, dt_reference=1.0 / 64.0,
                             dt_list=(1.0 / 16.0, 1.0 / 8.0),
                             n_realizations=4, schemes=("sros",), workers=1)
        study2 = StudyConfig(problem=pcfg, dt_reference=1.0 / 64.0,
                             dt_list=(1.0 / 16.0, 1.0 / 8.0),
                             n_realizations=4, schemes=("sros",), workers=2)
        r1 = run_study(study1)
        r2 = run_study(study2)
        for s1, s2 in zip(r1.stats, r2.stats):
            assert s1.rms_error == s2.rms_error
            assert s1.error_samples == s2.error_samples

    def test_seed_partitioning(self):
        pcfg = tiny_problem_config()
        study = StudyConfig(problem=pcfg, dt_reference=1.0 / 32.0,
                            dt_list=(1.0 / 16.0,), n_realizations=5,
                            schemes=("sros",))
        rep = run_study(study)
        assert len(set(rep.seed_keys)) == 5

    def test_reference_is_independent_of_run_order(self):
        # no RNG state leaks between runs: integrating the reference before
        # and after the coarse runs gives bitwise-identical states
        problem = build_problem(tiny_problem_config())
        path = problem.sample_path(64, realization=0)
        fields = problem.noise_fields(path)

        def reference():
            ws = StepWorkspace(problem.M, problem.K, 1.0 / 64.0,
                               problem.drift, problem.diff, problem.xy,
                               load=problem.load)
            cfg = SchemeConfig("sros", 1.0 / 64.0, 1.0)
            return integrate(problem.x0, fields, cfg, ws).final

        before = reference()
        from rosenspde.noise import coarsen
        cfields = problem.noise_matrix @ coarsen(path, 4).increments
        ws = StepWorkspace(problem.M, problem.K, 1.0 / 16.0, problem.drift,
                           problem.diff, problem.xy, load=problem.load)
        integrate(problem.x0, cfields, SchemeConfig("sros", 1.0 / 16.0, 1.0), ws)
        after = reference()
        np.testing.assert_array_equal(before, after)

    def test_divergence_abort(self):
        # explicit scheme far beyond its stability limit: every coarse run
        # diverges, tripping the 10% abort threshold
        pcfg = tiny_problem_config(T=2.0)
        study = StudyConfig(problem=pcfg, dt_reference=1.0 / 512.0,
                            dt_list=(1.0 / 16.0,), n_realizations=2,
                            schemes=("explicit_em",))
        with pytest.raises(StudyAbort):
            run_study(study)

    def test_problem_is_picklable_for_workers(self):
        problem = build_problem(tiny_problem_config())
        blob = pickle.dumps(problem)
        clone = pickle.loads(blob)
        assert clone.n_free == problem.n_free
        np.testing.assert_array_equal(clone.noise_matrix, problem.noise_matrix)


class TestReports:
    def make_report(self):
        pcfg = tiny_problem_config()
        study = StudyConfig(problem=pcfg, dt_reference=1.0 / 64.0,
                            dt_list=(1.0 / 16.0, 1.0 / 8.0),
                            n_realizations=3, schemes=("sros",))
        return run_study(study)

    def test_timing_profile_rows(self):
        rep = self.make_report()
        rows = timing_profile(rep)
        assert len(rows) == 2
        for scheme, dt, err, cpu in rows:
            assert scheme == "sros"
            assert err > 0.0
            assert cpu > 0.0

    def test_csv_outputs(self, tmp_path):
        rep = self.make_report()
        write_report_csv(tmp_path / "report.csv", rep)
        write_plotdata_csv(tmp_path / "plot.csv", rep, "sros")
        write_timing_csv(tmp_path / "timing.csv", rep)
        head = (tmp_path / "report.csv").read_text().splitlines()
        assert head[0].startswith("scheme,dt,rms_error")
        assert len(head) == 3
        plot = (tmp_path / "plot.csv").read_text().splitlines()
        assert plot[0] == "log10_dt,log10_rms_error"
        assert len(plot) == 3
