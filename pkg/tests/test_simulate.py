import csv
import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from defacto import simulate
from defacto.errors import NoRoot, SingularFit, StudyFailed, ValidationError
from defacto.mvncore import MvnParams, conditional_regression
from defacto.simulate import (SimConfig, cell_keys, generate_trial, run_replicate, run_study, solve_tau0,
                              standard_scenarios)

from oracles import heterogeneity_cov

TINY = dict(n_per_arm=40, reps=3, m=3, burn_in=2)


class TestSolveTau0:
    def test_mcar(self):
        assert solve_tau0(0.0, 13.0, 9.0, 0.5) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("var", [9.0, 9.0 + 6.25])
    def test_mar_symmetric(self, var):
        assert solve_tau0(1.0, 13.0, var, 0.5) == pytest.approx(-13.0, abs=1e-10)

    def test_quadrature_oracle(self):
        # adaptive integration of the logistic-normal mean
        tau0 = solve_tau0(0.7, 11.0, 4.0, 0.3)
        f = lambda y: expit(tau0 + 0.7 * y) * stats.norm.pdf(y, 11.0, 2.0)
        val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13)
        assert val == pytest.approx(0.3, abs=1e-9)

    def test_bad_inputs(self):
        for target in (0.0, 1.0, 1.2):
            with pytest.raises(NoRoot):
                solve_tau0(1.0, 13.0, 9.0, target)
        with pytest.raises(ValueError):
            solve_tau0(1.0, 13.0, 0.0, 0.5)

    def test_config_property(self):
        assert SimConfig(tau1=1.0, heterogeneity_sd=2.5).tau0 == pytest.approx(-13.0, abs=1e-10)


class TestSimConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            SimConfig(heterogeneity_sd=-1.0)
        with pytest.raises(ValidationError):
            SimConfig(u_corrs=(0.5, 1.5))
        with pytest.raises(ValidationError):
            SimConfig(target_dropout=1.0)
        with pytest.raises(ValidationError):
            SimConfig(mu0=(1.0, 2.0))

    def test_standard_grid(self):
        names = [c.name for c in standard_scenarios(reps=5)]
        assert names == ["MCAR_homogeneous", "MCAR_heterogeneous", "MAR_homogeneous", "MAR_heterogeneous"]
        assert all(c.reps == 5 for c in standard_scenarios(reps=5))

    def test_cell_keys(self):
        keys = cell_keys(SimConfig())
        assert len(keys) == 22
        assert len(set(keys)) == 22
        assert ("C", "cov from active arm", "CR") in keys


class TestGenerateTrial:
    def test_variants_equal_without_heterogeneity(self):
        cfg = SimConfig(tau1=1.0)
        tr = generate_trial(cfg, np.random.default_rng(0))
        for k in cfg.k_values:
            np.testing.assert_array_equal(tr.complete[(k, "a")], tr.complete[(k, "b")])

    def test_variants_differ_with_heterogeneity(self):
        cfg = SimConfig(heterogeneity_sd=2.5)
        tr = generate_trial(cfg, np.random.default_rng(0))
        assert not np.array_equal(tr.complete[(0.5, "a")], tr.complete[(0.5, "b")])

    def test_untreated_baseline_shared(self):
        cfg = SimConfig(heterogeneity_sd=2.5, tau1=1.0)
        tr = generate_trial(cfg, np.random.default_rng(1))
        for key in tr.complete:
            d = tr.complete_dataset(key)
            np.testing.assert_array_equal(d.y[:, :2], tr.y_full[:, :2])
            obs = ~np.isnan(tr.observed.y[:, 2])
            np.testing.assert_array_equal(d.y[obs, 2], tr.observed.y[obs, 2])

    def test_observed_structure(self):
        tr = generate_trial(SimConfig(n_per_arm=100), np.random.default_rng(2))
        d = tr.observed
        assert d.n == 200
        assert not np.isnan(d.y[~d.is_active]).any()
        drop = d.is_active & (d.discontinuation == 1)
        assert np.isnan(d.y[drop, 2]).all()
        assert not np.isnan(d.y[~drop]).any()

    @pytest.mark.parametrize("tau1", [0.0, 1.0])
    def test_dropout_rate(self, tau1):
        cfg = SimConfig(n_per_arm=10_000, tau1=tau1)
        d = generate_trial(cfg, np.random.default_rng(3)).observed
        rate = np.mean(d.discontinuation[d.is_active] == 1)
        assert abs(rate - 0.5) < 3 * math.sqrt(0.25 / 10_000)

    def test_mar_dropout_depends_on_visit1(self):
        cfg = SimConfig(n_per_arm=5000, tau1=1.0)
        d = generate_trial(cfg, np.random.default_rng(4)).observed
        act = d.is_active
        drop = d.discontinuation[act] == 1
        assert d.y[act][drop, 1].mean() > d.y[act][~drop, 1].mean() + 2

    def test_heterogeneity_covariance(self):
        n = 100_000
        cfg = SimConfig(n_per_arm=n, heterogeneity_sd=2.5)
        tr = generate_trial(cfg, np.random.default_rng(5))
        y = tr.y_full[n:]
        emp = np.cov(y.T)
        target = heterogeneity_cov()
        d = np.diag(target)
        mcse = np.sqrt((target**2 + np.outer(d, d)) / n)
        assert np.all(np.abs(emp - target) < 3 * mcse)
        np.testing.assert_allclose(y.mean(axis=0), [10, 13, 16], atol=3 * np.sqrt(d.max() / n))
        beta = conditional_regression(MvnParams(np.zeros(3), target), 1).beta
        np.testing.assert_array_equal(np.round(beta, 2), [[-0.12, 0.74]])

    def test_partly_treated_regression(self):
        # variant a: regression of Y2(1) on (Y0, Y1(1)) is the untreated one,
        # (0, 0.5); variant b: the fully-treated one. MCAR, so the
        # discontinuers are a random subset
        n = 200_000
        cfg = SimConfig(n_per_arm=n, heterogeneity_sd=2.5, k_values=(0.5,))
        tr = generate_trial(cfg, np.random.default_rng(6))
        d = tr.observed
        drop = d.is_active & (d.discontinuation == 1)
        X = np.column_stack([np.ones(drop.sum()), d.y[drop, :2]])
        for v, expected in (("a", [0.0, 0.5]), ("b", [-14.0625 / 117, 86.625 / 117])):
            coef, *_ = np.linalg.lstsq(X, tr.complete[(0.5, v)][drop], rcond=None)
            np.testing.assert_allclose(coef[1:], expected, atol=0.02)


class TestRunner:
    def test_replicate_deterministic(self):
        cfg = SimConfig(**TINY)
        a = run_replicate(cfg, 0, 1)
        b = run_replicate(cfg, 0, 1)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert a[0].shape == (22,)
        c = run_replicate(cfg, 0, 2)
        assert not np.array_equal(a[0], c[0])

    def test_worker_count_does_not_matter(self):
        cfgs = standard_scenarios(**TINY)[:2]
        one = run_study(cfgs, workers=1)
        two = run_study(cfgs, workers=2)
        for s1, s2 in zip(one.scenarios, two.scenarios):
            np.testing.assert_array_equal(s1.estimates, s2.estimates)
            np.testing.assert_array_equal(s1.ses, s2.ses)

    def test_failures_recorded(self, monkeypatch):
        real = simulate.run_replicate

        def flaky(cfg, s_idx, rep, tau0=None):
            if rep == 1:
                raise SingularFit("forced")
            return real(cfg, s_idx, rep, tau0)

        monkeypatch.setattr(simulate, "run_replicate", flaky)
        cfg = SimConfig(**TINY)
        res = run_study([cfg], max_failure_rate=0.5)
        sc = res.scenarios[0]
        assert sc.n_ok == 2
        assert sc.failures[0][0] == 1
        assert "SingularFit" in sc.failures[0][1]
        with pytest.raises(StudyFailed):
            run_study([cfg], max_failure_rate=0.01)

    def test_summary_and_csv(self, tmp_path):
        res = run_study([SimConfig(name="tiny", **TINY)])
        rows = res.summary()
        assert len(rows) == 22
        for r in rows:
            assert r["mc_se_mean"] == pytest.approx(r["emp_se"] / math.sqrt(3))
            assert r["reps"] == 3
        cell = res["tiny"].cell("C", "cov from control arm", "J2R")
        assert cell["row"] == "J2R"
        files = res.write_csv(tmp_path)
        assert [f.name for f in files] == ["cells.csv", "means.csv", "standard_errors.csv", "failures.csv"]
        with open(tmp_path / "means.csv") as fh:
            t3 = list(csv.DictReader(fh))
        assert len(t3) == 22
        assert set(t3[0]) == {"scenario", "panel", "setting", "row", "mean", "mc_se_mean", "reps"}
        with pytest.raises(KeyError):
            res["missing"]
