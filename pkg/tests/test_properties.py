"""Randomised invariants checked with hypothesis."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from defacto.data import TrialDataset
from defacto.estimands import DiscontinuationDistribution, MIResult, defacto_closed_form, rubin_pool
from defacto.estimation import DeJureEstimates, fit_mar_mvn
from defacto.imputer import KSpec, MethodSpec, draw_parameters, imputation_mean, impute_dataset, innovations
from defacto.mvncore import MvnParams, conditional_regression
from defacto.simulate import solve_tau0

from conftest import simulate_trial
from oracles import partitioned_inverse_regression

seeds = st.integers(0, 2**32 - 1)
fast = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def pd_matrix(rng, p):
    A = rng.standard_normal((p, p))
    return A @ A.T + 0.5 * p * np.eye(p)


@fast
@given(seed=seeds, p=st.integers(3, 6), data=st.data())
def test_first_column_of_K_has_no_effect(seed, p, data):
    rng = np.random.default_rng(seed)
    t = data.draw(st.integers(0, p - 2))
    ref = MvnParams(rng.normal(10, 2, p), pd_matrix(rng, p))
    act_mean = rng.normal(12, 2, p)
    act_mean[0] = ref.mean[0]
    act = MvnParams(act_mean, pd_matrix(rng, p))
    M = rng.normal(size=(p - 1 - t, t + 1))
    M2 = M.copy()
    M2[:, 0] = rng.normal(0, 5, p - 1 - t)
    y = rng.normal(10, 3, t + 1)
    src = data.draw(st.sampled_from(["reference", "active"]))
    a = imputation_mean(MethodSpec("Causal", KSpec("full_matrix", matrices={t: M}), cov_source=src), ref, act, y, t)
    b = imputation_mean(MethodSpec("Causal", KSpec("full_matrix", matrices={t: M2}), cov_source=src), ref, act, y, t)
    np.testing.assert_allclose(a, b, atol=1e-12)


@fast
@given(seed=seeds, p=st.integers(3, 6), src=st.sampled_from(["reference", "active"]), data=st.data())
def test_reference_methods_are_causal_special_cases(seed, p, src, data):
    rng = np.random.default_rng(seed)
    t = data.draw(st.integers(0, p - 2))
    ref = MvnParams(rng.normal(10, 2, p), pd_matrix(rng, p))
    act = MvnParams(rng.normal(12, 2, p), pd_matrix(rng, p))
    y = rng.normal(10, 3, (3, t + 1))

    def mu(name, kspec=None):
        return imputation_mean(MethodSpec(name, kspec, cov_source=src), ref, act, y, t)

    beta = conditional_regression(ref if src == "reference" else act, t).beta
    np.testing.assert_allclose(mu("J2R"), mu("Causal", KSpec(k0=0.0)), atol=1e-12)
    np.testing.assert_allclose(mu("CIR"), mu("Causal", KSpec(k0=1.0)), atol=1e-12)
    np.testing.assert_allclose(mu("CR"), mu("Causal", KSpec("full_matrix", matrices={t: beta})), atol=1e-12)


@fast
@given(seed=seeds, p=st.integers(3, 6), data=st.data())
def test_conditional_regression_matches_precision_form(seed, p, data):
    rng = np.random.default_rng(seed)
    S = pd_matrix(rng, p)
    t = data.draw(st.integers(0, p - 2))
    reg = conditional_regression(MvnParams(np.zeros(p), S), t)
    b, r = partitioned_inverse_regression(S, t)
    np.testing.assert_allclose(reg.beta, b, atol=1e-10)
    np.testing.assert_allclose(reg.residual_cov, r, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(seed=seeds, gaps=st.sampled_from([0.0, 0.15]), T=st.integers(2, 3),
       method=st.sampled_from(["MAR", "LMCF", "J2R", "CIR", "CR", "Causal"]))
def test_imputation_keeps_observed_values(seed, gaps, T, method):
    d = simulate_trial(30, seed=seed % 10_000, gaps=gaps, T=T)
    out = impute_dataset(d, MethodSpec(method), 2, seed=seed, burn_in=2)
    obs = ~d.missing
    for y in out.completed:
        assert not np.isnan(y).any()
        np.testing.assert_array_equal(y[obs], d.y[obs])


@settings(max_examples=10, deadline=None)
@given(seed=seeds)
def test_draws_do_not_depend_on_how_many_are_requested(seed):
    d = simulate_trial(30, seed=seed % 1000, gaps=0.1, T=3)
    few = draw_parameters(d, 2, seed=seed, burn_in=2)
    more = draw_parameters(d, 4, seed=seed, burn_in=2)
    for j in range(2):
        np.testing.assert_array_equal(few[j]["active"].params.cov, more[j]["active"].params.cov)
    np.testing.assert_array_equal(innovations(d, 2, seed), innovations(d, 4, seed)[:2])


@settings(max_examples=15, deadline=None)
@given(seed=seeds, gaps=st.floats(0.0, 0.3))
def test_em_loglik_never_decreases(seed, gaps):
    d = simulate_trial(40, seed=seed % 10_000, gaps=gaps, T=3, mar=True)
    fit = fit_mar_mvn(d, "active")
    tr = np.array(fit.trace)
    assert np.all(np.diff(tr) >= -1e-9 * np.abs(tr[1:]))


@fast
@given(mean=st.floats(-50, 50), var=st.floats(0.01, 100), tau1=st.floats(-3, 3))
def test_half_dropout_intercept_is_minus_tau1_mean(mean, var, tau1):
    assert abs(solve_tau0(tau1, mean, var, 0.5) + tau1 * mean) <= 1e-9 * max(1.0, abs(tau1 * mean))


@fast
@given(est=st.lists(st.floats(-10, 10), min_size=2, max_size=30), data=st.data())
def test_rubin_total_variance_identity(est, data):
    var = data.draw(st.lists(st.floats(1e-3, 10), min_size=len(est), max_size=len(est)))
    r = rubin_pool(MIResult(est, var))
    assert r.total_var == r.within + (1 + 1 / r.m) * r.between
    assert r.between >= 0 and r.within > 0


@fast
@given(d1=st.floats(-5, 5), d2=st.floats(-5, 5), a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_closed_form_affine_in_k0(d1, d2, a, b):
    w = np.array([1 - a, a * b, a * (1 - b)])
    w = w / w.sum()
    alpha = DiscontinuationDistribution(w)
    dj = DeJureEstimates(np.array([d1, d2]), np.ones(2), np.eye(2), 0.0, True)
    e = [defacto_closed_form(dj, alpha, KSpec(k0=k)).estimate for k in (0.0, 0.5, 1.0)]
    slope = w[0] * 0.0 + w[1] * d1
    assert abs((e[2] - e[0]) - slope) <= 1e-12 * max(1.0, abs(slope)) + 1e-12
    assert abs(e[1] - 0.5 * (e[0] + e[2])) <= 1e-12 * max(1.0, abs(e[1]))


@settings(max_examples=10, deadline=None)
@given(seed=seeds)
def test_row_order_does_not_change_imputations(seed):
    d = simulate_trial(25, seed=seed % 1000)
    perm = np.random.default_rng(seed).permutation(d.n)
    dp = TrialDataset(d.visit_times, d.subject_ids[perm], d.arm[perm], d.y[perm], d.discontinuation[perm])
    a = impute_dataset(d, MethodSpec("CIR"), 2, seed=seed, uncertainty="none").completed
    b = impute_dataset(dp, MethodSpec("CIR"), 2, seed=seed, uncertainty="none").completed
    np.testing.assert_allclose(b, a[:, perm], atol=1e-10)
