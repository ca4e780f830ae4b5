"""Bayesian fitters: priors, posteriors, standardization, and posterior behavior."""

import math

import numpy as np
import pytest

from conftest import fd_gradient, random_logit_data
from misclass_prev.bayes import (
    BecParameterBlock,
    Standardization,
    _posterior_fit_result,
    bc_log_posterior,
    bc_log_posterior_grad,
    bec_log_posterior,
    bec_log_posterior_grad,
    fit_bc,
    fit_bec,
    newman_prior_variance,
    standardize_design,
)
from misclass_prev.data_model import AssayProfile, build_design_matrix
from misclass_prev.likelihoods import logistic, std_loglik
from misclass_prev.mcmc import SamplerConfig, package_draws
from misclass_prev.mle import ModelTag, fit_liu, fit_std
from misclass_prev.simulate import CovariateSpec, SimScenario, simulate

QUICK = SamplerConfig(chains=2, warmup=400, samples=800, seed=3)


def misclassified_cohort_data(seed_words):
    """One synthetic cohort at desk scale: 5ish percent prevalence, known assay."""
    assay = AssayProfile(sensitivity=0.964, specificity=0.974)
    sc = SimScenario(
        n=10_000,
        beta_true=(-9.976701575668823, 0.14, 0.3, 2.5),
        assay_true=assay,
        covariates=("age", "sex", "other_sti"),
        covariate_spec=CovariateSpec(other_sti_rate=0.08),
        seed=0,
    )
    cohort, truth = simulate(sc, rng=np.random.default_rng(seed_words))
    X = build_design_matrix(cohort, columns=sc.covariates)
    y = np.array([r.observed_outcome for r in cohort.records], dtype=float)
    return y, X, truth, assay


class TestPriorVariance:
    def test_matches_closed_form(self):
        assert newman_prior_variance(8) == pytest.approx(math.pi**2 / 27.0, abs=1e-12)
        assert newman_prior_variance(8) == pytest.approx(0.365541, abs=1e-6)
        assert newman_prior_variance(0) == pytest.approx(math.pi**2 / 3.0, abs=1e-12)

    def test_rejects_negative_count(self):
        with pytest.raises(ValueError):
            newman_prior_variance(-1)

    def test_prior_term_is_independent_of_the_data(self):
        # the posterior minus the likelihood must be a pure function of
        # beta and the dimension, whatever data it is evaluated on
        rng = np.random.default_rng(8)
        y1, X1, _ = random_logit_data(rng, 60, 3)
        y2, X2, _ = random_logit_data(rng, 200, 3)
        beta = np.array([0.3, -1.2, 0.7])
        gap1 = bc_log_posterior(y1, X1, beta) - std_loglik(y1, X1, beta)[0]
        gap2 = bc_log_posterior(y2, X2, beta) - std_loglik(y2, X2, beta)[0]
        assert gap1 == pytest.approx(gap2, abs=1e-9)


class TestPosteriorGradients:
    def test_plain_model_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            y, X, _ = random_logit_data(rng, 80, 3)
            beta = rng.normal(scale=0.7, size=3)
            _, grad = bc_log_posterior_grad(y, X, beta)
            num = fd_gradient(lambda b: bc_log_posterior(y, X, b), beta)
            assert np.max(np.abs(grad - num) / np.maximum(1.0, np.abs(num))) < 1e-6

    def test_corrected_model_gradient_fixed_mode(self):
        rng = np.random.default_rng(16)
        assay = AssayProfile(sensitivity=0.9, specificity=0.95)
        for _ in range(10):
            y, X, _ = random_logit_data(rng, 80, 3)
            beta = rng.normal(scale=0.7, size=3)
            block = BecParameterBlock(beta=beta)
            _, grad = bec_log_posterior_grad(y, X, block, assay)
            num = fd_gradient(
                lambda b: bec_log_posterior(y, X, BecParameterBlock(beta=b), assay), beta
            )
            assert np.max(np.abs(grad - num) / np.maximum(1.0, np.abs(num))) < 1e-6

    def test_corrected_model_gradient_with_accuracy_priors(self):
        rng = np.random.default_rng(17)
        assay = AssayProfile.with_beta_priors(0.9, 0.92, se_prior_n=50, sp_prior_n=80)
        for _ in range(10):
            y, X, _ = random_logit_data(rng, 80, 3)
            theta = np.concatenate(
                [rng.normal(scale=0.7, size=3), [rng.uniform(0.8, 0.95), rng.uniform(0.85, 0.97)]]
            )

            def value_at(t):
                block = BecParameterBlock(beta=t[:3], se=t[3], sp=t[4])
                return bec_log_posterior(y, X, block, assay)

            block = BecParameterBlock(beta=theta[:3], se=theta[3], sp=theta[4])
            _, grad = bec_log_posterior_grad(y, X, block, assay)
            num = fd_gradient(value_at, theta)
            assert np.max(np.abs(grad - num) / np.maximum(1.0, np.abs(num))) < 1e-6

    def test_value_and_gradient_value_agree(self):
        rng = np.random.default_rng(18)
        y, X, _ = random_logit_data(rng, 50, 2)
        beta = np.array([0.2, -0.5])
        assert bc_log_posterior(y, X, beta) == pytest.approx(
            bc_log_posterior_grad(y, X, beta)[0], abs=1e-10
        )


class TestAccuracySupport:
    def test_density_is_minus_inf_outside_support(self):
        rng = np.random.default_rng(19)
        y, X, _ = random_logit_data(rng, 40, 2)
        assay = AssayProfile.with_beta_priors(0.9, 0.92)
        beta = np.zeros(2)
        for se, sp in [(0.3, 0.6), (1.2, 0.9), (0.9, -0.1), (0.55, 0.44)]:
            block = BecParameterBlock(beta=beta, se=se, sp=sp)
            assert bec_log_posterior(y, X, block, assay) == -np.inf

    def test_gradient_refuses_points_outside_support(self):
        rng = np.random.default_rng(20)
        y, X, _ = random_logit_data(rng, 40, 2)
        assay = AssayProfile.with_beta_priors(0.9, 0.92)
        block = BecParameterBlock(beta=np.zeros(2), se=0.3, sp=0.6)
        with pytest.raises(ValueError, match="outside the support"):
            bec_log_posterior_grad(y, X, block, assay)

    def test_block_and_mode_must_agree(self):
        rng = np.random.default_rng(21)
        y, X, _ = random_logit_data(rng, 40, 2)
        fixed = AssayProfile(sensitivity=0.9, specificity=0.95)
        with_priors = AssayProfile.with_beta_priors(0.9, 0.95)
        with pytest.raises(ValueError, match="leave them unset"):
            bec_log_posterior(y, X, BecParameterBlock(beta=np.zeros(2), se=0.9, sp=0.95), fixed)
        with pytest.raises(ValueError, match="requires sampled"):
            bec_log_posterior(y, X, BecParameterBlock(beta=np.zeros(2)), with_priors)


class TestStandardization:
    def test_preserves_predictions(self):
        rng = np.random.default_rng(22)
        n = 120
        X = np.column_stack(
            [
                np.ones(n),
                rng.normal(40.0, 12.0, size=n),
                (rng.random(n) < 0.4).astype(float),
            ]
        )
        Xs, tr, _ = standardize_design(X, ("intercept", "age", "sex"))
        beta_std = np.array([-1.0, 0.8, 0.4])
        np.testing.assert_allclose(Xs @ beta_std, X @ tr.undo_beta(beta_std), atol=1e-10)

    def test_leaves_intercept_and_dummies_alone(self):
        rng = np.random.default_rng(23)
        n = 60
        dummy = (rng.random(n) < 0.3).astype(float)
        X = np.column_stack([np.ones(n), dummy, rng.normal(5.0, 2.0, size=n)])
        Xs, tr, _ = standardize_design(X, ("intercept", "msm", "age"))
        np.testing.assert_array_equal(Xs[:, 0], X[:, 0])
        np.testing.assert_array_equal(Xs[:, 1], X[:, 1])
        assert tr.indices == (2,)
        assert abs(Xs[:, 2].mean()) < 1e-12
        assert Xs[:, 2].std(ddof=0) == pytest.approx(1.0, abs=1e-12)

    def test_skips_constant_columns(self):
        n = 30
        X = np.column_stack([np.ones(n), np.full(n, 7.0)])
        Xs, tr, _ = standardize_design(X, ("intercept", "age"))
        assert tr.indices == ()
        np.testing.assert_array_equal(Xs, X)

    def test_undo_beta_broadcasts_over_draw_arrays(self):
        tr = Standardization(indices=(1,), means=(40.0,), sds=(12.0,))
        draws = np.random.default_rng(24).standard_normal((2, 5, 2))
        undone = tr.undo_beta(draws)
        for c in range(2):
            for i in range(5):
                np.testing.assert_allclose(undone[c, i], tr.undo_beta(draws[c, i]), atol=1e-12)


class TestPlainPosterior:
    def test_prior_shrinks_large_coefficients_toward_zero(self):
        rng = np.random.default_rng(12)
        n = 80
        x1 = rng.standard_normal(n)
        y = (rng.random(n) < logistic(-0.3 + 3.0 * x1)).astype(float)
        X = np.column_stack([np.ones(n), x1])
        mle = fit_std(y, X)
        fit, _ = fit_bc(y, X, config=QUICK)
        assert fit.converged
        assert abs(fit.beta_hat[1]) < abs(mle.beta_hat[1])
        assert abs(fit.beta_hat[1]) > 0.5 * abs(mle.beta_hat[1])

    def test_same_seed_reproduces_posterior_exactly(self):
        rng = np.random.default_rng(25)
        y, X, _ = random_logit_data(rng, 100, 2)
        cfg = SamplerConfig(chains=2, warmup=200, samples=200, seed=5)
        _, d1 = fit_bc(y, X, config=cfg)
        _, d2 = fit_bc(y, X, config=cfg)
        np.testing.assert_array_equal(d1.draws, d2.draws)

    def test_reports_model_tag_and_draw_budget(self):
        rng = np.random.default_rng(26)
        y, X, _ = random_logit_data(rng, 100, 2)
        fit, draws = fit_bc(y, X, config=QUICK)
        assert fit.model_tag is ModelTag.BC
        assert fit.iterations == QUICK.chains * QUICK.samples
        assert draws.param_names == ("x0", "x1")


class TestCorrectedPosterior:
    def test_perfect_fixed_assay_matches_plain_posterior(self):
        # with sensitivity = specificity = 1 the corrected likelihood
        # collapses to the plain one, so equal seeds and budgets must
        # give draw sets that are indistinguishable per parameter
        rng = np.random.default_rng(12)
        n = 80
        x1 = rng.standard_normal(n)
        y = (rng.random(n) < logistic(-0.3 + 3.0 * x1)).astype(float)
        X = np.column_stack([np.ones(n), x1])
        cfg = SamplerConfig(chains=2, warmup=400, samples=800, seed=99)
        _, d_plain = fit_bc(y, X, config=cfg)
        _, d_corr = fit_bec(y, X, AssayProfile(sensitivity=1.0, specificity=1.0), config=cfg)
        for j in range(2):
            a = np.sort(d_plain.flat()[:, j])
            b = np.sort(d_corr.flat()[:, j])
            grid = np.concatenate([a, b])
            ks = np.max(
                np.abs(
                    np.searchsorted(a, grid, side="right") / a.size
                    - np.searchsorted(b, grid, side="right") / b.size
                )
            )
            assert ks < 0.05

    def test_recovers_latent_prevalence_where_plain_model_cannot(self):
        y, X, truth, assay = misclassified_cohort_data([6, 0, 0])
        target = float(np.mean(truth.pi))
        cfg = SamplerConfig(chains=2, warmup=600, samples=1000, seed=606)

        fit_corr, d_corr = fit_bec(y, X, assay, config=cfg)
        assert fit_corr.converged
        corr_prev = float(logistic(d_corr.flat() @ X.matrix.T).mean())
        assert abs(corr_prev - target) < 0.005

        fit_plain, d_plain = fit_bc(y, X, config=cfg)
        assert fit_plain.converged
        plain_prev = float(logistic(d_plain.flat() @ X.matrix.T).mean())
        # the uncorrected posterior tracks the observed rate, which sits
        # (1 - sp)(1 - p) - (1 - se) p above the truth, about +0.023 here
        assert 0.015 < plain_prev - target < 0.031

    def test_intercept_spread_is_tighter_than_joint_mle(self):
        y, X, _, assay = misclassified_cohort_data([6, 0, 0])
        cfg = SamplerConfig(chains=2, warmup=600, samples=1000, seed=606)
        _, d_corr = fit_bec(y, X, assay, config=cfg)
        liu = fit_liu(y, X)
        assert liu.converged
        posterior_sd = float(d_corr.flat()[:, 0].std(ddof=1))
        assert posterior_sd < liu.beta_se[0]

    def test_accuracy_priors_add_named_parameters_inside_support(self):
        rng = np.random.default_rng(30)
        y, X, _ = random_logit_data(rng, 400, 2, beta=np.array([-1.5, 0.8]))
        assay = AssayProfile.with_beta_priors(0.9, 0.92, se_prior_n=200, sp_prior_n=200)
        fit, draws = fit_bec(y, X, assay, config=QUICK)
        assert draws.param_names[-2:] == ("sensitivity", "specificity")
        se_draws = draws.flat()[:, -2]
        sp_draws = draws.flat()[:, -1]
        assert np.all((se_draws > 0.0) & (se_draws < 1.0))
        assert np.all((sp_draws > 0.0) & (sp_draws < 1.0))
        assert np.all(se_draws + sp_draws > 1.0)
        assert fit.beta_hat.shape == (2,)

    def test_overwhelming_priors_pin_accuracy_at_stated_values(self):
        rng = np.random.default_rng(31)
        y, X, _ = random_logit_data(rng, 300, 2, beta=np.array([-1.0, 0.5]))
        assay = AssayProfile.with_beta_priors(0.964, 0.974, se_prior_n=1e6, sp_prior_n=1e6)
        _, draws = fit_bec(y, X, assay, config=QUICK)
        assert float(draws.flat()[:, -2].mean()) == pytest.approx(0.964, abs=0.003)
        assert float(draws.flat()[:, -1].mean()) == pytest.approx(0.974, abs=0.003)

    def test_requires_an_assay_profile(self):
        rng = np.random.default_rng(32)
        y, X, _ = random_logit_data(rng, 40, 2)
        with pytest.raises(TypeError, match="AssayProfile"):
            fit_bec(y, X, (0.9, 0.95), config=QUICK)


class TestConvergenceGate:
    def test_unmixed_chains_are_flagged(self):
        rng = np.random.default_rng(33)
        apart = np.stack(
            [rng.standard_normal((300, 2)), rng.standard_normal((300, 2)) + 8.0]
        )
        draws = package_draws(apart, ("beta0", "beta1"))
        fit = _posterior_fit_result(ModelTag.BC, draws, 2, -10.0, ("beta0", "beta1"))
        assert not fit.converged
        assert "chains not mixed" in fit.condition_warning

    def test_mixed_chains_pass(self):
        rng = np.random.default_rng(34)
        ok = rng.standard_normal((2, 500, 2))
        draws = package_draws(ok, ("beta0", "beta1"))
        fit = _posterior_fit_result(ModelTag.BEC, draws, 2, -10.0, ("beta0", "beta1"))
        assert fit.converged
        assert fit.condition_warning is None
