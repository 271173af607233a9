import numpy as np
import pytest
from scipy.stats import pearsonr, spearmanr

from icsbi.backends import ContextSet
from icsbi.engine import log_prob_autoregressive, sample_posterior
from icsbi.ratio import (
    build_ratio_estimator,
    log_ratio_from_prob,
    ratio_log_density,
)
from icsbi.tasks import gaussian_linear_task, sample_joint, two_moons_task


class TestLogRatioIdentity:
    def test_half_maps_to_zero(self):
        assert log_ratio_from_prob(np.array([0.5]))[0] == 0.0

    def test_bayes_optimal_probability_recovers_density_differences(self):
        # p = f/(f+u) => log-ratio = log f - log u exactly, for any density f
        rng = np.random.default_rng(0)
        log_f = rng.normal(-3.0, 1.0, size=200)
        log_u = -1.7
        p = np.exp(log_f) / (np.exp(log_f) + np.exp(log_u))
        recovered = log_ratio_from_prob(p)
        np.testing.assert_allclose(recovered, log_f - log_u, rtol=1e-12)

    def test_extreme_probabilities_clamped_with_warning(self):
        with pytest.warns(UserWarning, match="clamped"):
            vals = log_ratio_from_prob(np.array([0.0, 1.0]))
        assert np.isfinite(vals).all()
        assert vals[0] == pytest.approx(-vals[1], rel=1e-9)


class TestBuildRatioEstimator:
    def test_equal_class_counts_and_default_size(self, backend):
        rng = np.random.default_rng(1)
        samples = rng.normal(0, 0.1, size=(6000, 2))
        est = build_ratio_estimator(samples, (-np.ones(2), np.ones(2)), backend, m_per_class=5000)
        labels = np.asarray(est.context.targets)
        assert (labels == 1.0).sum() == 5000
        assert (labels == 0.0).sum() == 5000
        assert est.n_clipped == 0

    def test_out_of_bounds_samples_clipped_with_warning(self, backend):
        rng = np.random.default_rng(2)
        samples = np.vstack([rng.normal(0, 0.1, size=(90, 2)), np.full((10, 2), 5.0)])
        with pytest.warns(UserWarning, match="outside the uniform bounds"):
            est = build_ratio_estimator(samples, (-np.ones(2), np.ones(2)), backend, m_per_class=100)
        assert est.n_clipped == 10
        labels = np.asarray(est.context.targets)
        assert (labels == 1.0).sum() == (labels == 0.0).sum() == 90

    def test_insufficient_samples_rejected(self, backend):
        with pytest.raises(ValueError, match="at least"):
            build_ratio_estimator(np.zeros((10, 2)), (-np.ones(2), np.ones(2)), backend, m_per_class=100)

    def test_log_uniform_constant(self, backend):
        rng = np.random.default_rng(3)
        est = build_ratio_estimator(
            rng.normal(0, 0.1, size=(50, 2)), (-np.ones(2), np.ones(2)), backend, m_per_class=50
        )
        assert est.log_uniform_density == pytest.approx(-np.log(4.0))


class TestRatioLogDensity:
    def test_uniform_posterior_indistinguishable(self, backend):
        # posterior equal to the contrast: probabilities stay in a band around 1/2
        rng = np.random.default_rng(4)
        lo, hi = -np.ones(2), np.ones(2)
        est = build_ratio_estimator(
            rng.uniform(lo, hi, size=(2000, 2)), (lo, hi), backend, m_per_class=2000, seed=5
        )
        vals = ratio_log_density(est, rng.uniform(lo, hi, size=(200, 2)))
        band = np.log(0.6 / 0.4)
        assert np.all(np.abs(vals) <= band)

    def test_out_of_bounds_points_are_minus_inf(self, backend):
        rng = np.random.default_rng(5)
        est = build_ratio_estimator(
            rng.normal(0, 0.2, size=(200, 2)), (-np.ones(2), np.ones(2)), backend, m_per_class=200
        )
        vals = ratio_log_density(est, np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert np.isfinite(vals[0])
        assert vals[1] == -np.inf

    def test_invariant_to_context_row_order(self, backend):
        rng = np.random.default_rng(6)
        est = build_ratio_estimator(
            rng.normal(0, 0.3, size=(300, 2)), (-np.ones(2) * 2, np.ones(2) * 2), backend, m_per_class=300
        )
        perm = rng.permutation(600)
        shuffled = ContextSet(
            features=est.context.features[perm], targets=np.asarray(est.context.targets)[perm]
        )
        est_perm = type(est)(
            context=shuffled,
            theta_min=est.theta_min,
            theta_max=est.theta_max,
            backend=backend,
            n_clipped=0,
        )
        pts = rng.normal(0, 0.3, size=(40, 2))
        np.testing.assert_array_equal(ratio_log_density(est, pts), ratio_log_density(est_perm, pts))

    def test_known_gaussian_classes_match_bayes_probability(self, backend):
        # contrast two known 2-D Gaussians; classifier probability should sit
        # within 0.1 of the analytic Bayes posterior probability
        from scipy.stats import norm

        rng = np.random.default_rng(7)
        m = 2000
        class1 = rng.standard_normal((m, 2))
        class0 = rng.standard_normal((m, 2)) + np.array([1.5, 0.0])
        ctx = ContextSet(
            features=np.vstack([class1, class0]),
            targets=np.concatenate([np.ones(m), np.zeros(m)]),
        )
        test = rng.standard_normal((100, 2)) * 0.8 + np.array([0.75, 0.0])
        _, probs = backend.classify_predict(ctx, test)
        lp1 = norm.logpdf(test).sum(axis=1)
        lp0 = norm.logpdf(test - np.array([1.5, 0.0])).sum(axis=1)
        bayes = 1.0 / (1.0 + np.exp(lp0 - lp1))
        assert np.max(np.abs(probs[:, 1] - bayes)) < 0.1

    def test_gaussian_linear_rank_agreement(self, backend):
        # rank ordering against the conjugate oracle density over 50 points
        task = gaussian_linear_task()
        rng = np.random.default_rng(8)
        theta_o = task.prior.sample(1, rng)[0]
        x_o = task.simulate(theta_o, rng)
        post_samples = task.analytic_posterior.sample(x_o, 5000, rng)
        est = build_ratio_estimator(
            post_samples, (task.prior.theta_min, task.prior.theta_max), backend,
            m_per_class=5000, seed=9,
        )
        pts = post_samples[:50]
        lr = ratio_log_density(est, pts)
        true_lp = task.analytic_posterior.log_prob(pts, x_o)
        assert spearmanr(lr, true_lp).statistic > 0.9

    @pytest.mark.slow
    def test_two_moons_tracks_autoregressive_evaluation(self, backend):
        # both evaluations describe the same backend posterior; the kernel
        # ratio context caps the agreement below the sharp-backend regime, so
        # the bar sits at strong-positive rather than the 0.8 of a sharp model
        task = two_moons_task()
        rng = np.random.default_rng(42)
        x_o = task.simulate(np.array([0.25, -0.35]), rng)
        data = sample_joint(task, 10_000, 900)
        post = sample_posterior(data, x_o, 2000, backend, seed=1)
        est = build_ratio_estimator(
            post.samples, (task.prior.theta_min, task.prior.theta_max), backend,
            m_per_class=2000, seed=2,
        )
        pts = post.samples[:150]
        lp_ratio = ratio_log_density(est, pts)
        lp_auto = log_prob_autoregressive(data, x_o, pts, backend)
        ok = np.isfinite(lp_auto) & np.isfinite(lp_ratio)
        assert ok.mean() > 0.9
        assert pearsonr(lp_ratio[ok], lp_auto[ok]).statistic > 0.65
