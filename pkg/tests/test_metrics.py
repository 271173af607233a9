import numpy as np
import pytest
from scipy.stats import norm

from icsbi.data import StandardizationStats
from icsbi.metrics import (
    SbcResult,
    c2st,
    distance_correlation_loss,
    energy_score,
    predictive_distance,
    sbc,
)


class TestC2st:
    def test_identical_distributions(self):
        rng = np.random.default_rng(0)
        pooled = rng.standard_normal((2000, 3))
        res = c2st(pooled[:1000], pooled[1000:], seed=1)
        assert 0.45 <= res.accuracy <= 0.55

    def test_separated_distributions(self):
        rng = np.random.default_rng(1)
        res = c2st(rng.normal(0, 1, (1000, 1)), rng.normal(10, 1, (1000, 1)), seed=2)
        assert res.accuracy >= 0.99

    def test_bayes_accuracy_unit_shift(self):
        # Bayes accuracy for N(0,1) vs N(1,1) is Phi(0.5) ~ 0.6915
        rng = np.random.default_rng(2)
        res = c2st(rng.normal(0, 1, (2000, 1)), rng.normal(1, 1, (2000, 1)), seed=3)
        assert res.accuracy == pytest.approx(norm.cdf(0.5), abs=0.05)

    def test_label_swap_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.normal(0, 1, (800, 2))
        b = rng.normal(0.4, 1, (800, 2))
        r1 = c2st(a, b, seed=4)
        r2 = c2st(b, a, seed=4)
        assert abs(r1.accuracy - r2.accuracy) < 0.02

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dimensionality"):
            c2st(np.zeros((10, 2)), np.zeros((10, 3)))

    def test_custom_classifier(self):
        def always_zero(train_x, train_y, test_x):
            return np.zeros(len(test_x), dtype=int)

        res = c2st(np.zeros((50, 1)), np.ones((50, 1)), classifier=always_zero)
        assert res.accuracy == pytest.approx(0.5)
        assert res.classifier == "always_zero"


class TestSbc:
    @staticmethod
    def _gaussian_setup():
        prior_sampler = lambda n, rng: rng.normal(0.0, 1.0, size=(n, 2))
        simulator = lambda theta, rng: theta + rng.standard_normal(2)
        return prior_sampler, simulator

    def test_prior_as_posterior_is_calibrated(self):
        prior_sampler, _ = self._gaussian_setup()
        simulator = lambda theta, rng: rng.standard_normal(2)  # ignores theta

        def posterior_sampler(x, n, seed):
            return np.random.default_rng(seed).normal(0.0, 1.0, size=(n, 2))

        res = sbc(prior_sampler, simulator, posterior_sampler, num_datasets=500, n_posterior_draws=100, seed=5)
        assert res.eod < 0.02

    def test_overconfident_sampler_has_large_eod(self):
        prior_sampler, simulator = self._gaussian_setup()

        def posterior_sampler(x, n, seed):
            # true posterior is N(x/2, 1/2); divide the std by 10
            rng = np.random.default_rng(seed)
            return rng.normal(np.asarray(x) / 2.0, np.sqrt(0.5) / 10.0, size=(n, 2))

        res = sbc(prior_sampler, simulator, posterior_sampler, num_datasets=300, n_posterior_draws=100, seed=6)
        assert res.eod > 0.1
        # U-shaped ranks: extremes hold more mass than the middle
        edges = np.mean((res.ranks <= 10) | (res.ranks >= 90))
        assert edges > 0.5

    def test_rank_permutation_invariance(self):
        prior_sampler, simulator = self._gaussian_setup()
        base = {}

        def make_sampler(permute):
            def posterior_sampler(x, n, seed):
                rng = np.random.default_rng(seed)
                draws = rng.normal(np.asarray(x) / 2.0, np.sqrt(0.5), size=(n, 2))
                if permute:
                    draws = draws[::-1]
                return draws

            return posterior_sampler

        r1 = sbc(prior_sampler, simulator, make_sampler(False), 50, 50, seed=7)
        r2 = sbc(prior_sampler, simulator, make_sampler(True), 50, 50, seed=7)
        np.testing.assert_array_equal(r1.ranks, r2.ranks)

    def test_too_few_draws_rejected(self):
        prior_sampler, simulator = self._gaussian_setup()
        with pytest.raises(ValueError, match="at least 10"):
            sbc(prior_sampler, simulator, lambda x, n, s: np.zeros((n, 2)), 10, 5)

    def test_zero_eod_means_diagonal_curves(self):
        levels = (np.arange(1, 101)) / 100
        res = SbcResult(
            ranks=np.tile(np.arange(101), (2, 1)).T,
            n_posterior_draws=100,
            levels=levels,
            curves=np.tile(levels, (2, 1)),
        )
        assert res.eod == 0.0


class TestEnergyScore:
    def test_samples_at_observation(self):
        x_o = np.array([1.0, 2.0])
        assert energy_score(np.tile(x_o, (5, 1)), x_o) == 0.0

    def test_gaussian_analytic_value(self):
        # E||Z|| = sqrt(2) Gamma((d+1)/2)/Gamma(d/2); score = (1 - 1/sqrt(2)) E||Z||
        from scipy.special import gamma as gamma_fn

        d = 3
        rng = np.random.default_rng(8)
        x_o = np.array([0.5, -1.0, 2.0])
        samples = x_o + rng.standard_normal((4000, d))
        e_norm = np.sqrt(2) * gamma_fn((d + 1) / 2) / gamma_fn(d / 2)
        expected = e_norm - 0.5 * np.sqrt(2) * e_norm
        assert energy_score(samples, x_o) == pytest.approx(expected, abs=0.05)

    def test_shift_monotonicity(self):
        rng = np.random.default_rng(9)
        x_o = np.zeros(2)
        samples = rng.standard_normal((500, 2))
        scores = [energy_score(samples + delta, x_o) for delta in (0.0, 1.0, 2.0, 4.0)]
        assert np.all(np.diff(scores) > 0)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(10)
        samples = rng.standard_normal((200, 3))
        x_o = rng.standard_normal(3)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        assert energy_score(samples @ q.T, q @ x_o) == pytest.approx(
            energy_score(samples, x_o), abs=1e-10
        )


class TestPredictiveDistance:
    def _identity_stats(self, d):
        return StandardizationStats(mean=np.zeros(d), std=np.ones(d))

    def test_zero_at_observation(self):
        x_o = np.array([1.0, 2.0])
        assert predictive_distance(np.tile(x_o, (4, 1)), x_o, self._identity_stats(2)) == 0.0

    def test_single_sample_distance(self):
        stats = self._identity_stats(2)
        assert predictive_distance(np.array([[3.0, 4.0]]), np.zeros(2), stats) == pytest.approx(5.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            samples = rng.standard_normal((30, 4))
            x_o = rng.standard_normal(4)
            mean = rng.standard_normal(4)
            std = rng.uniform(0.5, 2.0, 4)
            stats = StandardizationStats(mean=mean, std=std)
            manual = np.mean(
                [np.linalg.norm((s - mean) / std - (x_o - mean) / std) for s in samples]
            )
            assert predictive_distance(samples, x_o, stats) == pytest.approx(manual, rel=1e-12)

    def test_rotation_invariance_with_identity_stats(self):
        rng = np.random.default_rng(12)
        samples = rng.standard_normal((100, 3))
        x_o = rng.standard_normal(3)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        stats = self._identity_stats(3)
        assert predictive_distance(samples @ q.T, q @ x_o, stats) == pytest.approx(
            predictive_distance(samples, x_o, stats), abs=1e-10
        )


class TestDistanceCorrelationLoss:
    def test_embeddings_equal_parameters(self):
        rng = np.random.default_rng(13)
        a, b = rng.standard_normal((100, 3)), rng.standard_normal((100, 3))
        assert distance_correlation_loss(a, b, a, b) == pytest.approx(1.0, abs=1e-14)

    def test_constant_embeddings_error(self):
        rng = np.random.default_rng(14)
        a, b = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
        e = np.ones((50, 4))
        with pytest.raises(ValueError, match="zero-variance"):
            distance_correlation_loss(a, b, e, e)

    def test_independent_embeddings_concentrate(self):
        # loss -> E[d_t] E[d_e] / sqrt(E[d_t^2] E[d_e^2]) for independent pairs
        rng = np.random.default_rng(15)
        d_dim = 40
        a, b = rng.standard_normal((4000, d_dim)), rng.standard_normal((4000, d_dim))
        ea, eb = rng.standard_normal((4000, d_dim)), rng.standard_normal((4000, d_dim))
        loss = distance_correlation_loss(a, b, ea, eb)
        dt = np.linalg.norm(rng.standard_normal((100_000, d_dim)) - rng.standard_normal((100_000, d_dim)), axis=1)
        expected = dt.mean() ** 2 / (dt**2).mean()
        assert loss == pytest.approx(expected, abs=0.01)
