"""Prior sampling, exact posterior representations, the posterior
contraction harness, and the subgaussian-norm certificate.

Monte-Carlo assertions use frozen seeds; expected values come from closed
forms (polar integrals, conjugate updates) or quadrature oracles computed
inline."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from biclab.errors import (
    ContradictionError,
    InvalidInputError,
    PreconditionViolationError,
)
from biclab.geometry import ConvexBody
from biclab.priors import (
    AtomPrior,
    BernoulliSign,
    BetaBernoulliModel,
    CloudState,
    GaussianMeanModel,
    GaussianNoise,
    LinearPrior,
    Noiseless,
    NoiselessPointModel,
    condition,
    contraction_harness,
    hit_and_run,
    posterior_sample,
    sample_uniform_body,
    subgaussian_norm_estimate,
)


class TestSamplePrior:
    def test_gaussian_empirical_mean(self):
        rng = np.random.default_rng(10)
        prior = LinearPrior.gaussian(np.eye(2))
        s = prior.sample_n(rng, 100_000)
        tol = 3.0 / math.sqrt(100_000)
        assert np.all(np.abs(s.mean(axis=0)) <= tol)

    def test_uniform_disc_mean_norm(self):
        # polar integral: E[|l|] = int_0^1 r * 2r dr = 2/3
        rng = np.random.default_rng(11)
        prior = LinearPrior.uniform(ConvexBody.ball(2))
        s = prior.sample_n(rng, 100_000)
        assert np.mean(np.linalg.norm(s, axis=1)) == pytest.approx(2.0 / 3.0, abs=0.005)

    def test_uniform_box_mean(self):
        rng = np.random.default_rng(12)
        prior = LinearPrior.uniform(ConvexBody.box([-0.5, -1.0], [1.0, 1.0]))
        s = prior.sample_n(rng, 100_000)
        assert s.mean(axis=0) == pytest.approx([0.25, 0.0], abs=0.01)

    def test_scaled_body_prior(self):
        rng = np.random.default_rng(13)
        box = ConvexBody.box([-0.5, -1.0], [1.0, 1.0])
        prior = LinearPrior.uniform(box, scale=0.5)
        s = prior.sample_n(rng, 50_000)
        assert s.mean(axis=0) == pytest.approx([0.125, 0.0], abs=0.01)
        assert np.all(s[:, 0] <= 0.5 + 1e-12)

    def test_same_stream_same_sample(self):
        prior = LinearPrior.uniform(ConvexBody.ball(3))
        a = prior.sample(np.random.default_rng(99))
        b = prior.sample(np.random.default_rng(99))
        assert np.array_equal(a, b)

    def test_halfspace_rejection_matches_hit_and_run(self):
        # Two-sample mean comparison on an asymmetric polytope.
        rows = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
        offs = np.array([0.2, 0.2, 0.5])
        body = ConvexBody.halfspaces(rows, offs, regularity=0.1)
        rng = np.random.default_rng(14)
        a = sample_uniform_body(body, rng, 20_000, method="rejection")
        b = hit_and_run(body, rng, 20_000)
        for k in range(2):
            se = math.hypot(a[:, k].std() / math.sqrt(len(a)), b[:, k].std() / math.sqrt(len(b)))
            assert abs(a[:, k].mean() - b[:, k].mean()) <= 4.0 * se


class TestCondition:
    def test_gaussian_noiseless_coordinate(self):
        prior = LinearPrior.gaussian(np.eye(2))
        state = condition(prior, np.array([[1.0, 0.0]]), np.array([0.7]), Noiseless())
        assert state.mean() == pytest.approx([0.7, 0.0])
        assert np.diag(state.cov) == pytest.approx([0.0, 1.0], abs=1e-12)

    def test_conjugate_scalar_update_with_quadrature_oracle(self):
        prior = LinearPrior.gaussian([[1.0]])
        state = condition(prior, np.array([[1.0]]), np.array([1.0]), GaussianNoise(1.0))
        assert state.mean() == pytest.approx([0.5])
        assert state.cov[0, 0] == pytest.approx(0.5)
        # quadrature: posterior mean = int x phi(x) phi(1 - x) dx / normalizer
        num = quad(lambda x: x * norm.pdf(x) * norm.pdf(1.0 - x), -10, 10)[0]
        den = quad(lambda x: norm.pdf(x) * norm.pdf(1.0 - x), -10, 10)[0]
        assert state.mean()[0] == pytest.approx(num / den, abs=1e-9)
        second = quad(lambda x: x * x * norm.pdf(x) * norm.pdf(1.0 - x), -10, 10)[0]
        assert state.cov[0, 0] == pytest.approx(second / den - (num / den) ** 2, abs=1e-9)

    def test_uniform_noiseless_chord(self):
        prior = LinearPrior.uniform(ConvexBody.ball(2))
        state = condition(prior, np.array([[1.0, 0.0]]), np.array([0.0]), Noiseless())
        assert state.nullity == 1
        assert state.mean() == pytest.approx([0.0, 0.0], abs=1e-12)
        rng = np.random.default_rng(15)
        s = state.sample_n(rng, 100_000)
        assert np.all(np.abs(s[:, 0]) <= 1e-12)
        assert s[:, 1].mean() == pytest.approx(0.0, abs=0.01)

    def test_inconsistent_noiseless_observations_raise(self):
        prior = LinearPrior.uniform(ConvexBody.ball(2))
        x = np.array([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ContradictionError):
            condition(prior, x, np.array([0.3, 0.4]), Noiseless())
        gp = LinearPrior.gaussian(np.eye(2))
        with pytest.raises(ContradictionError):
            condition(gp, x, np.array([0.3, 0.4]), Noiseless())

    def test_slice_outside_body_raises(self):
        prior = LinearPrior.uniform(ConvexBody.ball(2))
        with pytest.raises(ContradictionError):
            condition(prior, np.array([[1.0, 0.0]]), np.array([1.5]), Noiseless())

    def test_particle_cloud_for_uniform_noisy(self):
        rng = np.random.default_rng(16)
        prior = LinearPrior.uniform(ConvexBody.ball(2))
        x = np.array([[1.0, 0.0]] * 5)
        rewards = np.full(5, 0.6)
        state = condition(prior, x, rewards, GaussianNoise(0.5), n_particles=20_000, rng=rng)
        assert isinstance(state, CloudState)
        assert state.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert state.ess > 100
        assert state.mean()[0] > 0.2

    def test_low_ess_flagged(self):
        rng = np.random.default_rng(17)
        prior = LinearPrior.uniform(ConvexBody.ball(2))
        x = np.array([[1.0, 0.0]] * 400)
        rewards = np.full(400, 0.9)
        state = condition(prior, x, rewards, GaussianNoise(0.05), n_particles=2000, rng=rng)
        assert state.low_ess

    def test_bernoulli_sign_cloud(self):
        rng = np.random.default_rng(18)
        prior = LinearPrior.gaussian(np.eye(2))
        x = np.array([[1.0, 0.0]] * 50)
        rewards = np.where(rng.random(50) < 0.8, 1.0, -1.0)
        state = condition(prior, x, rewards, BernoulliSign(), n_particles=20_000, rng=rng)
        assert state.mean()[0] > 0.0


class TestPosteriorSample:
    def test_degenerate_gaussian_returns_mean(self):
        from biclab.priors import GaussianState

        state = GaussianState([0.3, -0.2], np.zeros((2, 2)))
        rng = np.random.default_rng(19)
        for _ in range(5):
            assert posterior_sample(state, rng) == pytest.approx([0.3, -0.2])

    def test_single_particle_cloud(self):
        state = CloudState(np.array([[0.1, 0.9]]), np.array([0.0]))
        rng = np.random.default_rng(20)
        assert posterior_sample(state, rng) == pytest.approx([0.1, 0.9])

    def test_exchangeability_of_truth_and_posterior_sample(self):
        # (l*, sample) and (sample, l*) agree in distribution for the
        # conjugate pair; cross moments must match within MC error.
        rng = np.random.default_rng(21)
        n = 200_000
        truth = rng.standard_normal(n)
        obs = truth + rng.standard_normal(n)
        post_mean = obs / 2.0
        post = post_mean + rng.standard_normal(n) / math.sqrt(2.0)
        for f, g in (((lambda a: a**2), (lambda a: a)), ((lambda a: a**3), (lambda a: a))):
            x = f(truth) * g(post)
            y = f(post) * g(truth)
            se = math.hypot(x.std(), y.std()) / math.sqrt(n)
            assert abs(x.mean() - y.mean()) <= 5.0 * se


class TestContractionHarness:
    def test_beta_bernoulli_hoeffding(self):
        delta = 0.05
        eps = math.sqrt(math.log(2.0 / delta) / 200.0)
        rng = np.random.default_rng(22)
        rep = contraction_harness(BetaBernoulliModel(1, 1, 100), eps, delta, 100_000, rng)
        assert rep.hypothesis_ok
        assert rep.frequency <= 2.0 * delta + rep.ci99
        assert rep.passed

    def test_noiseless_estimator_has_zero_frequency(self):
        rng = np.random.default_rng(23)
        rep = contraction_harness(NoiselessPointModel(), 0.1, 0.01, 20_000, rng)
        assert rep.frequency == 0.0 and rep.passed

    def test_gaussian_mean_matches_quadrature_oracle(self):
        n_obs = 25
        eps = 0.4
        delta = 2.0 * norm.cdf(-eps * math.sqrt(n_obs))
        rng = np.random.default_rng(24)
        rep = contraction_harness(GaussianMeanModel(1.0, n_obs), eps, delta, 200_000, rng)
        assert rep.passed
        # Gauss-Hermite oracle for the unconditional 2-eps tail frequency.
        nodes, weights = np.polynomial.hermite_e.hermegauss(64)
        weights = weights / math.sqrt(2.0 * math.pi)
        post_var = 1.0 / (1.0 + n_obs)
        post_sd = math.sqrt(post_var)
        total = 0.0
        for xi, wx in zip(nodes, weights):
            m = xi + nodes / math.sqrt(n_obs)
            mu_p = n_obs * m * post_var
            tail = norm.cdf((xi - 2 * eps - mu_p) / post_sd) + norm.sf(
                (xi + 2 * eps - mu_p) / post_sd
            )
            total += wx * float(np.sum(weights * tail))
        assert rep.frequency == pytest.approx(total, abs=4.0 * rep.ci99 / 2.576)

    def test_hypothesis_violation_refused(self):
        # eps far too small for the sample size: the conditional tail
        # exceeds delta and the harness must refuse.
        rng = np.random.default_rng(25)
        with pytest.raises(PreconditionViolationError):
            contraction_harness(BetaBernoulliModel(1, 1, 100), 0.001, 0.05, 1000, rng)


class TestSubgaussianTailLemma:
    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_upper_tail_event_bound(self, delta):
        # worst case E chosen as the upper tail; closed form is phi(q).
        rng = np.random.default_rng(26)
        n = 400_000
        x = rng.standard_normal(n)
        q = norm.ppf(1.0 - delta)
        emp = float(np.mean(np.abs(x) * (x > q)))
        assert emp == pytest.approx(norm.pdf(q), rel=0.05)
        assert emp <= 3.0 * delta * math.sqrt(math.log(1.0 / delta))


class TestSubgaussianNorm:
    def test_standard_normal(self):
        rng = np.random.default_rng(27)
        x = rng.standard_normal(100_000)
        assert subgaussian_norm_estimate(x, [np.array([1.0])]) == pytest.approx(1.0, abs=0.1)

    def test_constant_zero(self):
        assert subgaussian_norm_estimate(np.zeros(10_000), [np.array([1.0])]) == 0.0

    def test_rademacher(self):
        rng = np.random.default_rng(28)
        x = rng.choice([-1.0, 1.0], size=100_000)
        est = subgaussian_norm_estimate(x, [np.array([1.0])])
        assert est <= 1.0 + 0.1

    def test_empty_directions_rejected(self):
        with pytest.raises(InvalidInputError):
            subgaussian_norm_estimate(np.zeros(100), [])


class TestCloudConvergence:
    def test_mc_error_scales_as_inverse_sqrt_particles(self):
        prior = LinearPrior.uniform(ConvexBody.ball(2))
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        rewards = np.array([0.3, -0.1, 0.25])
        sizes = [500, 1000, 2000, 4000, 8000]
        stds = []
        rng = np.random.default_rng(29)
        for n in sizes:
            means = [
                condition(prior, x, rewards, GaussianNoise(1.0), n_particles=n, rng=rng).mean()[0]
                for _ in range(48)
            ]
            stds.append(float(np.std(means)))
        slope = np.polyfit(np.log(sizes), np.log(stds), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.1)


class TestAtomPrior:
    def test_derived_constants(self):
        prior = AtomPrior(np.array([1.0, 2.0]), np.array([1.0, 2.0]), 1.0)
        assert prior.tau == pytest.approx(0.5)
        assert prior.sigma2 == pytest.approx(1.0 / 20.0)  # Beta(2,2) variance
        assert prior.means() == pytest.approx([0.5, 0.5])

    def test_zero_run_moments(self):
        prior = AtomPrior(np.array([1.0]), np.array([1.0]), 1.0)
        assert prior.zero_run_probability(0, 3) == pytest.approx(0.25)
        assert prior.mean_times_zero_run(0, 3) == pytest.approx(1.0 / 20.0)

    def test_tail_assumption_enforced(self):
        with pytest.raises(InvalidInputError):
            AtomPrior(np.array([5.0]), np.array([1.0]), 1.0)
        AtomPrior(np.array([5.0]), np.array([1.0]), 2.0)  # passes at alpha=2

    def test_positivity_enforced(self):
        with pytest.raises(InvalidInputError):
            AtomPrior(np.array([0.0]), np.array([1.0]), 1.0)
