"""Model, prior, and signal declarations: pointwise values, derivative
consistency, regularity validators."""

import numpy as np
import pytest
from scipy.integrate import quad

from glmtilt.model import (
    DEFAULT_DELTA,
    RegularityError,
    SpecError,
    beta_prior,
    beta_signal,
    binomial_model,
    gaussian_prior,
    gaussian_signal,
    linear_model,
    logistic_model,
    model_from_name,
    point_mass_signal,
    prior_from_name,
    rademacher_signal,
    sigma_inv,
    signal_from_name,
    validate_model,
    validate_prior,
    validate_signal,
    zero_signal,
)


class TestLinearModel:
    def test_statistic_at_median_noise(self):
        m = linear_model()
        assert m.t_tilde(0.0, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_unit_slope_everywhere(self):
        m = linear_model()
        rng = np.random.default_rng(0)
        th = rng.standard_normal(50)
        e = rng.random(50)
        np.testing.assert_allclose(m.t_tilde_prime(th, e), 1.0)

    def test_log_normalizer_quadratic(self):
        m = linear_model()
        assert m.a(2.0) == pytest.approx(2.0)
        assert m.a_prime(2.0) == pytest.approx(2.0)
        assert m.a_double_prime(2.0) == pytest.approx(1.0)

    def test_outcome_is_shifted_gaussian(self):
        m = linear_model()
        rng = np.random.default_rng(1)
        e = rng.random(200_000)
        noise = m.outcome(np.zeros_like(e), e)
        assert abs(np.mean(noise)) < 3.0 / np.sqrt(e.size)
        assert np.var(noise) == pytest.approx(1.0, abs=0.02)


class TestLogisticModel:
    def test_half_at_threshold(self):
        m = logistic_model(DEFAULT_DELTA)
        for e in (0.1, 0.37, 0.9):
            assert m.t_tilde(sigma_inv(e), e) == pytest.approx(0.5, abs=1e-12)

    def test_log_normalizer_at_zero(self):
        m = logistic_model(DEFAULT_DELTA)
        assert m.a(0.0) == pytest.approx(np.log(2.0), abs=1e-12)
        assert m.a_double_prime(0.0) == pytest.approx(0.25, abs=1e-12)

    def test_statistic_derivative_integrates_to_unit_jump(self):
        # Independent quadrature of f_delta'; the smooth step rises by 1.
        delta = 0.01
        m = logistic_model(delta)
        e = 0.42
        c = sigma_inv(e)
        total, err = quad(lambda x: m.t_tilde_prime(x, e), c - 60 * delta,
                          c + 60 * delta, limit=200)
        assert err < 1e-9
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_indicator_limit_pointwise(self):
        delta = 1e-3
        m = logistic_model(delta)
        e = 0.3
        c = sigma_inv(e)
        for x in (c - 0.05, c - 10.1 * delta, c + 10.1 * delta, c + 0.31):
            ind = 1.0 if x >= c else 0.0
            assert abs(m.t_tilde(x, e) - ind) < 1e-8

    def test_overflow_safe_log_normalizer(self):
        m = logistic_model()
        assert m.a(800.0) == pytest.approx(800.0)
        assert m.a(-800.0) == pytest.approx(0.0, abs=1e-300)

    def test_rejects_bad_delta(self):
        with pytest.raises(SpecError):
            logistic_model(0.0)


class TestBinomialModel:
    def test_m1_reduces_to_logistic(self):
        delta = 1e-3
        mb = binomial_model(1, delta)
        ml = logistic_model(delta)
        rng = np.random.default_rng(2)
        xs = rng.uniform(-4, 4, 200)
        es = rng.random(200)
        np.testing.assert_allclose(mb.a(xs), ml.a(xs), atol=1e-12)
        np.testing.assert_allclose(mb.t_tilde(xs, es), ml.t_tilde(xs, es), atol=1e-12)

    def test_log_normalizer_scales_with_m(self):
        m = binomial_model(3)
        assert m.a(0.0) == pytest.approx(3.0 * np.log(2.0))

    def test_outcome_support(self):
        m = binomial_model(5)
        rng = np.random.default_rng(3)
        y = m.outcome(rng.uniform(-3, 3, 1000), rng.random(1000))
        assert np.all((y >= 0) & (y <= 5))
        assert np.all(y == np.round(y))

    def test_outcome_mean_matches_binomial(self):
        m = binomial_model(4)
        rng = np.random.default_rng(4)
        x = 0.7
        y = m.outcome(np.full(100_000, x), rng.random(100_000))
        p = 1.0 / (1.0 + np.exp(-x))
        assert np.mean(y) == pytest.approx(4 * p, abs=4 * np.sqrt(4 * p * (1 - p) / 100_000))

    def test_rejects_bad_m(self):
        with pytest.raises(SpecError):
            binomial_model(0)


class TestPriors:
    def test_gaussian_curvature_constant(self):
        p = gaussian_prior(1.0)
        xs = np.linspace(-5, 5, 11)
        np.testing.assert_allclose(p.log_density_double_prime(xs), -1.0)

    def test_beta22_curvature_at_half(self):
        p = beta_prior(2, 2)
        assert p.log_density_double_prime(0.5) == pytest.approx(-8.0)
        assert p.strong_concavity_eps == pytest.approx(8.0)

    def test_beta25_mode(self):
        p = beta_prior(2, 5)
        assert p.mode == pytest.approx(0.2)
        grid = np.linspace(1e-6, 1 - 1e-6, 20001)
        assert grid[np.argmax(p.log_density(grid))] == pytest.approx(0.2, abs=1e-3)

    def test_beta_rejects_boundary_params(self):
        for a, b in ((1.0, 2.0), (2.0, 1.0), (0.5, 3.0)):
            with pytest.raises(SpecError):
                beta_prior(a, b)

    def test_beta_eps_is_lower_bound(self):
        p = beta_prior(2, 5)
        grid = np.linspace(1e-9, 1 - 1e-9, 50001)
        assert np.all(-p.log_density_double_prime(grid) >= p.strong_concavity_eps * (1 - 1e-12))


class TestSignals:
    def test_second_moments_declared(self):
        rng = np.random.default_rng(5)
        for sig in (gaussian_signal(1.0), rademacher_signal(0.5),
                    beta_signal(2, 5), point_mass_signal([-1, 0, 2], [0.3, 0.2, 0.5]),
                    zero_signal()):
            validate_signal(sig, rng, n_draws=200_000)

    def test_beta25_second_moment_value(self):
        assert beta_signal(2, 5).second_moment == pytest.approx(6.0 / 56.0)

    def test_zero_signal(self):
        assert zero_signal().second_moment == 0.0
        assert np.all(zero_signal().sampler(np.random.default_rng(0), 5) == 0.0)


class TestRegistry:
    def test_round_trip_names(self):
        assert model_from_name("linear").name == "linear"
        assert model_from_name("logistic", 1e-3).params["delta"] == 1e-3
        assert model_from_name("binomial:3").params["m"] == 3
        assert prior_from_name("gauss:2").params["variance"] == 2.0
        assert prior_from_name("beta:2,5").params == {"a": 2.0, "b": 5.0}
        assert signal_from_name("rademacher:0.5").second_moment == 0.25
        assert signal_from_name("zero").second_moment == 0.0

    def test_unknown_names_rejected(self):
        for fn, bad in ((model_from_name, "probit"), (prior_from_name, "cauchy"),
                        (signal_from_name, "levy")):
            with pytest.raises(SpecError):
                fn(bad)


class TestValidators:
    """Regularity conditions hold for every built-in on randomized grids."""

    @pytest.mark.parametrize("make", [
        linear_model,
        lambda: logistic_model(1e-3),
        lambda: binomial_model(3, 1e-3),
    ])
    def test_models_pass(self, make):
        validate_model(make(), np.random.default_rng(6), n_points=100)

    @pytest.mark.parametrize("make", [
        lambda: gaussian_prior(1.0),
        lambda: gaussian_prior(0.25),
        lambda: beta_prior(2, 2),
        lambda: beta_prior(2, 5),
    ])
    def test_priors_pass(self, make):
        validate_prior(make(), np.random.default_rng(7), n_points=10_000)

    def test_validator_catches_wrong_derivative(self):
        m = linear_model()
        broken = m.__class__(**{**m.__dict__, "a_prime": lambda x: 2.0 * np.asarray(x)})
        with pytest.raises(RegularityError):
            validate_model(broken, np.random.default_rng(8))
