"""Quadrature engine and seeded outer sampling."""

import numpy as np
import pytest

from glmtilt.integrate import (
    G_AND_E,
    Z_AND_BSTAR,
    IntegrationError,
    QuadratureGrid,
    locate_mode,
    expand_and_bisect_modes,
    make_outer_samples,
    moments_of_tilted_density,
    log_partition_of_tilted_density,
    simpson_grid,
    tilted_moments,
)
from glmtilt.model import gaussian_signal, beta_prior


class TestSimpsonGrid:
    def test_nodes_increasing_weights_sum(self):
        g = simpson_grid(-2.0, 3.0, 129)
        assert np.all(np.diff(g.nodes) > 0)
        assert np.sum(g.weights) == pytest.approx(5.0, rel=1e-14)

    def test_rejects_even_node_count(self):
        with pytest.raises(ValueError):
            simpson_grid(0, 1, 10)


class TestMomentsOfTiltedDensity:
    def test_standard_normal_mean(self):
        (m,) = moments_of_tilted_density(lambda x: -0.5 * x**2, [lambda x: x])
        assert abs(m) < 1e-10

    def test_standard_normal_variance(self):
        (m2,) = moments_of_tilted_density(lambda x: -0.5 * x**2, [lambda x: x**2])
        assert m2 == pytest.approx(1.0, abs=1e-8)

    def test_shifted_gaussian_mean(self):
        (m,) = moments_of_tilted_density(
            lambda x: -((x - 3.0) ** 2) / (2.0 * 0.25), [lambda x: x]
        )
        assert m == pytest.approx(3.0, abs=1e-8)

    def test_far_shifted_mode_found_from_origin(self):
        (m,) = moments_of_tilted_density(
            lambda x: -0.5 * (x - 40.0) ** 2, [lambda x: x]
        )
        assert m == pytest.approx(40.0, abs=1e-8)

    def test_gaussian_moments_to_1e8(self):
        # Spec invariant: any Gaussian log density recovers mean/variance to 1e-8.
        rng = np.random.default_rng(0)
        for _ in range(5):
            mu = rng.uniform(-5, 5)
            sd = rng.uniform(0.2, 3.0)
            mean, m2 = moments_of_tilted_density(
                lambda x: -0.5 * ((x - mu) / sd) ** 2,
                [lambda x: x, lambda x: (x - mu) ** 2],
            )
            assert mean == pytest.approx(mu, abs=1e-8 * max(1, abs(mu)))
            assert m2 == pytest.approx(sd**2, rel=1e-8)

    def test_truncated_support(self):
        # Beta(2,2)-weighted moments on (0,1): E[x] = 1/2, E[x^2] = 3/10.
        p = beta_prior(2, 2)
        mean, m2 = moments_of_tilted_density(
            p.log_density, [lambda x: x, lambda x: x**2],
            center=0.5, scale=0.2, support=(0.0, 1.0),
        )
        assert mean == pytest.approx(0.5, abs=1e-9)
        assert m2 == pytest.approx(0.3, abs=1e-9)

    def test_nan_weight_raises(self):
        with pytest.raises(IntegrationError):
            moments_of_tilted_density(
                lambda x: np.where(np.abs(x) < 0.5, np.nan, -0.5 * x**2),
                [lambda x: x],
            )

    def test_log_partition_gaussian(self):
        val = log_partition_of_tilted_density(lambda x: -0.5 * x**2)
        assert val == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-9)


class TestRefinement:
    def test_monotone_error_estimates(self):
        # Doubling never increases the inter-level change by more than 2x.
        from glmtilt.integrate import _simpson_pattern

        def simpson_est(n):
            x = np.linspace(-12, 12, n)
            w = np.exp(-0.5 * x**2)
            pat = _simpson_pattern(n)
            return ((x**2 * w) @ pat) / (w @ pat)

        ests = [simpson_est(n) for n in (17, 33, 65, 129, 257, 513)]
        diffs = [abs(b - a) for a, b in zip(ests, ests[1:])]
        for d_prev, d_next in zip(diffs, diffs[1:]):
            assert d_next <= 2.0 * d_prev + 1e-15

    def test_reported_error_below_tolerance(self):
        def evaluate(x):
            return -0.5 * x**2, [x, x**2]

        res = tilted_moments(evaluate, np.array([-12.0]), np.array([12.0]),
                             nodes_init=33, rel_tol=1e-8)
        assert np.max(res.err) < 1e-8
        assert res.moments[0, 1] == pytest.approx(1.0, abs=1e-8)

    def test_unreachable_tolerance_raises(self):
        def evaluate(x):
            return -0.5 * x**2, [x**2]

        with pytest.raises(IntegrationError):
            tilted_moments(evaluate, np.array([-12.0]), np.array([12.0]),
                           nodes_init=5, rel_tol=0.0, max_doublings=1)

    def test_batch_matches_scalar(self):
        mus = np.array([-2.0, 0.0, 1.5])

        def evaluate(x):
            return -0.5 * (x - mus[:, None]) ** 2, [x]

        res = tilted_moments(evaluate, mus - 12.0, mus + 12.0)
        np.testing.assert_allclose(res.moments[:, 0], mus, atol=1e-9)


class TestModeLocation:
    def test_bracketed_ascent_terminates(self):
        mode, s = locate_mode(lambda x: -0.5 * (x - 7.0) ** 2 / 4.0, center=0.0, scale=1.0)
        assert mode == pytest.approx(7.0, abs=1e-6)
        assert s == pytest.approx(2.0, rel=1e-3)

    def test_boundary_mode(self):
        # Monotone increasing on (0, 1): maximum at the right edge.
        mode, s = locate_mode(lambda x: 3.0 * x, center=0.5, scale=0.25,
                              support=(0.0, 1.0))
        assert mode == pytest.approx(1.0, abs=1e-6)

    def test_vectorized_bisection(self):
        mus = np.array([-3.0, 0.2, 5.0])

        def dlogw(x):
            return -(x - mus)

        modes = expand_and_bisect_modes(dlogw, np.zeros(3), 1.0)
        np.testing.assert_allclose(modes, mus, atol=1e-12)

    def test_bisection_respects_support(self):
        p = beta_prior(2, 5)

        def dlogw(b):
            return p.log_density_prime(b)

        modes = expand_and_bisect_modes(dlogw, np.full(4, 0.5), 0.25, support=(0.0, 1.0))
        np.testing.assert_allclose(modes, 0.2, atol=1e-10)


class TestOuterSamples:
    def test_empty_set(self):
        s = make_outer_samples(G_AND_E, 0, 123)
        assert s.count == 0 and s.xi_bstar.size == 0

    def test_same_seed_bit_identical(self):
        a = make_outer_samples(G_AND_E, 1000, 42)
        b = make_outer_samples(G_AND_E, 1000, 42)
        assert np.array_equal(a.xi_bstar, b.xi_bstar)
        assert np.array_equal(a.z_bbstar, b.z_bbstar)
        assert np.array_equal(a.e, b.e)
        c = make_outer_samples(Z_AND_BSTAR, 500, 7, signal=gaussian_signal())
        d = make_outer_samples(Z_AND_BSTAR, 500, 7, signal=gaussian_signal())
        assert np.array_equal(c.z, d.z) and np.array_equal(c.bstar, d.bstar)

    def test_clt_mean_bound(self):
        s = make_outer_samples(G_AND_E, 1_000_000, 11)
        assert abs(np.mean(s.xi_bstar)) < 0.004  # 3 / sqrt(n) with margin
        assert np.all((s.e >= 0) & (s.e < 1))

    def test_requires_signal_for_signal_kind(self):
        with pytest.raises(ValueError):
            make_outer_samples(Z_AND_BSTAR, 10, 0)

    def test_draws_read_only(self):
        s = make_outer_samples(G_AND_E, 10, 0)
        with pytest.raises(ValueError):
            s.e[0] = 0.5
