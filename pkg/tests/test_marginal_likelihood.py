"""
Tests for the robust-prior Bayes factors and the mixing density of g.
"""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from exceptions import ContractError, DomainError, PerfectFitError, QuadratureError, ValidationError
from marginal_likelihood import (QuadratureConfig, RobustHyper, conditional_log_bf, g_cdf,
                                 g_log_density, robust_log_bf, robust_log_bf_batch, sample_g)
from model_space import SufficientStats


def make_stats(n, k, r2):
    return SufficientStats(n=n, k=k, sst=1.0, sse=1.0 - r2, r2=r2)


def oracle_log_bf(n, k, r2, h):
    """
    Adaptive QUADPACK integration in v = log((g + b) / (rho (b + n))), where
    the mixing density becomes a exp(-a v) on (0, inf).
    """
    if k == 0:
        return 0.0

    def log_integrand(v):
        g = h.scale * math.exp(v) - h.b
        return (0.5 * (n - 1 - k) * math.log1p(g) - 0.5 * (n - 1) * math.log1p(g * (1.0 - r2))
                + math.log(h.a) - h.a * v)

    grid = np.linspace(0.0, 60.0, 6001)
    values = np.array([log_integrand(v) for v in grid])
    shift = values.max()
    peak = grid[np.argmax(values)]

    def integrand(v):
        return math.exp(log_integrand(v) - shift)

    options = dict(epsabs=0.0, epsrel=1e-12, limit=500)
    pieces = [integrate.quad(integrand, 0.0, peak, **options)[0] if peak > 0 else 0.0,
              integrate.quad(integrand, peak, peak + 40.0, **options)[0],
              integrate.quad(integrand, peak + 40.0, peak + 240.0, **options)[0]]
    return shift + math.log(sum(pieces))


class TestRobustHyper:

    def test_recommended_defaults(self):
        h = RobustHyper.recommended(n=13, d=4)
        assert (h.a, h.b, h.rho, h.n) == (0.5, 1.0, 0.2, 13)
        assert h.lower_bound == pytest.approx(0.2 * 14 - 1)

    def test_rho_lower_limit(self):
        with pytest.raises(ValidationError) as info:
            RobustHyper(a=0.5, b=1.0, rho=0.01, n=20)
        assert info.value.context["flag"] == "--rho"

    def test_rho_at_limit_gives_zero_bound(self):
        h = RobustHyper(a=0.5, b=1.0, rho=1.0 / 21.0, n=20)
        assert h.lower_bound == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("field, value", [("a", 0.0), ("b", -1.0)])
    def test_positive_parameters(self, field, value):
        kwargs = dict(a=0.5, b=1.0, rho=0.5, n=20)
        kwargs[field] = value
        with pytest.raises(ValidationError):
            RobustHyper(**kwargs)

    def test_with_n(self):
        h = RobustHyper.recommended(n=47, d=15).with_n(40)
        assert h.n == 40 and h.rho == pytest.approx(1 / 16)


class TestMixingDensity:

    def test_density_matches_cdf(self):
        h = RobustHyper.recommended(n=30, d=5)
        for upper in (h.lower_bound + 1.0, 50.0, 1000.0):
            total, _ = integrate.quad(lambda g: math.exp(g_log_density(g, h)), h.lower_bound, upper,
                                      epsabs=0.0, epsrel=1e-10, limit=200)
            assert total == pytest.approx(g_cdf(upper, h), rel=1e-8)

    def test_density_zero_below_support(self):
        h = RobustHyper.recommended(n=30, d=5)
        assert g_log_density(h.lower_bound - 1e-6, h) == -np.inf
        assert np.isfinite(g_log_density(h.lower_bound, h))
        assert g_cdf(h.lower_bound - 1.0, h) == 0.0

    def test_sampler_inverts_cdf(self):
        h = RobustHyper.recommended(n=50, d=10)
        u = np.linspace(0.01, 1.0, 100)
        np.testing.assert_allclose(g_cdf(sample_g(u, h), h), 1.0 - u, atol=1e-12)
        assert sample_g(1.0, h) == pytest.approx(h.lower_bound, abs=1e-12)

    def test_sampler_distribution(self):
        h = RobustHyper.recommended(n=30, d=3)
        u = 1.0 - np.random.default_rng(5).random(5000)
        result = stats.kstest(sample_g(u, h), lambda g: g_cdf(g, h))
        assert result.pvalue > 0.001

    @pytest.mark.parametrize("u", [0.0, -0.5, 1.5])
    def test_sampler_domain(self, u):
        with pytest.raises(DomainError):
            sample_g(u, RobustHyper.recommended(n=30, d=3))


class TestConditionalBayesFactor:

    def test_null_model_is_zero(self):
        assert conditional_log_bf(make_stats(30, 0, 0.0), 5.0) == 0.0

    def test_zero_r2(self):
        g = np.array([0.5, 3.0, 40.0])
        np.testing.assert_allclose(conditional_log_bf(make_stats(30, 3, 0.0), g), -1.5 * np.log1p(g))

    def test_g_zero(self):
        assert conditional_log_bf(make_stats(30, 3, 0.4), 0.0) == 0.0

    def test_negative_g(self):
        with pytest.raises(DomainError):
            conditional_log_bf(make_stats(30, 3, 0.4), -0.1)

    @pytest.mark.parametrize("g", [0.5, 3.0, 40.0])
    def test_matches_direct_integration_over_beta(self, g):
        # one covariate, flat intercept, 1/phi on phi: both marginals reduce to
        # gamma integrals over phi, leaving a one-dimensional integral over beta
        n = 6
        x = np.array([0.3, -1.2, 0.8, 2.1, -0.4, 1.0])
        y = np.array([1.1, -0.7, 0.9, 2.6, 0.2, 0.4])
        xc, yc = x - x.mean(), y - y.mean()
        sxx, sxy, sst = xc @ xc, xc @ yc, yc @ yc
        r2 = sxy ** 2 / (sxx * sst)

        def q_to_power(beta):
            q = sst - 2.0 * beta * sxy + beta ** 2 * sxx * (1.0 + 1.0 / g)
            return q ** (-n / 2)

        integral, _ = integrate.quad(q_to_power, -np.inf, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
        log_full = 0.5 * math.log(sxx / (2.0 * math.pi * g)) + special.gammaln(n / 2) + (n / 2) * math.log(2.0) \
            + math.log(integral)
        log_null = special.gammaln((n - 1) / 2) + ((n - 1) / 2) * math.log(2.0) - ((n - 1) / 2) * math.log(sst)

        model = SufficientStats(n=n, k=1, sst=sst, sse=sst * (1.0 - r2), r2=r2)
        assert conditional_log_bf(model, g) == pytest.approx(log_full - log_null, rel=1e-8, abs=1e-8)


class TestRobustBayesFactor:

    def test_null_model_is_exactly_zero(self):
        h = RobustHyper.recommended(n=30, d=5)
        values = robust_log_bf_batch(30, np.array([0, 0, 2]), np.array([0.0, 0.0, 0.3]), h)
        assert values[0] == 0.0 and values[1] == 0.0

    def test_matches_adaptive_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n = int(rng.integers(15, 101))
            k = int(rng.integers(0, 11))
            r2 = float(rng.uniform(0.0, 0.99))
            h = RobustHyper.recommended(n=n, d=10)
            value = robust_log_bf(make_stats(n, k, r2), h)
            assert value == pytest.approx(oracle_log_bf(n, k, r2, h), abs=1e-7, rel=1e-7), (n, k, r2)

    @pytest.mark.slow
    def test_matches_adaptive_oracle_wide(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            n = int(rng.integers(15, 101))
            k = int(rng.integers(0, 11))
            r2 = float(rng.uniform(0.0, 0.99))
            h = RobustHyper.recommended(n=n, d=10)
            value = robust_log_bf(make_stats(n, k, r2), h)
            assert value == pytest.approx(oracle_log_bf(n, k, r2, h), abs=1e-7, rel=1e-7), (n, k, r2)

    @pytest.mark.parametrize("n, k, r2", [(20, 1, 0.2), (40, 3, 0.5), (60, 2, 0.1)])
    def test_matches_monte_carlo(self, n, k, r2):
        h = RobustHyper.recommended(n=n, d=5)
        u = 1.0 - np.random.default_rng(n + k).random(400_000)
        draws = np.exp(conditional_log_bf(make_stats(n, k, r2), sample_g(u, h)))
        estimate = draws.mean()
        standard_error = draws.std(ddof=1) / math.sqrt(draws.shape[0])
        exact = math.exp(robust_log_bf(make_stats(n, k, r2), h))
        assert abs(estimate - exact) < 4 * standard_error

    def test_increasing_in_r2(self):
        h = RobustHyper.recommended(n=40, d=5)
        r2 = np.linspace(0.0, 0.95, 20)
        values = robust_log_bf_batch(40, np.full(20, 3), r2, h)
        assert np.all(np.diff(values) > 0)

    def test_unrefined_rule_is_close(self):
        h = RobustHyper.recommended(n=40, d=5)
        stats_ = make_stats(40, 3, 0.6)
        coarse = robust_log_bf(stats_, h, QuadratureConfig(refine=False))
        assert coarse == pytest.approx(robust_log_bf(stats_, h), abs=1e-6)

    def test_within_range_of_conditional_bayes_factor(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            n = int(rng.integers(15, 101))
            k = int(rng.integers(1, 11))
            r2 = float(rng.uniform(0.0, 0.99))
            h = RobustHyper.recommended(n=n, d=10)
            model = make_stats(n, k, r2)
            # log BF(g) has a single stationary point, a maximum, and tends to -inf as g grows
            peak = ((n - 1 - k) - (n - 1) * (1.0 - r2)) / (k * (1.0 - r2))
            upper = conditional_log_bf(model, max(peak, h.lower_bound))
            lower = conditional_log_bf(model, h.lower_bound + np.logspace(-8, 12, 2001)).min()
            value = robust_log_bf(model, h)
            assert lower <= value <= upper, (n, k, r2)

    @pytest.mark.parametrize("n", [15, 50, 100])
    def test_zero_r2_favours_null(self, n):
        h = RobustHyper.recommended(n=n, d=10)
        values = robust_log_bf_batch(n, np.arange(1, 11), np.zeros(10), h)
        assert np.all(values < 0)
        assert np.all(np.diff(values) < 0)

    def test_doubling_nodes_is_stable(self):
        rng = np.random.default_rng(5)
        cases = [(100, 1, 0.98), (15, 10, 0.9), (40, 3, 0.0)]
        cases += [(int(rng.integers(15, 101)), int(rng.integers(1, 11)), float(rng.uniform(0.0, 0.99)))
                  for _ in range(20)]
        for n, k, r2 in cases:
            h = RobustHyper.recommended(n=n, d=10)
            base = robust_log_bf(make_stats(n, k, r2), h, QuadratureConfig(nodes=201))
            doubled = robust_log_bf(make_stats(n, k, r2), h, QuadratureConfig(nodes=402))
            assert doubled == pytest.approx(base, rel=1e-9, abs=1e-9), (n, k, r2)

    def test_perfect_fit(self):
        h = RobustHyper.recommended(n=30, d=5)
        with pytest.raises(PerfectFitError):
            robust_log_bf(make_stats(30, 2, 1.0), h)

    def test_hyper_bound_to_other_n(self):
        with pytest.raises(ContractError):
            robust_log_bf(make_stats(30, 2, 0.5), RobustHyper.recommended(n=31, d=5))

    def test_non_convergence_reports_estimates(self):
        h = RobustHyper.recommended(n=100, d=5)
        config = QuadratureConfig(nodes=15, rtol=1e-15, max_halvings=1)
        with pytest.raises(QuadratureError) as info:
            robust_log_bf(make_stats(100, 1, 0.98), h, config)
        assert len(info.value.estimates) == 2
        assert info.value.exit_code == 3

    def test_quadrature_config_validation(self):
        with pytest.raises(ValidationError):
            QuadratureConfig(nodes=5)
