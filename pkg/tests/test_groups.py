import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from oppsched.channel import ChannelModel
from oppsched.errors import DomainError, NonErgodicChainError
from oppsched.evt import EULER_GAMMA, expected_capacity_centralized, gaussian_norm_constants
from oppsched.groups import (SystemChain, best_delta, capacity_lower_bound_delta,
                             capacity_lower_bound_mode, conditional_expected_max, exchange_matrix,
                             expected_capacity_by_state, is_centrosymmetric, is_log_concave, is_unimodal,
                             stationary_chain, transition_matrix, transition_terms, two_group_max_cdf,
                             two_group_max_pdf)
from oppsched.sim import CapacityMode, SimConfig, estimate_capacity_max

SQRT2 = math.sqrt(2.0)
REFERENCE = ChannelModel(0.1, 0.1, SQRT2, 0.5, 0.0, 0.3)


class TestTransitionMatrix:
    @pytest.mark.parametrize("a, b", [(0.0, 2.2250738585072014e-308), (5e-324, 0.3), (1e-250, 1 - 1e-16)])
    def test_vanishing_switch_probabilities(self, a, b):
        P = transition_matrix(6, a, b, solve=False).P
        assert np.all(np.isfinite(P)) and np.all(P >= 0)
        assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-14

    def test_single_user(self):
        ch = transition_matrix(1, 0.3, 0.2)
        assert np.allclose(ch.P, [[0.7, 0.3], [0.2, 0.8]], rtol=0, atol=1e-15)
        assert np.allclose(ch.pi, [0.4, 0.6], rtol=0, atol=1e-15)

    def test_summand_count(self):
        assert len(transition_terms(6, 2, 3, 0.1, 0.2)) == 3

    def test_vectorized_matches_term_sums(self):
        K, a, b = 9, 0.17, 0.41
        P = transition_matrix(K, a, b, solve=False).P
        direct = np.array([[math.fsum(transition_terms(K, i, j, a, b)) for j in range(K + 1)]
                           for i in range(K + 1)])
        assert np.max(np.abs(P - direct)) < 1e-14

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 60), st.floats(0, 1), st.floats(0, 1))
    def test_row_stochastic(self, K, a, b):
        P = transition_matrix(K, a, b, solve=False).P
        assert np.all(P >= 0)
        assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 50), st.floats(0.01, 0.99))
    def test_centrosymmetric_and_commutes(self, K, a):
        P = transition_matrix(K, a, a, solve=False).P
        J = exchange_matrix(K + 1)
        assert is_centrosymmetric(P)
        assert np.max(np.abs(J @ P - P @ J)) <= 1e-12

    def test_asymmetric_not_centrosymmetric(self):
        assert not is_centrosymmetric(transition_matrix(6, 0.1, 0.3, solve=False).P)

    def test_size_guard(self):
        with pytest.raises(DomainError):
            transition_matrix(10**4, 0.1, 0.1)

    def test_identity_when_frozen(self):
        ch = transition_matrix(5, 0.0, 0.0, solve=False)
        assert np.array_equal(ch.P, np.eye(6))
        with pytest.raises(NonErgodicChainError):
            stationary_chain(ch)

    def test_periodic_flip_rejected(self):
        with pytest.raises(NonErgodicChainError):
            transition_matrix(4, 1.0, 1.0)

    def test_monte_carlo_rows(self):
        # one-slot change = Binomial(K-i, alpha) moves in minus Binomial(i, beta) moves out
        rng = np.random.default_rng(7)
        K, a, b, n = 12, 0.2, 0.35, 200_000
        P = transition_matrix(K, a, b, solve=False).P
        for i in (0, 3, 6, 12):
            nxt = i + rng.binomial(K - i, a, n) - rng.binomial(i, b, n)
            obs = np.bincount(nxt, minlength=K + 1)
            exp = n * P[i]
            keep = exp >= 5
            obs_k = np.append(obs[keep], obs[~keep].sum())
            exp_k = np.append(exp[keep], exp[~keep].sum())
            if exp_k[-1] == 0:
                obs_k, exp_k = obs_k[:-1], exp_k[:-1]
            pval = stats.chisquare(obs_k, exp_k).pvalue
            assert pval > 0.01


class TestStationary:
    def test_balance(self):
        ch = transition_matrix(25, 0.13, 0.07)
        assert np.max(np.abs(ch.pi @ ch.P - ch.pi)) < 1e-10
        assert ch.pi.sum() == pytest.approx(1.0, abs=1e-14)

    def test_binomial_law(self):
        # independent users: the number of bad users is Binomial(K, alpha / (alpha + beta))
        K, a, b = 30, 0.13, 0.07
        pi = transition_matrix(K, a, b).pi
        assert np.max(np.abs(pi - stats.binom.pmf(np.arange(K + 1), K, a / (a + b)))) < 1e-12

    @pytest.mark.parametrize("K", [4, 10, 40])
    def test_symmetric_unimodal(self, K):
        pi = transition_matrix(K, 0.1, 0.1).pi
        assert np.max(np.abs(pi - pi[::-1])) <= 1e-10
        assert is_unimodal(pi)
        assert is_log_concave(pi)
        assert int(np.argmax(pi)) == K // 2

    def test_power_iteration_branch(self):
        K = 40
        ch = transition_matrix(K, 0.3, 0.2, solve=False)
        dense = stationary_chain(ch)
        import oppsched.groups as g
        old = g.DENSE_LIMIT
        try:
            g.DENSE_LIMIT = 10
            power = stationary_chain(ch)
        finally:
            g.DENSE_LIMIT = old
        assert np.max(np.abs(dense - power)) < 1e-12

    def test_shape_checks(self):
        assert is_unimodal(np.array([1, 2, 2, 3, 1]))
        assert not is_unimodal(np.array([1, 3, 1, 3, 1]))
        assert not is_log_concave(np.array([1.0, 0.1, 1.0]))


class TestTwoGroupMax:
    def test_empty_bad_group(self):
        xs = np.linspace(0, 3, 11)
        assert np.allclose(two_group_max_cdf(xs, 0, 5, REFERENCE), stats.norm.cdf(xs, SQRT2, 0.5) ** 5,
                           rtol=0, atol=1e-15)

    def test_density_is_derivative(self):
        for kb, kg in ((3, 4), (40, 2), (50, 60)):
            x, h = 1.3, 1e-6
            fd = (two_group_max_cdf(x + h, kb, kg, REFERENCE) - two_group_max_cdf(x - h, kb, kg, REFERENCE)) / (2 * h)
            assert two_group_max_pdf(x, kb, kg, REFERENCE) == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_branch_crossover(self):
        phi = 30
        m = REFERENCE
        for k in (phi, phi + 1):
            med = gaussian_norm_constants(k, m.mu_g, m.sigma_g)
        nrm = gaussian_norm_constants(phi + 1, m.mu_g, m.sigma_g)
        x = nrm.b - math.log(math.log(2)) / nrm.a
        exact = two_group_max_cdf(x, 0, phi, m, phi)
        evt = two_group_max_cdf(x, 0, phi + 1, m, phi)
        assert abs(exact - evt) < 0.05

    def test_two_group_mode_location(self):
        m = ChannelModel(0.1, 0.1, 1.25, 0.19, 0.25, 0.19)
        xs = np.linspace(0.5, 2.5, 4001)
        mode = xs[np.argmax(two_group_max_pdf(xs, 150, 150, m))]
        assert mode == pytest.approx(gaussian_norm_constants(150, 1.25, 0.19).b, abs=0.01)

    def test_conditional_mean_small_groups(self):
        rng = np.random.default_rng(3)
        n = 400_000
        cap = np.concatenate([SQRT2 + 0.5 * rng.standard_normal((n, 2)), 0.3 * rng.standard_normal((n, 3))], 1)
        mx = cap.max(axis=1)
        assert abs(conditional_expected_max(3, 2, REFERENCE) - mx.mean()) < 3 * mx.std() / math.sqrt(n)

    def test_rejects_empty(self):
        with pytest.raises(DomainError):
            two_group_max_cdf(1.0, 0, 0, REFERENCE)


class TestExpectedCapacity:
    def test_small_K_monte_carlo(self):
        rng = np.random.default_rng(11)
        n, K = 1_000_000, 4
        bad = rng.random((n, K)) < 0.5
        z = rng.standard_normal((n, K))
        mx = np.where(bad, 0.3 * z, SQRT2 + 0.5 * z).max(axis=1)
        val = expected_capacity_by_state(K, REFERENCE, phi=10)
        assert abs(val - mx.mean()) <= 3 * mx.std(ddof=1) / math.sqrt(n)

    def test_always_good_collapse(self):
        m = ChannelModel(1e-9, 0.5, SQRT2, 0.5, 0.0, 0.3)
        K = 8
        f = lambda x: x * K * stats.norm.cdf(x, SQRT2, 0.5) ** (K - 1) * stats.norm.pdf(x, SQRT2, 0.5)
        ref = integrate.quad(f, -3, 6)[0]
        assert expected_capacity_by_state(K, m) == pytest.approx(ref, abs=1e-6)

    def test_regimes_all_used(self):
        # phi=5 with K=14 mixes exact powers and Gumbel factors within and across states
        v = expected_capacity_by_state(14, REFERENCE, phi=5)
        assert 1.5 < v < 3

    def test_against_simulated_histogram(self):
        K = 300
        sample = estimate_capacity_max(SimConfig(K, REFERENCE, 0.5, horizon=40, replications=100, seed=4,
                                                 capacity_mode=CapacityMode.CHAIN_DEPENDENT))
        assert expected_capacity_by_state(K, REFERENCE) == pytest.approx(sample.mean, rel=0.02)


class TestBounds:
    def test_mode_bound_below(self):
        assert capacity_lower_bound_mode(20, REFERENCE) <= expected_capacity_by_state(20, REFERENCE)

    def test_mode_bound_by_quadrature(self):
        K = 100
        ch = transition_matrix(K, 0.1, 0.1)
        nrm = gaussian_norm_constants(K // 2, SQRT2, 0.5)
        s = nrm.scale
        dens = lambda x: math.exp(-(x - nrm.b) / s) * math.exp(-math.exp(-(x - nrm.b) / s)) / s
        mean = integrate.quad(lambda x: x * dens(x), nrm.b - 10 * s, nrm.b + 40 * s, limit=200)[0]
        assert capacity_lower_bound_mode(K, REFERENCE, ch) == pytest.approx(2 * ch.pi[K // 2] * mean, rel=1e-9)

    def test_mode_bound_scaling(self):
        vals = {K: capacity_lower_bound_mode(K, REFERENCE) / transition_matrix(K, 0.1, 0.1).pi[K // 2] / 2
                for K in (100, 2000)}
        for K, v in vals.items():
            nrm = gaussian_norm_constants(K // 2, SQRT2, 0.5)
            assert v == pytest.approx(nrm.b + EULER_GAMMA * nrm.scale, rel=1e-14)

    def test_delta_zero_is_one_term(self):
        K = 20
        ch = transition_matrix(K, 0.1, 0.1)
        s, crude = capacity_lower_bound_delta(K, REFERENCE, 0, ch)
        assert s == pytest.approx(capacity_lower_bound_mode(K, REFERENCE, ch) / 2, rel=1e-14)
        assert crude == 0.0

    def test_best_delta_improves_mode(self):
        d, v = best_delta(40, REFERENCE)
        assert v >= capacity_lower_bound_mode(40, REFERENCE)
        assert d > 0

    def test_delta_below_expectation(self):
        exact = expected_capacity_by_state(20, REFERENCE)
        for d in range(0, 8):
            s, crude = capacity_lower_bound_delta(20, REFERENCE, d)
            assert s <= exact and crude <= s

    @pytest.mark.parametrize("K, model", [(21, REFERENCE), (20, ChannelModel(0.1, 0.2, SQRT2, 0.5, 0, 0.3)), (4, REFERENCE)])
    def test_preconditions(self, K, model):
        with pytest.raises(DomainError):
            capacity_lower_bound_mode(K, model)

    def test_centralized_is_larger_than_state_bound(self):
        assert capacity_lower_bound_mode(1000, REFERENCE) < expected_capacity_centralized(1000, REFERENCE)
