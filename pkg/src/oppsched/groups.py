"""Population-level chain: how many of the K users are in the bad state.

State i counts bad users, so there are K+1 states. Given i, the best capacity
is the maximum over two independent groups (K-i good users, i bad users),
and the expected system capacity averages that over the stationary law of i.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .channel import ChannelModel, norm_cdf, norm_pdf
from .errors import DomainError, ModelError, NonErgodicChainError
from .evt import EULER_GAMMA, gaussian_norm_constants

DENSE_LIMIT = 2000
MAX_K = 5000
DEFAULT_PHI = 30


@dataclass
class SystemChain:
    K: int
    alpha: float
    beta: float
    P: np.ndarray
    pi: np.ndarray | None = field(default=None)


def transition_terms(K: int, i: int, j: int, alpha: float, beta: float) -> list[float]:
    """The individual summands of P[i][j], one per count n of bad->good moves
    beyond the net change, n = 0..min(i, K-i, j, K-j)."""
    terms = []
    for n in range(min(i, K - i, j, K - j) + 1):
        if i <= j:
            up, down = j - i + n, n  # good->bad, bad->good
        else:
            up, down = n, i - j + n
        t = (math.comb(K - i, up) * math.comb(i, down)
             * alpha ** up * (1 - alpha) ** (K - i - up)
             * beta ** down * (1 - beta) ** (i - down))
        terms.append(t)
    return terms


def _binom_pmf(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1)
    if p == 0.0 or p == 1.0 or p > 1e-200:
        return stats.binom.pmf(k, n, p)
    # scipy overflows near the smallest normal double; log space is exact enough here
    logc = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
    return np.exp(logc + k * math.log(p) + (n - k) * math.log1p(-p))


def _transition_matrix_array(K: int, alpha: float, beta: float) -> np.ndarray:
    """Row i is the law of i + Binomial(K-i, alpha) - Binomial(i, beta)."""
    P = np.empty((K + 1, K + 1))
    for i in range(K + 1):
        up = _binom_pmf(K - i, alpha)
        down = _binom_pmf(i, beta)
        P[i] = np.convolve(up, down[::-1])
    return P


def transition_matrix(K: int, alpha: float, beta: float, solve: bool = True) -> SystemChain:
    if K < 1:
        raise DomainError("K must be at least 1")
    if not (0 <= alpha <= 1 and 0 <= beta <= 1):
        raise DomainError("alpha, beta must lie in [0,1]")
    if K > MAX_K:
        raise DomainError(f"K={K} exceeds {MAX_K}: the dense {K + 1}x{K + 1} matrix is too large")
    P = _transition_matrix_array(K, alpha, beta)
    chain = SystemChain(K=K, alpha=alpha, beta=beta, P=P)
    if solve:
        chain.pi = stationary_chain(chain)
    return chain


def stationary_chain(chain: SystemChain) -> np.ndarray:
    """Unique stationary vector; dense solve up to DENSE_LIMIT states, power iteration above."""
    K, a, b = chain.K, chain.alpha, chain.beta
    if a + b == 0:
        raise NonErgodicChainError("alpha = beta = 0: every state is absorbing")
    if a == 1 and b == 1 and K > 1:
        raise NonErgodicChainError("alpha = beta = 1: states i and K-i form closed cycles")
    P = chain.P
    n = K + 1
    if K <= DENSE_LIMIT:
        A = P.T - np.eye(n)
        A[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
    else:
        pi = np.full(n, 1.0 / n)
        for _ in range(100_000):
            nxt = pi @ P
            if np.max(np.abs(nxt - pi)) < 1e-15:
                pi = nxt
                break
            pi = nxt
        else:
            raise ModelError("power iteration did not converge")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def exchange_matrix(n: int) -> np.ndarray:
    return np.eye(n)[::-1]


def is_centrosymmetric(P: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(P - P[::-1, ::-1])) <= tol)


def is_unimodal(v: np.ndarray, tol: float = 1e-12) -> bool:
    """Nondecreasing then nonincreasing, ignoring plateaus within tol."""
    d = np.diff(v)
    d = np.where(np.abs(d) <= tol, 0.0, d)
    signs = d[d != 0]
    if signs.size == 0:
        return True
    down = np.flatnonzero(signs < 0)
    if down.size == 0:
        return True
    return bool(np.all(signs[down[0]:] < 0))


def is_log_concave(v: np.ndarray, tol: float = 1e-12) -> bool:
    """Discrete strong unimodality: v_n^2 >= v_{n-1} v_{n+1}."""
    return bool(np.all(v[1:-1] ** 2 - v[:-2] * v[2:] >= -tol))


# two-group maxima

def _group_max_cdf(x, k: int, mu: float, sigma: float, phi: int):
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.ones_like(x)
    if k <= phi:
        return norm_cdf((x - mu) / sigma) ** k
    nrm = gaussian_norm_constants(k, mu, sigma)
    return np.exp(-np.exp(-nrm.a * (x - nrm.b)))


def _group_max_pdf(x, k: int, mu: float, sigma: float, phi: int):
    x = np.asarray(x, dtype=float)
    if k == 0:
        return np.zeros_like(x)
    z = (x - mu) / sigma
    if k <= phi:
        return k * norm_cdf(z) ** (k - 1) * norm_pdf(z) / sigma
    nrm = gaussian_norm_constants(k, mu, sigma)
    y = np.exp(-nrm.a * (x - nrm.b))
    return nrm.a * y * np.exp(-y)


def two_group_max_cdf(x, k_bad: int, k_good: int, model: ChannelModel, phi: int = DEFAULT_PHI):
    """P(best capacity <= x) given k_bad bad users and k_good good users."""
    if k_bad + k_good < 1:
        raise DomainError("need at least one user")
    if phi < 3:
        raise DomainError("EVT cutoff phi must be at least 3")
    out = (_group_max_cdf(x, k_good, model.mu_g, model.sigma_g, phi)
           * _group_max_cdf(x, k_bad, model.mu_b, model.sigma_b, phi))
    return out if np.ndim(out) else float(out)


def two_group_max_pdf(x, k_bad: int, k_good: int, model: ChannelModel, phi: int = DEFAULT_PHI):
    """Product-rule derivative of two_group_max_cdf."""
    fg = _group_max_cdf(x, k_good, model.mu_g, model.sigma_g, phi)
    fb = _group_max_cdf(x, k_bad, model.mu_b, model.sigma_b, phi)
    dg = _group_max_pdf(x, k_good, model.mu_g, model.sigma_g, phi)
    db = _group_max_pdf(x, k_bad, model.mu_b, model.sigma_b, phi)
    out = dg * fb + fg * db
    return out if np.ndim(out) else float(out)


def _upper_edge(k: int, mu: float, sigma: float) -> float:
    if k == 0:
        return -np.inf
    n = max(k, 3)
    nrm = gaussian_norm_constants(n, mu, sigma)
    return max(nrm.b + 12.0 / nrm.a, mu + 10 * sigma)


def conditional_expected_max(k_bad: int, k_good: int, model: ChannelModel,
                             phi: int = DEFAULT_PHI, tol: float = 1e-8) -> float:
    lo = min(model.mu_b - 10 * model.sigma_b, model.mu_g - 10 * model.sigma_g)
    hi = max(_upper_edge(k_good, model.mu_g, model.sigma_g),
             _upper_edge(k_bad, model.mu_b, model.sigma_b))
    peaks = [m for m, k in ((model.mu_g, k_good), (model.mu_b, k_bad)) if k > 0]
    val, err = integrate.quad(lambda x: x * two_group_max_pdf(x, k_bad, k_good, model, phi),
                              lo, hi, epsabs=tol, epsrel=1e-10, limit=400,
                              points=[p for p in peaks if lo < p < hi] or None)
    if not err <= 10 * tol:
        raise ModelError(f"quadrature for (bad={k_bad}, good={k_good}) reports error {err:.3g}")
    return float(val)


def expected_capacity_by_state(K: int, model: ChannelModel, phi: int = DEFAULT_PHI,
                               chain: SystemChain | None = None) -> float:
    """Stationary average over i of E[best capacity | i bad users]."""
    if K < 1:
        raise DomainError("K must be at least 1")
    if chain is None:
        chain = transition_matrix(K, model.alpha, model.beta)
    pi = chain.pi if chain.pi is not None else stationary_chain(chain)
    total = 0.0
    for i in range(K + 1):
        if pi[i] == 0.0:
            continue
        total += pi[i] * conditional_expected_max(i, K - i, model, phi)
    return float(total)


def _check_symmetric_even(K: int, model: ChannelModel, half_min: int) -> None:
    if model.alpha != model.beta:
        raise DomainError("mode-based bounds are defined only for the symmetric case alpha == beta")
    if K % 2:
        raise DomainError("mode-based bounds need an even K")
    if half_min < 3:
        raise DomainError("group size for the bound must be at least 3")


def _gumbel_scale_mean(n: int, model: ChannelModel) -> float:
    """a*gamma + b with a the Gumbel scale (not inverse scale) of n good users."""
    nrm = gaussian_norm_constants(n, model.mu_g, model.sigma_g)
    return nrm.scale * EULER_GAMMA + nrm.b


def capacity_lower_bound_mode(K: int, model: ChannelModel, chain: SystemChain | None = None) -> float:
    """Keep only the most likely split (K/2 bad) and weight its Gumbel mean twice."""
    _check_symmetric_even(K, model, K // 2)
    if chain is None:
        chain = transition_matrix(K, model.alpha, model.beta)
    return float(2.0 * chain.pi[K // 2] * _gumbel_scale_mean(K // 2, model))


def capacity_lower_bound_delta(K: int, model: ChannelModel, delta: int,
                               chain: SystemChain | None = None) -> tuple[float, float]:
    """Sum of the Gumbel means over the states K/2-delta..K/2, and its crude form.

    Returns (sum_bound, crude_bound) where the crude form multiplies the
    smallest summand by delta.
    """
    half = K // 2
    _check_symmetric_even(K, model, half - delta)
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    if chain is None:
        chain = transition_matrix(K, model.alpha, model.beta)
    pi = chain.pi
    s = sum(_gumbel_scale_mean(i, model) * pi[i] for i in range(half - delta, half + 1))
    crude = _gumbel_scale_mean(half - delta, model) * pi[half - delta] * delta
    return float(s), float(crude)


def best_delta(K: int, model: ChannelModel, chain: SystemChain | None = None) -> tuple[int, float]:
    _check_symmetric_even(K, model, K // 2)
    if chain is None:
        chain = transition_matrix(K, model.alpha, model.beta)
    best = (0, -np.inf)
    for d in range(0, K // 2 - 3 + 1):
        v, _ = capacity_lower_bound_delta(K, model, d, chain)
        if v > best[1]:
            best = (d, v)
    return best
