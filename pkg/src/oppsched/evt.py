"""Gumbel normalizing constants and expected maximum capacity.

Constants follow the multiplier convention: P(M_K <= b + x/a) -> exp(-exp(-x)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelModel, mixture_pdf, mixture_sf, stationary_state_probs
from .errors import DomainError, EvaluationLimitError

EULER_GAMMA = 0.5772156649015329
LOG_4PI = math.log(4.0 * math.pi)
PDF_FLOOR = 1e-300


@dataclass(frozen=True)
class GumbelNorm:
    a: float  # inverse scale
    b: float  # location
    K: float

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError("Gumbel inverse scale must be positive")

    @property
    def scale(self) -> float:
        return 1.0 / self.a


def _check_size(n: float, what: str = "K") -> None:
    if not n >= 3:
        raise DomainError(f"{what} must be at least 3 so that log log {what} > 0, got {n}")


def _constants(n: float, mu: float, sigma: float, log_const: float) -> GumbelNorm:
    r = math.sqrt(2.0 * math.log(n))
    a = r / sigma
    b = sigma * (r - (math.log(math.log(n)) + log_const) / (2.0 * r)) + mu
    return GumbelNorm(a=a, b=b, K=n)


def gaussian_norm_constants(n: float, mu: float = 0.0, sigma: float = 1.0) -> GumbelNorm:
    """Textbook constants for the maximum of n iid N(mu, sigma^2) draws."""
    _check_size(n, "n")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    return _constants(n, mu, sigma, LOG_4PI)


def norm_constants_mixture(K: float, model: ChannelModel) -> GumbelNorm:
    """Constants for the maximum of K stationary users of the two-state mixture."""
    _check_size(K)
    p, _ = stationary_state_probs(model)
    if p <= 0:
        raise DomainError("good-state probability is zero; the good group is empty")
    return _constants(K, model.mu_g, model.sigma_g, LOG_4PI - 2.0 * math.log(p))


def gumbel_cdf(x, norm: GumbelNorm):
    out = np.exp(-np.exp(-norm.a * (np.asarray(x, dtype=float) - norm.b)))
    return out if np.ndim(out) else float(out)


def gumbel_pdf(x, norm: GumbelNorm):
    y = np.exp(-norm.a * (np.asarray(x, dtype=float) - norm.b))
    out = norm.a * y * np.exp(-y)
    return out if np.ndim(out) else float(out)


def gumbel_mean(norm: GumbelNorm) -> float:
    return norm.b + EULER_GAMMA / norm.a


def expected_capacity_centralized(K: float, model: ChannelModel) -> float:
    """Expected best-user capacity when a central scheduler always picks the maximum."""
    return gumbel_mean(norm_constants_mixture(K, model))


def expected_capacity_good_only(K: float, model: ChannelModel) -> float:
    """Expected maximum when only the good-state users (about p*K of them) are considered."""
    p, _ = stationary_state_probs(model)
    n = p * K
    if not n >= 3:
        raise DomainError(f"effective good-group size p*K = {n} is below 3")
    return gumbel_mean(gaussian_norm_constants(n, model.mu_g, model.sigma_g))


def reciprocal_hazard(t: float, model: ChannelModel) -> float:
    """Survival over density of the mixture; tends to 0 slope for Gumbel-type tails."""
    f = mixture_pdf(t, model)
    if f < PDF_FLOOR:
        raise EvaluationLimitError(f"mixture density {f:.3g} at t={t} is below {PDF_FLOOR:g}")
    return mixture_sf(t, model) / f
