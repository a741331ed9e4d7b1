"""Distributed threshold scheduling.

Every user transmits when its own capacity exceeds a common threshold u chosen
so that one user per slot exceeds it on average. No central coordination is
needed; a slot is wasted when nobody or more than one user exceeds u.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from scipy import special

from .channel import ChannelModel, mixture_quantile, mixture_sf
from .errors import DomainError
from .evt import expected_capacity_centralized, gaussian_norm_constants, norm_constants_mixture


class ThresholdMethod(enum.Enum):
    ASYMPTOTIC_MIXTURE = "asymptotic_mixture"
    EXACT_MIXTURE = "exact_mixture"
    REFINED_GAUSSIAN = "refined_gaussian"


@dataclass(frozen=True)
class ThresholdPlan:
    u: float
    K: float
    exceed_prob: float
    method: ThresholdMethod

    def __post_init__(self):
        if not (0.0 < self.exceed_prob < 1.0):
            raise DomainError("target exceedance probability must lie in (0,1)")
        if not math.isfinite(self.u):
            raise DomainError("threshold must be finite")


def threshold_asymptotic(K: float, model: ChannelModel) -> ThresholdPlan:
    u = norm_constants_mixture(K, model).b
    return ThresholdPlan(u=u, K=K, exceed_prob=1.0 / K, method=ThresholdMethod.ASYMPTOTIC_MIXTURE)


def threshold_exact(K: float, model: ChannelModel) -> ThresholdPlan:
    """Solve P(capacity > u) = 1/K on the stationary mixture."""
    if not K >= 2:
        raise DomainError("K must be at least 2")
    u = mixture_quantile(1.0 - 1.0 / K, model)
    return ThresholdPlan(u=u, K=K, exceed_prob=1.0 / K, method=ThresholdMethod.EXACT_MIXTURE)


def threshold_refined_gaussian(K: float, mu: float, sigma: float) -> ThresholdPlan:
    """Gaussian-only threshold mu + sqrt(2) sigma erfcinv(2/K)."""
    if not K >= 2:
        raise DomainError("K must be at least 2")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    u = mu + math.sqrt(2.0) * sigma * float(special.erfcinv(2.0 / K))
    return ThresholdPlan(u=u, K=K, exceed_prob=1.0 / K, method=ThresholdMethod.REFINED_GAUSSIAN)


def threshold_refined_gaussian_logform(K: float, mu: float, sigma: float) -> float:
    """Expanded logarithmic approximation of the refined threshold, for comparison."""
    inner = -2.0 * math.pi * (2.0 * math.log(1.0 / K) + math.log(2.0 * math.pi))
    return mu + sigma * math.sqrt(2.0 * math.log(K) - math.log(inner))


def utilization_prob(K: int) -> float:
    """Probability that exactly one of K users exceeds a 1/K threshold."""
    if K < 1:
        raise DomainError("K must be at least 1")
    if K == 1:
        return 1.0
    return math.exp(math.log1p(-1.0 / K) * (K - 1))


@dataclass(frozen=True)
class DistributedCapacity:
    value: float  # e^-1 times the conditional mean
    conditional_mean: float  # expected capacity given exceedance, u + 1/a
    utilization: float
    utilization_kind: str  # "asymptotic" or "finite"
    threshold: float


def distributed_capacity_breakdown(K: float, model: ChannelModel,
                                   finite_utilization: bool = False) -> DistributedCapacity:
    norm = norm_constants_mixture(K, model)
    u = norm.b
    cond = u + 1.0 / norm.a
    if finite_utilization:
        util, kind = utilization_prob(int(round(K))), "finite"
    else:
        util, kind = math.exp(-1.0), "asymptotic"
    return DistributedCapacity(value=util * cond, conditional_mean=cond,
                               utilization=util, utilization_kind=kind, threshold=u)


def expected_capacity_distributed(K: float, model: ChannelModel) -> float:
    return distributed_capacity_breakdown(K, model).value


def distributed_to_centralized_ratio(K: float, model: ChannelModel) -> float:
    return expected_capacity_distributed(K, model) / expected_capacity_centralized(K, model)


def level_for_rate(tau: float = 1.0, n: float = 10_000, mu: float = 0.0, sigma: float = 1.0) -> float:
    """Level whose expected exceedance count in n Gaussian draws tends to tau."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    norm = gaussian_norm_constants(n, mu, sigma)
    return math.log(1.0 / tau) / norm.a + norm.b


def exceedance_rate_at(u: float, K: float, model: ChannelModel) -> float:
    """Expected number of users out of K above u, K * P(capacity > u)."""
    return K * mixture_sf(u, model)
