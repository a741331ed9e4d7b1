"""Decoupled single-queue approximation with a constant collision probability.

Each user sees an exponential-type queue whose service rate is its exceedance
rate tau thinned by the probability of not colliding. The collision
probability itself depends on how often the other queues are nonempty,
which closes a scalar fixed point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError, InstabilityError
from .solution import QModelSolution


@dataclass(frozen=True)
class DecoupledQueue:
    lam: float
    tau: float
    p_coll: float
    K: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.p_coll < 1.0):
            raise DomainError("collision probability must lie in [0,1)")

    @property
    def service_rate(self) -> float:
        return (1.0 - self.p_coll) * self.tau

    @property
    def load(self) -> float:
        return self.lam / self.service_rate


def p_coll_backlogged(K: int) -> float:
    """Collision probability when all K users always hold packets."""
    if K < 1:
        raise DomainError("K must be at least 1")
    if K == 1:
        return 0.0
    return -math.expm1(math.log1p(-1.0 / K) * (K - 1))


def _rhs(p: float, lam: float, tau: float, K: int | None) -> float:
    busy = lam / ((1.0 - p) * tau)  # probability a given other queue is nonempty
    if K is None:
        return -math.expm1(-busy)
    x = busy / K
    if x >= 1.0:
        return 1.0
    return -math.expm1(math.log1p(-x) * (K - 1))


def collision_residual(p: float, lam: float, tau: float, K: int | None = None) -> float:
    return p - _rhs(p, lam, tau, K)


def solve_p_coll(lam: float, tau: float, K: int | None = None, grid: int = 4000) -> float:
    """Smallest stable fixed point p = rhs(p) on [0, 1 - lam/tau).

    Scans a grid for the first sign change of p - rhs(p), then refines with Brent.
    """
    if lam < 0 or not tau > 0:
        raise DomainError("need lam >= 0 and tau > 0")
    if K is not None and K < 1:
        raise DomainError("K must be at least 1")
    if lam == 0:
        return 0.0
    upper = 1.0 - lam / tau
    if upper <= 0:
        raise InstabilityError(f"arrival rate {lam} is not below the exceedance rate {tau}")
    xs = np.linspace(0.0, upper, grid + 1)[:-1]
    xs = np.append(xs, upper * (1.0 - 1e-12))
    f = np.array([collision_residual(x, lam, tau, K) for x in xs])
    if f[0] >= 0:
        return 0.0
    crossing = np.flatnonzero(f >= 0)
    if crossing.size == 0:
        raise InstabilityError("no stable collision fixed point: the decoupled queue is overloaded")
    j = crossing[0]
    root = optimize.brentq(collision_residual, xs[j - 1], xs[j], args=(lam, tau, K),
                           xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(root)


def decoupled_queue(lam: float, tau: float, K: int | None = None) -> DecoupledQueue:
    return DecoupledQueue(lam=lam, tau=tau, p_coll=solve_p_coll(lam, tau, K), K=K)


def empty_prob(lam: float, tau: float, p_coll: float) -> float:
    rho = lam / ((1.0 - p_coll) * tau)
    if rho >= 1.0:
        raise InstabilityError(f"load {rho:.4g} >= 1")
    return 1.0 - rho


def metrics_model2(q: DecoupledQueue) -> QModelSolution:
    """Single-queue formulas at the effective service rate (1 - p_coll) tau."""
    mu = q.service_rate
    rho = q.lam / mu
    if rho >= 1.0:
        raise InstabilityError(f"load {rho:.4g} >= 1")
    return QModelSolution(
        mean_queue=rho / (1.0 - rho),
        time_in_line=rho / (mu - q.lam),
        service_time=1.0 / mu,
        delay=1.0 / (mu - q.lam),
        success_prob=1.0 - q.p_coll,
    )
