"""Single queue whose service rate follows the user's good/bad channel state.

Continuous-time view of one user: Poisson arrivals at rate lam, exponential
service at mu_g' in the good state and mu_b' in the bad state, and the state
flips good->bad at rate alpha and bad->good at rate beta. The effective
service rates are the exceedance rates thinned by the success probability,
mu' = mu * p_succ, and p_succ in turn depends on how often the other K-1
queues attempt, so the queue and p_succ are solved together.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np

from .errors import ConvergenceError, DomainError, InstabilityError, ModelError, NotApplicableError
from .solution import QModelSolution


@dataclass(frozen=True)
class TDQueueParams:
    lam: float
    mu_g: float  # raw exceedance rates
    mu_b: float
    alpha: float
    beta: float
    p_succ: float = 1.0

    def __post_init__(self):
        for name in ("lam", "mu_g", "mu_b", "alpha", "beta"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")
        if self.alpha + self.beta <= 0:
            raise DomainError("alpha + beta must be positive")
        if not (0.0 <= self.p_succ <= 1.0):
            raise DomainError("p_succ must lie in [0,1]")

    @property
    def mu_g_eff(self) -> float:
        return self.mu_g * self.p_succ

    @property
    def mu_b_eff(self) -> float:
        return self.mu_b * self.p_succ

    @property
    def pi_g(self) -> float:
        return self.beta / (self.alpha + self.beta)

    @property
    def pi_b(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def mu_hat(self) -> float:
        return self.pi_g * self.mu_g_eff + self.pi_b * self.mu_b_eff

    @property
    def stable(self) -> bool:
        return self.mu_hat > self.lam


@dataclass
class TDQueueSteady:
    params: TDQueueParams
    z0: float
    pi_g0: float
    pi_b0: float
    p_succ: float
    attempt_prob: float
    mean_queue: float
    wait: float
    iterations: int = 0
    trace: list[float] = field(default_factory=list)

    @property
    def empty_prob(self) -> float:
        return self.pi_g0 + self.pi_b0

    def summary(self) -> QModelSolution:
        p = self.params
        service = 1.0 / p.mu_hat if p.mu_hat > 0 else math.inf
        wait = self.wait if p.lam > 0 else 0.0
        return QModelSolution(mean_queue=self.mean_queue, time_in_line=max(wait - service, 0.0),
                              service_time=service, delay=wait, success_prob=self.p_succ)


def cubic_coeffs(p: TDQueueParams) -> tuple[float, float, float, float]:
    return _coeffs(p.lam, p.alpha, p.beta, p.mu_g_eff, p.mu_b_eff)


def _coeffs(lam, a, b, mg, mb):
    c3 = lam * lam
    c2 = -(a * lam + b * lam + lam * lam + lam * mb + lam * mg)
    c1 = a * mb + b * mg + mg * mb + lam * mb + lam * mg
    c0 = -mg * mb
    return c3, c2, c1, c0


def g_poly(p: TDQueueParams, z):
    c3, c2, c1, c0 = cubic_coeffs(p)
    return ((c3 * z + c2) * z + c1) * z + c0


def _empty_probs_at(p: TDQueueParams, z0):
    lam, mg, mb = p.lam, p.mu_g_eff, p.mu_b_eff
    d = p.mu_hat - lam
    pg = p.beta * d * z0 / (mg * (1 - z0) * (mb - lam * z0))
    pb = p.alpha * d * z0 / (mb * (1 - z0) * (mg - lam * z0))
    return pg, pb


def _gf_at(p: TDQueueParams, pg0, pb0, z):
    lam, mg, mb = p.lam, p.mu_g_eff, p.mu_b_eff
    d = p.mu_hat - lam
    gz = g_poly(p, z)
    Gg = (p.beta * d * z + pg0 * mg * (1 - z) * (lam * z - mb)) / gz
    Gb = (p.alpha * d * z + pb0 * mb * (1 - z) * (lam * z - mg)) / gz
    return Gg, Gb


def _admissible(p: TDQueueParams, z: float, grid: np.ndarray) -> bool:
    if z <= 0.0 or z == 1.0:
        return False
    try:
        pg, pb = _empty_probs_at(p, z)
    except ZeroDivisionError:
        return False
    if not (np.isfinite(pg) and np.isfinite(pb)):
        return False
    tol = 1e-9
    if not (-tol <= pg <= p.pi_g + tol and -tol <= pb <= p.pi_b + tol):
        return False
    pts = grid[np.abs(grid - z) > 1e-6]
    Gg, Gb = _gf_at(p, pg, pb, pts)
    return bool(np.all(Gg >= -tol) and np.all(Gb >= -tol))


def all_roots(p: TDQueueParams) -> np.ndarray:
    c = cubic_coeffs(p)
    lead = next(i for i, v in enumerate(c) if v != 0)
    return np.roots(c[lead:])


def _polish(p: TDQueueParams, z: float) -> float:
    c3, c2, c1, _ = cubic_coeffs(p)
    for _ in range(3):
        d = (3 * c3 * z + 2 * c2) * z + c1
        if d == 0:
            break
        z -= g_poly(p, z) / d
    return z


def solve_z0(p: TDQueueParams) -> float:
    """The cubic's root that yields valid empty-queue probabilities.

    Every real root is tested: both empty probabilities must be in range and
    both partial generating functions nonnegative on [0, 1]. Exactly one
    root must pass.
    """
    if p.mu_g_eff <= 0 or p.mu_b_eff <= 0:
        raise DomainError("effective service rates must be positive")
    if not p.stable:
        raise InstabilityError(f"mean service rate {p.mu_hat:.6g} does not exceed arrival rate {p.lam:.6g}")
    roots = all_roots(p)
    grid = np.linspace(0.0, 1.0, 401)
    good = []
    for r in roots:
        if abs(r.imag) > 1e-9 * max(1.0, abs(r.real)):
            continue
        z = _polish(p, float(r.real))
        if _admissible(p, z, grid):
            good.append(z)
    # with equal service rates two roots give the same probabilities; that is
    # not ambiguity, so compare outcomes rather than roots
    outcomes = []
    for z in sorted(good, key=lambda z: (not 0.0 < z < 1.0, z)):
        pg, pb = _empty_probs_at(p, z)
        if all(abs(pg - a) > 1e-10 or abs(pb - b) > 1e-10 for _, a, b in outcomes):
            outcomes.append((z, pg, pb))
    if len(outcomes) != 1:
        raise ModelError(f"expected one admissible root, found {len(outcomes)}; roots {roots.tolist()}")
    return outcomes[0][0]


def empty_probs(p: TDQueueParams, z0: float) -> tuple[float, float]:
    lam = p.lam
    if z0 == 1.0 or p.mu_b_eff == lam * z0 or p.mu_g_eff == lam * z0:
        raise ModelError("singular denominator in the empty-queue probabilities")
    pg, pb = _empty_probs_at(p, z0)
    return float(pg), float(pb)


def partial_gf(p: TDQueueParams, z0: float, z: float) -> tuple[float, float]:
    """(sum_m pi^g_m z^m, sum_m pi^b_m z^m)."""
    pg0, pb0 = empty_probs(p, z0)
    gz = g_poly(p, z)
    scale = max(abs(c) for c in cubic_coeffs(p))
    if abs(gz) <= 1e-14 * scale and abs(z - z0) > 1e-9:
        raise ModelError(f"generating function has a pole at z={z}")
    if abs(z - z0) <= 1e-9:
        # removable singularity: average the two sides
        h = 1e-6
        a = _gf_at(p, pg0, pb0, z - h)
        b = _gf_at(p, pg0, pb0, z + h)
        return (0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]))
    Gg, Gb = _gf_at(p, pg0, pb0, z)
    return float(Gg), float(Gb)


def mean_queue(p: TDQueueParams, z0: float) -> float:
    lam, mg, mb = p.lam, p.mu_g_eff, p.mu_b_eff
    pg0, pb0 = empty_probs(p, z0)
    d = p.mu_hat - lam
    corr = (mg * (mb - lam) * pg0 + mb * (mg - lam) * pb0 - (mg - lam) * (mb - lam)) / ((p.alpha + p.beta) * d)
    return lam / d + corr


def waiting_time(p: TDQueueParams, z0: float) -> float:
    """Mean time in system by Little's law."""
    if p.lam == 0:
        raise NotApplicableError("waiting time is undefined without arrivals")
    return mean_queue(p, z0) / p.lam


def attempt_prob(p: TDQueueParams, z0: float) -> float:
    pg0, pb0 = empty_probs(p, z0)
    return ((p.pi_g - pg0) * -math.expm1(-p.mu_g)
            + (p.pi_b - pb0) * -math.expm1(-p.mu_b))


@dataclass
class QueueLengthLaw:
    good: np.ndarray
    bad: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.good + self.bad

    @property
    def mean(self) -> float:
        m = np.arange(self.good.size)
        return float((m * self.total).sum())


def steady_recursion(p: TDQueueParams, z0: float, m_max: int = 50,
                     tail_tol: float = 1e-6, m_limit: int = 20000) -> QueueLengthLaw:
    """Per-state queue-length probabilities from the level-crossing recursions.

    The recursions are numerically unstable in double precision (a growing
    mode is excited by rounding), so they run in multiprecision arithmetic
    with a working precision that grows with depth; m_max is extended until
    the remaining mass is below tail_tol.
    """
    lam, a, b = p.lam, p.alpha, p.beta
    m = max(int(m_max), 1)
    while True:
        growth = (lam + a + b + p.mu_g_eff + p.mu_b_eff) / min(p.mu_g_eff, p.mu_b_eff)
        dps = int(30 + m * math.log10(max(growth, 10.0)) * 1.5)
        with mpmath.workdps(dps):
            mg, mb = mpmath.mpf(p.mu_g_eff), mpmath.mpf(p.mu_b_eff)
            L, A, B = mpmath.mpf(lam), mpmath.mpf(a), mpmath.mpf(b)
            c3, c2, c1, c0 = _coeffs(L, A, B, mg, mb)
            z = mpmath.findroot(lambda x: ((c3 * x + c2) * x + c1) * x + c0, mpmath.mpf(z0))
            muhat = (B * mg + A * mb) / (A + B)
            d = muhat - L
            pg = [B * d * z / (mg * (1 - z) * (mb - L * z))]
            pb = [A * d * z / (mb * (1 - z) * (mg - L * z))]
            Sg, Sb = pg[0], pb[0]
            for _ in range(1, m + 1):
                ng = (pg[-1] * L + A * Sg - B * Sb) / mg
                nb = (pb[-1] * L + B * Sb - A * Sg) / mb
                pg.append(ng)
                pb.append(nb)
                Sg += ng
                Sb += nb
            tail = 1 - (Sg + Sb)
        good = np.array([float(x) for x in pg])
        bad = np.array([float(x) for x in pb])
        if min(good.min(), bad.min()) < -1e-9:
            raise ModelError("recursion produced a negative probability; precision exhausted")
        if float(tail) < tail_tol:
            return QueueLengthLaw(np.clip(good, 0.0, None), np.clip(bad, 0.0, None))
        if m >= m_limit:
            raise ModelError(f"tail mass {float(tail):.3g} still above {tail_tol} at depth {m}")
        m = min(2 * m, m_limit)


def steady_state(p: TDQueueParams, K: int = 1) -> TDQueueSteady:
    """Queue quantities at a fixed p_succ (no coupling)."""
    if p.lam == 0:
        return TDQueueSteady(p, z0=math.nan, pi_g0=p.pi_g, pi_b0=p.pi_b, p_succ=p.p_succ,
                             attempt_prob=0.0, mean_queue=0.0, wait=0.0)
    z0 = solve_z0(p)
    pg0, pb0 = empty_probs(p, z0)
    q = mean_queue(p, z0)
    return TDQueueSteady(p, z0=z0, pi_g0=pg0, pi_b0=pb0, p_succ=p.p_succ,
                         attempt_prob=attempt_prob(p, z0), mean_queue=q, wait=q / p.lam)


def solve_model3(K: int, lam: float, mu_g: float, mu_b: float, alpha: float, beta: float,
                 tol: float = 1e-10, max_iter: int = 2000, damping: float = 0.5) -> TDQueueSteady:
    """Joint solve of the queue and p_succ = (1 - P_t)^(K-1), rates per user."""
    if K < 1:
        raise DomainError("K must be at least 1")
    p = TDQueueParams(lam, mu_g, mu_b, alpha, beta, 1.0)
    if not p.stable:
        raise InstabilityError("unstable even without collisions (p_succ = 1)")
    if K == 1 or lam == 0:
        st = steady_state(p)
        st.iterations = 1
        return st
    ps = 1.0
    trace = []
    for it in range(1, max_iter + 1):
        cur = replace(p, p_succ=ps)
        if not cur.stable:
            raise InstabilityError(f"queue became unstable at p_succ={ps:.6g}")
        z0 = solve_z0(cur)
        pt = attempt_prob(cur, z0)
        new = (1.0 - pt) ** (K - 1)
        trace.append(abs(new - ps))
        if abs(new - ps) < tol:
            st = steady_state(replace(p, p_succ=new))
            st.iterations, st.trace = it, trace
            return st
        ps = ps + damping * (new - ps)
    raise ConvergenceError(f"model III coupling did not converge in {max_iter} iterations", trace)
