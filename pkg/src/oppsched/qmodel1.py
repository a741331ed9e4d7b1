"""Coupled-chain approximation for K interacting queues with delayed first transmission.

Two sets of chains are solved jointly:

* the system-status chain over vectors S in {idle=0, active=1, blocked=2}^K
  with at most one active user;
* per-user queue-length chains summarised by a handful of steady-state
  probabilities.

The status chain needs two queue summaries per user (P(1|1), P(0|2)); the
queue chains need the average success probabilities computed from the
status chain. The loop alternates the two until the summaries settle.

Slot semantics. Arrivals (Bernoulli, at most one per slot) happen at slot
start. Every user holding a packet, including one that just arrived to an
empty queue, attempts with probability p. Exactly one attempt means success.

P_I is kept conditional on an arrival to the idle user; the unconditional
value is lambda * P_I.
"""
from __future__ import annotations

import functools
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import ConvergenceError, DomainError, InstabilityError, ModelError
from .solution import QModelSolution

IDLE, ACTIVE, BLOCKED = 0, 1, 2
K_MAX = 10


@dataclass(frozen=True)
class UserParams:
    lam: float  # arrival probability per slot
    p: float  # attempt probability per slot

    def __post_init__(self):
        if not (0.0 <= self.lam < 1.0):
            raise DomainError(f"arrival probability must lie in [0,1), got {self.lam}")
        if not (0.0 < self.p < 1.0):
            raise DomainError(f"attempt probability must lie in (0,1), got {self.p}")


def symmetric_params(K: int, lam_total: float, p: float | None = None) -> list[UserParams]:
    """K identical users sharing lam_total, each attempting with p (default 1/K)."""
    p = 1.0 / K if p is None else p
    return [UserParams(lam_total / K, p) for _ in range(K)]


@dataclass
class AuxProbs:
    p11: np.ndarray  # P(queue > 1 | active)
    p02: np.ndarray  # P(queue = 1 | blocked)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p11, self.p02])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "AuxProbs":
        k = v.size // 2
        return cls(np.array(v[:k], dtype=float), np.array(v[k:], dtype=float))

    @classmethod
    def light_traffic(cls, params: list[UserParams]) -> "AuxProbs":
        lam = np.array([u.lam for u in params])
        return cls(lam.copy(), 1.0 - lam)


@dataclass
class SuccessProbs:
    P_I: np.ndarray  # success | idle and a packet arrived
    P_A: np.ndarray
    P_B: np.ndarray


@dataclass
class QueueSteady:
    pi00: np.ndarray  # blocked, nothing behind the head-of-line packet
    pi10: np.ndarray  # unblocked and empty
    pi11: np.ndarray  # unblocked with one packet
    G0: np.ndarray  # P(blocked)
    G1: np.ndarray  # P(unblocked)


@dataclass
class StatusDistribution:
    states: np.ndarray  # (n_states, K) int8
    probs: np.ndarray

    def as_dict(self) -> dict[tuple, float]:
        return {tuple(int(x) for x in s): float(p) for s, p in zip(self.states, self.probs)}


@dataclass
class Model1Solution:
    params: list[UserParams]
    aux: AuxProbs
    success: SuccessProbs
    queue: QueueSteady
    status: StatusDistribution
    iterations: int
    trace: list[float] = field(default_factory=list)


@dataclass
class Model1Metrics:
    L: np.ndarray  # mean queue excluding a blocked head-of-line packet
    Wq: np.ndarray
    Ws: np.ndarray
    D: np.ndarray
    p_succ: np.ndarray  # successes over exceedances by users non-idle at slot start
    p_succ_attempt: np.ndarray  # successes over all attempts
    system_delay: float

    def summary(self) -> QModelSolution:
        return QModelSolution(mean_queue=float(np.mean(self.L)),
                              time_in_line=float(np.mean(self.Wq)),
                              service_time=float(np.mean(self.Ws)),
                              delay=float(self.system_delay),
                              success_prob=float(np.mean(self.p_succ)))


# status space

def _check_K(K: int) -> None:
    if K < 1:
        raise DomainError("K must be at least 1")
    if K > K_MAX:
        raise DomainError(f"K={K} exceeds {K_MAX}: the status space grows like 2^(K-1)(K+2)")


@functools.lru_cache(maxsize=None)
def _states_array(K: int) -> np.ndarray:
    rows = [s for s in itertools.product((IDLE, BLOCKED), repeat=K)]
    for a in range(K):
        for rest in itertools.product((IDLE, BLOCKED), repeat=K - 1):
            rows.append(rest[:a] + (ACTIVE,) + rest[a:])
    return np.array(rows, dtype=np.int8).reshape(-1, K)


def enumerate_states(K: int) -> list[tuple[int, ...]]:
    _check_K(K)
    return [tuple(int(x) for x in s) for s in _states_array(K)]


def n_states(K: int) -> int:
    return 2 ** (K - 1) * (K + 2)


def _validate_state(s, K: int) -> tuple[int, ...]:
    s = tuple(int(x) for x in s)
    if len(s) != K or any(x not in (IDLE, ACTIVE, BLOCKED) for x in s):
        raise DomainError(f"invalid status vector {s}")
    if sum(x == ACTIVE for x in s) > 1:
        raise DomainError(f"status vector {s} has more than one active user")
    return s


# pairwise transition probability

def _arrays(params: list[UserParams]) -> tuple[np.ndarray, np.ndarray]:
    return np.array([u.lam for u in params]), np.array([u.p for u in params])


def status_transition_prob(frm, to, params: list[UserParams], aux: AuxProbs) -> float:
    """One-slot probability of moving from status vector frm to status vector to.

    Holders of a packet at slot start (non-idle users, plus idle users with an
    arrival) each attempt independently. Without a unique attempt every
    holder ends blocked. With a unique attempt by user x, the other holders
    end blocked and x ends idle or active depending on its queue summary.
    """
    K = len(params)
    frm = _validate_state(frm, K)
    to = _validate_state(to, K)
    lam, p = _arrays(params)
    lb, pb = 1.0 - lam, 1.0 - p
    nonidle = [u for u in range(K) if frm[u] != IDLE]
    idle = [u for u in range(K) if frm[u] == IDLE]
    if any(to[u] == ACTIVE for u in idle):
        return 0.0
    changed = [u for u in nonidle if to[u] != BLOCKED]
    if len(changed) > 1:
        return 0.0
    zero = [u for u in idle if to[u] == IDLE]
    arrived = [u for u in idle if to[u] == BLOCKED]

    if changed:
        # success by a non-idle user x; arrivals elsewhere must not attempt
        x = changed[0]
        pr = p[x]
        for u in nonidle:
            if u != x:
                pr *= pb[u]
        for u in zero:
            pr *= lb[u]
        for u in arrived:
            pr *= lam[u] * pb[u]
        if frm[x] == ACTIVE:
            keep = aux.p11[x] + lam[x] * (1.0 - aux.p11[x])
            drain = lb[x] * (1.0 - aux.p11[x])
        else:
            keep = (1.0 - aux.p02[x]) + lam[x] * aux.p02[x]
            drain = lb[x] * aux.p02[x]
        return float(pr * (keep if to[x] == ACTIVE else drain))

    # every non-idle user ends blocked: either no unique attempt, or a fresh
    # arrival at some currently idle user x went straight through
    holders = nonidle + arrived
    arrive_pattern = np.prod(lb[zero]) * np.prod(lam[arrived])
    unique = 0.0
    for y in holders:
        unique += p[y] * np.prod([pb[v] for v in holders if v != y])
    pr = arrive_pattern * (1.0 - unique)
    quiet = np.prod(pb[nonidle]) * np.prod(lam[arrived] * pb[arrived])
    for x in zero:
        pr += lam[x] * p[x] * np.prod([lb[v] for v in zero if v != x]) * quiet
    return float(pr)


# vectorized transition matrix

_F_ONE, _F_LB, _F_LAM, _F_LPB, _F_LP, _F_PB, _F_P = 0, 1, 2, 3, 4, 5, 6
_F_ACT_KEEP, _F_ACT_DRAIN, _F_BLK_KEEP, _F_BLK_DRAIN = 7, 8, 9, 10


@dataclass(frozen=True)
class _TermStructure:
    rows: np.ndarray
    cols: np.ndarray
    sign: np.ndarray
    codes: np.ndarray  # (n_terms, K) factor codes


@functools.lru_cache(maxsize=None)
def _term_structure(K: int) -> _TermStructure:
    """Signed product terms whose sums give every nonzero transition probability.

    Built once per K; the probabilities for given parameters are a gather and
    a row product over a per-user factor table.
    """
    states = _states_array(K)
    pow3 = 3 ** np.arange(K)
    lookup = np.full(3 ** K, -1, dtype=np.int64)
    lookup[states.astype(np.int64) @ pow3] = np.arange(len(states))
    rows, cols, signs, codes = [], [], [], []

    def emit(r, to_code, sign, c):
        rows.append(np.full(len(to_code), r, dtype=np.int64))
        cols.append(lookup[to_code])
        signs.append(np.full(len(to_code), sign, dtype=np.int8))
        codes.append(c.astype(np.int8))

    for r, s in enumerate(states):
        idle = np.flatnonzero(s == IDLE)
        nonidle = np.flatnonzero(s != IDLE)
        m = idle.size
        W = ((np.arange(2 ** m)[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
        to_base = 2 * pow3[nonidle].sum() + (2 * W * pow3[idle]).sum(axis=1)
        quiet = np.empty((2 ** m, K), dtype=np.int8)
        quiet[:, nonidle] = _F_PB
        quiet[:, idle] = np.where(W, _F_LPB, _F_LB)

        c = np.empty((2 ** m, K), dtype=np.int8)
        c[:, nonidle] = _F_ONE
        c[:, idle] = np.where(W, _F_LAM, _F_LB)
        emit(r, to_base, +1, c)
        for y in nonidle:
            c = quiet.copy()
            c[:, y] = _F_P
            emit(r, to_base, -1, c)
        for j, y in enumerate(idle):
            sel = W[:, j]
            c = quiet[sel].copy()
            c[:, y] = _F_LP
            emit(r, to_base[sel], -1, c)
            sel = ~W[:, j]
            c = quiet[sel].copy()
            c[:, y] = _F_LP
            emit(r, to_base[sel], +1, c)
        for x in nonidle:
            for target, code in ((ACTIVE, _F_ACT_KEEP if s[x] == ACTIVE else _F_BLK_KEEP),
                                 (IDLE, _F_ACT_DRAIN if s[x] == ACTIVE else _F_BLK_DRAIN)):
                c = quiet.copy()
                c[:, x] = code
                emit(r, to_base + (target - 2) * pow3[x], +1, c)
    out = _TermStructure(np.concatenate(rows), np.concatenate(cols),
                         np.concatenate(signs), np.concatenate(codes))
    if np.any(out.cols < 0):
        raise ModelError("internal: transition leads outside the status space")
    return out


def _factor_table(params: list[UserParams], aux: AuxProbs) -> np.ndarray:
    lam, p = _arrays(params)
    lb, pb = 1.0 - lam, 1.0 - p
    p11, p02 = aux.p11, aux.p02
    return np.stack([
        np.ones_like(lam), lb, lam, lam * pb, lam * p, pb, p,
        p * (p11 + lam * (1.0 - p11)),
        p * lb * (1.0 - p11),
        p * ((1.0 - p02) + lam * p02),
        p * lb * p02,
    ], axis=1)


def status_transition_matrix(params: list[UserParams], aux: AuxProbs) -> sparse.csr_matrix:
    K = len(params)
    _check_K(K)
    ts = _term_structure(K)
    F = _factor_table(params, aux)
    vals = F[np.arange(K)[None, :], ts.codes].prod(axis=1) * ts.sign
    n = n_states(K)
    P = sparse.coo_matrix((vals, (ts.rows, ts.cols)), shape=(n, n)).tocsr()
    P.sum_duplicates()
    P.data[np.abs(P.data) < 1e-300] = 0.0
    P.eliminate_zeros()
    return P


def _stationary_vector(P: sparse.csr_matrix) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1.

    Large chains use GMRES on (I - P^T) x + 1 (1^T x) = 1, whose unique
    solution is the stationary vector; small ones, or a failed GMRES run,
    use a sparse LU with one balance equation replaced by normalization.
    """
    n = P.shape[0]
    if n > 500:
        M = (sparse.identity(n, format="csr") - P.T).tocsr()
        op = splinalg.LinearOperator((n, n), matvec=lambda v: M @ v + v.sum())
        pi, info = splinalg.gmres(op, np.ones(n), rtol=1e-14, atol=0.0, restart=100, maxiter=2000)
        if info == 0 and np.max(np.abs(pi @ P - pi)) < 1e-11:
            return pi
    A = (P.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = splinalg.spsolve(A.tocsc(), rhs)
    except Exception as exc:  # singular factorization
        raise ModelError(f"status chain stationary solve failed: {exc}") from exc
    if not np.all(np.isfinite(pi)):
        raise ModelError("status chain stationary solve returned non-finite values")
    return pi


def status_stationary(params: list[UserParams], aux: AuxProbs) -> StatusDistribution:
    K = len(params)
    _check_K(K)
    P = status_transition_matrix(params, aux)
    pi = _stationary_vector(P)
    resid = np.max(np.abs(pi @ P - pi))
    if resid > 1e-9:
        raise ModelError(f"status chain balance residual {resid:.3g}")
    pi = np.clip(pi, 0.0, None)
    return StatusDistribution(states=_states_array(K).copy(), probs=pi / pi.sum())


# success probabilities

def success_probs(dist: StatusDistribution, params: list[UserParams],
                  strict: bool = True) -> SuccessProbs:
    """Average success probability of user i conditioned on its own status.

    The others stay quiet with probability (1 - lam p) when idle and (1 - p)
    otherwise. With strict=False a status of zero mass is conditioned on the
    others' marginal law instead of raising.
    """
    lam, p = _arrays(params)
    S, w = dist.states, dist.probs
    K = S.shape[1]
    quiet = np.where(S == IDLE, 1.0 - lam * p, 1.0 - p)
    out = {IDLE: np.zeros(K), ACTIVE: np.zeros(K), BLOCKED: np.zeros(K)}
    names = {IDLE: "idle", ACTIVE: "active", BLOCKED: "blocked"}
    for i in range(K):
        others = np.prod(np.delete(quiet, i, axis=1), axis=1)
        for status in (IDLE, ACTIVE, BLOCKED):
            if status == ACTIVE:
                mask = (S[:, i] == ACTIVE)
            else:
                mask = (S[:, i] == status)
            mass = w[mask].sum()
            if mass > 0:
                out[status][i] = p[i] * (w[mask] * others[mask]).sum() / mass
            elif strict:
                raise ModelError(f"user {i} has zero probability of being {names[status]}")
            else:
                # fall back to the others' unconditional status mix
                allowed = np.ones(len(w), dtype=bool)
                if status == ACTIVE:
                    allowed = ~np.any(np.delete(S, i, axis=1) == ACTIVE, axis=1)
                ww = w * allowed
                out[status][i] = p[i] * (ww * others).sum() / ww.sum() if ww.sum() > 0 else p[i]
    return SuccessProbs(P_I=out[IDLE], P_A=out[ACTIVE], P_B=out[BLOCKED])


# queue chain summaries

def queue_steady(sp: SuccessProbs, lam) -> QueueSteady:
    lam = np.asarray(lam, dtype=float)
    lb = 1.0 - lam
    den = lb * sp.P_B - lam * (sp.P_I - sp.P_A)
    if np.any(den <= 0):
        raise InstabilityError("queue-length chain unstable: lbar*P_B - lam*(P_I - P_A) <= 0")
    pi10 = (lb * sp.P_B - lam * (1.0 - sp.P_A)) / den
    if np.any(pi10 < -1e-12) or np.any(pi10 > 1 + 1e-12):
        raise InstabilityError("queue-length chain unstable: empty probability outside [0,1]")
    pi00 = lam * (1.0 - sp.P_I) / (lam * sp.P_A + lb * sp.P_B) * pi10
    pi11 = np.divide(lam, lb) * pi00
    G0 = lam * lb * (1.0 - sp.P_I) / den
    G1 = lam + lb * pi10
    return QueueSteady(pi00=pi00, pi10=pi10, pi11=pi11, G0=G0, G1=G1)


def aux_update(qs: QueueSteady, clamp_tol: float = 1e-9) -> AuxProbs:
    busy = qs.G1 - qs.pi10
    if np.any(busy <= 0) or np.any(qs.G0 <= 0):
        raise ModelError("degenerate queue summaries: no active or no blocked mass")
    p11 = 1.0 - qs.pi11 / busy
    p02 = qs.pi00 / qs.G0
    for name, v in (("P(1|1)", p11), ("P(0|2)", p02)):
        off = np.maximum(v - 1.0, -v).max()
        if off > clamp_tol:
            raise ModelError(f"{name} outside [0,1] by {off:.3g}")
        if off > 0:
            warnings.warn(f"{name} clamped into [0,1] (off by {off:.2g})", RuntimeWarning)
    return AuxProbs(np.clip(p11, 0.0, 1.0), np.clip(p02, 0.0, 1.0))


# fixed point

def _outer_map(params, aux):
    lam, _ = _arrays(params)
    dist = status_stationary(params, aux)
    sp = success_probs(dist, params, strict=False)
    qs = queue_steady(sp, lam)
    active = lam > 0
    new = AuxProbs.light_traffic(params)
    if np.any(active):
        sub = QueueSteady(*(getattr(qs, f)[active] for f in ("pi00", "pi10", "pi11", "G0", "G1")))
        upd = aux_update(sub)
        new.p11[active] = upd.p11
        new.p02[active] = upd.p02
    return new, dist, sp, qs


def solve_model1(params: list[UserParams], tol: float = 1e-8, max_iter: int = 500,
                 init: AuxProbs | None = None) -> Model1Solution:
    """Wegstein iteration on the aux-probability vector.

    Each coordinate uses its own secant slope; the acceleration factor is
    bounded to [-5, 0.9]. When the residual grows twice in a row the loop
    switches to Picard steps damped by 0.5.
    """
    K = len(params)
    _check_K(K)
    x = (init or AuxProbs.light_traffic(params)).vector()
    trace = []
    x_prev = g_prev = None
    picard = False
    rising = 0
    for it in range(1, max_iter + 1):
        new, dist, sp, qs = _outer_map(params, AuxProbs.from_vector(x))
        g = new.vector()
        resid = float(np.max(np.abs(g - x)))
        trace.append(resid)
        if resid < tol:
            aux = AuxProbs.from_vector(g)
            new, dist, sp, qs = _outer_map(params, aux)
            return Model1Solution(params, aux, sp, qs, dist, it, trace)
        if len(trace) >= 2 and trace[-1] > trace[-2]:
            rising += 1
            if rising >= 2:
                picard = True
        else:
            rising = 0
        if picard or x_prev is None:
            nxt = x + 0.5 * (g - x) if picard else g
        else:
            dx = x - x_prev
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(np.abs(dx) > 1e-14, (g - g_prev) / dx, 0.0)
                q = np.where(np.abs(s - 1.0) > 1e-12, s / (s - 1.0), 0.0)
            q = np.clip(q, -5.0, 0.9)
            nxt = q * x + (1.0 - q) * g
        x_prev, g_prev = x, g
        x = np.clip(nxt, 0.0, 1.0)
    raise ConvergenceError(f"model I fixed point not reached in {max_iter} iterations "
                           f"(last residual {trace[-1]:.3g})", trace)


def metrics_model1(sol: Model1Solution) -> Model1Metrics:
    lam, p = _arrays(sol.params)
    lb = 1.0 - lam
    sp, qs = sol.success, sol.queue
    den = lb * sp.P_B - lam * (sp.P_I - sp.P_A)
    L = lam ** 2 * lb * (1.0 - sp.P_I) / ((lb * sp.P_B - lam * (1.0 - sp.P_A)) * den)
    with np.errstate(divide="ignore", invalid="ignore"):
        Wq = np.where(lam > 0, L / np.where(lam > 0, lam, 1.0), 0.0)
    holding = 1.0 - lb * qs.pi10
    with np.errstate(divide="ignore", invalid="ignore"):
        Ws = np.where(holding > 0, qs.G0 / np.where(holding > 0, holding, 1.0) / sp.P_B, 0.0)
    D = Wq + Ws + 1.0
    num = sp.P_A * (qs.G1 - qs.pi10) + lam * sp.P_I * qs.pi10 + sp.P_B * qs.G0
    busy = 1.0 - qs.pi10
    with np.errstate(divide="ignore", invalid="ignore"):
        p_succ = np.where(busy > 0, num / (p * np.where(busy > 0, busy, 1.0)), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p_att = np.where(holding > 0, num / (p * np.where(holding > 0, holding, 1.0)), 1.0)
    system_delay = float((D * lam).sum() / lam.sum()) if lam.sum() > 0 else 1.0
    return Model1Metrics(L=L, Wq=Wq, Ws=Ws, D=D, p_succ=p_succ, p_succ_attempt=p_att,
                         system_delay=system_delay)


def throughput_balance(sol: Model1Solution) -> np.ndarray:
    """Per-user departure rate implied by the solution; equals lam at steady state."""
    lam, _ = _arrays(sol.params)
    sp, qs = sol.success, sol.queue
    return sp.P_A * (qs.G1 - qs.pi10) + lam * sp.P_I * qs.pi10 + sp.P_B * qs.G0
