"""Slotted Monte Carlo simulator of K users sharing one channel.

Slot order: channel states advance, capacities are drawn, arrivals join the
queues, every user with a packet whose capacity beats the threshold
transmits, and a slot with exactly one transmitter delivers that packet.
Colliding packets stay at the head of their queues; there is no backoff.

Each (replication, user) pair owns an independent random stream spawned from
the configuration seed, so results do not depend on how replications are
batched. Queue metrics use Little's-law counters rather than per-packet
bookkeeping:

* ``time_in_line``: end-of-slot backlog behind the head-of-line packet, per departure
* ``hol_time``: user-slots spent holding a packet, per departure (includes the transmission slot)
* ``service_time``: ``hol_time - 1``
* ``sojourn``: in-slot queue content per departure
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .channel import ChannelModel, capacities_from_normals, simulate_capacity_path
from .dsched import ThresholdPlan
from .errors import DomainError

CHUNK = 2048


class ArrivalKind(enum.Enum):
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


class CapacityMode(enum.Enum):
    CHAIN_DEPENDENT = "chain"
    IID_MIXTURE = "iid_mixture"
    IID_GAUSSIAN = "iid_gaussian"


@dataclass
class SimConfig:
    K: int
    model: ChannelModel
    threshold: ThresholdPlan | float | tuple[float, float]
    arrival_rate: float = 0.0  # per user, per slot
    arrivals: ArrivalKind = ArrivalKind.BERNOULLI
    horizon: int = 1_000_000
    warmup: int | None = None
    replications: int = 1
    seed: int = 0
    capacity_mode: CapacityMode = CapacityMode.CHAIN_DEPENDENT
    backlogged: bool = False
    collision_free: bool = False  # every transmitter succeeds, as if transmissions took no time

    def __post_init__(self):
        if self.K < 1:
            raise DomainError("K must be at least 1")
        if self.warmup is None:
            self.warmup = self.horizon // 5
        if not (0 <= self.warmup < self.horizon):
            raise DomainError("need 0 <= warmup < horizon")
        if self.replications < 1:
            raise DomainError("need at least one replication")
        if self.arrival_rate < 0 or (self.arrivals is ArrivalKind.BERNOULLI and self.arrival_rate > 1):
            raise DomainError("invalid arrival rate")
        if not isinstance(self.threshold, ThresholdPlan):
            probs = self.threshold if isinstance(self.threshold, tuple) else (self.threshold,)
            if not all(0.0 <= x <= 1.0 for x in probs):
                raise DomainError("attempt probabilities must lie in [0,1]")


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float
    n: int

    def as_dict(self) -> dict:
        return {"mean": self.mean, "half_width": self.half_width, "n": self.n}


@dataclass
class SimResult:
    metrics: dict[str, Estimate]
    per_replication: dict[str, np.ndarray]
    replications: int
    seed: int
    warmup: int
    horizon: int
    conserved: bool = True

    def __getitem__(self, name: str) -> Estimate:
        return self.metrics[name]

    def as_dict(self) -> dict:
        return {"replications": self.replications, "seed": self.seed, "warmup": self.warmup,
                "horizon": self.horizon, "conserved": self.conserved,
                "metrics": {k: v.as_dict() for k, v in self.metrics.items()}}


def estimate(samples: np.ndarray, level: float = 0.95) -> Estimate:
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size
    if n == 0:
        return Estimate(math.nan, math.nan, 0)
    if n == 1:
        return Estimate(float(x[0]), math.inf, 1)
    hw = stats.t.ppf(0.5 + level / 2, n - 1) * x.std(ddof=1) / math.sqrt(n)
    return Estimate(float(x.mean()), float(hw), n)


def embedded_switch_probs(alpha_rate: float, beta_rate: float) -> tuple[float, float]:
    """Per-slot switching probabilities of a continuous-time two-state chain sampled once per slot."""
    s = alpha_rate + beta_rate
    if s <= 0:
        return 0.0, 0.0
    f = -math.expm1(-s) / s
    return alpha_rate * f, beta_rate * f


def _streams(seed: int, R: int, K: int) -> list[list[np.random.Generator]]:
    root = np.random.SeedSequence(seed)
    return [[np.random.Generator(np.random.PCG64(s)) for s in rep.spawn(K)]
            for rep in root.spawn(R)]


def _exceed_cutoffs(cfg: SimConfig):
    """(kind, good, bad): compare normals against cutoffs or uniforms against probabilities."""
    m = cfg.model
    if isinstance(cfg.threshold, ThresholdPlan):
        u = cfg.threshold.u
        if cfg.capacity_mode is CapacityMode.IID_GAUSSIAN:
            c = (u - m.mu_g) / m.sigma_g
            return "normal", c, c
        return "normal", (u - m.mu_g) / m.sigma_g, (u - m.mu_b) / m.sigma_b
    if isinstance(cfg.threshold, tuple):
        return "uniform", cfg.threshold[0], cfg.threshold[1]
    return "uniform", cfg.threshold, cfg.threshold


_COUNTERS = ("arrivals", "departures", "attempts", "attempts_nonidle", "success_slots",
             "collision_slots", "empty_slots", "q_end", "blocked", "holding", "q_during",
             "idle_end", "blocked_single", "unblocked_empty", "unblocked_one",
             "empty_good", "empty_bad", "exceedances", "cap_success")


def run_slotted(cfg: SimConfig) -> SimResult:
    R, K = cfg.replications, cfg.K
    model = cfg.model
    gens = _streams(cfg.seed, R, K)
    kind, cut_g, cut_b = _exceed_cutoffs(cfg)
    chain = cfg.capacity_mode is CapacityMode.CHAIN_DEPENDENT
    gaussian_only = cfg.capacity_mode is CapacityMode.IID_GAUSSIAN
    s = model.alpha + model.beta
    q_bad = model.alpha / s if s > 0 else 0.0
    lam = cfg.arrival_rate

    # initial channel states from each stream's first draw
    bad = np.array([[g.random() < q_bad for g in row] for row in gens]) & (not gaussian_only)
    Q = np.zeros((R, K), dtype=np.int64)
    acc = {k: np.zeros(R) for k in _COUNTERS}
    total_arr = np.zeros(R, dtype=np.int64)
    total_dep = np.zeros(R, dtype=np.int64)

    U_ch = np.empty((CHUNK, R, K))
    X = np.empty((CHUNK, R, K))
    A = np.empty((CHUNK, R, K))
    t = 0
    while t < cfg.horizon:
        C = min(CHUNK, cfg.horizon - t)
        for r in range(R):
            for k in range(K):
                g = gens[r][k]
                U_ch[:C, r, k] = g.random(C)
                X[:C, r, k] = g.standard_normal(C) if kind == "normal" else g.random(C)
                if cfg.backlogged:
                    pass
                elif cfg.arrivals is ArrivalKind.POISSON:
                    A[:C, r, k] = g.poisson(lam, C)
                else:
                    A[:C, r, k] = g.random(C) < lam
        for c in range(C):
            if chain:
                u = U_ch[c]
                bad = np.where(bad, u >= model.beta, u < model.alpha)
            elif not gaussian_only:
                bad = U_ch[c] < q_bad
            x = X[c]
            if kind == "normal":
                exceed = x > np.where(bad, cut_b, cut_g)
            else:
                exceed = x < np.where(bad, cut_b, cut_g)
            if cfg.backlogged:
                tx = exceed
            else:
                nonidle = Q > 0
                arr = A[c].astype(np.int64)
                Q += arr
                has = Q > 0
                tx = exceed & has
            ntx = tx.sum(axis=1)
            single = ntx == 1
            succ = tx if cfg.collision_free else tx & single[:, None]
            measuring = t + c >= cfg.warmup
            if not cfg.backlogged:
                q_during = Q.copy()
                Q -= succ
                total_arr += arr.sum(axis=1)
                total_dep += succ.sum(axis=1)
            if measuring:
                acc["attempts"] += tx.sum(axis=1)
                acc["success_slots"] += succ.sum(axis=1)
                acc["collision_slots"] += (ntx >= 2) & (not cfg.collision_free)
                acc["empty_slots"] += ntx == 0
                acc["exceedances"] += exceed.sum(axis=1)
                if kind == "normal":
                    cap = np.where(bad, model.mu_b + model.sigma_b * x, model.mu_g + model.sigma_g * x)
                    acc["cap_success"] += (cap * succ).sum(axis=1)
                if not cfg.backlogged:
                    blocked = has & ~succ
                    empty_end = Q == 0
                    acc["arrivals"] += arr.sum(axis=1)
                    acc["departures"] += succ.sum(axis=1)
                    acc["attempts_nonidle"] += (tx & nonidle).sum(axis=1)
                    acc["q_end"] += Q.sum(axis=1)
                    acc["blocked"] += blocked.sum(axis=1)
                    acc["holding"] += has.sum(axis=1)
                    acc["q_during"] += q_during.sum(axis=1)
                    acc["idle_end"] += empty_end.sum(axis=1)
                    acc["blocked_single"] += (blocked & (Q == 1)).sum(axis=1)
                    acc["unblocked_empty"] += empty_end.sum(axis=1)
                    acc["unblocked_one"] += (~blocked & (Q == 1)).sum(axis=1)
                    acc["empty_good"] += (empty_end & ~bad).sum(axis=1)
                    acc["empty_bad"] += (empty_end & bad).sum(axis=1)
        t += C

    slots = cfg.horizon - cfg.warmup
    us = slots * K
    per = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        per["success_prob"] = acc["success_slots"] / acc["attempts"]
        per["collision_prob"] = 1.0 - per["success_prob"]
        per["utilization"] = acc["success_slots"] / slots
        per["exceedances_per_slot"] = acc["exceedances"] / slots
        if kind == "normal":
            per["capacity_per_slot"] = acc["cap_success"] / slots
            per["capacity_given_success"] = acc["cap_success"] / acc["success_slots"]
        if not cfg.backlogged:
            dep = acc["departures"]
            per["arrival_rate"] = acc["arrivals"] / us
            per["throughput"] = dep / us
            per["success_prob_nonidle"] = acc["success_slots"] / acc["attempts_nonidle"]
            per["mean_queue"] = acc["q_during"] / us
            per["mean_queue_end"] = acc["q_end"] / us
            per["queue_behind_hol"] = (acc["q_end"] - acc["blocked"]) / us
            per["time_in_line"] = (acc["q_end"] - acc["blocked"]) / dep
            per["hol_time"] = acc["holding"] / dep
            per["service_time"] = per["hol_time"] - 1.0
            per["sojourn"] = acc["q_during"] / dep
            per["empty_fraction"] = 1.0 - acc["holding"] / us
            per["idle_fraction"] = acc["idle_end"] / us
            per["blocked_fraction"] = acc["blocked"] / us
            per["blocked_single_fraction"] = acc["blocked_single"] / us
            per["unblocked_empty_fraction"] = acc["unblocked_empty"] / us
            per["unblocked_one_fraction"] = acc["unblocked_one"] / us
            per["empty_good_fraction"] = acc["empty_good"] / us
            per["empty_bad_fraction"] = acc["empty_bad"] / us
    metrics = {k: estimate(v) for k, v in per.items()}
    conserved = bool(np.all(total_arr == total_dep + Q.sum(axis=1))) if not cfg.backlogged else True
    return SimResult(metrics=metrics, per_replication=per, replications=R, seed=cfg.seed,
                     warmup=cfg.warmup, horizon=cfg.horizon, conserved=conserved)


# capacity statistics

@dataclass
class MaxCapacitySample:
    values: np.ndarray
    hist: np.ndarray
    edges: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std(ddof=1)) if self.values.size > 1 else 0.0

    @property
    def std_error(self) -> float:
        return self.std / math.sqrt(self.values.size)


def estimate_capacity_max(cfg: SimConfig, bins: int = 60) -> MaxCapacitySample:
    """Per-slot best capacity over K users, cfg.horizon slots per replication.

    Replications start from the stationary law; within a replication the
    states follow the chain (or are redrawn each slot in the iid modes).
    One stream per replication.
    """
    R, K, n = cfg.replications, cfg.K, cfg.horizon
    model = cfg.model
    s = model.alpha + model.beta
    q_bad = model.alpha / s if s > 0 else 0.0
    out = np.empty((R, n))
    for r, seq in enumerate(np.random.SeedSequence(cfg.seed).spawn(R)):
        g = np.random.Generator(np.random.PCG64(seq))
        if cfg.capacity_mode is CapacityMode.IID_GAUSSIAN:
            bad = np.zeros(K, dtype=bool)
        else:
            bad = g.random(K) < q_bad
        for t in range(n):
            if t > 0:
                u = g.random(K)
                if cfg.capacity_mode is CapacityMode.CHAIN_DEPENDENT:
                    bad = np.where(bad, u >= model.beta, u < model.alpha)
                elif cfg.capacity_mode is CapacityMode.IID_MIXTURE:
                    bad = u < q_bad
            out[r, t] = capacities_from_normals(bad, g.standard_normal(K), model).max()
    values = out.ravel()
    hist, edges = np.histogram(values, bins=bins, density=True)
    return MaxCapacitySample(values=values, hist=hist, edges=edges)


@dataclass
class ExceedanceCounts:
    counts: np.ndarray  # exceedances per window
    level: float
    window: int

    def frequencies(self, kmax: int = 6) -> np.ndarray:
        return np.bincount(np.minimum(self.counts, kmax), minlength=kmax + 1) / self.counts.size

    def poisson_chisquare(self, tau: float, min_expected: float = 5.0) -> tuple[float, float]:
        return poisson_chisquare(self.counts, tau, min_expected)


def poisson_chisquare(counts: np.ndarray, tau: float, min_expected: float = 5.0) -> tuple[float, float]:
    """Chi-square goodness of fit of integer counts to Poisson(tau); returns (statistic, p-value).

    Upper cells are pooled until every expected count reaches min_expected.
    """
    counts = np.asarray(counts)
    n = counts.size
    kmax = int(max(counts.max(initial=0), 1))
    obs = np.bincount(counts, minlength=kmax + 1).astype(float)
    pmf = stats.poisson.pmf(np.arange(kmax + 1), tau)
    pmf[-1] += stats.poisson.sf(kmax, tau)
    exp = n * pmf
    # pool from the top down
    while exp.size > 2 and exp[-1] < min_expected:
        exp[-2] += exp[-1]
        obs[-2] += obs[-1]
        exp, obs = exp[:-1], obs[:-1]
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    dof = exp.size - 1
    if dof < 1:
        return chi2, 1.0
    return chi2, float(stats.chi2.sf(chi2, dof))


def exceedance_counts(cfg: SimConfig, level: float, window: int) -> ExceedanceCounts:
    """Exceedances of one user's capacity sequence above level, per window of slots.

    cfg.horizon slots are split into consecutive windows; every replication
    contributes horizon // window windows.
    """
    model = cfg.model
    counts = []
    nwin = cfg.horizon // window
    for seq in np.random.SeedSequence(cfg.seed).spawn(cfg.replications):
        g = np.random.Generator(np.random.PCG64(seq))
        n = nwin * window
        if cfg.capacity_mode is CapacityMode.IID_GAUSSIAN:
            done = 0
            while done < n:
                m = min(n - done, 1 << 22)
                x = model.mu_g + model.sigma_g * g.standard_normal(m)
                counts.append(_window_counts(x > level, window))
                done += m
        elif cfg.capacity_mode is CapacityMode.IID_MIXTURE:
            s = model.alpha + model.beta
            bad = g.random(n) < model.alpha / s
            counts.append(_window_counts(capacities_from_normals(bad, g.standard_normal(n), model) > level, window))
        else:
            _, x = simulate_capacity_path(n, model, g)
            counts.append(_window_counts(x > level, window))
    return ExceedanceCounts(np.concatenate(counts), level, window)


def _window_counts(flags: np.ndarray, window: int) -> np.ndarray:
    m = flags.size // window
    return flags[: m * window].reshape(m, window).sum(axis=1)


def thin_events(events, retain_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Keep each event independently with probability retain_prob."""
    if not (0.0 <= retain_prob <= 1.0):
        raise DomainError("retain_prob must lie in [0,1]")
    events = np.asarray(events)
    if retain_prob == 1.0:
        return events.copy()
    keep = rng.random(events.shape[0]) < retain_prob
    return events[keep]


def thin_counts(counts, retain_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Per-window counts after independent thinning of the underlying events."""
    if not (0.0 <= retain_prob <= 1.0):
        raise DomainError("retain_prob must lie in [0,1]")
    return rng.binomial(np.asarray(counts, dtype=np.int64), retain_prob)


# event-level status dynamics (independent check of the coupled-chain transition law)

@dataclass
class StatusStep:
    to: np.ndarray  # (n, K) next status vectors
    winner: np.ndarray  # index of the successful user, -1 if none


def status_step(states: np.ndarray, lam: np.ndarray, p: np.ndarray, p11: np.ndarray,
                p02: np.ndarray, rng: np.random.Generator) -> StatusStep:
    """Sample one slot of the status dynamics for many independent status vectors.

    The queue content behind a successful packet is not tracked; it is drawn
    from the per-user summaries p11 (active) and p02 (blocked), which is what
    the coupled-chain approximation assumes.
    """
    S = np.asarray(states, dtype=np.int8)
    n, K = S.shape
    idle = S == 0
    arrive = rng.random((n, K)) < lam
    holds = ~idle | arrive
    attempt = holds & (rng.random((n, K)) < p)
    natt = attempt.sum(axis=1)
    winner = np.where(natt == 1, np.argmax(attempt, axis=1), -1)
    to = np.where(holds, 2, 0).astype(np.int8)
    rows = np.flatnonzero(winner >= 0)
    w = winner[rows]
    prev = S[rows, w]
    more = rng.random(rows.size)
    arrived_now = arrive[rows, w]
    # active winner keeps a backlog with prob p11, blocked winner has exactly one with prob p02
    backlog = np.where(prev == 1, more < p11[w], np.where(prev == 2, more >= p02[w], False))
    # the winner's own new arrival refills the queue unless it was the arrival that just left
    refill = arrived_now & (prev != 0)
    to[rows, w] = np.where(backlog | refill, 1, 0)
    return StatusStep(to=to, winner=winner)
