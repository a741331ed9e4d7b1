"""Gilbert-Elliott channel: two-state Markov dynamics with Gaussian capacities per state.

Capacities are unit-agnostic (nats or bits, as long as inputs agree).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DomainError, NonErgodicChainError

_SQRT2 = math.sqrt(2.0)


class UserState(enum.IntEnum):
    GOOD = 0
    BAD = 1


@dataclass(frozen=True)
class ChannelModel:
    """Per-slot switching probabilities and per-state Gaussian capacity laws.

    alpha is the Good->Bad probability, beta the Bad->Good probability.
    """

    alpha: float
    beta: float
    mu_g: float
    sigma_g: float
    mu_b: float
    sigma_b: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise DomainError(f"alpha, beta must lie in [0,1], got {self.alpha}, {self.beta}")
        if not (self.sigma_g > 0 and self.sigma_b > 0):
            raise DomainError("sigma_g and sigma_b must be positive")
        ordered = self.sigma_g > self.sigma_b or (
            self.sigma_g == self.sigma_b and self.mu_g > self.mu_b
        )
        if not ordered:
            raise DomainError(
                "good state must have the larger spread, or equal spread and larger mean"
            )

    @property
    def good_tail_dominates(self) -> bool:
        """False when the good state has the larger spread but a smaller mean.

        Such models are accepted, but the asymptotic formulas are less reliable at moderate K.
        """
        return self.mu_g >= self.mu_b

    @property
    def ergodic(self) -> bool:
        return self.alpha + self.beta > 0

    def scaled(self, c: float) -> "ChannelModel":
        """Capacities multiplied by c > 0; the switching dynamics are unchanged."""
        return ChannelModel(self.alpha, self.beta, c * self.mu_g, c * self.sigma_g,
                            c * self.mu_b, c * self.sigma_b)

    def shifted(self, c: float) -> "ChannelModel":
        return ChannelModel(self.alpha, self.beta, self.mu_g + c, self.sigma_g,
                            self.mu_b + c, self.sigma_b)

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "mu_g": self.mu_g,
                "sigma_g": self.sigma_g, "mu_b": self.mu_b, "sigma_b": self.sigma_b}


def stationary_state_probs(model: ChannelModel) -> tuple[float, float]:
    """Long-run fractions of time (good, bad)."""
    s = model.alpha + model.beta
    if s <= 0:
        raise NonErgodicChainError("alpha = beta = 0: the channel never switches state")
    return model.beta / s, model.alpha / s


def norm_cdf(z):
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / _SQRT2)


def norm_sf(z):
    return 0.5 * special.erfc(np.asarray(z, dtype=float) / _SQRT2)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _weights(model: ChannelModel) -> tuple[float, float]:
    return stationary_state_probs(model)


def mixture_cdf(t, model: ChannelModel):
    p, q = _weights(model)
    out = p * norm_cdf((np.asarray(t, dtype=float) - model.mu_g) / model.sigma_g) \
        + q * norm_cdf((np.asarray(t, dtype=float) - model.mu_b) / model.sigma_b)
    return out if np.ndim(out) else float(out)


def mixture_sf(t, model: ChannelModel):
    """1 - mixture_cdf, computed directly so the far tail keeps full relative precision."""
    p, q = _weights(model)
    t = np.asarray(t, dtype=float)
    out = p * norm_sf((t - model.mu_g) / model.sigma_g) + q * norm_sf((t - model.mu_b) / model.sigma_b)
    return out if np.ndim(out) else float(out)


def mixture_pdf(t, model: ChannelModel):
    p, q = _weights(model)
    t = np.asarray(t, dtype=float)
    out = (p / model.sigma_g) * norm_pdf((t - model.mu_g) / model.sigma_g) \
        + (q / model.sigma_b) * norm_pdf((t - model.mu_b) / model.sigma_b)
    return out if np.ndim(out) else float(out)


def mixture_quantile(prob: float, model: ChannelModel) -> float:
    """Inverse of mixture_cdf by bracketing and Brent refinement.

    Above the median the root is taken on the survival function so tail
    probabilities like 1/K keep their relative accuracy.
    """
    if not (0.0 < prob < 1.0):
        raise DomainError(f"probability must lie in (0,1), got {prob}")
    use_tail = prob > 0.5

    def g(t):
        # increasing in t in both branches
        if use_tail:
            return (1.0 - prob) - mixture_sf(t, model)
        return mixture_cdf(t, model) - prob

    spread = max(model.sigma_g, model.sigma_b)
    lo, step = min(model.mu_g, model.mu_b), spread
    while g(lo) > 0:
        lo -= step
        step *= 2
    hi, step = max(model.mu_g, model.mu_b), spread
    while g(hi) < 0:
        hi += step
        step *= 2
    if g(lo) == 0:
        return float(lo)
    if g(hi) == 0:
        return float(hi)
    t = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(t)


def step_state(s: UserState, model: ChannelModel, rng: np.random.Generator) -> UserState:
    u = rng.random()
    if s == UserState.GOOD:
        return UserState.BAD if u < model.alpha else UserState.GOOD
    return UserState.GOOD if u < model.beta else UserState.BAD


def sample_capacity(s: UserState, model: ChannelModel, rng: np.random.Generator) -> float:
    if s == UserState.GOOD:
        return float(rng.normal(model.mu_g, model.sigma_g))
    return float(rng.normal(model.mu_b, model.sigma_b))


# vectorized helpers used by the simulator

def step_states(bad: np.ndarray, model: ChannelModel, u: np.ndarray) -> np.ndarray:
    """Advance boolean 'is bad' flags given uniforms u of the same shape."""
    return np.where(bad, u >= model.beta, u < model.alpha)


def sample_stationary_states(shape, model: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    _, q = stationary_state_probs(model)
    return rng.random(shape) < q


def capacities_from_normals(bad: np.ndarray, z: np.ndarray, model: ChannelModel) -> np.ndarray:
    return np.where(bad, model.mu_b + model.sigma_b * z, model.mu_g + model.sigma_g * z)


def simulate_state_path(n: int, model: ChannelModel, rng: np.random.Generator,
                        start: UserState | None = None) -> np.ndarray:
    """Bad flags of one user's chain over n slots, built from geometric sojourn times.

    The start is drawn from the stationary law unless given.
    """
    if start is None:
        cur_bad = bool(sample_stationary_states((), model, rng))
    else:
        cur_bad = start == UserState.BAD
    out = np.empty(n, dtype=bool)
    pos = 0
    leave = {False: model.alpha, True: model.beta}
    while pos < n:
        p_leave = leave[cur_bad]
        if p_leave <= 0:
            out[pos:] = cur_bad
            break
        # draw a batch of alternating sojourns sized to the remaining slots
        if min(model.alpha, model.beta) > 0:
            m = int(1.2 * (n - pos) / (1.0 / model.alpha + 1.0 / model.beta)) + 16
        else:
            m = 1
        first = rng.geometric(p_leave, size=m)
        second = rng.geometric(leave[not cur_bad], size=m) if leave[not cur_bad] > 0 else None
        if second is None:
            d = int(first[0])
            out[pos:pos + d] = cur_bad
            pos += d
            cur_bad = not cur_bad
            continue
        durations = np.empty(2 * m, dtype=np.int64)
        durations[0::2] = first
        durations[1::2] = second
        flags = np.zeros(2 * m, dtype=bool)
        flags[0::2] = cur_bad
        flags[1::2] = not cur_bad
        seg = np.repeat(flags, durations)
        take = min(seg.size, n - pos)
        out[pos:pos + take] = seg[:take]
        pos += take
        # an even number of sojourns was consumed in full, so the next one starts in cur_bad
    return out


def simulate_capacity_path(n: int, model: ChannelModel, rng: np.random.Generator,
                           start: UserState | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One user's (bad flags, capacities) over n slots."""
    bad = simulate_state_path(n, model, rng, start)
    z = rng.standard_normal(n)
    return bad, capacities_from_normals(bad, z, model)
