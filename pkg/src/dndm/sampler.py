"""Reverse samplers.

The Markov baselines call the denoiser once per step. The DNDM family draws
every position's transition time up front and calls the denoiser only at the
distinct transition times; all other steps copy the sequence unchanged, so
they are skipped outright.

Random draws per run come from one :class:`~dndm.core.RngStream`, consumed
in this order: ``N`` uniforms for the initial noise sequence, ``N`` for the
transition times (DNDM variants only), then whatever the denoiser and the
per-step updates use.
"""
from __future__ import annotations

import time
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import NoiseModel, RngStream, ValidationError, cdf_from_probs, cdf_rows_from_probs
from .datamodel import Denoiser
from .schedule import (
    AlphaSchedule,
    TransitionSet,
    TransitionTimeDistribution,
    order_transition_set,
    sample_transition_set,
    transition_distribution,
)

SAMPLERS = ("baseline-absorb", "baseline-multi", "dndm", "dndm-v2", "dndm-topk", "dndm-c")


@dataclass
class StepEvent:
    time: float
    positions: list[int]
    x0_hat: list[int] | None = None


@dataclass
class SampleTrace:
    final: np.ndarray
    nfe: int
    sampler: str
    events: list[StepEvent] = field(default_factory=list)
    seed: int | None = None
    stream_id: int | None = None
    transition_times: np.ndarray | None = None
    states: dict | None = None
    wall_ns: int = 0

    def to_record(self, run: int | None = None) -> dict:
        rec = {
            "schema": "dndm.trace/1",
            "run": run,
            "sampler": self.sampler,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "nfe": self.nfe,
            "final": [int(v) for v in self.final],
            "tau": None if self.transition_times is None
            else [_json_time(v) for v in self.transition_times],
            "events": [
                {"t": _json_time(e.time), "positions": e.positions, "x0_hat": e.x0_hat}
                for e in self.events
            ],
            "wall_ns": self.wall_ns,
        }
        return rec


def _json_time(v):
    return int(v) if float(v).is_integer() and not isinstance(v, float) else float(v)


@dataclass
class SamplerConfig:
    """Options shared by the DNDM samplers.

    ``transition_dist`` overrides the law implied by the schedule (e.g. a
    Beta approximation). ``order`` reassigns the sampled times by position
    (``left-to-right`` / ``right-to-left``). ``record_x0`` keeps each
    prediction in the trace.
    """

    transition_dist: TransitionTimeDistribution | None = None
    order: str = "none"
    record_x0: bool = False
    record_states: bool = False


@lru_cache(maxsize=64)
def _noise_cdf(noise: NoiseModel) -> np.ndarray:
    return cdf_from_probs(noise.probs())


def _init_noise(noise: NoiseModel, N: int, rng: RngStream) -> np.ndarray:
    return np.searchsorted(_noise_cdf(noise), rng.uniforms(N), side="right").astype(np.int64)


def _schedule_transition_dist(schedule: AlphaSchedule) -> TransitionTimeDistribution:
    # schedules are immutable, so the implied law is memoised on the instance
    dist = schedule.__dict__.get("_transition_dist")
    if dist is None:
        dist = transition_distribution(schedule)
        object.__setattr__(schedule, "_transition_dist", dist)
    return dist


def _unmask_rates(schedule: AlphaSchedule) -> np.ndarray:
    # rates[t] = (alpha_{t-1} - alpha_t) / (1 - alpha_t), memoised like the transition law
    rates = schedule.__dict__.get("_unmask_rates")
    if rates is None:
        a = schedule.alphas
        if np.any(a[1:] >= 1.0):
            raise ValidationError("alpha_t = 1 for some t >= 1 makes the unmask rate undefined")
        rates = np.zeros_like(a)
        rates[1:] = (a[:-1] - a[1:]) / (1.0 - a[1:])
        rates.setflags(write=False)
        object.__setattr__(schedule, "_unmask_rates", rates)
    return rates


def _rows_inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    return kernels.rows_inverse_cdf(cdf_rows_from_probs(probs), u)


def _check_discrete(schedule: AlphaSchedule):
    if schedule.continuous:
        raise ValidationError("this sampler needs a discrete schedule")
    if not schedule.terminal:
        raise ValidationError("reverse sampling needs a schedule ending at alpha_T = 0")


def _event(t, hit: np.ndarray, x0, keep: bool) -> StepEvent:
    return StepEvent(t, hit.nonzero()[0].tolist(), x0.tolist() if keep else None)


# ---------------------------------------------------------------------------
# Markov baselines
# ---------------------------------------------------------------------------


def baseline_absorb_sample(denoiser: Denoiser, schedule: AlphaSchedule, noise: NoiseModel, N: int,
                           rng: RngStream, config: SamplerConfig | None = None) -> SampleTrace:
    """Absorbing-state ancestral sampler, one denoiser call per step.

    A masked token at step ``t`` unmasks to the prediction with probability
    ``(alpha_{t-1} - alpha_t) / (1 - alpha_t)``; unmasked tokens stay put.
    """
    config = config or SamplerConfig()
    _check_discrete(schedule)
    if not noise.is_absorbing:
        raise ValidationError("baseline-absorb needs absorbing noise")
    unmask = _unmask_rates(schedule)
    start = time.perf_counter_ns()
    stream = rng.stream_id
    mask = noise.vocab.mask_index
    x = _init_noise(noise, N, rng)
    events, states = [], ({schedule.T: x.copy()} if config.record_states else None)
    masked = int(np.count_nonzero(x == mask))
    nothing = np.zeros(N, dtype=bool)
    for t in range(schedule.T, 0, -1):
        x0, _ = denoiser.predict(x, t, rng)
        if masked:
            flip = rng.uniforms(N) < unmask[t]
            flip &= x == mask
            x = np.where(flip, x0, x)
            masked = int(np.count_nonzero(x == mask))
        else:
            flip = nothing
            rng.skip(N)  # same draw layout whether or not anything is left to unmask
        events.append(_event(t, flip, x0, config.record_x0))
        if states is not None:
            states[t - 1] = x.copy()
    return SampleTrace(x, schedule.T, "baseline-absorb", events, rng.seed, stream,
                       states=states, wall_ns=time.perf_counter_ns() - start)


def multinomial_posterior(xt, x0_hat, alpha_prev: float, beta_t: float, K: int,
                          normalize: bool = True) -> np.ndarray:
    """Per-position ``q(x_{t-1} | x_t, x0_hat)`` for uniform noise, shape (N, K).

    The product ``(beta_t e_{x_t} + (1-beta_t)/K) * (alpha_{t-1} e_{x0} +
    (1-alpha_{t-1})/K)`` taken elementwise, optionally normalised.
    """
    xt = np.atleast_1d(np.asarray(xt, dtype=np.int64))
    x0_hat = np.atleast_1d(np.asarray(x0_hat, dtype=np.int64))
    rows = np.arange(xt.shape[0])
    left = np.full((xt.shape[0], K), (1.0 - beta_t) / K)
    left[rows, xt] += beta_t
    right = np.full((xt.shape[0], K), (1.0 - alpha_prev) / K)
    right[rows, x0_hat] += alpha_prev
    theta = left * right
    if not normalize:
        return theta
    z = theta.sum(axis=1, keepdims=True)
    if np.any(z <= 0):
        raise ValidationError("posterior kernel has zero normaliser")
    return theta / z


def baseline_multinomial_sample(denoiser: Denoiser, schedule: AlphaSchedule, noise: NoiseModel,
                                N: int, rng: RngStream,
                                config: SamplerConfig | None = None) -> SampleTrace:
    """Multinomial-diffusion ancestral sampler, one denoiser call per step."""
    config = config or SamplerConfig()
    _check_discrete(schedule)
    if noise.is_absorbing or noise.vocab.has_absorbing:
        raise ValidationError("baseline-multi needs uniform noise without a mask state")
    K = noise.K
    a, b = schedule.alphas, schedule.betas
    start = time.perf_counter_ns()
    x = _init_noise(noise, N, rng)
    events, states = [], ({schedule.T: x.copy()} if config.record_states else None)
    for t in range(schedule.T, 0, -1):
        x0, _ = denoiser.predict(x, t, rng)
        probs = multinomial_posterior(x, x0, a[t - 1], b[t], K)
        new = _rows_inverse_cdf(probs, rng.uniforms(N))
        events.append(_event(t, new != x, x0, config.record_x0))
        x = new
        if states is not None:
            states[t - 1] = x.copy()
    return SampleTrace(x, schedule.T, "baseline-multi", events, rng.seed, rng.stream_id,
                       states=states, wall_ns=time.perf_counter_ns() - start)


# ---------------------------------------------------------------------------
# DNDM family
# ---------------------------------------------------------------------------


def _transition_set(schedule, N, rng, config: SamplerConfig, given: TransitionSet | None,
                    *, continuous: bool) -> TransitionSet:
    if given is not None:
        ts = given
        if ts.N != N:
            raise ValidationError(f"transition set has {ts.N} times for N={N}")
    else:
        dist = config.transition_dist or _schedule_transition_dist(schedule)
        if dist.continuous != continuous:
            kind = "continuous" if continuous else "discrete"
            raise ValidationError(f"this sampler needs a {kind} transition-time law")
        ts = sample_transition_set(dist, N, rng)
    if not continuous and (ts.times.min() < 1 or (not schedule.continuous and ts.times.max() > schedule.T)):
        raise ValidationError("transition times must lie in 1..T")
    return order_transition_set(ts, config.order)


def _dndm_prepare(schedule, noise, N, rng, config, transition_set, *, continuous=False):
    config = config or SamplerConfig()
    if not continuous:
        _check_discrete(schedule)
    elif not schedule.continuous:
        raise ValidationError("dndm-c needs a continuous schedule")
    x = _init_noise(noise, N, rng)
    ts = _transition_set(schedule, N, rng, config, transition_set, continuous=continuous)
    return config, x, ts


def dndm_sample(denoiser: Denoiser, schedule: AlphaSchedule, noise: NoiseModel, N: int,
                rng: RngStream, config: SamplerConfig | None = None,
                transition_set: TransitionSet | None = None) -> SampleTrace:
    """Non-Markov sampler: a position takes its prediction exactly at its own
    transition time and is copied at every other step."""
    start = time.perf_counter_ns()
    config, x, ts = _dndm_prepare(schedule, noise, N, rng, config, transition_set)
    tau = ts.times
    events = []
    for t in ts.distinct_times[::-1]:
        x0, _ = denoiser.predict(x, int(t), rng)
        hit = tau == t
        x = np.where(hit, x0, x)
        events.append(_event(int(t), hit, x0, config.record_x0))
    return SampleTrace(x, len(ts), "dndm", events, rng.seed, rng.stream_id, tau,
                       wall_ns=time.perf_counter_ns() - start)


def dndm_v2_sample(denoiser: Denoiser, schedule: AlphaSchedule, noise: NoiseModel, N: int,
                   rng: RngStream, config: SamplerConfig | None = None,
                   transition_set: TransitionSet | None = None) -> SampleTrace:
    """Same call times as :func:`dndm_sample`, but every position whose
    transition time is at or after the current step is refreshed, so tokens can
    be revised several times."""
    start = time.perf_counter_ns()
    config, x, ts = _dndm_prepare(schedule, noise, N, rng, config, transition_set)
    tau = ts.times
    events = []
    for t in ts.distinct_times[::-1]:
        x0, _ = denoiser.predict(x, int(t), rng)
        hit = tau >= t
        x = np.where(hit, x0, x)
        events.append(_event(int(t), hit, x0, config.record_x0))
    return SampleTrace(x, len(ts), "dndm-v2", events, rng.seed, rng.stream_id, tau,
                       wall_ns=time.perf_counter_ns() - start)


def dndm_topk_sample(denoiser: Denoiser, schedule: AlphaSchedule, noise: NoiseModel, N: int,
                     rng: RngStream, config: SamplerConfig | None = None,
                     transition_set: TransitionSet | None = None) -> SampleTrace:
    """Top-k variant: the transition times fix only *how many* positions are
    clean after each step; *which* ones is decided by the denoiser's scores.

    With ``K_s`` the number of positions still clean at time ``s`` (transition
    time after ``s``), a step ``t`` with ``K_{t-1} > K_t`` calls the denoiser,
    ranks positions by score (ties to the lower index), and commits the
    predictions of the top ``K_{t-1}`` positions not yet committed.
    """
    start = time.perf_counter_ns()
    config, x, ts = _dndm_prepare(schedule, noise, N, rng, config, transition_set)
    tau = ts.times
    committed = np.zeros(N, dtype=bool)
    events = []
    for t in ts.distinct_times[::-1]:
        k_prev = int(np.count_nonzero(tau >= t))
        x0, scores = denoiser.predict(x, int(t), rng)
        ranked = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
        top = np.zeros(N, dtype=bool)
        top[ranked[:k_prev]] = True
        new = top & ~committed
        x = np.where(new, x0, x)
        committed |= new
        events.append(_event(int(t), new, x0, config.record_x0))
    return SampleTrace(x, len(ts), "dndm-topk", events, rng.seed, rng.stream_id, tau,
                       wall_ns=time.perf_counter_ns() - start)


def dndm_continuous_sample(denoiser: Denoiser, schedule: AlphaSchedule, noise: NoiseModel, N: int,
                           rng: RngStream, config: SamplerConfig | None = None,
                           transition_set: TransitionSet | None = None) -> SampleTrace:
    """Infinite-step sampler: visit the real-valued transition times from
    latest to earliest, one denoiser call per distinct time, committing the
    positions that transition there. Ties (probability zero) are grouped into
    one call."""
    start = time.perf_counter_ns()
    config, x, ts = _dndm_prepare(schedule, noise, N, rng, config, transition_set, continuous=True)
    tau = ts.times
    events = []
    for t in ts.distinct_times[::-1]:
        x0, _ = denoiser.predict(x, float(t), rng)
        hit = tau == t
        x = np.where(hit, x0, x)
        events.append(_event(float(t), hit, x0, config.record_x0))
    return SampleTrace(x, len(ts), "dndm-c", events, rng.seed, rng.stream_id, tau,
                       wall_ns=time.perf_counter_ns() - start)


SAMPLER_FUNCS = {
    "baseline-absorb": baseline_absorb_sample,
    "baseline-multi": baseline_multinomial_sample,
    "dndm": dndm_sample,
    "dndm-v2": dndm_v2_sample,
    "dndm-topk": dndm_topk_sample,
    "dndm-c": dndm_continuous_sample,
}


def get_sampler(name: str):
    try:
        return SAMPLER_FUNCS[name]
    except KeyError:
        raise ValidationError(f"unknown sampler {name!r}; choose from {SAMPLERS}") from None
