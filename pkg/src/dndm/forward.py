"""Forward corruption processes.

``markov_forward`` redraws fresh noise every time a token is resampled.
``nonmarkov_forward`` draws one noise token per position and one transition
time, after which the state at any time is a single comparison: clean before
the transition time, noise from then on. Both give the same per-time marginal
``alpha_t * e_{x0} + (1 - alpha_t) * q_noise``.

Each position ``n`` of a trajectory draws from its own substream
``rng.stream_id + n`` starting at counter 0 (see ``dndm._fallback`` for the
layout), so single trajectories and the batched simulators agree exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import CategoricalDist, NoiseModel, RngStream, ValidationError, cdf_from_probs
from .schedule import (
    AlphaSchedule,
    DiscreteSchedule,
    TransitionSet,
    transition_distribution,
)


@dataclass(frozen=True, eq=False)
class ForwardTrajectory:
    """States at the requested ``times`` (rows) for every position (columns).

    ``transition_set`` and a per-position ``noise`` vector are set for the
    non-Markov process. The Markov process resamples noise on the fly and
    keeps no noise record.
    """

    times: np.ndarray
    states: np.ndarray
    transition_set: TransitionSet | None = None
    noise: np.ndarray | None = None

    def at(self, t) -> np.ndarray:
        hit = np.flatnonzero(self.times == t)
        if hit.size == 0:
            raise KeyError(f"time {t} was not materialised")
        return self.states[hit[0]]


def _resolve_times(schedule: AlphaSchedule, times) -> np.ndarray:
    if times is None:
        if schedule.continuous:
            raise ValidationError("continuous trajectories need explicit times")
        return np.arange(schedule.T + 1, dtype=np.int64)
    arr = np.atleast_1d(np.asarray(times))
    if schedule.continuous:
        arr = arr.astype(np.float64)
        if arr.min() < 0 or arr.max() > 1:
            raise ValidationError("continuous times must lie in [0, 1]")
        return arr
    if np.any(arr != np.round(arr)) or arr.min() < 0 or arr.max() > schedule.T:
        raise ValidationError(f"times must be integers in 0..{schedule.T}")
    return arr.astype(np.int64)


def _check_x0(x0, noise: NoiseModel) -> np.ndarray:
    return noise.vocab.check_tokens(x0, allow_mask=False)


def markov_forward(x0, schedule: AlphaSchedule, noise: NoiseModel, rng: RngStream,
                   times=None) -> ForwardTrajectory:
    """Step-by-step corruption: keep w.p. ``beta_t`` else draw fresh noise."""
    if schedule.continuous:
        raise ValidationError("the Markov forward process needs a discrete schedule")
    x0 = _check_x0(x0, noise)
    times = _resolve_times(schedule, times)
    states = kernels.markov_forward_batch(
        x0, schedule.betas, cdf_from_probs(noise.probs()), rng.seed,
        np.array([rng.stream_id], dtype=np.uint64), times,
    )
    return ForwardTrajectory(times, states[0])


def states_from_transitions(x0, tau, w, times) -> np.ndarray:
    """States at ``times`` given transition times and noise tokens: position
    ``n`` is ``x0[n]`` while ``t < tau[n]`` and ``w[n]`` from then on."""
    x0, tau, w = (np.asarray(v) for v in (x0, tau, w))
    if not x0.shape == tau.shape == w.shape or x0.ndim != 1:
        raise ValidationError("x0, tau and w must be 1-d arrays of equal length")
    times = np.atleast_1d(np.asarray(times))
    return np.where(times[:, None] < tau[None, :], x0[None, :], w[None, :])


def _tau_cdf_with_survival(schedule: DiscreteSchedule) -> np.ndarray:
    # times 1..T plus a T+1 bucket holding alpha_T for non-terminal schedules
    a = schedule.alphas
    return cdf_from_probs(np.concatenate([a[:-1] - a[1:], [a[-1]]]))


def nonmarkov_forward(x0, schedule: AlphaSchedule, noise: NoiseModel, rng: RngStream,
                      times=None) -> ForwardTrajectory:
    """One noise token and one transition time per position.

    For schedules with ``alpha_T > 0`` a position may never transition; its
    transition time is then reported as ``T + 1``.
    """
    x0 = _check_x0(x0, noise)
    times = _resolve_times(schedule, times)
    noise_cdf = cdf_from_probs(noise.probs())
    if schedule.continuous:
        dist = transition_distribution(schedule)
        n = x0.shape[0]
        streams = np.uint64(rng.stream_id) + np.arange(n, dtype=np.uint64)
        tau = dist.inverse_cdf(kernels.philox_uniform(rng.seed, streams, np.uint64(0)))
        w = np.searchsorted(noise_cdf, kernels.philox_uniform(rng.seed, streams, np.uint64(1)),
                            side="right").astype(np.int64)
        states = states_from_transitions(x0, tau, w, times)
        return ForwardTrajectory(times, states, TransitionSet(tau), w)
    states, tau = kernels.nonmarkov_forward_batch(
        x0, _tau_cdf_with_survival(schedule), noise_cdf, rng.seed,
        np.array([rng.stream_id], dtype=np.uint64), times,
    )
    # the noise token is recoverable from any time at or after the transition;
    # rerun the lookup directly so it is known for every position
    streams = np.uint64(rng.stream_id) + np.arange(x0.shape[0], dtype=np.uint64)
    w = np.searchsorted(noise_cdf, kernels.philox_uniform(rng.seed, streams, np.uint64(1)),
                        side="right").astype(np.int64)
    return ForwardTrajectory(times, states[0], TransitionSet(tau[0]), w)


def simulate_forward_batch(process: str, x0, schedule: DiscreteSchedule, noise: NoiseModel,
                           seed: int, trials: int, times, first_trial: int = 0):
    """States for many trials at once, trial ``m`` on stream ``(first_trial+m) << 32``.

    Returns ``(states[m, r, n], tau[m, n] or None)``.
    """
    if schedule.continuous:
        raise ValidationError("batched simulation needs a discrete schedule")
    x0 = _check_x0(x0, noise)
    times = _resolve_times(schedule, times)
    base = (np.arange(first_trial, first_trial + trials, dtype=np.uint64) << np.uint64(32))
    noise_cdf = cdf_from_probs(noise.probs())
    if process == "markov":
        return kernels.markov_forward_batch(x0, schedule.betas, noise_cdf, seed, base, times), None
    if process == "nonmarkov":
        return kernels.nonmarkov_forward_batch(
            x0, _tau_cdf_with_survival(schedule), noise_cdf, seed, base, times)
    raise ValidationError(f"unknown forward process {process!r}")


def marginal_at(x0_token: int, t, schedule: AlphaSchedule, noise: NoiseModel) -> CategoricalDist:
    """``q(x_t | x_0)``: weight ``alpha_t`` on ``x0_token``, the rest on noise."""
    if not 0 <= int(x0_token) < noise.K:
        raise ValidationError(f"x0 token {x0_token} is not a base category")
    alpha = schedule.alpha(t)
    p = (1.0 - alpha) * noise.probs()
    p[int(x0_token)] += alpha
    return CategoricalDist(p)
