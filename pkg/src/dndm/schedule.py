"""Alpha schedules and the transition-time distributions they induce.

``alpha_t`` is the probability that a token is still clean at time ``t``.
A token's transition time is the step at which it switches to noise, and its
law is ``P(tau = t) = alpha_{t-1} - alpha_t`` (density ``-alpha'(t)`` in
continuous time).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .core import PROB_ATOL, RngStream, ValidationError, cdf_from_probs

DEFAULT_COSINE_OFFSET = 0.008
BISECTION_TOL = 1e-12
_MONO_TOL = 1e-12


class AlphaSchedule:
    """Common base for discrete and continuous schedules."""

    name: str
    continuous: bool

    def alpha(self, t):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class DiscreteSchedule(AlphaSchedule):
    """``alpha_0 .. alpha_T`` on the integer grid.

    ``alpha_T`` is normally 0. A schedule that stops short of 0 (``terminal``
    is False) is accepted for forward simulation only; transition-time
    distributions require a terminal schedule.
    """

    alphas: np.ndarray
    name: str = "custom"
    continuous: bool = field(default=False, init=False)

    def __post_init__(self):
        a = np.array(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise ValidationError("a discrete schedule needs alpha_0..alpha_T with T >= 1")
        if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1 + _MONO_TOL:
            raise ValidationError("alphas must lie in [0, 1]")
        if abs(a[0] - 1.0) > _MONO_TOL:
            raise ValidationError(f"alpha_0 must be 1, got {a[0]!r}")
        if np.any(np.diff(a) > _MONO_TOL):
            raise ValidationError("schedule has an increasing segment")
        a[0] = 1.0
        a = np.minimum.accumulate(np.clip(a, 0.0, 1.0))
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @property
    def T(self) -> int:
        return self.alphas.shape[0] - 1

    @property
    def terminal(self) -> bool:
        return self.alphas[-1] == 0.0

    def alpha(self, t):
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T) or np.any(t != np.round(t)):
            raise ValidationError(f"time index outside 0..{self.T}: {t}")
        out = self.alphas[t.astype(np.int64)]
        return float(out) if out.ndim == 0 else out

    @property
    def betas(self) -> np.ndarray:
        """``beta_t = alpha_t / alpha_{t-1}``, 0 where ``alpha_{t-1} = 0``.

        Index 0 is a placeholder (1.0) so ``betas[t]`` lines up with ``t``.
        """
        a = self.alphas
        prev = a[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.where(prev > 0, a[1:] / np.where(prev > 0, prev, 1.0), 0.0)
        return np.concatenate([[1.0], np.clip(b, 0.0, 1.0)])


@dataclass(frozen=True, eq=False)
class ContinuousSchedule(AlphaSchedule):
    """``alpha(t)`` on [0, 1] with its derivative; both vectorised callables.

    ``inverse_fn`` (optional) maps an alpha value back to its time; when absent
    transition times are drawn by bisection.
    """

    alpha_fn: Callable
    alpha_derivative_fn: Callable
    name: str = "custom"
    inverse_fn: Callable | None = None
    continuous: bool = field(default=True, init=False)

    def __post_init__(self):
        grid = np.linspace(0.0, 1.0, 1001)
        vals = np.asarray(self.alpha_fn(grid), dtype=np.float64)
        if abs(vals[0] - 1.0) > 1e-9 or abs(vals[-1]) > 1e-9:
            raise ValidationError("continuous schedule needs alpha(0)=1 and alpha(1)=0")
        if np.any(np.diff(vals) > _MONO_TOL):
            raise ValidationError("schedule has an increasing segment")

    def alpha(self, t):
        if isinstance(t, (float, int)):
            if not 0.0 <= t <= 1.0:
                raise ValidationError(f"continuous time outside [0, 1]: {t}")
            if t <= 0.0:
                return 1.0
            if t >= 1.0:
                return 0.0
            return min(max(float(self.alpha_fn(t)), 0.0), 1.0)
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > 1):
            raise ValidationError(f"continuous time outside [0, 1]: {t}")
        out = np.clip(np.asarray(self.alpha_fn(t), dtype=np.float64), 0.0, 1.0)
        out = np.where(t <= 0, 1.0, np.where(t >= 1, 0.0, out))
        return float(out) if out.ndim == 0 else out


def _check_steps(T) -> int:
    if int(T) != T or T < 1:
        raise ValidationError(f"number of steps must be a positive integer, got {T!r}")
    return int(T)


def _check_offset(s: float) -> float:
    if not s >= 0:
        raise ValidationError(f"cosine offset must be non-negative, got {s!r}")
    return float(s)


def build_linear(T: int) -> DiscreteSchedule:
    T = _check_steps(T)
    return DiscreteSchedule(1.0 - np.arange(T + 1) / T, name="linear")


def _cosine_f(u, s):
    return np.cos((s + u) / (1.0 + s) * math.pi / 2)


def build_cosine(T: int, s: float = DEFAULT_COSINE_OFFSET) -> DiscreteSchedule:
    T, s = _check_steps(T), _check_offset(s)
    f = _cosine_f(np.arange(T + 1) / T, s)
    a = f / f[0]
    a[-1] = 0.0
    return DiscreteSchedule(a, name="cosine")


def build_cosine_squared(T: int, s: float = DEFAULT_COSINE_OFFSET) -> DiscreteSchedule:
    T, s = _check_steps(T), _check_offset(s)
    f = _cosine_f(np.arange(T + 1) / T, s) ** 2
    a = f / f[0]
    a[-1] = 0.0
    return DiscreteSchedule(a, name="cosine2")


def continuous_linear() -> ContinuousSchedule:
    return ContinuousSchedule(lambda t: 1.0 - t, lambda t: -np.ones_like(t), name="linear",
                              inverse_fn=lambda a: 1.0 - a)


def continuous_cosine(s: float = DEFAULT_COSINE_OFFSET) -> ContinuousSchedule:
    s = _check_offset(s)
    f0 = _cosine_f(0.0, s)
    c = math.pi / (2 * (1 + s))

    def alpha(t):
        return _cosine_f(np.asarray(t, dtype=np.float64), s) / f0

    def deriv(t):
        return -c * np.sin((s + np.asarray(t, dtype=np.float64)) * c) / f0

    def inverse(a):
        return np.clip(np.arccos(np.clip(np.asarray(a) * f0, -1.0, 1.0)) / c - s, 0.0, 1.0)

    return ContinuousSchedule(alpha, deriv, name="cosine", inverse_fn=inverse)


def continuous_cosine_squared(s: float = DEFAULT_COSINE_OFFSET) -> ContinuousSchedule:
    s = _check_offset(s)
    f0 = _cosine_f(0.0, s) ** 2
    c = math.pi / (2 * (1 + s))

    def alpha(t):
        return _cosine_f(np.asarray(t, dtype=np.float64), s) ** 2 / f0

    def deriv(t):
        x = (s + np.asarray(t, dtype=np.float64)) * c
        return -2 * c * np.cos(x) * np.sin(x) / f0

    def inverse(a):
        root = np.sqrt(np.clip(np.asarray(a) * f0, 0.0, 1.0))
        return np.clip(np.arccos(root) / c - s, 0.0, 1.0)

    return ContinuousSchedule(alpha, deriv, name="cosine2", inverse_fn=inverse)


SCHEDULES = ("linear", "cosine", "cosine2")


def build_schedule(name: str, T: int | None, s: float = DEFAULT_COSINE_OFFSET) -> AlphaSchedule:
    """Build a named schedule; ``T=None`` gives the continuous-time version."""
    if name == "linear":
        return continuous_linear() if T is None else build_linear(T)
    if name == "cosine":
        return continuous_cosine(s) if T is None else build_cosine(T, s)
    if name in ("cosine2", "cosine_squared"):
        return continuous_cosine_squared(s) if T is None else build_cosine_squared(T, s)
    raise ValidationError(f"unknown schedule {name!r}; choose from {SCHEDULES}")


# ---------------------------------------------------------------------------
# transition-time distributions
# ---------------------------------------------------------------------------


class TransitionTimeDistribution:
    continuous: bool
    label: str


@dataclass(frozen=True, eq=False)
class DiscreteTransitionDist(TransitionTimeDistribution):
    """pmf ``p_1..p_T`` over integer transition times (stored 0-indexed)."""

    probs: np.ndarray
    label: str = "pmf"
    continuous: bool = field(default=False, init=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("pmf must be a non-empty 1-d array")
        if not np.all(np.isfinite(p)) or p.min() < 0:
            raise ValidationError("pmf entries must be non-negative")
        if abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValidationError(f"pmf sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        cdf = cdf_from_probs(p)
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def T(self) -> int:
        return self.probs.shape[0]

    def pmf(self, t):
        return self.probs[np.asarray(t) - 1]

    def cdf_table(self) -> np.ndarray:
        return self._cdf


@dataclass(frozen=True, eq=False)
class ContinuousTransitionDist(TransitionTimeDistribution):
    """Density on (0, 1) given by its CDF and pdf.

    Draws use the closed-form quantile ``ppf`` when one is supplied and
    bisection on the CDF otherwise.
    """

    cdf: Callable
    density: Callable
    label: str = "density"
    ppf: Callable | None = None
    continuous: bool = field(default=True, init=False)

    def inverse_cdf(self, u) -> np.ndarray:
        if self.ppf is not None:
            return np.asarray(self.ppf(np.asarray(u, dtype=np.float64)), dtype=np.float64)
        return self.bisect_cdf(u)

    def bisect_cdf(self, u) -> np.ndarray:
        """Quantile by bisection to ``BISECTION_TOL``."""
        u = np.asarray(u, dtype=np.float64)
        lo = np.zeros_like(u)
        hi = np.ones_like(u)
        while True:
            mid = 0.5 * (lo + hi)
            below = np.asarray(self.cdf(mid)) <= u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= BISECTION_TOL):
                break
        return 0.5 * (lo + hi)


def transition_distribution(schedule: AlphaSchedule) -> TransitionTimeDistribution:
    """Law of a single token's transition time under ``schedule``."""
    if schedule.continuous:
        inv = schedule.inverse_fn
        return ContinuousTransitionDist(
            cdf=lambda t: 1.0 - np.clip(schedule.alpha_fn(np.asarray(t, dtype=float)), 0.0, 1.0),
            density=lambda t: -np.asarray(schedule.alpha_derivative_fn(np.asarray(t, dtype=float))),
            label=schedule.name,
            ppf=None if inv is None else (lambda u: inv(1.0 - u)),
        )
    a = schedule.alphas
    if np.any(np.diff(a) > 0):
        raise ValidationError("schedule has an increasing segment")
    if not schedule.terminal:
        raise ValidationError("transition times need a schedule ending at alpha_T = 0")
    return DiscreteTransitionDist(a[:-1] - a[1:], label=schedule.name)


def _check_beta_params(a, b):
    if not (a > 0 and b > 0):
        raise ValidationError(f"Beta parameters must be positive, got a={a!r}, b={b!r}")


def beta_transition_distribution(a: float, b: float, T: int | None) -> TransitionTimeDistribution:
    """Beta(a, b) on [0, 1] scaled by ``T`` and rounded to the nearest step.

    Rounding to 0 is folded into step 1 and anything above ``T`` into step
    ``T``. ``T=None`` keeps the raw continuous Beta law.
    """
    _check_beta_params(a, b)
    label = f"beta:{a:g},{b:g}"
    if T is None:
        return ContinuousTransitionDist(
            cdf=lambda t: special.betainc(a, b, np.clip(t, 0.0, 1.0)),
            density=lambda t: np.exp(
                (a - 1) * np.log(t) + (b - 1) * np.log1p(-t) - special.betaln(a, b)
            ),
            label=label,
            ppf=lambda u: special.betaincinv(a, b, u),
        )
    T = _check_steps(T)
    edges = (np.arange(1, T) + 0.5) / T
    cdf = np.concatenate([[0.0], special.betainc(a, b, edges), [1.0]])
    # betainc can dip by an ulp in the far tail; a cdf never decreases
    p = np.diff(np.maximum.accumulate(cdf))
    return DiscreteTransitionDist(p / p.sum(), label=label)


def schedule_from_transition(dist: TransitionTimeDistribution) -> AlphaSchedule:
    """Inverse map: the schedule whose transition law is ``dist``."""
    if dist.continuous:
        return ContinuousSchedule(
            lambda t: 1.0 - np.asarray(dist.cdf(t)),
            lambda t: -np.asarray(dist.density(t)),
            name=dist.label,
        )
    a = 1.0 - np.concatenate([[0.0], np.cumsum(dist.probs)])
    a[-1] = 0.0
    return DiscreteSchedule(np.clip(a, 0.0, 1.0), name=dist.label)


@dataclass(frozen=True, eq=False)
class TransitionSet:
    """Per-position transition times and their sorted distinct values."""

    times: np.ndarray
    distinct_times: np.ndarray = None

    def __post_init__(self):
        times = np.asarray(self.times)
        if times.ndim != 1 or times.size == 0:
            raise ValidationError("a transition set needs at least one time")
        object.__setattr__(self, "times", times)
        ordered = np.sort(times)
        keep = np.empty(ordered.shape, dtype=bool)
        keep[0] = True
        np.not_equal(ordered[1:], ordered[:-1], out=keep[1:])
        object.__setattr__(self, "distinct_times", ordered[keep])

    @property
    def N(self) -> int:
        return self.times.shape[0]

    def __len__(self) -> int:
        return self.distinct_times.shape[0]


def sample_transition_set(dist: TransitionTimeDistribution, N: int, rng: RngStream) -> TransitionSet:
    """Draw ``N`` i.i.d. transition times; consumes ``N`` uniforms."""
    if int(N) != N or N < 1:
        raise ValidationError(f"sequence length must be >= 1, got {N!r}")
    u = rng.uniforms(int(N))
    if dist.continuous:
        return TransitionSet(dist.inverse_cdf(u))
    return TransitionSet(np.searchsorted(dist.cdf_table(), u, side="right").astype(np.int64) + 1)


def order_transition_set(ts: TransitionSet, order: str) -> TransitionSet:
    """Reassign sampled times by position.

    ``left-to-right`` gives the leftmost position the latest time so it is
    decoded first during reverse sampling; ``right-to-left`` is the mirror.
    """
    if order in (None, "none", "random"):
        return ts
    ranked = np.sort(ts.times)
    if order == "left-to-right":
        return TransitionSet(ranked[::-1].copy())
    if order == "right-to-left":
        return TransitionSet(ranked)
    raise ValidationError(f"unknown transition order {order!r}")
