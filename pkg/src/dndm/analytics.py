"""Closed-form NFE predictions and the statistics used to check samplers.

For i.i.d. transition times with pmf ``p_1..p_T`` and ``N`` positions the
expected number of distinct times is ``sum_i 1 - (1 - p_i)^N``, written as
``(1 - C) T`` with ``C = mean_i (1 - p_i)^N``. ``C`` is minimised, at
``(1 - 1/T)^N``, by the uniform pmf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .core import ValidationError
from .schedule import DiscreteTransitionDist, TransitionTimeDistribution

DEFAULT_SIGNIFICANCE = 1e-4
MIN_EXPECTED_COUNT = 5.0


@dataclass
class NfeReport:
    T: int
    N: int
    expected_nfe: float
    c_constant: float
    empirical_mean: float = math.nan
    empirical_stddev: float = math.nan
    n_trials: int = 0

    @property
    def stderr(self) -> float:
        if self.n_trials < 2:
            return math.nan
        return self.empirical_stddev / math.sqrt(self.n_trials)

    def z_score(self) -> float:
        return (self.empirical_mean - self.expected_nfe) / self.stderr


def expected_nfe(dist: TransitionTimeDistribution, N: int) -> NfeReport:
    if dist.continuous:
        raise ValidationError("expected NFE is only defined for discrete transition times "
                              "(continuous times are almost surely all distinct: NFE = N)")
    if int(N) != N or N < 1:
        raise ValidationError(f"N must be a positive integer, got {N!r}")
    p = dist.probs
    miss = (1.0 - p) ** int(N)
    T = p.shape[0]
    return NfeReport(T=T, N=int(N), expected_nfe=float(np.sum(1.0 - miss)),
                     c_constant=float(miss.sum() / T))


def nfe_lower_bound_uniform(T: int, N: int) -> float:
    """``(1 - 1/T)^N``, the smallest possible value of the constant ``C``."""
    if T < 1 or N < 1:
        raise ValidationError("T and N must be >= 1")
    return (1.0 - 1.0 / T) ** N


def monte_carlo_nfe(dist: DiscreteTransitionDist, N: int, trials: int, seed: int,
                    first_trial: int = 0) -> NfeReport:
    """Analytic report plus the empirical mean/stddev of ``|distinct times|``.

    Trial ``m`` uses stream ``(first_trial + m) << 32`` from counter 0, the
    same draws :func:`~dndm.schedule.sample_transition_set` would consume.
    """
    report = expected_nfe(dist, N)
    counts = distinct_time_counts(dist, N, trials, seed, first_trial)
    report.empirical_mean = float(counts.mean())
    report.empirical_stddev = float(counts.std(ddof=1)) if trials > 1 else 0.0
    report.n_trials = int(trials)
    return report


def distinct_time_counts(dist: DiscreteTransitionDist, N: int, trials: int, seed: int,
                         first_trial: int = 0) -> np.ndarray:
    streams = np.arange(first_trial, first_trial + trials, dtype=np.uint64) << np.uint64(32)
    return kernels.distinct_counts(dist.cdf_table(), seed, streams, int(N))


def tv_distance(a, b) -> float:
    """Total variation between two distributions on the same support.

    Accepts aligned arrays or dicts keyed by outcome (missing keys count as 0
    only when both dicts are given).
    """
    if isinstance(a, dict) and isinstance(b, dict):
        keys = sorted(set(a) | set(b))
        a = np.array([a.get(k, 0.0) for k in keys])
        b = np.array([b.get(k, 0.0) for k in keys])
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"support mismatch: {a.shape} vs {b.shape}")
    return float(0.5 * np.abs(a - b).sum())


def empirical_distribution(samples, support) -> np.ndarray:
    """Frequencies of ``samples`` over ``support``; rows of a 2-d array are
    outcomes when ``samples`` holds sequences."""
    samples = np.asarray(samples)
    index = {_key(s): i for i, s in enumerate(support)}
    counts = np.zeros(len(index))
    keys, freq = np.unique(samples, axis=0, return_counts=True)
    for k, c in zip(keys, freq):
        try:
            counts[index[_key(k)]] += c
        except KeyError:
            raise ValidationError(f"sample {k} outside the reference support") from None
    return counts / samples.shape[0]


def _key(x):
    return tuple(np.atleast_1d(x).tolist())


@dataclass
class GofResult:
    statistic: float
    p_value: float
    dof: int
    passed: bool
    significance: float = DEFAULT_SIGNIFICANCE


def _pool(counts: np.ndarray, expected: np.ndarray):
    # merge adjacent bins left to right until each pooled bin expects >= 5
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(counts, expected):
        o_acc += o
        e_acc += e
        if e_acc >= MIN_EXPECTED_COUNT:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp:
            obs[-1] += o_acc
            exp[-1] += e_acc
        else:
            obs.append(o_acc)
            exp.append(e_acc)
    return np.array(obs), np.array(exp)


def chi_square_gof(counts, expected, significance: float = DEFAULT_SIGNIFICANCE) -> GofResult:
    """Pearson goodness of fit of observed ``counts`` to pmf ``expected``."""
    counts = np.asarray(counts, dtype=np.float64)
    pmf = np.asarray(expected, dtype=np.float64)
    if counts.shape != pmf.shape:
        raise ValidationError("counts and expected pmf differ in length")
    total = counts.sum()
    if not total > 0:
        raise ValidationError("all-zero histogram")
    if np.any(pmf < 0) or pmf.sum() <= 0:
        raise ValidationError("expected pmf must be non-negative with positive mass")
    if np.any((pmf == 0) & (counts > 0)):
        # an observation the model calls impossible; pooling must not hide it
        return GofResult(math.inf, 0.0, max(counts.shape[0] - 1, 0), False, significance)
    obs, exp = _pool(counts, total * pmf / pmf.sum())
    dof = obs.shape[0] - 1
    if dof < 1:
        return GofResult(0.0, 1.0, 0, True, significance)
    stat = float(np.sum((obs - exp) ** 2 / exp))
    p = float(stats.chi2.sf(stat, dof))
    return GofResult(stat, p, dof, p >= significance, significance)
