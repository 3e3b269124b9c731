import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dndm.analytics import (
    chi_square_gof,
    distinct_time_counts,
    empirical_distribution,
    expected_nfe,
    monte_carlo_nfe,
    nfe_lower_bound_uniform,
    tv_distance,
)
from dndm.core import ValidationError
from dndm.schedule import DiscreteTransitionDist, beta_transition_distribution


def uniform(T):
    return DiscreteTransitionDist(np.full(T, 1.0 / T))


def enumerate_expected_distinct(p, N):
    """Exact E|distinct| by summing over every tuple of N times."""
    T = len(p)
    total = 0.0
    for times in itertools.product(range(T), repeat=N):
        total += np.prod([p[t] for t in times]) * len(set(times))
    return total


def test_worst_case_uniform_four_by_four():
    rep = expected_nfe(uniform(4), 4)
    assert rep.c_constant == 0.31640625
    assert rep.expected_nfe == 2.734375
    assert rep.expected_nfe <= 0.7 * 4


def test_enumeration_matches_formula_exactly():
    pairs = list(itertools.product(range(1, 5), repeat=2))
    assert len(pairs) == 16
    enum = sum(len(set(p)) for p in pairs) / 16
    assert enum == 1.75
    assert abs(expected_nfe(uniform(4), 2).expected_nfe - enum) <= 1e-12


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5), st.integers(1, 4))
def test_formula_matches_brute_force_enumeration(weights, N):
    p = np.array(weights) / sum(weights)
    rep = expected_nfe(DiscreteTransitionDist(p), N)
    assert abs(rep.expected_nfe - enumerate_expected_distinct(p, N)) < 1e-12


def test_single_token_expected_one():
    for dist in (uniform(7), beta_transition_distribution(3, 3, 40)):
        assert abs(expected_nfe(dist, 1).expected_nfe - 1.0) < 1e-12


def test_lower_bound():
    assert nfe_lower_bound_uniform(4, 4) == 0.31640625
    assert expected_nfe(uniform(4), 4).c_constant == nfe_lower_bound_uniform(4, 4)
    skew = expected_nfe(DiscreteTransitionDist([0.7, 0.1, 0.1, 0.1]), 4).c_constant
    assert skew == pytest.approx((0.3**4 + 3 * 0.9**4) / 4, abs=1e-15)
    assert skew == pytest.approx(0.49410, abs=1e-5)
    assert skew > 0.31640625
    assert nfe_lower_bound_uniform(10, 500) < 1e-20
    with pytest.raises(ValidationError):
        nfe_lower_bound_uniform(0, 3)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60).filter(lambda w: sum(w) > 0),
       st.integers(1, 200))
def test_theorem_bounds_for_any_pmf(weights, N):
    p = np.array(weights) / sum(weights)
    T = p.size
    rep = expected_nfe(DiscreteTransitionDist(p), N)
    assert abs(rep.expected_nfe - (1 - rep.c_constant) * T) < 1e-9
    assert 1 - 1e-9 <= rep.expected_nfe <= min(N, T) + 1e-9
    assert rep.c_constant >= nfe_lower_bound_uniform(T, N) - 1e-12
    if N >= 2 and np.count_nonzero(p) >= 2:
        assert rep.expected_nfe < N


@given(st.integers(2, 40), st.integers(1, 30))
def test_non_uniform_strictly_above_bound(T, N):
    p = np.full(T, 1.0 / T)
    p[0] += 0.5 / T
    p[1] -= 0.5 / T
    c = expected_nfe(DiscreteTransitionDist(p), N).c_constant
    if N >= 2:
        assert c > nfe_lower_bound_uniform(T, N)


def test_continuous_law_rejected():
    with pytest.raises(ValidationError):
        expected_nfe(beta_transition_distribution(2, 2, None), 3)
    with pytest.raises(ValidationError):
        expected_nfe(uniform(3), 0)


@pytest.mark.parametrize("T,N", [(4, 2), (50, 25), (1000, 25)])
def test_monte_carlo_agrees_with_formula(T, N):
    rep = monte_carlo_nfe(beta_transition_distribution(3, 3, T), N, 50_000, seed=T + N)
    assert abs(rep.z_score()) <= 4
    assert rep.n_trials == 50_000


def test_distinct_counts_bounds():
    counts = distinct_time_counts(uniform(6), 9, 10_000, seed=3)
    assert counts.min() >= 1 and counts.max() <= 6


def test_tv_examples():
    assert tv_distance([0.3, 0.7], [0.3, 0.7]) == 0
    assert tv_distance([1, 0], [0, 1]) == 1
    assert tv_distance([0.5, 0.5], [0.75, 0.25]) == 0.25
    assert tv_distance({"a": 1.0}, {"b": 1.0}) == 1.0
    with pytest.raises(ValidationError):
        tv_distance([0.5, 0.5], [1, 0, 0])


def test_empirical_distribution():
    emp = empirical_distribution(np.array([[0, 1], [0, 1], [1, 1]]), [[0, 1], [1, 1]])
    np.testing.assert_allclose(emp, [2 / 3, 1 / 3])
    with pytest.raises(ValidationError):
        empirical_distribution(np.array([[2, 2]]), [[0, 1]])


def test_gof_exact_proportions():
    res = chi_square_gof([25, 50, 25], [0.25, 0.5, 0.25])
    assert res.statistic == 0 and res.p_value == 1.0 and res.passed


def test_gof_uniform_sample_passes(rng_np):
    counts = np.bincount(rng_np.integers(0, 20, size=100_000), minlength=20)
    res = chi_square_gof(counts, np.full(20, 0.05))
    assert res.passed and 0 <= res.p_value <= 1 and res.dof == 19


def test_gof_detects_shift(rng_np):
    base = np.full(10, 0.1)
    shifted = base.copy()
    shifted[:5] += 0.02
    shifted[5:] -= 0.02
    assert tv_distance(base, shifted) == pytest.approx(0.1)
    counts = np.bincount(rng_np.choice(10, size=100_000, p=shifted), minlength=10)
    assert not chi_square_gof(counts, base).passed


def test_gof_pools_sparse_bins():
    # expected counts 180, 10, 6, 2, 2: the last two (4 < 5) fold into the 6
    res = chi_square_gof([180, 10, 6, 2, 2], [0.9, 0.05, 0.03, 0.01, 0.01])
    assert res.dof == 2 and res.statistic == pytest.approx(0.0) and res.passed
    tiny = chi_square_gof([97, 1, 1, 1, 0], [0.97, 0.01, 0.01, 0.005, 0.005])
    assert tiny.dof == 0 and tiny.passed


def test_gof_errors_and_impossible_counts():
    with pytest.raises(ValidationError):
        chi_square_gof([0, 0], [0.5, 0.5])
    with pytest.raises(ValidationError):
        chi_square_gof([1, 2], [0.5, 0.3, 0.2])
    res = chi_square_gof([50, 50, 10], [0.5, 0.5, 0.0])
    assert not res.passed and res.p_value == 0.0 and math.isinf(res.statistic)
