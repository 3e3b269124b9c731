import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dndm.analytics import tv_distance
from dndm.core import NoiseModel, RngStream, ValidationError
from dndm.forward import (
    marginal_at,
    markov_forward,
    nonmarkov_forward,
    simulate_forward_batch,
    states_from_transitions,
)
from dndm.schedule import DiscreteSchedule, build_cosine, build_linear, continuous_linear


def test_no_corruption_keeps_x0():
    sch = DiscreteSchedule([1.0, 1.0, 1.0, 1.0])
    traj = markov_forward([0, 1, 2], sch, NoiseModel.uniform(3), RngStream(1))
    np.testing.assert_array_equal(traj.at(3), [0, 1, 2])
    np.testing.assert_array_equal(traj.states[0], [0, 1, 2])


def test_immediate_absorption():
    sch = DiscreteSchedule([1.0, 0.0, 0.0, 0.0])
    noise = NoiseModel.absorbing(3)
    for fn in (markov_forward, nonmarkov_forward):
        traj = fn([0, 1, 2], sch, noise, RngStream(2))
        assert np.all(traj.states[1:] == 3)


def test_states_from_transitions_examples():
    x0, w = np.array([0, 1, 2]), np.array([3, 3, 3])
    late = states_from_transitions(x0, np.array([4, 4, 4]), w, np.arange(5))
    assert np.all(late[:4] == x0) and np.all(late[4] == 3)
    early = states_from_transitions(x0, np.array([1, 1, 1]), w, np.arange(5))
    assert np.all(early[0] == x0) and np.all(early[1:] == 3)
    with pytest.raises(ValidationError):
        states_from_transitions(x0, np.array([1, 2]), w, [0])


def test_nonmarkov_trajectory_follows_indicator_form():
    sch = build_linear(20)
    noise = NoiseModel.uniform(4)
    traj = nonmarkov_forward([0, 1, 2, 3, 0], sch, noise, RngStream(5, 9))
    expect = states_from_transitions(np.array([0, 1, 2, 3, 0]), traj.transition_set.times,
                                     traj.noise, traj.times)
    np.testing.assert_array_equal(traj.states, expect)


@given(st.integers(0, 2**32), st.integers(1, 40))
def test_nonmarkov_never_reverts(seed, T):
    sch = build_cosine(T)
    traj = nonmarkov_forward([0, 1, 1, 0], sch, NoiseModel.uniform(2), RngStream(seed))
    at_noise = traj.states == traj.noise[None, :]
    # once at the noise token (for t >= tau) a position stays there
    after = traj.times[:, None] >= traj.transition_set.times[None, :]
    assert np.all(at_noise[after])
    assert np.all(traj.states[~after] == np.array([0, 1, 1, 0])[np.nonzero(~after)[1]])


def test_single_trajectory_matches_batch_simulation():
    sch, noise = build_linear(12), NoiseModel.uniform(3)
    x0 = [2, 0, 1]
    for process, fn in (("markov", markov_forward), ("nonmarkov", nonmarkov_forward)):
        batch, _ = simulate_forward_batch(process, x0, sch, noise, 77, 4, np.arange(13))
        for m in range(4):
            np.testing.assert_array_equal(fn(x0, sch, noise, RngStream.for_trial(77, m)).states,
                                          batch[m])


def test_marginal_examples():
    sch = DiscreteSchedule([1.0, 0.5, 0.0])
    np.testing.assert_allclose(marginal_at(2, 1, sch, NoiseModel.uniform(4)).probs,
                               [0.125, 0.125, 0.625, 0.125])
    np.testing.assert_array_equal(marginal_at(1, 0, sch, NoiseModel.uniform(4)).probs, [0, 1, 0, 0])
    np.testing.assert_allclose(marginal_at(1, 2, sch, NoiseModel.uniform(4)).probs, [0.25] * 4)
    np.testing.assert_array_equal(marginal_at(0, 2, sch, NoiseModel.absorbing(2)).probs, [0, 0, 1])
    with pytest.raises(ValidationError):
        marginal_at(0, 3, sch, NoiseModel.uniform(4))


def test_uniform_noise_collision_term():
    sch, noise = build_linear(50), NoiseModel.uniform(5)
    states, _ = simulate_forward_batch("markov", [0, 3], sch, noise, 3, 100_000, [25])
    hit = (states[:, 0, :] == np.array([0, 3])).mean(axis=0)
    assert np.all(np.abs(hit - 0.6) <= 0.01)


@pytest.mark.parametrize("process", ["markov", "nonmarkov"])
@pytest.mark.parametrize("noise", [NoiseModel.uniform(3), NoiseModel.absorbing(3)],
                         ids=["uniform", "absorbing"])
def test_per_position_marginals(process, noise):
    sch = build_linear(10)
    states, _ = simulate_forward_batch(process, [0, 1, 2], sch, noise, 11, 100_000, [5])
    for n in range(3):
        emp = np.bincount(states[:, 0, n], minlength=noise.vocab.num_states) / 100_000
        assert tv_distance(emp, marginal_at(n, 5, sch, noise).probs) < 0.01


def _markov_path_probs(sch, noise, x0):
    """Exact law of the full path (x_1..x_T) for one token by enumeration."""
    q = noise.probs()
    S = q.shape[0]
    out = {}
    for path in itertools.product(range(S), repeat=sch.T):
        p, prev = 1.0, x0
        for t, cur in enumerate(path, start=1):
            b = sch.betas[t]
            p *= b * (prev == cur) + (1 - b) * q[cur]
            prev = cur
        if p > 0:
            out[path] = p
    return out


def test_absorbing_trajectories_identical_in_law():
    sch, noise = build_linear(3), NoiseModel.absorbing(2)
    exact = _markov_path_probs(sch, noise, 1)
    assert abs(sum(exact.values()) - 1) < 1e-12
    keys = sorted(exact)
    ref = np.array([exact[k] for k in keys])
    for process in ("markov", "nonmarkov"):
        states, _ = simulate_forward_batch(process, [1], sch, noise, 21, 100_000, [1, 2, 3])
        paths, counts = np.unique(states[:, :, 0], axis=0, return_counts=True)
        emp = dict(zip(map(tuple, paths.tolist()), counts / 100_000))
        assert set(emp) <= set(keys)
        assert tv_distance(np.array([emp.get(k, 0.0) for k in keys]), ref) < 0.01


def test_uniform_noise_paths_differ_between_processes():
    # with uniform noise the two processes share marginals but not path laws:
    # the Markov chain can leave the noise token again, the non-Markov one cannot
    sch, noise = build_linear(3), NoiseModel.uniform(2)
    m, _ = simulate_forward_batch("markov", [0], sch, noise, 4, 50_000, [1, 2, 3])
    n, _ = simulate_forward_batch("nonmarkov", [0], sch, noise, 4, 50_000, [1, 2, 3])
    zigzag = lambda s: np.mean((s[:, 0, 0] == 1) & (s[:, 1, 0] == 0) & (s[:, 2, 0] == 1))
    assert zigzag(n) == 0.0 and zigzag(m) > 0.01


def test_continuous_nonmarkov():
    traj = nonmarkov_forward([0, 1, 2], continuous_linear(), NoiseModel.absorbing(3),
                             RngStream(4), times=[0.0, 0.5, 1.0])
    assert np.all(traj.states[0] == [0, 1, 2]) and np.all(traj.states[-1] == 3)
    with pytest.raises(ValidationError):
        nonmarkov_forward([0], continuous_linear(), NoiseModel.absorbing(3), RngStream(4))
    with pytest.raises(ValidationError):
        markov_forward([0], continuous_linear(), NoiseModel.absorbing(3), RngStream(4), [0.5])


def test_non_terminal_schedule_reports_no_transition():
    sch = DiscreteSchedule([1.0, 1.0, 1.0])
    traj = nonmarkov_forward([0, 1], sch, NoiseModel.uniform(2), RngStream(0))
    np.testing.assert_array_equal(traj.transition_set.times, [3, 3])


def test_input_validation():
    sch = build_linear(4)
    with pytest.raises(ValidationError):
        markov_forward([0, 3], sch, NoiseModel.absorbing(3), RngStream(0))
    with pytest.raises(ValidationError):
        markov_forward([0], sch, NoiseModel.uniform(3), RngStream(0), times=[5])
    with pytest.raises(ValidationError):
        simulate_forward_batch("diffuse", [0], sch, NoiseModel.uniform(3), 0, 1, [1])
    with pytest.raises(KeyError):
        markov_forward([0], sch, NoiseModel.uniform(3), RngStream(0), times=[1]).at(2)
