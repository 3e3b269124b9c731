import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import binomial_interval
from dndm.core import NoiseModel, RngStream, ValidationError
from dndm.datamodel import OracleDenoiser, RecordingDenoiser, ToyDataModel, teacher_denoiser
from dndm.sampler import (
    SamplerConfig,
    baseline_absorb_sample,
    baseline_multinomial_sample,
    dndm_continuous_sample,
    dndm_sample,
    dndm_topk_sample,
    dndm_v2_sample,
    get_sampler,
    multinomial_posterior,
)
from dndm.schedule import (
    TransitionSet,
    beta_transition_distribution,
    build_cosine,
    build_linear,
    continuous_linear,
)

ABSORB = NoiseModel.absorbing(3)
DISCRETE = (dndm_sample, dndm_v2_sample, dndm_topk_sample)


class FlatScores:
    """Teacher with equal scores everywhere."""

    factorized = True

    def __init__(self, x0):
        self.x0 = np.asarray(x0)

    def predict(self, xt, t, rng):
        return self.x0.copy(), np.full(self.x0.shape[0], 0.5)


def test_baseline_absorb_single_step_decodes_everything():
    trace = baseline_absorb_sample(teacher_denoiser([0, 2, 1]), build_linear(1), ABSORB, 3, RngStream(0))
    np.testing.assert_array_equal(trace.final, [0, 2, 1])
    assert trace.nfe == 1


def test_baseline_absorb_stay_probability():
    # linear T=2 at t=2: a masked token stays masked w.p. (1 - a_1)/(1 - a_2) = 0.5
    sch, runs = build_linear(2), 20_000
    cfg = SamplerConfig(record_states=True)
    stays = sum(int(np.sum(baseline_absorb_sample(teacher_denoiser([0, 1]), sch, ABSORB, 2,
                                                  RngStream.for_trial(4, r), cfg).states[1] == 3))
                for r in range(runs))
    lo, hi = binomial_interval(2 * runs, 0.5)
    assert lo <= stays <= hi


@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 2**20))
def test_baselines_call_once_per_step(T, N, seed):
    sch = build_cosine(T)
    rec = RecordingDenoiser(teacher_denoiser(np.arange(N) % 3))
    trace = baseline_absorb_sample(rec, sch, ABSORB, N, RngStream(seed))
    assert trace.nfe == T and rec.calls == list(range(T, 0, -1))
    np.testing.assert_array_equal(trace.final, np.arange(N) % 3)
    rec.calls.clear()
    trace = baseline_multinomial_sample(rec, sch, NoiseModel.uniform(3), N, RngStream(seed))
    assert trace.nfe == T and len(rec.calls) == T
    np.testing.assert_array_equal(trace.final, np.arange(N) % 3)


def test_multinomial_posterior_examples():
    unnorm = multinomial_posterior([0], [1], 0.5, 0.5, 2, normalize=False)
    np.testing.assert_allclose(unnorm, [[0.75 * 0.25, 0.25 * 0.75]], atol=1e-15)
    np.testing.assert_allclose(multinomial_posterior([0], [1], 0.5, 0.5, 2), [[0.5, 0.5]], atol=1e-12)
    keep = multinomial_posterior([2, 0], [1, 1], 0.3, 1.0, 3)
    np.testing.assert_allclose(keep, np.eye(3)[[2, 0]], atol=1e-15)
    commit = multinomial_posterior([2, 0], [1, 1], 1.0, 0.4, 3)
    np.testing.assert_allclose(commit, np.eye(3)[[1, 1]], atol=1e-15)


@given(st.integers(2, 6), st.floats(0, 1), st.floats(0, 1), st.integers(0, 5), st.integers(0, 5))
def test_multinomial_posterior_rows_are_distributions(K, a, b, xt, x0):
    # a deterministic keep step and a deterministic commit disagree: no mass
    assume(not (a == 1 and b == 1 and xt % K != x0 % K))
    p = multinomial_posterior([xt % K], [x0 % K], a, b, K)
    assert abs(p.sum() - 1) < 1e-12 and p.min() >= 0


def test_contradictory_kernel_is_rejected():
    with pytest.raises(ValidationError):
        multinomial_posterior([0], [1], 1.0, 1.0, 2)


def test_baseline_validation():
    with pytest.raises(ValidationError):
        baseline_absorb_sample(teacher_denoiser([0]), build_linear(3), NoiseModel.uniform(3), 1, RngStream(0))
    with pytest.raises(ValidationError):
        baseline_multinomial_sample(teacher_denoiser([0]), build_linear(3), ABSORB, 1, RngStream(0))
    with pytest.raises(ValidationError):
        baseline_absorb_sample(teacher_denoiser([0]), continuous_linear(), ABSORB, 1, RngStream(0))


def test_single_token_dndm_calls_once():
    for fn in DISCRETE:
        assert fn(teacher_denoiser([1]), build_linear(9), ABSORB, 1, RngStream(3)).nfe == 1
    assert dndm_continuous_sample(teacher_denoiser([1]), continuous_linear(), ABSORB, 1,
                                  RngStream(3)).nfe == 1


@given(st.integers(1, 12), st.integers(1, 40), st.integers(0, 2**30),
       st.sampled_from(["none", "left-to-right", "right-to-left"]))
def test_teacher_is_reproduced_with_nfe_equal_distinct_times(N, T, seed, order):
    x0 = (np.arange(N) * 7) % 3
    cfg = SamplerConfig(order=order)
    for fn in DISCRETE:
        rec = RecordingDenoiser(teacher_denoiser(x0))
        trace = fn(rec, build_linear(T), ABSORB, N, RngStream(seed), cfg)
        np.testing.assert_array_equal(trace.final, x0)
        assert trace.nfe == len(rec.calls) == len(np.unique(trace.transition_times))
        assert rec.calls == sorted(set(trace.transition_times.tolist()), reverse=True)
    rec = RecordingDenoiser(teacher_denoiser(x0))
    trace = dndm_continuous_sample(rec, continuous_linear(), ABSORB, N, RngStream(seed), cfg)
    np.testing.assert_array_equal(trace.final, x0)
    assert trace.nfe == N == len(rec.calls)


def test_uniform_times_mean_nfe():
    # the 16 equally likely transition pairs have 1.75 distinct values on average
    runs, teacher, sch = 100_000, teacher_denoiser([0, 1]), build_linear(4)
    nfe = [dndm_sample(teacher, sch, ABSORB, 2, RngStream.for_trial(6, r)).nfe for r in range(runs)]
    assert abs(np.mean(nfe) - 1.75) <= 0.01


def test_v2_refreshes_at_every_later_call():
    rec = RecordingDenoiser(teacher_denoiser([0, 1]))
    trace = dndm_v2_sample(rec, build_linear(3), ABSORB, 2, RngStream(0),
                           transition_set=TransitionSet(np.array([3, 1])))
    assert rec.calls == [3, 1]
    assert [e.time for e in trace.events] == [3, 1]
    assert trace.events[0].positions == [0]
    assert trace.events[1].positions == [0, 1]
    plain = dndm_sample(teacher_denoiser([0, 1]), build_linear(3), ABSORB, 2, RngStream(0),
                        transition_set=TransitionSet(np.array([3, 1])))
    assert [e.positions for e in plain.events] == [[0], [1]]
    assert plain.nfe == trace.nfe


def test_topk_ties_commit_in_position_order():
    trace = dndm_topk_sample(FlatScores([2, 1, 0, 2]), build_linear(5), ABSORB, 4, RngStream(0),
                             transition_set=TransitionSet(np.array([1, 5, 3, 5])))
    assert [e.positions for e in trace.events] == [[0, 1], [2], [3]]
    np.testing.assert_array_equal(trace.final, [2, 1, 0, 2])


def test_topk_follows_scores():
    class Scored:
        factorized = True

        def predict(self, xt, t, rng):
            return np.array([0, 1, 2]), np.array([0.2, 0.9, 0.5])

    trace = dndm_topk_sample(Scored(), build_linear(4), ABSORB, 3, RngStream(0),
                             transition_set=TransitionSet(np.array([4, 2, 2])))
    assert [e.positions for e in trace.events] == [[1], [0, 2]]


def test_topk_nfe_matches_dndm_over_random_sets():
    sch, model = build_linear(8), ToyDataModel.factorized(3, [[0.2, 0.3, 0.5]] * 4)
    den = OracleDenoiser(model, sch, ABSORB)
    for r in range(10_000):
        a = dndm_sample(den, sch, ABSORB, 4, RngStream.for_trial(2, r))
        b = dndm_topk_sample(den, sch, ABSORB, 4, RngStream.for_trial(2, r))
        assert a.nfe == b.nfe
        np.testing.assert_array_equal(a.transition_times, b.transition_times)


def test_continuous_sampler_distinct_times():
    trace = dndm_continuous_sample(teacher_denoiser(np.zeros(20, dtype=int)), continuous_linear(),
                                   ABSORB, 20, RngStream(9))
    assert trace.nfe == 20
    times = [e.time for e in trace.events]
    assert times == sorted(times, reverse=True)


def test_beta_override_and_validation():
    cfg = SamplerConfig(transition_dist=beta_transition_distribution(3, 3, 50))
    trace = dndm_sample(teacher_denoiser([0, 1, 2]), build_linear(50), ABSORB, 3, RngStream(1), cfg)
    assert trace.transition_times.min() >= 1
    bad = SamplerConfig(transition_dist=beta_transition_distribution(3, 3, None))
    with pytest.raises(ValidationError):
        dndm_sample(teacher_denoiser([0]), build_linear(5), ABSORB, 1, RngStream(1), bad)
    with pytest.raises(ValidationError):
        dndm_continuous_sample(teacher_denoiser([0]), build_linear(5), ABSORB, 1, RngStream(1))
    with pytest.raises(ValidationError):
        dndm_sample(teacher_denoiser([0]), build_linear(5), ABSORB, 2, RngStream(1),
                    transition_set=TransitionSet(np.array([1])))
    with pytest.raises(ValidationError):
        dndm_sample(teacher_denoiser([0]), build_linear(5), ABSORB, 1, RngStream(1),
                    transition_set=TransitionSet(np.array([6])))
    with pytest.raises(ValidationError):
        get_sampler("ddim")


def test_runs_replay_and_serialise():
    model = ToyDataModel.factorized(3, [[0.2, 0.3, 0.5]] * 3)
    sch = build_linear(20)
    cfg = SamplerConfig(record_x0=True)
    a = dndm_v2_sample(OracleDenoiser(model, sch, ABSORB), sch, ABSORB, 3, RngStream(4, 8), cfg)
    b = dndm_v2_sample(OracleDenoiser(model, sch, ABSORB), sch, ABSORB, 3, RngStream(4, 8), cfg)
    ra, rb = a.to_record(0), b.to_record(0)
    ra["wall_ns"] = rb["wall_ns"] = 0
    assert json.dumps(ra) == json.dumps(rb)
    assert ra["schema"] == "dndm.trace/1" and all(e["x0_hat"] is not None for e in ra["events"])
    c = dndm_continuous_sample(OracleDenoiser(model, continuous_linear(), ABSORB), continuous_linear(),
                               ABSORB, 3, RngStream(4, 8))
    rec = json.loads(json.dumps(c.to_record(1)))
    assert all(isinstance(t, float) for t in rec["tau"])


def test_multinomial_baseline_reproduces_single_token_law():
    model = ToyDataModel.factorized(3, [[0.2, 0.3, 0.5]])
    sch, noise = build_linear(6), NoiseModel.uniform(3)
    den = OracleDenoiser(model, sch, noise)
    finals = np.array([baseline_multinomial_sample(den, sch, noise, 1, RngStream.for_trial(3, r)).final[0]
                       for r in range(20_000)])
    emp = np.bincount(finals, minlength=3) / finals.size
    assert 0.5 * np.abs(emp - [0.2, 0.3, 0.5]).sum() < 0.02


@given(st.integers(1, 10), st.integers(1, 30), st.integers(0, 2**30))
def test_v1_and_v2_agree_under_teacher(N, T, seed):
    x0 = np.arange(N) % 3
    sch = build_cosine(T)
    v1 = dndm_sample(teacher_denoiser(x0), sch, ABSORB, N, RngStream(seed))
    v2 = dndm_v2_sample(teacher_denoiser(x0), sch, ABSORB, N, RngStream(seed))
    np.testing.assert_array_equal(v1.final, v2.final)
    np.testing.assert_array_equal(v1.final, x0)
    assert v1.nfe == v2.nfe


def test_finals_never_contain_the_mask():
    model = ToyDataModel.factorized(3, [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
    sch = build_linear(8)
    den = OracleDenoiser(model, sch, ABSORB)
    for sampler in (baseline_absorb_sample, dndm_sample, dndm_v2_sample, dndm_topk_sample):
        for r in range(50):
            trace = sampler(den, sch, ABSORB, 2, RngStream.for_trial(11, r))
            assert np.all(trace.final < 3), sampler.__name__


def test_baseline_absorb_mask_rate_tracks_forward_marginal():
    T, runs = 5, 100_000
    sch = build_cosine(T)
    den = OracleDenoiser(ToyDataModel.factorized(3, [[0.2, 0.5, 0.3]]), sch, ABSORB)
    cfg = SamplerConfig(record_states=True)
    masked = np.zeros(T)
    for r in range(runs):
        states = baseline_absorb_sample(den, sch, ABSORB, 1, RngStream.for_trial(5, r), cfg).states
        for t in range(T):
            masked[t] += states[t][0] == 3
    rate = masked / runs
    np.testing.assert_allclose(rate, 1.0 - sch.alphas[:T], atol=0.01)


def test_runner_restores_garbage_collection():
    import gc

    from dndm.runner import SampleJob, run_job
    text = "vocab 2 1 factorized\n0.3 0.7\n"
    assert gc.isenabled()
    run_job(SampleJob("dndm", text, steps=5), 3, 1)
    assert gc.isenabled()
