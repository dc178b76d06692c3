import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from pgal import agent as ag
from pgal import reward as rw
from pgal.backends import CoverageWorld, generate_coverage_world
from pgal.lut import DirectEstimator, EstimateResult, LUTEstimator, build_lut
from pgal.pool import ALCycleState, SamplePool


def test_delta_map():
    assert rw.delta_map(0.7, 0.6) == pytest.approx(0.1)
    assert rw.delta_map(0.42, 0.42) == 0.0
    assert rw.delta_map(0.3, 0.6) == pytest.approx(-0.3)
    with pytest.raises(ValueError):
        rw.delta_map(float("nan"), 0.1)


def init_state(ref, lam=0.5, mode=rw.AS_WRITTEN):
    return rw.RewardState(lam, mode, ref, True)


def test_update_reference_as_written():
    assert rw.update_reference(init_state(0.5), 0.7).ref == pytest.approx(0.35, abs=1e-15)
    assert rw.update_reference(init_state(0.5, lam=1.0), 0.9).ref == 0.5


def test_update_reference_standard_ema():
    assert rw.update_reference(init_state(0.5, mode=rw.STANDARD_EMA), 0.7).ref == pytest.approx(0.6, abs=1e-15)


def test_update_reference_first_call_seeds():
    s = rw.update_reference(rw.RewardState(0.5), 0.8)
    assert s.initialized and s.ref == 0.8


def test_reward_state_validates_lambda():
    with pytest.raises(ValueError):
        rw.RewardState(lam=1.5)
    with pytest.raises(ValueError):
        rw.RewardState(mode="bogus")


@settings(max_examples=200)
@given(hst.floats(0, 1), hst.floats(-1, 1))
def test_as_written_half_lambda_pin(m, ref):
    assert rw.update_reference(init_state(ref), m).ref == m / 2


@settings(max_examples=200)
@given(hst.floats(0.5, 1), hst.floats(-1, 1), hst.lists(hst.floats(0, 1), min_size=1, max_size=50),
       hst.sampled_from(rw.BASELINE_MODES))
def test_reference_envelope(lam, ref0, maps, mode):
    if mode == rw.STANDARD_EMA:
        ref0 = abs(ref0)  # start inside [0, 1]
    s = rw.RewardState(lam, mode, ref0, True)
    bound = 1.0 if mode == rw.STANDARD_EMA else max(abs(ref0), 1.0)
    for m in maps:
        s = rw.update_reference(s, m)
        assert abs(s.ref) <= bound + 1e-12


def test_policy_advantage():
    assert rw.policy_advantage(0.7, init_state(0.5)) == pytest.approx(0.2)
    assert rw.policy_advantage(0.5, init_state(0.5)) == 0.0
    assert rw.policy_advantage(0.4, init_state(0.5)) == pytest.approx(-0.1)
    with pytest.raises(ValueError):
        rw.policy_advantage(0.4, rw.RewardState())


# ---- rl_iteration ------------------------------------------------------------

class ConstEstimator:
    def __init__(self, value):
        self.value = value
        self.calls = 0

    def estimate(self, batch, seed):
        self.calls += 1
        return EstimateResult(self.value, "direct", 0.0, 0.0)


class FailingEstimator:
    def estimate(self, batch, seed):
        raise RuntimeError("oracle down")


def small_setup(seed=0, n=12, d=2):
    rng = np.random.default_rng(seed)
    pool = SamplePool(rng.normal(size=(n, d)), {0, 1})
    return ag.init_agent(d, rng), ALCycleState(pool)


def test_rl_iteration_zero_advantage_leaves_agent():
    agent, state = small_setup()
    reward = init_state(0.6, mode=rw.STANDARD_EMA)
    new_agent, new_reward, rec = rw.rl_iteration(
        agent, state, reward, ConstEstimator(0.6), np.random.default_rng(1), budget=3, lr=0.1
    )
    for k, v in agent.as_dict().items():
        assert np.array_equal(new_agent.as_dict()[k], v)
    assert rec.advantage == 0.0
    assert new_reward.ref == pytest.approx(0.6)


def test_rl_iteration_first_call_seeds_baseline():
    agent, state = small_setup()
    _, reward, rec = rw.rl_iteration(agent, state, rw.RewardState(), ConstEstimator(0.3),
                                     np.random.default_rng(1), budget=2)
    assert reward.initialized and reward.ref == 0.3
    assert rec.advantage == 0.0 and rec.ref_before == 0.3


def test_rl_iteration_record_invariants():
    agent, state = small_setup()
    reward = init_state(0.2)
    _, new_reward, rec = rw.rl_iteration(agent, state, reward, ConstEstimator(0.7),
                                         np.random.default_rng(5), budget=3, iteration=4)
    assert rec.i == 4
    assert rec.advantage == pytest.approx(rec.perf - rec.ref_before, abs=1e-15)
    assert rec.ref_before == 0.2
    assert rec.loss == pytest.approx(-rec.advantage * rec.logprob, abs=1e-12)
    assert rec.logprob <= 0
    assert not set(rec.ids) & state.pool.labeled
    assert new_reward.ref == pytest.approx(0.5 * 0.2 + 0.5 * (0.7 - 0.2))


def test_rl_iteration_clamps_estimates():
    agent, state = small_setup()
    _, _, rec = rw.rl_iteration(agent, state, init_state(0.5), ConstEstimator(1.3),
                                np.random.default_rng(0), budget=2)
    assert rec.perf == 1.0


def test_rl_iteration_deterministic():
    agent, state = small_setup()
    world = CoverageWorld(state.pool, 0.8)
    recs = []
    for _ in range(2):
        est = DirectEstimator(state.pool, world)
        _, _, rec = rw.rl_iteration(agent, state, init_state(0.4), est, np.random.default_rng(11), budget=3)
        recs.append(rec)
    assert recs[0] == recs[1]


def test_rl_iteration_error_is_atomic():
    agent, state = small_setup()
    before = agent.digest()
    with pytest.raises(RuntimeError):
        rw.rl_iteration(agent, state, init_state(0.4), FailingEstimator(), np.random.default_rng(0), budget=2)
    assert agent.digest() == before


def test_rl_iteration_budget_check():
    agent, state = small_setup(n=4)
    with pytest.raises(ValueError):
        rw.rl_iteration(agent, state, init_state(0.4), ConstEstimator(0.5), np.random.default_rng(0), budget=3)


def test_record_json_line():
    rec = rw.IterationRecord(3, (4, 1), 0.5, "lut", 0.1, 0.2, -2.0, 0.4)
    obj = json.loads(rec.to_json(cycle=2))
    assert obj["ids"] == [4, 1] and obj["cycle"] == 2
    assert set(obj) >= {"i", "ids", "perf", "source", "advantage", "loss", "logprob"}


def test_learning_signal_on_toy_coverage_pool():
    """n=20, d=2, B=3: measured performance improves over 200 iterations."""
    world = generate_coverage_world(20, 2, 0.25, seed=3)
    state = ALCycleState(world.pool.with_labeled([0, 1]))
    rng = np.random.default_rng(0)
    agent = ag.init_agent(2, rng)
    reward = rw.RewardState(0.5, rw.STANDARD_EMA)
    est = LUTEstimator(build_lut(state, world, 40, 3, rng), state.pool, world)
    perfs = []
    for i in range(200):
        agent, reward, rec = rw.rl_iteration(agent, state, reward, est, rng, budget=3, iteration=i, lr=3e-2)
        perfs.append(rec.perf)
    assert np.mean(perfs[-50:]) > np.mean(perfs[:50])
