"""Performance-gain reward, moving reference baseline and one RL iteration."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Protocol

import numpy as np

from . import agent as ag
from .pool import ALCycleState, SamplePool, SelectionBatch

AS_WRITTEN = "as-written"
STANDARD_EMA = "standard-ema"
BASELINE_MODES = (AS_WRITTEN, STANDARD_EMA)
DEFAULT_LAMBDA = 0.5


class PerformanceOracle(Protocol):
    def evaluate(self, pool: SamplePool, hypothetical: SelectionBatch, seed: int = 0) -> float: ...


class Estimator(Protocol):
    def estimate(self, batch: SelectionBatch, seed: int): ...


@dataclass(frozen=True)
class RewardState:
    lam: float = DEFAULT_LAMBDA
    mode: str = AS_WRITTEN
    ref: float = 0.0
    initialized: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.mode not in BASELINE_MODES:
            raise ValueError(f"unknown baseline mode {self.mode!r}; expected one of {BASELINE_MODES}")


@dataclass(frozen=True)
class IterationRecord:
    i: int
    ids: tuple
    perf: float
    source: str
    advantage: float
    loss: float
    logprob: float
    ref_before: float

    def to_json(self, **extra) -> str:
        obj = asdict(self)
        obj["ids"] = list(self.ids)
        obj.update(extra)
        return json.dumps(obj)


def delta_map(map_i: float, map_prev: float) -> float:
    if not (math.isfinite(map_i) and math.isfinite(map_prev)):
        raise ValueError("performance values must be finite")
    return map_i - map_prev


def update_reference(state: RewardState, map_i: float) -> RewardState:
    """Advance the reference baseline with a new performance value.

    ``as-written``:   ref' = lam*ref + (1-lam)*(map - ref)
    ``standard-ema``: ref' = lam*ref + (1-lam)*map
    The first call only seeds the reference with ``map_i``.

    The as-written form is evaluated as (2*lam - 1)*ref + (1-lam)*map so the
    lam=0.5 and lam=1 cases come out exact instead of via cancellation.
    """
    if not math.isfinite(map_i):
        raise ValueError("performance value must be finite")
    if not state.initialized:
        return replace(state, ref=float(map_i), initialized=True)
    lam, ref = state.lam, state.ref
    if state.mode == AS_WRITTEN:
        new = (2.0 * lam - 1.0) * ref + (1.0 - lam) * map_i
    else:
        new = lam * ref + (1.0 - lam) * map_i
    return replace(state, ref=new)


def policy_advantage(map_i: float, state: RewardState) -> float:
    if not state.initialized:
        raise ValueError("reference baseline is not initialized")
    return map_i - state.ref


def clamp_unit(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


def rl_iteration(
    agent: ag.AgentParams,
    state: ALCycleState,
    reward: RewardState,
    estimator: Estimator,
    rng: np.random.Generator,
    *,
    budget: int,
    iteration: int = 0,
    lr: float = ag.DEFAULT_LR,
    clip_norm: float | None = ag.DEFAULT_CLIP_NORM,
):
    """Score -> sample -> estimate -> advantage -> update agent -> update ref.

    Returns ``(agent', reward', record)``. Nothing is mutated, so an exception
    anywhere leaves the caller's agent untouched.
    """
    pool = state.pool
    unlabeled = pool.unlabeled
    if len(unlabeled) < budget:
        raise ValueError(f"only {len(unlabeled)} unlabeled samples for budget {budget}")

    order = rng.permutation(unlabeled)
    traj = ag.rollout(agent, pool, order, budget, rng)
    est_seed = int(rng.integers(2**31))
    result = estimator.estimate(traj.batch, est_seed)
    perf = clamp_unit(result.value)

    if not reward.initialized:
        # first measurement seeds the baseline; its advantage is zero by construction
        reward = update_reference(reward, perf)
        ref_before = reward.ref
        advantage = policy_advantage(perf, reward)
        seeded = True
    else:
        ref_before = reward.ref
        advantage = policy_advantage(perf, reward)
        seeded = False

    grads = ag.backprop_policy(agent, traj, advantage)
    grads = ag.clip_gradients(grads, clip_norm)
    new_agent = ag.adam_update(agent, grads, lr=lr)
    if not seeded:
        reward = update_reference(reward, perf)

    record = IterationRecord(
        i=iteration,
        ids=traj.batch.ids,
        perf=perf,
        source=result.source,
        advantage=advantage,
        loss=-advantage * traj.logprob,
        logprob=traj.logprob,
        ref_before=ref_before,
    )
    return new_agent, reward, record
