"""Sequential LSTM scoring policy.

The agent walks the unlabeled pool in a given order. At step k it feeds
``concat(feature_k, sigmoid(logit_{k-1}))`` to a shared LSTM cell and decodes
the hidden state into a scalar selection logit with a 2-layer tanh MLP.

Training draws batches from the Plackett-Luce distribution over the logits
(sequential softmax sampling without replacement); inference takes the top-B.
Gradients are derived by hand (no autodiff) and checked against finite
differences in the test-suite.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .pool import SamplePool, SelectionBatch

GATES = ("input", "forget", "cell", "output")

# Adam defaults; lr is the value used for the full-scale detector setting.
DEFAULT_LR = 3.5e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8
DEFAULT_CLIP_NORM = 5.0
INIT_SCALE = 0.08

PARAM_NAMES = ("lstm.W_x", "lstm.W_h", "lstm.b", "dec.W1", "dec.b1", "dec.W2", "dec.b2")


@dataclass(frozen=True)
class LSTMParams:
    """Per-gate weights stacked on axis 0 in ``GATES`` order.

    W_x: (4, H, D), W_h: (4, H, H), b: (4, H) where D = d + 1.
    """

    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W_h.shape[1]

    @property
    def input_width(self) -> int:
        return self.W_x.shape[2]


@dataclass(frozen=True)
class DecoderParams:
    W1: np.ndarray  # (H2, H)
    b1: np.ndarray  # (H2,)
    W2: np.ndarray  # (H2,)
    b2: np.ndarray  # () scalar array


@dataclass(frozen=True)
class AgentParams:
    lstm: LSTMParams
    decoder: DecoderParams
    m: dict
    v: dict
    step: int = 0

    def as_dict(self) -> dict:
        return {
            "lstm.W_x": self.lstm.W_x,
            "lstm.W_h": self.lstm.W_h,
            "lstm.b": self.lstm.b,
            "dec.W1": self.decoder.W1,
            "dec.b1": self.decoder.b1,
            "dec.W2": self.decoder.W2,
            "dec.b2": self.decoder.b2,
        }

    def with_params(self, params: dict, **kw) -> "AgentParams":
        lstm = LSTMParams(params["lstm.W_x"], params["lstm.W_h"], params["lstm.b"])
        dec = DecoderParams(params["dec.W1"], params["dec.b1"], params["dec.W2"], params["dec.b2"])
        return replace(self, lstm=lstm, decoder=dec, **kw)

    @property
    def feature_dim(self) -> int:
        return self.lstm.input_width - 1

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for name in PARAM_NAMES:
            h.update(np.ascontiguousarray(self.as_dict()[name]).tobytes())
        return h.hexdigest()


def decoder_width(hidden: int) -> int:
    return max(1, hidden // 2)


def init_agent(feature_dim: int, rng: np.random.Generator, scale: float = INIT_SCALE) -> AgentParams:
    """Uniform(-scale, scale) weights, zero biases, forget-gate bias 1."""
    D = feature_dim + 1
    H = D
    H2 = decoder_width(H)
    b = np.zeros((4, H))
    b[GATES.index("forget")] = 1.0
    params = {
        "lstm.W_x": rng.uniform(-scale, scale, size=(4, H, D)),
        "lstm.W_h": rng.uniform(-scale, scale, size=(4, H, H)),
        "lstm.b": b,
        "dec.W1": rng.uniform(-scale, scale, size=(H2, H)),
        "dec.b1": np.zeros(H2),
        "dec.W2": rng.uniform(-scale, scale, size=H2),
        "dec.b2": np.zeros(()),
    }
    zeros = {k: np.zeros_like(p) for k, p in params.items()}
    empty = AgentParams(None, None, zeros, {k: z.copy() for k, z in zeros.items()}, 0)
    return empty.with_params(params)


def _require_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite value in {name}")


def lstm_step(p: LSTMParams, h: np.ndarray, c: np.ndarray, x: np.ndarray):
    """One LSTM cell update; returns ``(h', c')``."""
    _require_finite("lstm_step input", h, c, x)
    h_new, c_new, _ = _lstm_forward(p, h, c, x)
    return h_new, c_new


def _lstm_forward(p: LSTMParams, h, c, x):
    pre = p.W_x @ x + p.W_h @ h + p.b  # (4, H)
    i = expit(pre[0])
    f = expit(pre[1])
    g = np.tanh(pre[2])
    o = expit(pre[3])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, g, o, tc)


def decode_score(p: DecoderParams, h: np.ndarray) -> float:
    _require_finite("decode_score input", h)
    a = np.tanh(p.W1 @ h + p.b1)
    return float(p.W2 @ a + p.b2)


@dataclass(frozen=True)
class ScoreCache:
    order: np.ndarray  # ids in visit order
    xs: np.ndarray  # (n, D) LSTM inputs
    hs: np.ndarray  # (n+1, H); hs[0] is the initial state
    cs: np.ndarray  # (n+1, H)
    gates: np.ndarray  # (n, 5, H): i, f, g, o, tanh(c)
    dec_act: np.ndarray  # (n, H2) tanh activations
    logits: np.ndarray  # (n,)
    digest: str


def score_pool(agent: AgentParams, pool: SamplePool, order) -> tuple:
    """Score the samples of ``order`` sequentially.

    Returns ``(logits, cache)`` with ``logits[k]`` belonging to ``order[k]``.
    """
    order = np.asarray(order, dtype=np.int64)
    labeled = pool.labeled
    for i in order:
        if i in labeled:
            raise ValueError(f"visit order contains labeled id {int(i)}")
        if not 0 <= i < pool.n:
            raise ValueError(f"visit order id {int(i)} out of range")
    if len(set(order.tolist())) != len(order):
        raise ValueError("visit order has duplicate ids")
    if pool.dim != agent.feature_dim:
        raise ValueError(f"agent expects feature dim {agent.feature_dim}, pool has {pool.dim}")

    lstm, dec = agent.lstm, agent.decoder
    n = len(order)
    H = lstm.hidden
    D = lstm.input_width
    feats = pool.features[order]
    xs = np.empty((n, D))
    xs[:, :-1] = feats
    hs = np.zeros((n + 1, H))
    cs = np.zeros((n + 1, H))
    gates = np.empty((n, 5, H))
    dec_act = np.empty((n, dec.W1.shape[0]))
    logits = np.empty(n)
    # feature part of the input projection does not depend on the recurrence
    x_proj = np.einsum("ghd,kd->kgh", lstm.W_x[:, :, :-1], feats) + lstm.b
    w_prev = lstm.W_x[:, :, -1]
    Wh_flat = lstm.W_h.reshape(4 * H, H)
    prev = 0.0
    for k in range(n):
        xs[k, -1] = prev
        pre = x_proj[k] + w_prev * prev + (Wh_flat @ hs[k]).reshape(4, H)
        sig = expit(pre[[0, 1, 3]])
        i, f, o = sig
        g = np.tanh(pre[2])
        c = f * cs[k] + i * g
        tc = np.tanh(c)
        cs[k + 1] = c
        hs[k + 1] = o * tc
        gk = gates[k]
        gk[0], gk[1], gk[2], gk[3], gk[4] = i, f, g, o, tc
        a = np.tanh(dec.W1 @ hs[k + 1] + dec.b1)
        dec_act[k] = a
        z = float(dec.W2 @ a + dec.b2)
        logits[k] = z
        prev = 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
    _require_finite("logits", logits)
    cache = ScoreCache(order, xs, hs, cs, gates, dec_act, logits, agent.digest())
    return logits, cache


def _logsumexp(z: np.ndarray) -> float:
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()))


def plackett_luce_logprob(logits: np.ndarray, positions) -> float:
    """Log-probability of drawing ``positions`` in that order without replacement."""
    logits = np.asarray(logits, dtype=np.float64)
    remaining = np.ones(len(logits), dtype=bool)
    total = 0.0
    for j in positions:
        total += logits[j] - _logsumexp(logits[remaining])
        remaining[j] = False
    return float(total)


def _plackett_luce_grad(logits: np.ndarray, positions) -> np.ndarray:
    """d logprob / d logits."""
    grad = np.zeros(len(logits))
    remaining = np.ones(len(logits), dtype=bool)
    for j in positions:
        z = logits[remaining]
        p = np.exp(z - _logsumexp(z))
        grad[remaining] -= p
        grad[j] += 1.0
        remaining[j] = False
    return grad


def sample_batch(logits, B: int, rng: np.random.Generator, ids=None) -> tuple:
    """Plackett-Luce draw of ``B`` items; returns ``(batch, logprob)``.

    Sampling is done with the Gumbel top-k trick, which matches sequential
    softmax sampling without replacement. ``ids`` maps logit positions to
    sample ids (defaults to the positions themselves).
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = len(logits)
    if B > n:
        raise ValueError(f"budget {B} exceeds {n} unlabeled samples")
    if B < 0:
        raise ValueError("budget must be non-negative")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    keys = logits + rng.gumbel(size=n)
    positions = np.argsort(-keys, kind="stable")[:B]
    logprob = plackett_luce_logprob(logits, positions)
    return SelectionBatch(tuple(ids[positions].tolist())), logprob


def select_top_b(logits, B: int, ids=None) -> SelectionBatch:
    """Ids of the ``B`` largest logits, ties broken by smaller id."""
    logits = np.asarray(logits, dtype=np.float64)
    n = len(logits)
    if B > n:
        raise ValueError(f"budget {B} exceeds {n} candidates")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    rank = np.lexsort((ids, -logits))
    return SelectionBatch(tuple(ids[rank[:B]].tolist()))


@dataclass(frozen=True)
class Trajectory:
    order: np.ndarray
    logits: np.ndarray
    batch: SelectionBatch
    logprob: float
    cache: ScoreCache

    @property
    def positions(self) -> np.ndarray:
        where = {int(i): k for k, i in enumerate(self.order)}
        return np.array([where[i] for i in self.batch.ids], dtype=np.int64)


def rollout(agent: AgentParams, pool: SamplePool, order, B: int, rng: np.random.Generator) -> Trajectory:
    logits, cache = score_pool(agent, pool, order)
    batch, logprob = sample_batch(logits, B, rng, ids=cache.order)
    return Trajectory(cache.order, logits, batch, logprob, cache)


def batch_logprob(agent: AgentParams, pool: SamplePool, order, batch: SelectionBatch) -> float:
    """Forward pass + Plackett-Luce log-probability of a fixed batch."""
    logits, cache = score_pool(agent, pool, order)
    where = {int(i): k for k, i in enumerate(cache.order)}
    return plackett_luce_logprob(logits, [where[i] for i in batch.ids])


def backprop_policy(agent: AgentParams, traj: Trajectory, advantage: float) -> dict:
    """Gradients of ``-advantage * logprob`` for every parameter block."""
    cache = traj.cache
    if cache.digest != agent.digest():
        raise ValueError("stale trajectory: cache was produced with different agent parameters")
    lstm, dec = agent.lstm, agent.decoder
    grads = {k: np.zeros_like(p) for k, p in agent.as_dict().items()}
    if advantage == 0.0:
        return grads

    dz_direct = -advantage * _plackett_luce_grad(cache.logits, traj.positions)
    n = len(cache.order)
    H = lstm.hidden
    Wh_flat = lstm.W_h.reshape(4 * H, H)
    wx_prev = lstm.W_x[:, :, -1]  # weights on the prev-signal input
    W1T = dec.W1.T

    # sequential pass: only the recurrent quantities; weight grads are summed afterwards
    dz_all = np.empty(n)
    du_all = np.empty((n, dec.W1.shape[0]))
    dpre_all = np.empty((n, 4, H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    dprev_sig = 0.0  # gradient w.r.t. the prev-signal input of step k+1
    for k in range(n - 1, -1, -1):
        s = expit(cache.logits[k])
        dz = dz_direct[k] + dprev_sig * s * (1.0 - s)
        a = cache.dec_act[k]
        du = dz * dec.W2 * (1.0 - a * a)
        dh = W1T @ du + dh_next

        i, f, g, o, tc = cache.gates[k]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dpre = dpre_all[k]
        dpre[0] = dc * g * i * (1.0 - i)
        dpre[1] = dc * cache.cs[k] * f * (1.0 - f)
        dpre[2] = dc * i * (1.0 - g * g)
        dpre[3] = dh * tc * o * (1.0 - o)
        dz_all[k] = dz
        du_all[k] = du
        dh_next = dpre.ravel() @ Wh_flat
        dc_next = dc * f
        dprev_sig = float(np.sum(wx_prev * dpre))

    grads["dec.W2"] = dz_all @ cache.dec_act
    grads["dec.b2"] = np.asarray(dz_all.sum())
    grads["dec.W1"] = du_all.T @ cache.hs[1:]
    grads["dec.b1"] = du_all.sum(axis=0)
    grads["lstm.W_x"] = np.einsum("kgh,kd->ghd", dpre_all, cache.xs)
    grads["lstm.W_h"] = np.einsum("kgh,kj->ghj", dpre_all, cache.hs[:-1])
    grads["lstm.b"] = dpre_all.sum(axis=0)
    return grads


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_update(
    agent: AgentParams,
    grads: dict,
    lr: float = DEFAULT_LR,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_EPS,
) -> AgentParams:
    """Bias-corrected Adam step; returns a new agent."""
    for name in PARAM_NAMES:
        if not np.all(np.isfinite(grads[name])):
            raise ValueError(f"non-finite gradient in parameter block {name}")
    t = agent.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    params, m_new, v_new = {}, {}, {}
    for name, p in agent.as_dict().items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = beta1 * agent.m[name] + (1.0 - beta1) * g
        v = beta2 * agent.v[name] + (1.0 - beta2) * (g * g)
        params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        m_new[name] = m
        v_new[name] = v
    return agent.with_params(params, m=m_new, v=v_new, step=t)


def _arr_to_json(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.asarray(a).ravel().tolist()}


def _arr_from_json(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def save_checkpoint(agent: AgentParams, path, rng: np.random.Generator | None = None) -> None:
    obj = {
        "step": agent.step,
        "params": {k: _arr_to_json(v) for k, v in agent.as_dict().items()},
        "adam_m": {k: _arr_to_json(v) for k, v in agent.m.items()},
        "adam_v": {k: _arr_to_json(v) for k, v in agent.v.items()},
        "rng_state": None if rng is None else rng.bit_generator.state,
    }
    Path(path).write_text(json.dumps(obj))


def load_checkpoint(path) -> tuple:
    """Returns ``(agent, rng_or_None)``."""
    obj = json.loads(Path(path).read_text())
    params = {k: _arr_from_json(v) for k, v in obj["params"].items()}
    m = {k: _arr_from_json(v) for k, v in obj["adam_m"].items()}
    v = {k: _arr_from_json(val) for k, val in obj["adam_v"].items()}
    agent = AgentParams(None, None, m, v, int(obj["step"])).with_params(params)
    rng = None
    if obj.get("rng_state") is not None:
        state = obj["rng_state"]
        rng = np.random.Generator(getattr(np.random, state["bit_generator"])())
        rng.bit_generator.state = state
    return agent, rng
