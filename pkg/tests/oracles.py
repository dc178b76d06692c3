"""Independent reference computations used by the tests.

Everything here is written element-by-element with the ``math`` module so it
shares no code path with the vectorised implementation under test.
"""

import math

import numpy as np

from pgal import agent as ag


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm_step(p, h, c, x):
    H = len(h)
    pre = [[0.0] * H for _ in range(4)]
    for g in range(4):
        for r in range(H):
            s = float(p.b[g, r])
            for j in range(len(x)):
                s += float(p.W_x[g, r, j]) * float(x[j])
            for j in range(H):
                s += float(p.W_h[g, r, j]) * float(h[j])
            pre[g][r] = s
    h_new, c_new = [], []
    for r in range(H):
        i = _sig(pre[0][r])
        f = _sig(pre[1][r])
        gg = math.tanh(pre[2][r])
        o = _sig(pre[3][r])
        cn = f * float(c[r]) + i * gg
        c_new.append(cn)
        h_new.append(o * math.tanh(cn))
    return np.array(h_new), np.array(c_new)


def scalar_decode(p, h):
    out = float(p.b2)
    for r in range(p.W1.shape[0]):
        s = float(p.b1[r])
        for j in range(len(h)):
            s += float(p.W1[r, j]) * float(h[j])
        out += float(p.W2[r]) * math.tanh(s)
    return out


def fd_gradients(agent, pool, order, batch, advantage, h=1e-5):
    """Central differences of -advantage * logprob(batch) for every parameter entry."""
    base = agent.as_dict()
    out = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            vals = []
            for delta in (h, -h):
                params = {k: v.copy() for k, v in base.items()}
                params[name][idx] += delta
                perturbed = agent.with_params(params)
                vals.append(-advantage * ag.batch_logprob(perturbed, pool, order, batch))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out[name] = g
    return out


def relative_error(analytic, numeric, floor=1e-8):
    """Largest entry-wise relative error, ignoring entries within ``floor`` absolutely."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    rel = np.where(diff <= floor, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(rel.max()) if rel.size else 0.0
