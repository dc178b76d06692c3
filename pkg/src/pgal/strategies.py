"""Comparison strategies: random, entropy and core-set (k-center greedy)."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from .pool import ALCycleState, SelectionBatch

STRATEGIES = ("random", "entropy", "coreset", "mgral")


def _check_budget(state: ALCycleState, B: int) -> np.ndarray:
    unlabeled = state.pool.unlabeled
    if B < 0 or B > len(unlabeled):
        raise ValueError(f"budget {B} invalid for {len(unlabeled)} unlabeled samples")
    return unlabeled


def random_select(state: ALCycleState, B: int, rng: np.random.Generator) -> SelectionBatch:
    """Uniform B-subset in draw order; consumes exactly ``B`` uniforms from ``rng``."""
    remaining = list(_check_budget(state, B))
    u = rng.random(B)
    picked = []
    for j in range(B):
        k = min(int(u[j] * len(remaining)), len(remaining) - 1)
        picked.append(int(remaining.pop(k)))
    return SelectionBatch(tuple(picked))


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_select(state: ALCycleState, B: int, probe) -> SelectionBatch:
    """Top-B unlabeled samples by predictive entropy; ``probe(sample_id)`` gives the distribution."""
    unlabeled = _check_budget(state, B)
    h = np.array([entropy(probe(int(i))) for i in unlabeled])
    rank = np.lexsort((unlabeled, -h))
    return SelectionBatch(tuple(unlabeled[rank[:B]].tolist()))


def kcenter_greedy(state: ALCycleState, B: int) -> SelectionBatch:
    """Farthest-first traversal from the labeled set.

    With nothing labeled the first pick is the sample farthest from the pool
    centroid. Ties go to the smaller id.
    """
    unlabeled = _check_budget(state, B)
    x = state.pool.features
    labeled = sorted(state.pool.labeled)
    cand = x[unlabeled]
    if labeled:
        min_d = cdist(cand, x[labeled]).min(axis=1)
    else:
        min_d = np.linalg.norm(cand - x.mean(axis=0), axis=1)
    taken = np.zeros(len(unlabeled), dtype=bool)
    picked = []
    for _ in range(B):
        score = np.where(taken, -np.inf, min_d)
        j = int(np.argmax(score))  # first maximum = smallest id, since unlabeled is sorted
        picked.append(int(unlabeled[j]))
        taken[j] = True
        d_new = np.linalg.norm(cand - cand[j], axis=1)
        if not labeled and len(picked) == 1:
            min_d = d_new
        else:
            min_d = np.minimum(min_d, d_new)
    return SelectionBatch(tuple(picked))


def coverage_radius(features: np.ndarray, centers) -> float:
    """Max over points of the distance to the nearest center."""
    centers = list(centers)
    if not centers:
        return float("inf")
    return float(cdist(features, features[centers]).min(axis=1).max())
