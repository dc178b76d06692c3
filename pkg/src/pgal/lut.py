"""Lookup-table performance estimator.

A table of M random candidate batches is evaluated once per AL cycle.
Queries are answered by a distance-weighted average over the table entries
whose feature sets are closest in Wasserstein-1 distance; queries that are
not close to anything fall back to a direct oracle call.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .pool import ALCycleState, SamplePool, SelectionBatch

LUT = "lut"
DIRECT = "direct"
DEFAULT_K = 5
DEFAULT_EPS = 1e-8


def labeled_fingerprint(labeled) -> str:
    payload = json.dumps(sorted(int(i) for i in labeled)).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def batch_wasserstein(A, C) -> float:
    """Exact W1 between two equal-size uniform point clouds (Euclidean cost)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if A.shape[0] != C.shape[0]:
        raise ValueError(f"batch sizes differ: {A.shape[0]} vs {C.shape[0]}")
    if A.shape[0] == 0:
        raise ValueError("batches must be non-empty")
    if A.shape[1] != C.shape[1]:
        raise ValueError(f"feature dims differ: {A.shape[1]} vs {C.shape[1]}")
    cost = cdist(A, C)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / A.shape[0])


def fallback_threshold(distances) -> float:
    d = np.asarray(distances, dtype=np.float64)
    if d.size < 2:
        raise ValueError("need at least two distances for the fallback threshold")
    return float(d.mean() - d.std())


@dataclass(frozen=True)
class LUTEntry:
    ids: tuple
    performance: float
    seed: int


@dataclass(frozen=True)
class EstimateResult:
    value: float
    source: str
    min_distance: float
    threshold: float


@dataclass
class LookupTable:
    B: int
    fingerprint: str
    entries: list = field(default_factory=list)
    built: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def M(self) -> int:
        return len(self.entries)

    def append(self, entry: LUTEntry) -> None:
        with self._lock:
            self.entries.append(entry)

    def save(self, path) -> None:
        lines = [json.dumps({"B": self.B, "M": self.built, "fingerprint": self.fingerprint})]
        for e in self.entries:
            lines.append(json.dumps({"ids": list(e.ids), "performance": e.performance, "seed": e.seed}))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "LookupTable":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty lookup table file")
        head = json.loads(lines[0])
        entries = []
        for ln in lines[1:]:
            obj = json.loads(ln)
            entries.append(LUTEntry(tuple(obj["ids"]), float(obj["performance"]), int(obj["seed"])))
        return cls(int(head["B"]), head["fingerprint"], entries, int(head["M"]))


def build_lut(state: ALCycleState, oracle, M: int, B: int, rng: np.random.Generator, workers: int = 1) -> LookupTable:
    """Evaluate ``M`` random size-``B`` unlabeled batches.

    Batches are drawn up-front from ``rng``; each evaluation gets a seed derived
    from a master seed and its index, so the table does not depend on how the
    evaluations are scheduled across ``workers`` threads.
    """
    if M < 2:
        raise ValueError("lookup table needs M >= 2 entries")
    pool = state.pool
    unlabeled = pool.unlabeled
    if len(unlabeled) < B:
        raise ValueError(f"only {len(unlabeled)} unlabeled samples for budget {B}")
    master = int(rng.integers(2**63 - 1))
    batches = [SelectionBatch(tuple(rng.choice(unlabeled, size=B, replace=False).tolist())) for _ in range(M)]
    seeds = [derive_seed(master, l) for l in range(M)]

    def run(l):
        return float(oracle.evaluate(pool, batches[l], seeds[l]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            perfs = list(ex.map(run, range(M)))
    else:
        perfs = [run(l) for l in range(M)]
    entries = [LUTEntry(batches[l].ids, perfs[l], seeds[l]) for l in range(M)]
    return LookupTable(B, labeled_fingerprint(pool.labeled), entries, M)


def lut_distances(lut: LookupTable, query: SelectionBatch, pool: SamplePool) -> np.ndarray:
    q = pool.features[list(query.ids)]
    return np.array([batch_wasserstein(q, pool.features[list(e.ids)]) for e in lut.entries])


def estimate_performance(
    lut: LookupTable,
    query: SelectionBatch,
    pool: SamplePool,
    k: int = DEFAULT_K,
    oracle=None,
    seed: int = 0,
    eps: float = DEFAULT_EPS,
) -> EstimateResult:
    if lut.fingerprint != labeled_fingerprint(pool.labeled):
        raise ValueError("stale lookup table: labeled set changed since it was built")
    if len(query) != lut.B:
        raise ValueError(f"query has {len(query)} ids, table expects {lut.B}")
    entries = list(lut.entries)
    d = lut_distances(lut, query, pool)
    thr = fallback_threshold(d)
    dmin = float(d.min())

    exact = np.flatnonzero(d == 0.0)
    if exact.size:
        return EstimateResult(entries[exact[0]].performance, LUT, 0.0, thr)

    if dmin > thr:
        if oracle is None:
            raise ValueError("query requires a direct evaluation but no oracle was given")
        value = float(oracle.evaluate(pool, query, seed))
        lut.append(LUTEntry(query.ids, value, int(seed)))
        return EstimateResult(value, DIRECT, dmin, thr)

    nearest = np.argsort(d, kind="stable")[:k]
    w = 1.0 / (d[nearest] + eps)
    perf = np.array([entries[l].performance for l in nearest])
    return EstimateResult(float(w @ perf / w.sum()), LUT, dmin, thr)


class LUTEstimator:
    """Binds a table to the pool/oracle it was built for (reward-engine adapter)."""

    def __init__(self, lut: LookupTable, pool: SamplePool, oracle, k: int = DEFAULT_K, eps: float = DEFAULT_EPS):
        self.lut = lut
        self.pool = pool
        self.oracle = oracle
        self.k = k
        self.eps = eps

    def estimate(self, batch: SelectionBatch, seed: int) -> EstimateResult:
        return estimate_performance(self.lut, batch, self.pool, self.k, self.oracle, seed, self.eps)


class DirectEstimator:
    """Always asks the oracle."""

    def __init__(self, pool: SamplePool, oracle):
        self.pool = pool
        self.oracle = oracle

    def estimate(self, batch: SelectionBatch, seed: int) -> EstimateResult:
        value = float(self.oracle.evaluate(self.pool, batch, seed))
        return EstimateResult(value, DIRECT, float("nan"), float("nan"))
