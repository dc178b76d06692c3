"""Synthetic performance oracles with planted structure.

``ClusterWorld`` stands in for "retrain the task model on labeled + batch and
measure it": annotated samples reveal their hidden cluster label, a
nearest-centroid classifier is fit, and test accuracy is the performance.
``CoverageWorld`` is a cheap exact oracle (fraction of the pool within a
radius of an annotated point) used mostly by tests.

Both oracles ignore the ``seed`` argument; use ``NoisyOracle`` for reward noise.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax

from .pool import SamplePool, SelectionBatch

MAX_CENTROID_ATTEMPTS = 1000


def _annotated(labeled, hypothetical) -> np.ndarray:
    ids = set(int(i) for i in labeled)
    if hypothetical is not None:
        hyp = set(hypothetical.ids if isinstance(hypothetical, SelectionBatch) else hypothetical)
        if ids & hyp:
            raise ValueError(f"hypothetical batch overlaps labeled set: {sorted(ids & hyp)}")
        ids |= hyp
    return np.array(sorted(ids), dtype=np.int64)


@dataclass(frozen=True)
class ClusterConfig:
    n_clusters: int
    per_cluster: int
    dim: int
    sigma: float
    seed: int


@dataclass(frozen=True, eq=False)
class ClusterWorld:
    config: ClusterConfig
    pool: SamplePool
    labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    centroids: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.config.n_clusters

    def evaluate(self, pool: SamplePool, hypothetical: SelectionBatch | None = None, seed: int = 0) -> float:
        return cluster_oracle(self, pool.labeled, hypothetical)

    def snapshot(self) -> dict:
        return {"kind": "cluster", "config": asdict(self.config)}


def generate_cluster_pool(n_clusters: int, per_cluster: int, dim: int, sigma: float, seed: int) -> ClusterWorld:
    if n_clusters < 2:
        raise ValueError("need at least 2 clusters")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    min_sep = 4.0 * sigma
    centroids = []
    attempts = 0
    while len(centroids) < n_clusters:
        attempts += 1
        if attempts > MAX_CENTROID_ATTEMPTS:
            raise ValueError(
                f"could not place {n_clusters} centroids {min_sep:g} apart in [-1,1]^{dim}; "
                "use fewer clusters or a smaller sigma"
            )
        cand = rng.uniform(-1.0, 1.0, size=dim)
        if all(np.linalg.norm(cand - c) >= min_sep for c in centroids):
            centroids.append(cand)
    centroids = np.array(centroids)
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    pool_x = centroids[labels] + sigma * rng.standard_normal((labels.size, dim))
    test_x = centroids[labels] + sigma * rng.standard_normal((labels.size, dim))
    labels.setflags(write=False)
    test_labels = labels.copy()
    test_labels.setflags(write=False)
    test_x.setflags(write=False)
    centroids.setflags(write=False)
    cfg = ClusterConfig(n_clusters, per_cluster, dim, float(sigma), int(seed))
    return ClusterWorld(cfg, SamplePool(pool_x), labels, test_x, test_labels, centroids)


def _class_means(world: ClusterWorld, annotated: np.ndarray):
    C = world.n_clusters
    x = world.pool.features[annotated]
    y = world.labels[annotated]
    present = np.zeros(C, dtype=bool)
    means = np.zeros((C, world.pool.dim))
    for c in range(C):
        sel = y == c
        if sel.any():
            present[c] = True
            means[c] = x[sel].mean(axis=0)
    return means, present


def cluster_oracle(world: ClusterWorld, labeled, hypothetical=None) -> float:
    """Held-out accuracy of a nearest-centroid classifier fit on the annotated set."""
    annotated = _annotated(labeled, hypothetical)
    if annotated.size == 0:
        return 1.0 / world.n_clusters
    means, present = _class_means(world, annotated)
    dist = cdist(world.test_features, means)
    dist[:, ~present] = np.inf
    pred = np.argmin(dist, axis=1)
    return float(np.mean(pred == world.test_labels))


def predictive_distribution(world: ClusterWorld, labeled, sample_id: int) -> np.ndarray:
    """Softmax over negative distances to labeled class centroids; absent classes get 0."""
    annotated = _annotated(labeled, None)
    if annotated.size == 0:
        raise ValueError("predictive distribution needs at least one labeled sample")
    means, present = _class_means(world, annotated)
    d = np.linalg.norm(means[present] - world.pool.features[sample_id], axis=1)
    probs = np.zeros(world.n_clusters)
    probs[present] = softmax(-d)
    return probs


@dataclass(frozen=True)
class CoverageConfig:
    n: int
    dim: int
    radius: float
    seed: int


@dataclass(frozen=True, eq=False)
class CoverageWorld:
    pool: SamplePool
    radius: float
    config: CoverageConfig | None = None

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("radius must be finite and positive")

    def evaluate(self, pool: SamplePool, hypothetical: SelectionBatch | None = None, seed: int = 0) -> float:
        return coverage_oracle(self, pool.labeled, hypothetical)

    def snapshot(self) -> dict:
        if self.config is None:
            raise ValueError("hand-built coverage world has no generation config")
        return {"kind": "coverage", "config": asdict(self.config)}


def generate_coverage_world(n: int, dim: int, radius: float, seed: int) -> CoverageWorld:
    """Pool of ``n`` points uniform in the unit cube."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, dim))
    return CoverageWorld(SamplePool(x), float(radius), CoverageConfig(n, dim, float(radius), int(seed)))


def coverage_oracle(world: CoverageWorld, labeled, hypothetical=None) -> float:
    annotated = _annotated(labeled, hypothetical)
    if annotated.size == 0:
        return 0.0
    x = world.pool.features
    d = cdist(x, x[annotated])
    return float(np.mean((d <= world.radius).any(axis=1)))


class NoisyOracle:
    """Adds seeded Gaussian noise to another oracle, clamped to [0, 1]."""

    def __init__(self, base, sigma: float):
        self.base = base
        self.sigma = float(sigma)

    def __getattr__(self, name):
        return getattr(self.base, name)

    def evaluate(self, pool: SamplePool, hypothetical: SelectionBatch | None = None, seed: int = 0) -> float:
        value = self.base.evaluate(pool, hypothetical, seed)
        ids = sorted(pool.labeled | set(hypothetical.ids if hypothetical is not None else ()))
        key = zlib.crc32(json.dumps(ids).encode())
        noise = np.random.default_rng([int(seed) & 0xFFFFFFFF, key]).normal(0.0, self.sigma)
        return float(min(1.0, max(0.0, value + noise)))


def world_from_snapshot(obj: dict):
    cfg = obj["config"]
    if obj["kind"] == "cluster":
        return generate_cluster_pool(cfg["n_clusters"], cfg["per_cluster"], cfg["dim"], cfg["sigma"], cfg["seed"])
    if obj["kind"] == "coverage":
        return generate_coverage_world(cfg["n"], cfg["dim"], cfg["radius"], cfg["seed"])
    raise ValueError(f"unknown world kind {obj['kind']!r}")


def save_world(world, path) -> None:
    Path(path).write_text(json.dumps(world.snapshot(), indent=2))


def load_world(path):
    return world_from_snapshot(json.loads(Path(path).read_text()))
