"""Pool / partition data model shared by every selection strategy.

Samples are referenced by dense integer ids everywhere. All containers are
immutable; transitions return new objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np


ZERO_STD_RTOL = 1e-12


def _frozen_array(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SamplePool:
    features: np.ndarray
    labeled: frozenset = frozenset()

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("empty pool")
        if not np.all(np.isfinite(feats)):
            raise ValueError("pool features must be finite")
        object.__setattr__(self, "features", _frozen_array(feats))
        labeled = frozenset(int(i) for i in self.labeled)
        bad = [i for i in labeled if not 0 <= i < feats.shape[0]]
        if bad:
            raise ValueError(f"labeled id {min(bad)} out of range for pool of size {feats.shape[0]}")
        object.__setattr__(self, "labeled", labeled)

    def __eq__(self, other):
        if not isinstance(other, SamplePool):
            return NotImplemented
        return self.labeled == other.labeled and np.array_equal(self.features, other.features)

    __hash__ = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def unlabeled(self) -> np.ndarray:
        """Sorted ids of unlabeled samples."""
        mask = np.ones(self.n, dtype=bool)
        if self.labeled:
            mask[list(self.labeled)] = False
        return np.flatnonzero(mask)

    def with_labeled(self, labeled: Iterable[int]) -> "SamplePool":
        return SamplePool(self.features, frozenset(labeled))

    def to_json(self) -> str:
        return json.dumps(
            {
                "dim": self.dim,
                "features": self.features.tolist(),
                "labeled": sorted(self.labeled),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SamplePool":
        obj = json.loads(text)
        feats = np.array(obj["features"], dtype=np.float64).reshape(-1, int(obj["dim"]))
        return cls(feats, frozenset(obj["labeled"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SamplePool":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class SelectionBatch:
    ids: tuple

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if len(set(ids)) != len(ids):
            raise ValueError(f"batch ids must be distinct: {ids}")
        object.__setattr__(self, "ids", ids)

    @property
    def budget(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


@dataclass(frozen=True)
class CurvePoint:
    strategy: str
    seed: int
    cycle: int
    labeled: int
    performance: float


@dataclass(frozen=True)
class ALCycleState:
    pool: SamplePool
    cycle: int = 0
    history: tuple = field(default_factory=tuple)

    def with_point(self, point: CurvePoint) -> "ALCycleState":
        return replace(self, history=self.history + (point,))


def standardize_features(pool: SamplePool) -> SamplePool:
    """Z-score each feature dimension with the population std.

    Zero-variance dimensions (up to rounding in the mean) become all zeros.
    """
    x = pool.features
    if x.shape[0] == 0:
        raise ValueError("empty pool")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    centered = x - mean
    varies = std > ZERO_STD_RTOL * np.maximum(1.0, np.abs(x).max(axis=0))
    safe = np.where(varies, std, 1.0)
    out = np.where(varies, centered / safe, 0.0)
    return SamplePool(out, pool.labeled)


def check_batch(pool: SamplePool, batch: SelectionBatch) -> None:
    for i in batch.ids:
        if not 0 <= i < pool.n:
            raise ValueError(f"sample id {i} out of range for pool of size {pool.n}")
        if i in pool.labeled:
            raise ValueError(f"sample id {i} is already labeled")


def apply_selection(state: ALCycleState, batch: SelectionBatch) -> ALCycleState:
    check_batch(state.pool, batch)
    pool = state.pool.with_labeled(state.pool.labeled | set(batch.ids))
    return replace(state, pool=pool, cycle=state.cycle + 1)
