import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from hypothesis.extra.numpy import arrays

from pgal.pool import (
    ALCycleState,
    SamplePool,
    SelectionBatch,
    apply_selection,
    standardize_features,
)


@pytest.mark.parametrize(
    "features, expected",
    [
        ([[0.0], [2.0]], [[-1.0], [1.0]]),
        ([[5.0], [5.0], [5.0]], [[0.0], [0.0], [0.0]]),
        ([[0.0, 1.0], [4.0, 1.0]], [[-1.0, 0.0], [1.0, 0.0]]),
    ],
)
def test_standardize_examples(features, expected):
    out = standardize_features(SamplePool(np.array(features)))
    np.testing.assert_allclose(out.features, expected, atol=1e-15)


def test_standardize_empty_pool():
    with pytest.raises(ValueError, match="empty pool"):
        standardize_features(SamplePool(np.empty((0, 2))))


def test_standardize_keeps_labeled():
    pool = SamplePool(np.arange(6.0).reshape(3, 2), {1})
    assert standardize_features(pool).labeled == {1}


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, hst.tuples(hst.integers(2, 12), hst.integers(1, 4)),
              elements=hst.floats(-1e3, 1e3, allow_nan=False)))
def test_standardize_idempotent(x):
    once = standardize_features(SamplePool(x))
    twice = standardize_features(once)
    np.testing.assert_allclose(twice.features, once.features, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, hst.tuples(hst.integers(2, 12), hst.integers(1, 4)),
              elements=hst.floats(-1e3, 1e3, allow_nan=False)))
def test_standardize_moments(x):
    out = standardize_features(SamplePool(x)).features
    for j in range(x.shape[1]):
        if np.ptp(x[:, j]) > 1e-6 * max(1.0, np.abs(x[:, j]).max()):
            assert abs(out[:, j].mean()) < 1e-9
            assert abs(out[:, j].std() - 1.0) < 1e-9


def test_apply_selection_examples():
    state = ALCycleState(SamplePool(np.zeros((4, 1)), {0}))
    nxt = apply_selection(state, SelectionBatch((1, 2)))
    assert nxt.pool.labeled == {0, 1, 2}
    assert nxt.cycle == 1
    # input untouched
    assert state.pool.labeled == {0}
    assert state.cycle == 0


def test_apply_selection_rejects_labeled():
    state = ALCycleState(SamplePool(np.zeros((4, 1)), {0}))
    with pytest.raises(ValueError, match="id 0"):
        apply_selection(state, SelectionBatch((0, 1)))


def test_apply_selection_rejects_out_of_range():
    state = ALCycleState(SamplePool(np.zeros((4, 1))))
    with pytest.raises(ValueError, match="id 7"):
        apply_selection(state, SelectionBatch((7,)))


def test_apply_selection_empty_batch():
    state = ALCycleState(SamplePool(np.zeros((3, 1)), {2}))
    nxt = apply_selection(state, SelectionBatch(()))
    assert nxt.pool.labeled == state.pool.labeled
    assert nxt.cycle == 1


def test_apply_selection_pure_and_growing():
    state = ALCycleState(SamplePool(np.random.default_rng(0).normal(size=(10, 2))))
    a = apply_selection(state, SelectionBatch((3, 4)))
    b = apply_selection(state, SelectionBatch((3, 4)))
    assert a == b
    sizes = [len(state.pool.labeled)]
    for ids in [(0, 1), (2, 5), (6, 7)]:
        state = apply_selection(state, SelectionBatch(ids))
        sizes.append(len(state.pool.labeled))
    assert all(x < y for x, y in zip(sizes, sizes[1:]))


def test_batch_ids_distinct():
    with pytest.raises(ValueError):
        SelectionBatch((1, 1))


def test_features_immutable():
    pool = SamplePool(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        pool.features[0, 0] = 1.0


def test_pool_snapshot_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    pool = SamplePool(rng.normal(size=(7, 3)) * 1e-7 + 1 / 3, {5, 1})
    path = tmp_path / "pool.json"
    pool.save(path)
    back = SamplePool.load(path)
    assert back.labeled == pool.labeled
    assert back.dim == 3
    assert np.array_equal(back.features, pool.features)
    assert back.to_json() == pool.to_json()
