import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrec.errors import ConfigError, ProtocolError
from contrec.head import SoftmaxHead, TrainConfig, accuracy, init_head, predict, sgd_train
from contrec.stream import SyntheticStreamConfig, generate_synthetic_stream
from contrec.strategies import (
    Learner,
    StrategyKind,
    WeightStore,
    cumulative_update,
    cwr_consolidate,
    cwr_train_batch,
    fw_train_batch,
    naive_update,
    new_store,
    strategy_inference_head,
)

FAST = TrainConfig(epochs=3, early_stop_patience=0, seed=1)


def store_with(cw, tw, updates):
    return WeightStore(SoftmaxHead.from_params(cw), SoftmaxHead.from_params(tw), updates)


@pytest.fixture(scope="module")
def shared_stream():
    # a shared mean across classes is what makes plain SGD forget
    cfg = SyntheticStreamConfig(
        num_classes=10, num_categories=5, num_sessions=2, frames_per_sequence=40, feature_dim=16,
        class_center_scale=0.3, center_mean=0.5, noise_scale=0.05, session_offset_scale=0.0, seed=4,
    )
    return generate_synthetic_stream(cfg)


def rows_of(ds, classes):
    return np.flatnonzero(np.isin(ds.object_class, list(classes)))


# -- store ---------------------------------------------------------------------


def test_new_store_is_zero():
    s = new_store(50, 64)
    assert s.cw.params.shape == (50, 65)
    assert not s.cw.params.any() and not s.tw.params.any()
    assert s.updates.tolist() == [0] * 50
    assert predict(strategy_inference_head("cwr", s), np.ones(64)) == 0


def test_new_store_bad_dims():
    with pytest.raises(ConfigError):
        new_store(0, 3)


# -- consolidation ---------------------------------------------------------------


def test_consolidate_first_encounter_copies():
    v = np.arange(6.0).reshape(2, 3) + 0.1
    s = cwr_consolidate(store_with(np.zeros((2, 3)), v, [0, 0]), {1})
    assert s.cw.params[1].tobytes() == v[1].tobytes()
    assert s.cw.params[0].tolist() == [0, 0, 0]
    assert s.updates.tolist() == [0, 1]


def test_consolidate_worked_value():
    s = cwr_consolidate(store_with([[0.4]], [[0.8]], [1]), {0})
    got = float(s.cw.params[0, 0])
    # 0.4 and 0.8 are not representable; their exact binary mean rounds one ulp above 0.6
    assert got == (0.4 * 1 + 0.8) / (1 + 1)
    assert abs(got - 0.6) <= math.ulp(0.6)
    assert s.updates.tolist() == [2]
    exact = cwr_consolidate(store_with([[0.25]], [[0.75]], [1]), {0})
    assert exact.cw.params[0, 0] == 0.5


@given(st.integers(1, 20), st.integers(0, 2**16))
def test_consolidate_running_mean(k, seed):
    rng = np.random.default_rng(seed)
    C, D = 3, 4
    s = new_store(C, D)
    snaps = []
    for _ in range(k):
        tw = rng.normal(0, 1, (C, D + 1))
        snaps.append(tw[1])
        s = cwr_consolidate(dataclasses.replace(s, tw=SoftmaxHead.from_params(tw)), {1})
    assert np.allclose(s.cw.params[1], np.mean(snaps, axis=0), rtol=0, atol=1e-9)
    assert s.updates.tolist() == [0, k, 0]
    assert not s.cw.params[[0, 2]].any()


@given(st.sets(st.integers(0, 5)), st.integers(0, 2**16))
def test_consolidate_leaves_other_rows(batch, seed):
    rng = np.random.default_rng(seed)
    before = store_with(rng.normal(0, 1, (6, 3)), rng.normal(0, 1, (6, 3)), rng.integers(1, 5, 6))
    after = cwr_consolidate(before, batch)
    others = [i for i in range(6) if i not in batch]
    assert after.cw.params[others].tobytes() == before.cw.params[others].tobytes()
    assert np.array_equal(after.updates[others], before.updates[others])


# -- training a batch ----------------------------------------------------------


def test_cwr_train_batch_reinit_deterministic(shared_stream):
    idx = rows_of(shared_stream, {0, 1})
    X, y = shared_stream.features[idx], shared_stream.object_class[idx]
    s = new_store(10, 16)
    a = cwr_train_batch(s, X, y, {0, 1}, FAST, reinit=True)
    b = cwr_train_batch(a, X, y, {0, 1}, FAST, reinit=True)
    assert a.tw == b.tw


def test_cwr_train_batch_leaves_cw(shared_stream):
    idx = rows_of(shared_stream, {2, 3})
    X, y = shared_stream.features[idx], shared_stream.object_class[idx]
    rng = np.random.default_rng(0)
    s = store_with(rng.normal(0, 1, (10, 17)), rng.normal(0, 0.01, (10, 17)), [1] * 10)
    out = cwr_train_batch(s, X, y, {2, 3}, FAST, reinit=False)
    assert out.cw.params.tobytes() == s.cw.params.tobytes()
    assert np.array_equal(out.updates, s.updates)
    assert out.tw != s.tw


def test_cwr_train_batch_separable_pair(shared_stream):
    idx = rows_of(shared_stream, {4, 7})
    X, y = shared_stream.features[idx], shared_stream.object_class[idx]
    out = cwr_train_batch(new_store(10, 16), X, y, {4, 7}, TrainConfig(epochs=10, early_stop_patience=0))
    assert accuracy(out.tw, X, y) == 1.0


def test_cwr_train_batch_label_outside_batch(shared_stream):
    idx = rows_of(shared_stream, {0, 1})
    with pytest.raises(ProtocolError):
        cwr_train_batch(new_store(10, 16), shared_stream.features[idx], shared_stream.object_class[idx], {0}, FAST)


# -- FW ------------------------------------------------------------------------


def test_fw_empty_seen_is_plain_sgd(shared_stream):
    idx = rows_of(shared_stream, {0, 1, 2})
    X, y = shared_stream.features[idx], shared_stream.object_class[idx]
    h = init_head(10, 16, FAST)
    assert fw_train_batch(h, X, y, set(), FAST) == sgd_train(h, X, y, FAST)[0]


def test_fw_all_seen_unchanged(shared_stream):
    idx = rows_of(shared_stream, {0, 1})
    h = init_head(10, 16, FAST)
    assert fw_train_batch(h, shared_stream.features[idx], shared_stream.object_class[idx], range(10), FAST) == h


def test_fw_rows_stay_frozen_across_batches(shared_stream):
    learner = Learner("fw", 10, 16, FAST)
    batches = [{0, 1, 2}, {3, 4}, {5, 6}]
    snapshots = {}
    for b in batches:
        idx = rows_of(shared_stream, b)
        learner.observe(shared_stream.features[idx], shared_stream.object_class[idx], FAST)
        params = learner.head.params
        for c in b:
            snapshots.setdefault(c, params[c].tobytes())
        for c, blob in snapshots.items():
            assert params[c].tobytes() == blob


# -- naive / cumulative ----------------------------------------------------------


def test_naive_first_batch_is_plain_training(shared_stream):
    idx = rows_of(shared_stream, range(5))
    X, y = shared_stream.features[idx], shared_stream.object_class[idx]
    h = init_head(10, 16, FAST)
    assert naive_update(h, X, y, FAST) == sgd_train(h, X, y, FAST)[0]
    assert naive_update(h, X, y, FAST) == naive_update(h, X, y, FAST)


def test_naive_forgets_old_classes(shared_stream):
    cfg = TrainConfig(epochs=10, early_stop_patience=0, seed=2)
    old, new = rows_of(shared_stream, range(5)), rows_of(shared_stream, range(5, 10))
    ds = shared_stream
    h = naive_update(init_head(10, 16, cfg), ds.features[old], ds.object_class[old], cfg)
    before = accuracy(h, ds.features[old], ds.object_class[old])
    h = naive_update(h, ds.features[new], ds.object_class[new], cfg)
    after = accuracy(h, ds.features[old], ds.object_class[old])
    assert before > 0.9
    assert after < 0.1 + 0.1


def test_cumulative_single_batch_matches_fresh_training(shared_stream):
    idx = rows_of(shared_stream, range(4))
    X, y = shared_stream.features[idx], shared_stream.object_class[idx]
    fresh = sgd_train(init_head(10, 16, FAST), X, y, FAST)[0]
    assert cumulative_update(10, 16, [(X, y)], FAST) == fresh


def test_cumulative_order_invariant(shared_stream):
    ds = shared_stream
    a, b = rows_of(ds, {0, 1, 2}), rows_of(ds, {3, 4})

    def final(order):
        learner = Learner("cumulative", 10, 16, FAST)
        for rows in order:
            learner.observe(ds.features[rows], ds.object_class[rows], FAST, keys=rows)
        return learner.inference_head()

    h1, h2 = final([a, b]), final([b, a])
    assert h1 == h2
    assert accuracy(h1, ds.features, ds.object_class) == accuracy(h2, ds.features, ds.object_class)


def test_cumulative_sees_all_classes(shared_stream):
    learner = Learner("cumulative", 10, 16, FAST)
    for b in ({0, 1, 2, 3}, {4, 5, 6}, {7, 8, 9}):
        idx = rows_of(shared_stream, b)
        learner.observe(shared_stream.features[idx], shared_stream.object_class[idx], FAST, keys=idx)
    assert learner.seen == set(range(10))


# -- inference head ------------------------------------------------------------


def test_inference_heads(shared_stream):
    assert strategy_inference_head("cwr", new_store(3, 2)) == SoftmaxHead.zeros(3, 2)
    fw = Learner("fw", 10, 16, FAST)
    assert strategy_inference_head("fw", fw) is fw.head
    cw = Learner("cw", 10, 16, FAST)
    idx = rows_of(shared_stream, {1, 2})
    cw.observe(shared_stream.features[idx], shared_stream.object_class[idx], FAST)
    assert cw.inference_head() == cw.store.cw
    assert cw.store.cw.params[[1, 2]].tobytes() == cw.store.tw.params[[1, 2]].tobytes()


# -- properties over whole schedules --------------------------------------------


@settings(max_examples=10, deadline=None)
@given(
    st.lists(st.sets(st.integers(0, 9), min_size=1, max_size=4), min_size=1, max_size=6),
    st.sampled_from(["cwr", "cw"]),
)
def test_counter_mean_and_noninterference(shared_stream, batches, kind):
    ds = shared_stream
    learner = Learner(kind, 10, 16, FAST)
    snaps = {c: [] for c in range(10)}
    for b in batches:
        before = learner.store.cw.params.copy()
        idx = rows_of(ds, b)
        learner.observe(ds.features[idx], ds.object_class[idx], FAST)
        after = learner.store.cw.params
        out = [c for c in range(10) if c not in b]
        assert after[out].tobytes() == before[out].tobytes()
        for c in b:
            snaps[c].append(learner.store.tw.params[c].copy())
    for c in range(10):
        assert learner.store.updates[c] == sum(c in b for b in batches)
        if snaps[c]:
            assert np.allclose(learner.store.cw.params[c], np.mean(snaps[c], axis=0), rtol=0, atol=1e-9)
        else:
            assert not learner.store.cw.params[c].any()


def test_nc_reduction_is_pure_copy(shared_stream):
    ds = shared_stream
    learner = Learner("cwr", 10, 16, FAST)
    for b in ({0, 1, 2, 3}, {4, 5, 6}, {7, 8, 9}):
        idx = rows_of(ds, b)
        learner.observe(ds.features[idx], ds.object_class[idx], FAST)
        assert learner.store.updates.max() <= 1
        assert learner.store.cw.params[list(b)].tobytes() == learner.store.tw.params[list(b)].tobytes()


def test_strategy_kind_closed():
    assert {k.value for k in StrategyKind} == {"naive", "cumulative", "cwr", "cw", "fw"}
    with pytest.raises(ValueError):
        StrategyKind("ewc")
