import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrec.errors import ConfigError, ProtocolError
from contrec.evaluation import EvalProtocol
from contrec.head import TrainConfig
from contrec.scenarios import (
    RunConfig,
    Scenario,
    make_nc_schedule,
    make_ni_schedule,
    make_nic_schedule,
    run_experiment,
)
from contrec.stream import SyntheticStreamConfig, generate_synthetic_stream, split_train_test

# 50 classes, 11 sessions, tiny sequences: schedules only look at (class, session) pairs
LAYOUT = SyntheticStreamConfig(frames_per_sequence=2, feature_dim=4, seed=1)
FAST = TrainConfig(epochs=2, early_stop_patience=0)


@pytest.fixture(scope="module")
def layout():
    return generate_synthetic_stream(LAYOUT)


@pytest.fixture(scope="module")
def train(layout):
    return split_train_test(layout, {3, 7, 10})[0]


def all_train_pairs(train):
    return set(train.sequence_indices())


# -- NI ------------------------------------------------------------------------


def test_ni_shape(train):
    s = make_ni_schedule(train, seed=0)
    assert s.scenario is Scenario.NI
    assert len(s) == 8
    for b in s.batches:
        assert len(b.sequences) == 50
        assert b.classes == frozenset(range(50))
        assert len({ref.session for ref in b.sequences}) == 1
    assert Counter(s.all_sequences()) == Counter(all_train_pairs(train))


def test_ni_seeds_permute_batches(train):
    a, b = make_ni_schedule(train, 0), make_ni_schedule(train, 1)
    assert sorted(x.sequences for x in a.batches) == sorted(x.sequences for x in b.batches)
    orders = {tuple(x.sequences[0].session for x in make_ni_schedule(train, s).batches) for s in range(10)}
    assert len(orders) > 1


def test_ni_wrong_session_count(layout):
    with pytest.raises(ProtocolError):
        make_ni_schedule(layout, 0)


# -- NC ------------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_nc_partition_and_spread(train, seed):
    s = make_nc_schedule(train, seed)
    assert len(s) == 9
    assert s.class_counts() == [10, 5, 5, 5, 5, 5, 5, 5, 5]
    assert sum(s.class_counts()) == 50
    seen = [c for b in s.batches for c in b.classes]
    assert sorted(seen) == list(range(50))
    for b in s.batches:
        # every training sequence of each of the batch's classes
        assert len(b.sequences) == 8 * len(b.classes)
    c2k = train.class_to_category
    K = train.num_categories
    occupancy = Counter(int(c2k[c]) for c in s.batches[0].classes)
    assert max(occupancy.values()) <= math.ceil(10 / K)
    for b in s.batches[1:]:
        assert max(Counter(int(c2k[c]) for c in b.classes).values()) == 1
    assert Counter(s.all_sequences()) == Counter(all_train_pairs(train))


def test_nc_seeds_differ(train):
    base = [b.classes for b in make_nc_schedule(train, 0).batches]
    differing = sum([b.classes for b in make_nc_schedule(train, s).batches] != base for s in range(1, 11))
    assert differing >= 9


def test_nc_deterministic(train):
    assert make_nc_schedule(train, 7) == make_nc_schedule(train, 7)


def test_nc_bad_class_count():
    ds = generate_synthetic_stream(SyntheticStreamConfig(num_classes=12, num_categories=3, frames_per_sequence=1, feature_dim=2))
    with pytest.raises(ProtocolError):
        make_nc_schedule(split_train_test(ds)[0], 0)


def test_nc_generalised_sizes():
    ds = generate_synthetic_stream(SyntheticStreamConfig(num_classes=12, num_categories=3, frames_per_sequence=1, feature_dim=2))
    s = make_nc_schedule(split_train_test(ds)[0], 0, first_batch=4, per_batch=2)
    assert s.class_counts() == [4, 2, 2, 2, 2]


# -- NIC -----------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_nic_partition(train, seed):
    s = make_nic_schedule(train, seed)
    assert len(s) == 79
    sizes = [len(b.sequences) for b in s.batches]
    assert sizes == [10] + [5] * 78
    assert sum(sizes) == 400 == 50 * 8
    for b in s.batches:
        assert len(b.classes) == len(b.sequences)
    assert Counter(s.all_sequences()) == Counter(all_train_pairs(train))
    occupancy = Counter(int(train.class_to_category[c]) for c in s.batches[0].classes)
    assert max(occupancy.values()) == 1


def test_nic_deterministic(train):
    assert make_nic_schedule(train, 3) == make_nic_schedule(train, 3)
    assert make_nic_schedule(train, 3) != make_nic_schedule(train, 4)


# -- experiments ---------------------------------------------------------------


def test_run_config_invariants():
    with pytest.raises(ConfigError):
        RunConfig(num_runs=0)
    assert RunConfig(num_runs=10, cumulative_runs_override=5).runs_for("cumulative") == 5
    assert RunConfig(num_runs=10, cumulative_runs_override=5).runs_for("cwr") == 10


@pytest.mark.parametrize("scenario,length", [("ni", 8), ("nc", 9), ("nic", 79)])
def test_curve_lengths(layout, scenario, length):
    r = run_experiment(layout, scenario, "naive", FAST, RunConfig(num_runs=1))
    assert r.curves.shape == (1, length)
    assert np.all(r.std == 0)


def test_mean_is_average_of_runs(layout):
    r = run_experiment(layout, "nc", "cwr", FAST, RunConfig(num_runs=3, base_seed=5))
    assert r.curves.shape == (3, 9)
    assert np.array_equal(r.mean, r.curves.mean(axis=0))
    assert np.allclose(r.std, r.curves.std(axis=0, ddof=1))
    assert np.all((r.curves >= 0) & (r.curves <= 1))


def test_cumulative_override(layout):
    r = run_experiment(layout, "nc", "cumulative", FAST, RunConfig(num_runs=4, cumulative_runs_override=2))
    assert len(r.curves) == 2


def test_experiment_deterministic(layout):
    a = run_experiment(layout, "nic", "cw", FAST, RunConfig(num_runs=2))
    b = run_experiment(layout, "nic", "cw", FAST, RunConfig(num_runs=2))
    assert np.array_equal(a.curves, b.curves)


def test_parallel_matches_serial(layout):
    a = run_experiment(layout, "nc", "fw", FAST, RunConfig(num_runs=2))
    b = run_experiment(layout, "nc", "fw", FAST, RunConfig(num_runs=2, n_jobs=2))
    assert np.array_equal(a.curves, b.curves)


def test_protocols_run(layout):
    for proto in (EvalProtocol("partial"), EvalProtocol("reject", 0.3), EvalProtocol(level="category")):
        r = run_experiment(layout, "nc", "cwr", FAST, RunConfig(num_runs=1), proto)
        assert r.curves.shape == (1, 9)
