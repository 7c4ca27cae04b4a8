"""NI / NC / NIC batch schedules and multi-run experiments.

Batches are lists of whole training sequences, referenced by
``(object_class, session)``. All randomness in a schedule comes from its
seed; SGD randomness comes from the training seed, mixed with the run and
batch index.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, NumericalError, ProtocolError, ScheduleError
from .evaluation import EvalProtocol, evaluate
from .head import TrainConfig
from .stream import DEFAULT_TEST_SESSIONS, FeatureDataset, split_train_test
from .strategies import Learner, StrategyKind

NI_SESSIONS = 8
FIRST_BATCH_CLASSES = 10
CLASSES_PER_BATCH = 5
NIC_MAX_RETRIES = 1000


class Scenario(str, enum.Enum):
    NI = "ni"
    NC = "nc"
    NIC = "nic"


class SequenceRef(NamedTuple):
    object_class: int
    session: int


@dataclass(frozen=True)
class Batch:
    index: int
    sequences: tuple

    def __post_init__(self):
        if not self.sequences:
            raise ScheduleError(f"batch {self.index} is empty")
        object.__setattr__(self, "sequences", tuple(SequenceRef(int(c), int(s)) for c, s in self.sequences))

    @property
    def classes(self) -> frozenset:
        return frozenset(ref.object_class for ref in self.sequences)


@dataclass(frozen=True)
class BatchSchedule:
    scenario: Scenario
    batches: tuple

    def __len__(self):
        return len(self.batches)

    def class_counts(self):
        return [len(b.classes) for b in self.batches]

    def all_sequences(self):
        return [ref for b in self.batches for ref in b.sequences]


def _train_sequences(train: FeatureDataset):
    return sorted(train.sequence_indices())


def spread_class_order(class_to_category, classes, rng) -> list:
    """Deal classes round-robin over shuffled categories.

    Each round takes one not-yet-dealt class from every category that still
    has one, in a freshly shuffled category order, so consecutive runs of the
    result mix categories as evenly as possible.
    """
    by_cat = {}
    for c in classes:
        by_cat.setdefault(int(class_to_category[c]), []).append(int(c))
    pools = {k: list(rng.permutation(v)) for k, v in sorted(by_cat.items())}
    order = []
    while any(pools.values()):
        for k in rng.permutation(sorted(pools)):
            if pools[int(k)]:
                order.append(int(pools[int(k)].pop()))
    return order


def _batch_sizes(C, first, per):
    if C < first or (C - first) % per:
        raise ProtocolError(f"{C} classes cannot be split into a first batch of {first} and batches of {per}")
    return [first] + [per] * ((C - first) // per)


def make_ni_schedule(train: FeatureDataset, seed, required_sessions=NI_SESSIONS) -> BatchSchedule:
    """One batch per training session, in a seeded random session order."""
    sessions = sorted(train.sessions)
    if required_sessions is not None and len(sessions) != required_sessions:
        raise ProtocolError(f"NI needs {required_sessions} training sessions, found {len(sessions)}")
    rng = np.random.default_rng(seed)
    seqs = _train_sequences(train)
    batches = []
    for b, s in enumerate(rng.permutation(sessions)):
        batches.append(Batch(b, tuple(ref for ref in seqs if ref[1] == s)))
    return BatchSchedule(Scenario.NI, tuple(batches))


def make_nc_schedule(train: FeatureDataset, seed, first_batch=FIRST_BATCH_CLASSES, per_batch=CLASSES_PER_BATCH) -> BatchSchedule:
    """Class-disjoint batches of ``[first_batch, per_batch, ...]`` classes.

    Every batch carries all training sequences of its classes.
    """
    C = train.num_classes
    sizes = _batch_sizes(C, first_batch, per_batch)
    rng = np.random.default_rng(seed)
    order = spread_class_order(train.class_to_category, range(C), rng)
    by_class = {}
    for ref in _train_sequences(train):
        by_class.setdefault(ref[0], []).append(ref)
    batches, pos = [], 0
    for b, size in enumerate(sizes):
        chosen = order[pos:pos + size]
        pos += size
        refs = [ref for c in chosen for ref in by_class.get(c, [])]
        if not refs:
            raise ProtocolError(f"classes {chosen} have no training sequences")
        batches.append(Batch(b, tuple(refs)))
    return BatchSchedule(Scenario.NC, tuple(batches))


def make_nic_schedule(train: FeatureDataset, seed, first_batch=FIRST_BATCH_CLASSES, per_batch=CLASSES_PER_BATCH) -> BatchSchedule:
    """Single-sequence-per-class batches.

    The first batch takes ``first_batch`` category-spread classes with one
    random sequence each. The remaining sequences are shuffled and dealt
    greedily into batches of ``per_batch`` distinct classes; a dead end
    triggers a reshuffle, up to ``NIC_MAX_RETRIES`` times.
    """
    C = train.num_classes
    _batch_sizes(C, first_batch, per_batch)
    rng = np.random.default_rng(seed)
    seqs = _train_sequences(train)
    by_class = {}
    for ref in seqs:
        by_class.setdefault(ref[0], []).append(ref)
    if len(by_class) != C:
        raise ProtocolError("every class needs at least one training sequence")

    first_classes = spread_class_order(train.class_to_category, range(C), rng)[:first_batch]
    first = [by_class[c][rng.integers(len(by_class[c]))] for c in first_classes]
    taken = set(first)
    rest = [ref for ref in seqs if ref not in taken]
    if len(rest) % per_batch:
        raise ProtocolError(f"{len(rest)} remaining sequences do not fill batches of {per_batch}")

    for _ in range(NIC_MAX_RETRIES):
        pool = [rest[i] for i in rng.permutation(len(rest))]
        groups = []
        while pool:
            group, seen, left = [], set(), []
            for ref in pool:
                if len(group) < per_batch and ref[0] not in seen:
                    group.append(ref)
                    seen.add(ref[0])
                else:
                    left.append(ref)
            if len(group) < per_batch:
                break
            groups.append(tuple(group))
            pool = left
        else:
            batches = [Batch(0, tuple(first))] + [Batch(i + 1, g) for i, g in enumerate(groups)]
            return BatchSchedule(Scenario.NIC, tuple(batches))
    raise ScheduleError(f"could not build NIC batches after {NIC_MAX_RETRIES} reshuffles (seed {seed}); try another seed")


SCHEDULERS = {
    Scenario.NI: make_ni_schedule,
    Scenario.NC: make_nc_schedule,
    Scenario.NIC: make_nic_schedule,
}


def make_schedule(scenario, train, seed) -> BatchSchedule:
    return SCHEDULERS[Scenario(scenario)](train, seed)


@dataclass(frozen=True)
class RunConfig:
    num_runs: int = 10
    base_seed: int = 0
    cumulative_runs_override: Optional[int] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.num_runs < 1:
            raise ConfigError("num_runs must be >= 1")
        if self.cumulative_runs_override is not None and self.cumulative_runs_override < 1:
            raise ConfigError("cumulative_runs_override must be >= 1")

    def runs_for(self, strategy) -> int:
        if StrategyKind(strategy) is StrategyKind.CUMULATIVE and self.cumulative_runs_override:
            return self.cumulative_runs_override
        return self.num_runs


@dataclass
class ExperimentResult:
    scenario: Scenario
    strategy: StrategyKind
    curves: np.ndarray  # (runs, batches)
    final_heads: list = field(default_factory=list, repr=False)

    @property
    def mean(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        if len(self.curves) < 2:
            return np.zeros(self.curves.shape[1])
        return self.curves.std(axis=0, ddof=1)


def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def run_once(train: FeatureDataset, test: FeatureDataset, scenario, strategy, train_config: TrainConfig, protocol: EvalProtocol, schedule_seed, run_index):
    """One run: build the schedule, feed it batch by batch, evaluate after each.

    Returns ``(accuracy_curve, final_inference_head)``.
    """
    schedule = make_schedule(scenario, train, schedule_seed)
    seq_rows = train.sequence_indices()
    C, D = train.num_classes, train.feature_dim
    init_cfg = dataclasses.replace(train_config, seed=derive_seed(train_config.seed, run_index, 2**31))
    learner = Learner(strategy, C, D, init_cfg)
    curve = []
    for batch in schedule.batches:
        rows = np.concatenate([seq_rows[ref] for ref in batch.sequences])
        cfg = dataclasses.replace(train_config, seed=derive_seed(train_config.seed, run_index, batch.index))
        learner.observe(train.features[rows], train.object_class[rows], cfg, keys=rows)
        curve.append(evaluate(learner.inference_head(), test, protocol, learner.seen))
    return np.array(curve), learner.inference_head()


def run_experiment(
    dataset: FeatureDataset,
    scenario,
    strategy,
    train_config: TrainConfig = TrainConfig(),
    run_config: RunConfig = RunConfig(),
    protocol: EvalProtocol = EvalProtocol(),
    test_sessions=DEFAULT_TEST_SESSIONS,
) -> ExperimentResult:
    """Average a strategy over seeded runs; run ``r`` uses schedule seed ``base_seed + r``."""
    scenario, strategy = Scenario(scenario), StrategyKind(strategy)
    train, test = split_train_test(dataset, test_sessions)
    runs = run_config.runs_for(strategy)
    args = [
        (train, test, scenario, strategy, train_config, protocol, run_config.base_seed + r, r)
        for r in range(runs)
    ]
    if run_config.n_jobs == 1 or runs == 1:
        outs = [run_once(*a) for a in args]
    else:
        from joblib import Parallel, delayed

        # joblib returns results in submission order, so aggregation is stable
        outs = Parallel(n_jobs=run_config.n_jobs)(delayed(run_once)(*a) for a in args)
    curves = np.vstack([o[0] for o in outs])
    if not np.all(np.isfinite(curves)):
        raise NumericalError("non-finite accuracy in experiment curves")
    return ExperimentResult(scenario, strategy, curves, [o[1] for o in outs])
