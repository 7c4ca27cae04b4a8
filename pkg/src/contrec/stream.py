"""Labeled, temporally coherent feature streams.

A dataset is a flat table of frames. Each frame belongs to one sequence,
identified by its ``(object_class, session)`` pair, and carries a frame index
that counts from 0 within that sequence. Features stand in for the output of
a frozen extractor; nothing here touches pixels.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import (
    ClassRangeError,
    ConfigError,
    FeatureFileError,
    InconsistentMappingError,
    MalformedHeaderError,
    RowArityError,
    ValueParseError,
)

DEFAULT_TEST_SESSIONS = frozenset({3, 7, 10})


class FrameSample(NamedTuple):
    features: np.ndarray
    object_class: int
    category: int
    session: int
    frame_index: int


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """Column-oriented frame table.

    ``features`` is ``(N, D)``; the four label columns are length ``N``.
    Session ids are 1-based and bounded by ``num_sessions``.
    """

    features: np.ndarray
    object_class: np.ndarray
    category: np.ndarray
    session: np.ndarray
    frame_index: np.ndarray
    num_classes: int
    num_categories: int
    num_sessions: int
    class_to_category: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(0, 0)
        if feats.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {feats.shape}")
        object.__setattr__(self, "features", _frozen(feats, np.float64))
        for name in ("object_class", "category", "session", "frame_index"):
            col = np.asarray(getattr(self, name))
            if col.shape != (feats.shape[0],):
                raise ConfigError(f"{name} must have length {feats.shape[0]}")
            object.__setattr__(self, name, _frozen(col, np.int64))
        object.__setattr__(self, "class_to_category", _frozen(self.class_to_category, np.int64))
        self._validate()

    def _validate(self):
        C, K, S = self.num_classes, self.num_categories, self.num_sessions
        if C < 1 or K < 1 or S < 1:
            raise ConfigError("num_classes, num_categories and num_sessions must be >= 1")
        c2k = self.class_to_category
        if c2k.shape != (C,):
            raise ConfigError(f"class_to_category must have length {C}")
        if c2k.min() < 0 or c2k.max() >= K:
            raise ConfigError("class_to_category maps outside [0, K)")
        if len(np.unique(c2k)) != K:
            raise ConfigError("every category needs at least one class")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features contain non-finite values")
        if len(self) == 0:
            return
        oc = self.object_class
        if oc.min() < 0 or oc.max() >= C:
            raise ConfigError("object_class out of range")
        if self.session.min() < 1 or self.session.max() > S:
            raise ConfigError(f"session ids must lie in [1, {S}]")
        if not np.array_equal(self.category, c2k[oc]):
            raise ConfigError("category column disagrees with class_to_category")
        if self.frame_index.min() < 0:
            raise ConfigError("negative frame_index")
        # Each (class, session) group must hold frame indices 0..n-1 exactly once.
        order = np.lexsort((self.frame_index, self.session, oc))
        key = oc[order] * (S + 1) + self.session[order]
        fr = self.frame_index[order]
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        expected = np.arange(len(fr)) - np.repeat(starts, np.diff(np.r_[starts, len(fr)]))
        if not np.array_equal(fr, expected):
            raise ConfigError("frame indices within a sequence must be consecutive from 0")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def sessions(self) -> frozenset:
        return frozenset(int(s) for s in np.unique(self.session))

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, i) -> FrameSample:
        return FrameSample(
            self.features[i],
            int(self.object_class[i]),
            int(self.category[i]),
            int(self.session[i]),
            int(self.frame_index[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        if (self.num_classes, self.num_categories, self.num_sessions) != (
            other.num_classes,
            other.num_categories,
            other.num_sessions,
        ):
            return False
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("class_to_category", "object_class", "category", "session", "frame_index")
        ) and self.features.shape == other.features.shape and np.array_equal(
            self.features, other.features
        )

    __hash__ = None

    def subset(self, indices) -> "FeatureDataset":
        """Rows at ``indices`` (whole sequences only, so the frame invariant holds)."""
        idx = np.asarray(indices, dtype=np.int64)
        return dataclasses.replace(
            self,
            features=self.features[idx],
            object_class=self.object_class[idx],
            category=self.category[idx],
            session=self.session[idx],
            frame_index=self.frame_index[idx],
        )

    def sequence_indices(self) -> dict:
        """Map ``(object_class, session)`` to row indices ordered by frame index."""
        out = {}
        order = np.lexsort((self.frame_index, self.session, self.object_class))
        oc, ss = self.object_class[order], self.session[order]
        if len(order) == 0:
            return out
        cut = np.flatnonzero((oc[1:] != oc[:-1]) | (ss[1:] != ss[:-1])) + 1
        for chunk in np.split(order, cut):
            out[(int(self.object_class[chunk[0]]), int(self.session[chunk[0]]))] = chunk
        return out

    def sequence_starts(self) -> np.ndarray:
        """Row indices where a new sequence begins in storage order."""
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        oc, ss = self.object_class, self.session
        change = (oc[1:] != oc[:-1]) | (ss[1:] != ss[:-1]) | (self.frame_index[1:] == 0)
        return np.r_[0, np.flatnonzero(change) + 1].astype(np.int64)


@dataclass(frozen=True)
class SyntheticStreamConfig:
    num_classes: int = 50
    num_categories: int = 10
    num_sessions: int = 11
    frames_per_sequence: int = 300
    feature_dim: int = 64
    class_center_scale: float = 0.1
    # every class center is drawn around center_mean * ones(D); the shared
    # component is what lets new-class training overwrite old classes
    center_mean: float = 0.3
    session_offset_scale: float = 0.025
    walk_step_scale: float = 0.005
    # per-coordinate clip on the accumulated walk
    walk_bound: float = 0.05
    noise_scale: float = 0.25
    seed: int = 0

    def validate(self):
        for name in ("num_classes", "num_categories", "num_sessions", "frames_per_sequence", "feature_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_categories > self.num_classes:
            raise ConfigError("num_categories cannot exceed num_classes")
        if not self.class_center_scale > 0:
            raise ConfigError("class_center_scale must be > 0")
        for name in ("session_offset_scale", "walk_step_scale", "walk_bound", "noise_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


def round_robin_categories(num_classes, num_categories):
    return np.arange(num_classes) % num_categories


def synthetic_components(config: SyntheticStreamConfig):
    """Class centers ``(C, D)`` and session offsets ``(S, D)`` for ``config``.

    Drawn first from the seeded generator, so they match what
    :func:`generate_synthetic_stream` uses.
    """
    rng = np.random.default_rng(config.seed)
    centers = rng.normal(config.center_mean, config.class_center_scale, (config.num_classes, config.feature_dim))
    offsets = rng.normal(0.0, 1.0, (config.num_sessions, config.feature_dim)) * config.session_offset_scale
    return centers, offsets, rng


def generate_synthetic_stream(config: SyntheticStreamConfig = SyntheticStreamConfig()) -> FeatureDataset:
    """Draw a synthetic stream: ``S`` sessions x ``C`` objects x ``T`` frames.

    Frame ``t`` of object ``i`` in session ``s`` is
    ``center[i] + offset[s] + walk[t] + noise``, where the walk starts at 0,
    moves by uniform steps in ``[-walk_step_scale, walk_step_scale]`` per
    coordinate and is clipped to ``[-walk_bound, walk_bound]``. Rows are
    stored session-major, then by class, then by frame.
    """
    config.validate()
    C, S, T, D = config.num_classes, config.num_sessions, config.frames_per_sequence, config.feature_dim
    centers, offsets, rng = synthetic_components(config)

    n_seq = S * C
    walk = np.zeros((T, n_seq, D))
    steps = rng.uniform(-1.0, 1.0, (T - 1, n_seq, D)) * config.walk_step_scale
    pos = np.zeros((n_seq, D))
    for t in range(1, T):
        pos = np.clip(pos + steps[t - 1], -config.walk_bound, config.walk_bound)
        walk[t] = pos
    noise = rng.normal(0.0, 1.0, (n_seq, T, D)) * config.noise_scale

    seq_session = np.repeat(np.arange(1, S + 1), C)
    seq_class = np.tile(np.arange(C), S)
    base = centers[seq_class] + offsets[seq_session - 1]
    feats = base[:, None, :] + walk.transpose(1, 0, 2) + noise

    c2k = round_robin_categories(C, config.num_categories)
    object_class = np.repeat(seq_class, T)
    return FeatureDataset(
        features=feats.reshape(n_seq * T, D),
        object_class=object_class,
        category=c2k[object_class],
        session=np.repeat(seq_session, T),
        frame_index=np.tile(np.arange(T), n_seq),
        num_classes=C,
        num_categories=config.num_categories,
        num_sessions=S,
        class_to_category=c2k,
    )


def split_train_test(dataset: FeatureDataset, test_sessions: Iterable[int] = DEFAULT_TEST_SESSIONS):
    """Partition by session. Returns ``(train, test)``; storage order is kept."""
    test_sessions = frozenset(int(s) for s in test_sessions)
    missing = test_sessions - dataset.sessions
    if missing:
        raise ConfigError(f"test sessions {sorted(missing)} not present in dataset")
    mask = np.isin(dataset.session, list(test_sessions))
    return dataset.subset(np.flatnonzero(~mask)), dataset.subset(np.flatnonzero(mask))


# -- feature file I/O -------------------------------------------------------
#
# line 1:  C K D S
# rows:    object_class category session frame_index f_1 ... f_D


def write_feature_file(dataset: FeatureDataset, path):
    C, K, D, S = dataset.num_classes, dataset.num_categories, dataset.feature_dim, dataset.num_sessions
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{C} {K} {D} {S}\n")
        cols = zip(dataset.object_class, dataset.category, dataset.session, dataset.frame_index)
        for (c, k, s, f), row in zip(cols, dataset.features.tolist()):
            fh.write(f"{c} {k} {s} {f} " + " ".join(map(repr, row)) + "\n")


def _parse_ints(values, path, line, what):
    try:
        return [int(v) for v in values]
    except ValueError:
        raise ValueParseError(f"{what} must be integers, got {values!r}", path, line) from None


def load_feature_file(path) -> FeatureDataset:
    """Read the whitespace-separated feature format written by :func:`write_feature_file`."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"feature file not found: {path}")
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedHeaderError("empty file, expected header 'C K D S'", path, 1)
    head = lines[0].split()
    if len(head) != 4:
        raise MalformedHeaderError(f"header needs 4 fields 'C K D S', got {len(head)}", path, 1)
    try:
        C, K, D, S = (int(v) for v in head)
    except ValueError:
        raise MalformedHeaderError(f"header fields must be integers: {lines[0]!r}", path, 1) from None
    if min(C, K, D, S) < 1:
        raise MalformedHeaderError("header values must all be >= 1", path, 1)

    rows = []
    line_no = []
    for n, text in enumerate(lines[1:], start=2):
        toks = text.split()
        if not toks:
            continue
        if len(toks) != D + 4:
            raise RowArityError(f"expected {D + 4} fields, got {len(toks)}", path, n)
        rows.append(toks)
        line_no.append(n)

    labels = np.zeros((len(rows), 4), dtype=np.int64)
    for i, toks in enumerate(rows):
        labels[i] = _parse_ints(toks[:4], path, line_no[i], "label fields")
    try:
        feats = np.array([t[4:] for t in rows], dtype=np.float64).reshape(len(rows), D)
    except ValueError:
        for i, toks in enumerate(rows):
            try:
                [float(v) for v in toks[4:]]
            except ValueError:
                raise ValueParseError("non-numeric feature value", path, line_no[i]) from None
        raise
    if not np.all(np.isfinite(feats)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(feats), axis=1))[0])
        raise ValueParseError("non-finite feature value", path, line_no[bad])

    oc, cat, ses, fr = labels.T
    c2k = np.full(C, -1, dtype=np.int64)
    for i in range(len(rows)):
        c, k = oc[i], cat[i]
        if not 0 <= c < C:
            raise ClassRangeError(f"class id {c} outside [0, {C})", path, line_no[i])
        if not 0 <= k < K:
            raise ClassRangeError(f"category id {k} outside [0, {K})", path, line_no[i])
        if not 1 <= ses[i] <= S:
            raise ClassRangeError(f"session id {ses[i]} outside [1, {S}]", path, line_no[i])
        if c2k[c] == -1:
            c2k[c] = k
        elif c2k[c] != k:
            raise InconsistentMappingError(
                f"class {c} listed with category {k}, earlier mapped to {c2k[c]}", path, line_no[i]
            )
    if np.any(c2k < 0):
        # classes with no rows: fall back to round-robin so the map stays total
        unmapped = c2k < 0
        c2k[unmapped] = round_robin_categories(C, K)[unmapped]
    try:
        return FeatureDataset(
            features=feats,
            object_class=oc,
            category=cat,
            session=ses,
            frame_index=fr,
            num_classes=C,
            num_categories=K,
            num_sessions=S,
            class_to_category=c2k,
        )
    except ConfigError as exc:
        raise FeatureFileError(str(exc), path) from exc
