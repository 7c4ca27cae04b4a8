"""Continual-learning strategies over a linear softmax head.

CWR keeps two heads: ``tw`` is trained on each incoming batch and ``cw`` is
what inference uses. After a batch, ``cw`` rows of the batch classes are set
to the running mean of every ``tw`` snapshot seen for that class, which is a
plain copy the first time a class shows up. CW is CWR without re-initialising
``tw`` between batches; FW drops ``cw`` and freezes rows of classes already
seen.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolError, UsageError
from .head import SoftmaxHead, TrainConfig, init_head, sgd_train


class StrategyKind(str, enum.Enum):
    NAIVE = "naive"
    CUMULATIVE = "cumulative"
    CWR = "cwr"
    CW = "cw"
    FW = "fw"


@dataclass(frozen=True, eq=False)
class WeightStore:
    cw: SoftmaxHead
    tw: SoftmaxHead
    updates: np.ndarray

    def __post_init__(self):
        u = np.array(self.updates, dtype=np.int64)
        if self.cw.weights.shape != self.tw.weights.shape:
            raise ConfigError("cw and tw must have the same shape")
        if u.shape != (self.cw.num_classes,) or np.any(u < 0):
            raise ConfigError("updates must be a non-negative vector of length C")
        u.setflags(write=False)
        object.__setattr__(self, "updates", u)


def new_store(C, D) -> WeightStore:
    if C < 1 or D < 1:
        raise ConfigError(f"store dimensions must be positive, got C={C}, D={D}")
    return WeightStore(SoftmaxHead.zeros(C, D), SoftmaxHead.zeros(C, D), np.zeros(C, dtype=np.int64))


def _class_set(classes):
    return {int(c) for c in classes}


def cwr_train_batch(store: WeightStore, X, y, batch_classes, config: TrainConfig, reinit=True) -> WeightStore:
    """Train ``tw`` on one batch; ``cw`` and ``updates`` are left alone."""
    y = np.asarray(y)
    if len(y) == 0:
        raise UsageError("empty batch")
    stray = set(np.unique(y).tolist()) - _class_set(batch_classes)
    if stray:
        raise ProtocolError(f"labels {sorted(stray)} are not among the batch classes")
    tw = store.tw
    if reinit:
        tw = init_head(tw.num_classes, tw.feature_dim, config)
    tw, _ = sgd_train(tw, X, y, config)
    return dataclasses.replace(store, tw=tw)


def cwr_consolidate(store: WeightStore, batch_classes) -> WeightStore:
    """Fold ``tw`` rows of ``batch_classes`` into ``cw`` as a running mean.

    ``cw[i] <- tw[i]`` when ``updates[i] == 0``, otherwise
    ``cw[i] <- (cw[i] * updates[i] + tw[i]) / (updates[i] + 1)``; then
    ``updates[i] += 1``. Other rows are untouched.
    """
    cw = store.cw.params
    tw = store.tw.params
    updates = store.updates.copy()
    for i in sorted(_class_set(batch_classes)):
        n = updates[i]
        if n == 0:
            cw[i] = tw[i]
        else:
            cw[i] = (cw[i] * n + tw[i]) / (n + 1)
        updates[i] = n + 1
    return WeightStore(SoftmaxHead.from_params(cw), store.tw, updates)


def fw_train_batch(head: SoftmaxHead, X, y, seen_classes, config: TrainConfig) -> SoftmaxHead:
    """Plain SGD with the rows of ``seen_classes`` frozen."""
    mask = np.zeros(head.num_classes, dtype=bool)
    mask[sorted(_class_set(seen_classes))] = True
    return sgd_train(head, X, y, config, freeze_mask=mask)[0]


def naive_update(head: SoftmaxHead, X, y, config: TrainConfig) -> SoftmaxHead:
    return sgd_train(head, X, y, config)[0]


def cumulative_update(C, D, batches, config: TrainConfig) -> SoftmaxHead:
    """Fresh head trained on the concatenation of ``batches`` (a list of ``(X, y)``)."""
    if not batches:
        raise UsageError("cumulative training needs at least one batch")
    X = np.concatenate([np.asarray(b[0]) for b in batches])
    y = np.concatenate([np.asarray(b[1]) for b in batches])
    return sgd_train(init_head(C, D, config), X, y, config)[0]


class Learner:
    """Mutable per-run wrapper that feeds batches to one strategy.

    ``observe`` takes the batch features, labels, and optionally one sort key
    per sample. Cumulative training sorts the accumulated samples by those
    keys, so its result does not depend on the order the batches came in.
    """

    def __init__(self, kind, C, D, init_config: TrainConfig = TrainConfig()):
        self.kind = StrategyKind(kind)
        self.C, self.D = C, D
        self.seen = set()
        self.store = None
        self.head = None
        self._history = []
        if self.kind in (StrategyKind.CWR, StrategyKind.CW):
            self.store = new_store(C, D)
            if self.kind is StrategyKind.CW:
                # CW never re-inits, so tw starts from one random draw
                self.store = dataclasses.replace(self.store, tw=init_head(C, D, init_config))
        elif self.kind is StrategyKind.CUMULATIVE:
            self.head = SoftmaxHead.zeros(C, D)
        else:
            self.head = init_head(C, D, init_config)

    def observe(self, X, y, config: TrainConfig, keys=None):
        y = np.asarray(y)
        classes = _class_set(np.unique(y))
        k = self.kind
        if k is StrategyKind.NAIVE:
            self.head = naive_update(self.head, X, y, config)
        elif k is StrategyKind.FW:
            self.head = fw_train_batch(self.head, X, y, self.seen, config)
        elif k is StrategyKind.CUMULATIVE:
            self._history.append((np.asarray(X), y, None if keys is None else np.asarray(keys)))
            Xs = np.concatenate([h[0] for h in self._history])
            ys = np.concatenate([h[1] for h in self._history])
            if keys is not None:
                order = np.argsort(np.concatenate([h[2] for h in self._history]), kind="stable")
                Xs, ys = Xs[order], ys[order]
            self.head = cumulative_update(self.C, self.D, [(Xs, ys)], config)
        else:
            reinit = k is StrategyKind.CWR
            self.store = cwr_train_batch(self.store, X, y, classes, config, reinit=reinit)
            self.store = cwr_consolidate(self.store, classes)
        self.seen |= classes

    def inference_head(self) -> SoftmaxHead:
        return strategy_inference_head(self.kind, self)


def strategy_inference_head(kind, state) -> SoftmaxHead:
    """``cw`` for CWR/CW, the single live head otherwise.

    ``state`` may be a :class:`Learner`, a :class:`WeightStore` or a head.
    """
    kind = StrategyKind(kind)
    if isinstance(state, Learner):
        state = state.store if state.store is not None else state.head
    if kind in (StrategyKind.CWR, StrategyKind.CW):
        if not isinstance(state, WeightStore):
            raise UsageError(f"{kind.value} needs a WeightStore")
        return state.cw
    if isinstance(state, WeightStore):
        return state.tw
    return state
