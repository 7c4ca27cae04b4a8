"""Test protocols, rejection option, ROC sweeps and temporal sum-rule fusion."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ProtocolError, ShapeError, UsageError
from .head import SoftmaxHead, forward, logits, softmax
from .stream import FeatureDataset

REJECT = -1


class ProtocolKind(str, enum.Enum):
    PARTIAL = "partial"
    FULL = "full"
    REJECT = "reject"


class Level(str, enum.Enum):
    OBJECT = "object"
    CATEGORY = "category"


@dataclass(frozen=True)
class EvalProtocol:
    kind: ProtocolKind = ProtocolKind.FULL
    threshold: Optional[float] = None
    level: Level = Level.OBJECT

    def __post_init__(self):
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        object.__setattr__(self, "level", Level(self.level))
        if self.kind is ProtocolKind.REJECT:
            if self.threshold is None or not 0 <= self.threshold <= 1:
                raise ConfigError("rejection protocol needs a threshold in [0, 1]")
        elif self.threshold is not None:
            raise ConfigError("threshold only applies to the rejection protocol")


@dataclass(frozen=True)
class FusionConfig:
    window: int = 1
    reset_available: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("fusion window must be >= 1")


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    accuracy_on_accepted: float
    rejection_rate: float
    # seen samples accepted and right, unseen samples rejected
    open_set_accuracy: float = float("nan")


def _seen_mask(num_classes, seen_classes):
    mask = np.zeros(num_classes, dtype=bool)
    mask[sorted(int(c) for c in seen_classes)] = True
    return mask


def _correct(pred, test: FeatureDataset, level):
    if Level(level) is Level.CATEGORY:
        return test.class_to_category[pred] == test.category
    return pred == test.object_class


def evaluate(head: SoftmaxHead, test: FeatureDataset, protocol: EvalProtocol = EvalProtocol(), seen_classes=None) -> float:
    """Accuracy of ``head`` on ``test`` under ``protocol``.

    ``seen_classes`` defaults to every class. Under the rejection protocol a
    sample of a seen class counts as right when it is accepted and
    classified correctly, and a sample of an unseen class when it is
    rejected.
    """
    if len(test) == 0:
        raise ProtocolError("empty test set")
    if seen_classes is None:
        seen_classes = range(test.num_classes)
    seen = _seen_mask(test.num_classes, seen_classes)
    z = logits(head, test.features)
    pred = np.argmax(z, axis=1)

    if protocol.kind is ProtocolKind.PARTIAL:
        keep = seen[test.object_class]
        if not keep.any():
            raise ProtocolError("no test samples of the seen classes")
        return float(np.mean(_correct(pred, test, protocol.level)[keep]))
    if protocol.kind is ProtocolKind.FULL:
        return float(np.mean(_correct(pred, test, protocol.level)))

    rejected = softmax(z).max(axis=1) < protocol.threshold
    known = seen[test.object_class]
    ok = np.where(known, ~rejected & _correct(pred, test, protocol.level), rejected)
    return float(np.mean(ok))


def reject_predict(probabilities, threshold):
    """Argmax class, or :data:`REJECT` when the top probability is below ``threshold``.

    Works on one vector or on rows of a matrix.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    out = np.where(p.max(axis=-1) < threshold, REJECT, np.argmax(p, axis=-1))
    return int(out) if out.ndim == 0 else out


def roc_sweep(head, test: FeatureDataset, seen_classes, thresholds, level=Level.OBJECT):
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise UsageError("need at least one threshold")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise UsageError("thresholds must be sorted ascending")
    if len(test) == 0:
        raise ProtocolError("empty test set")
    probs = forward(head, test.features)
    top = probs.max(axis=1)
    pred = np.argmax(probs, axis=1)
    known = _seen_mask(test.num_classes, seen_classes)[test.object_class]
    right = known & _correct(pred, test, level)
    points = []
    for t in thresholds:
        accepted = top >= t
        n_acc = int(accepted.sum())
        # nothing accepted: report 1.0, like precision at zero recall
        acc = float(np.mean(right[accepted])) if n_acc else 1.0
        open_set = float(np.mean(np.where(known, accepted & right, ~accepted)))
        points.append(RocPoint(t, acc, 1.0 - n_acc / len(top), open_set))
    return points


def fused_scores(confidences, sequence_starts, config: FusionConfig):
    """Sum of confidence vectors over a trailing window per frame.

    With ``reset_available`` the window stops at the start of the frame's own
    sequence; otherwise it runs across sequence boundaries. Near the start of
    a stream the window is partial.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.ndim != 2:
        raise ShapeError("confidences must be (N, C)")
    n = len(conf)
    if config.reset_available:
        starts = np.unique(np.r_[0, np.asarray(sequence_starts, dtype=np.int64)])
        if n and (starts.min() < 0 or starts.max() >= max(n, 1)):
            raise ShapeError("sequence start outside the frame range")
        seq_start = starts[np.searchsorted(starts, np.arange(n), side="right") - 1]
        span = int(np.max(np.arange(n) - seq_start)) + 1 if n else 0
    else:
        seq_start = np.zeros(n, dtype=np.int64)
        span = n
    fused = conf.copy()
    t = np.arange(n)
    for k in range(1, min(config.window, span)):
        ok = (t[k:] - k) >= seq_start[k:]
        fused[k:][ok] += conf[:-k][ok]
    return fused


def fused_predictions(confidences, sequence_starts, config: FusionConfig):
    return np.argmax(fused_scores(confidences, sequence_starts, config), axis=1)


def temporal_fuse(confidences, labels, sequence_starts, config: FusionConfig, class_map=None) -> float:
    """Accuracy of sum-rule fused predictions against ``labels``.

    ``class_map`` (e.g. class to category) is applied to predictions first.
    """
    labels = np.asarray(labels)
    if len(labels) != len(confidences):
        raise ShapeError("labels and confidences are not aligned")
    if len(labels) == 0:
        raise ProtocolError("no frames to fuse")
    pred = fused_predictions(confidences, sequence_starts, config)
    if class_map is not None:
        pred = np.asarray(class_map)[pred]
    return float(np.mean(pred == labels))
