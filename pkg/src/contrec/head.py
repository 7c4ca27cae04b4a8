"""Linear softmax classifier trained with plain minibatch SGD on frozen features."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FeatureFileError, MalformedHeaderError, RowArityError, ShapeError, UsageError


@dataclass(frozen=True, eq=False)
class SoftmaxHead:
    """``weights`` is ``(C, D)``, ``biases`` is ``(C,)``.

    Whenever rows are copied, frozen or averaged, the bias is treated as one
    extra column; :attr:`params` exposes that ``(C, D + 1)`` view.
    """

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.biases, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"weights {w.shape} and biases {b.shape} are inconsistent")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @property
    def feature_dim(self):
        return self.weights.shape[1]

    @property
    def params(self) -> np.ndarray:
        return np.hstack([self.weights, self.biases[:, None]])

    @classmethod
    def from_params(cls, params) -> "SoftmaxHead":
        params = np.asarray(params, dtype=np.float64)
        return cls(params[:, :-1], params[:, -1])

    @classmethod
    def zeros(cls, C, D) -> "SoftmaxHead":
        return cls(np.zeros((C, D)), np.zeros(C))

    def __eq__(self, other):
        if not isinstance(other, SoftmaxHead):
            return NotImplemented
        return (
            self.weights.shape == other.weights.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.biases, other.biases)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    minibatch_size: int = 32
    init_mean: float = 0.0
    init_std: float = 0.01
    early_stop_patience: int = 3
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if self.init_std < 0:
            raise ConfigError("init_std must be >= 0")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be >= 0")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in [0, 1)")


def init_head(C, D, config: TrainConfig = TrainConfig()) -> SoftmaxHead:
    """Gaussian weights ``N(init_mean, init_std^2)``, zero biases."""
    if C < 1 or D < 1:
        raise ConfigError(f"head dimensions must be positive, got C={C}, D={D}")
    rng = np.random.default_rng(config.seed)
    return SoftmaxHead(rng.normal(config.init_mean, config.init_std, (C, D)), np.zeros(C))


def _check_features(head, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != head.feature_dim or X.ndim not in (1, 2):
        raise ShapeError(f"expected features of length {head.feature_dim}, got shape {X.shape}")
    return X


def logits(head: SoftmaxHead, X) -> np.ndarray:
    X = _check_features(head, X)
    return X @ head.weights.T + head.biases


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(head: SoftmaxHead, X) -> np.ndarray:
    """Class probabilities for one feature vector ``(D,)`` or a batch ``(N, D)``."""
    return softmax(logits(head, X))


def predict(head: SoftmaxHead, X):
    """Argmax class; ties go to the lowest id."""
    p = np.argmax(logits(head, X), axis=-1)
    return int(p) if np.ndim(p) == 0 else p


def _check_labels(head, X, y):
    X = _check_features(head, X)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise UsageError("need a non-empty (N, D) sample matrix")
    if y.shape != (len(X),):
        raise ShapeError(f"labels shape {y.shape} does not match {len(X)} samples")
    if y.min() < 0 or y.max() >= head.num_classes:
        raise UsageError(f"labels must lie in [0, {head.num_classes})")
    return X, y


def _loss_grad(W, b, X, y):
    z = X @ W.T + b
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1)
    n = len(y)
    rows = np.arange(n)
    loss = float(np.mean(np.log(s) - z[rows, y]))
    g = e / s[:, None]
    g[rows, y] -= 1.0
    g /= n
    return loss, g.T @ X, g.sum(axis=0)


def loss_and_gradient(head: SoftmaxHead, X, y):
    """Mean cross-entropy over the samples and its exact gradient as a head."""
    X, y = _check_labels(head, X, y)
    loss, gw, gb = _loss_grad(head.weights, head.biases, X, y)
    return loss, SoftmaxHead(gw, gb)


def accuracy(head: SoftmaxHead, X, y) -> float:
    return float(np.mean(predict(head, X) == np.asarray(y)))


def sgd_train(head: SoftmaxHead, X, y, config: TrainConfig, freeze_mask=None):
    """Minibatch SGD from ``head``. Returns ``(new_head, loss_trace)``.

    ``loss_trace`` holds the mean minibatch loss of every epoch run. Rows
    flagged in ``freeze_mask`` (weights and bias) come back bit-identical.
    With ``early_stop_patience > 0`` a seeded ``holdout_fraction`` of the
    samples is held out, and the head with the best holdout accuracy is
    returned once that many epochs pass without improvement.
    """
    X, y = _check_labels(head, X, y)
    C = head.num_classes
    if freeze_mask is None:
        free = np.arange(C)
    else:
        freeze_mask = np.asarray(freeze_mask, dtype=bool)
        if freeze_mask.shape != (C,):
            raise ShapeError(f"freeze_mask must have length {C}")
        free = np.flatnonzero(~freeze_mask)
    if len(free) == 0:
        return head, []

    rng = np.random.default_rng((config.seed, 1))
    n_hold = int(len(y) * config.holdout_fraction) if config.early_stop_patience > 0 else 0
    if n_hold > 0 and n_hold < len(y):
        perm = rng.permutation(len(y))
        Xh, yh = X[perm[:n_hold]], y[perm[:n_hold]]
        X, y = X[perm[n_hold:]], y[perm[n_hold:]]
    else:
        n_hold = 0

    # bias rides along as a constant-1 feature column
    Xa = np.hstack([X, np.ones((len(X), 1))])
    P = head.params
    lr, m = config.learning_rate, config.minibatch_size
    n = len(y)
    buf = np.empty((min(m, n), C))
    rows = np.arange(m)
    partial = len(free) < C
    trace = []
    best = None
    best_acc, stale = -1.0, 0

    for _ in range(config.epochs):
        order = rng.permutation(n)
        Xp, yp = Xa[order], y[order]
        total = 0.0
        for start in range(0, n, m):
            Xb, yb = Xp[start:start + m], yp[start:start + m]
            k = len(yb)
            g = buf[:k]
            np.matmul(Xb, P.T, out=g)
            g -= g.max(axis=1, keepdims=True)
            total -= g[rows[:k], yb].sum()
            np.exp(g, out=g)
            norm = g.sum(axis=1, keepdims=True)
            total += np.log(norm).sum()
            g /= norm
            g[rows[:k], yb] -= 1.0
            g *= lr / k
            if partial:
                # frozen rows still produce logits but never move
                P[free] -= g[:, free].T @ Xb
            else:
                P -= g.T @ Xb
        trace.append(float(total) / n)

        if n_hold:
            acc = float(np.mean(np.argmax(Xh @ P[:, :-1].T + P[:, -1], axis=1) == yh))
            if acc > best_acc:
                best_acc, stale = acc, 0
                best = P.copy()
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break

    if best is not None:
        P = best
    return SoftmaxHead.from_params(P), trace


# -- checkpoints: header "C D", then one row of D weights + bias per class ----


def write_head(head: SoftmaxHead, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{head.num_classes} {head.feature_dim}\n")
        for row in head.params.tolist():
            fh.write(" ".join(map(repr, row)) + "\n")


def load_head(path) -> SoftmaxHead:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    try:
        C, D = (int(v) for v in lines[0].split())
    except (IndexError, ValueError):
        raise MalformedHeaderError("checkpoint header must be 'C D'", path, 1) from None
    rows = []
    for n, text in enumerate(lines[1:], start=2):
        toks = text.split()
        if not toks:
            continue
        if len(toks) != D + 1:
            raise RowArityError(f"expected {D + 1} values, got {len(toks)}", path, n)
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise FeatureFileError("non-numeric value", path, n) from None
    if len(rows) != C:
        raise FeatureFileError(f"expected {C} class rows, found {len(rows)}", path)
    return SoftmaxHead.from_params(np.array(rows))
