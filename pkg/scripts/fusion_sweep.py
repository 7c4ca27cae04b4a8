"""Frame-level vs sum-rule fused accuracy as the window grows.

Trains one head on all training sessions of the synthetic stream, then
sweeps the fusion window with and without sequence-boundary resets.

    python3 scripts/fusion_sweep.py --windows 1 2 5 10 25 50 100 300
"""

import argparse

import numpy as np

from contrec.evaluation import FusionConfig, temporal_fuse
from contrec.head import TrainConfig, forward, init_head, predict, sgd_train
from contrec.stream import SyntheticStreamConfig, generate_synthetic_stream, split_train_test


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--windows", type=int, nargs="+", default=[1, 2, 5, 10, 25, 50, 100, 300])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train, test = split_train_test(generate_synthetic_stream(SyntheticStreamConfig(seed=args.seed)))
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed)
    head, _ = sgd_train(init_head(train.num_classes, train.feature_dim, cfg), train.features, train.object_class, cfg)

    conf = forward(head, test.features)
    starts = test.sequence_starts()
    frame = np.mean(predict(head, test.features) == test.object_class)
    print(f"frame-level accuracy {frame:.4f}")
    print(f"{'window':>6}  {'reset':>7}  {'no reset':>8}")
    for w in args.windows:
        on = temporal_fuse(conf, test.object_class, starts, FusionConfig(w, True))
        off = temporal_fuse(conf, test.object_class, starts, FusionConfig(w, False))
        print(f"{w:>6}  {on:>7.4f}  {off:>8.4f}")


if __name__ == "__main__":
    main()
