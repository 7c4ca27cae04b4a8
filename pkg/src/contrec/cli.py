"""Command-line front end.

Subcommands: ``generate``, ``run``, ``fuse``, ``roc`` and ``report``. Any
flag can also come from a ``key = value`` file passed with ``--config``;
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContrecError, UsageError
from .evaluation import EvalProtocol, FusionConfig, roc_sweep, temporal_fuse
from .head import TrainConfig, forward, load_head, predict, write_head
from .scenarios import RunConfig, Scenario, run_experiment
from .stream import (
    DEFAULT_TEST_SESSIONS,
    SyntheticStreamConfig,
    generate_synthetic_stream,
    load_feature_file,
    split_train_test,
    write_feature_file,
)
from .strategies import StrategyKind

log = logging.getLogger("contrec")

WORKERS_ENV = "CONTREC_WORKERS"
RUNS_HEADER = ["scenario", "strategy", "run", "batch", "accuracy"]
AGGREGATE_HEADER = ["scenario", "strategy", "batch", "mean", "std"]
ROC_HEADER = ["threshold", "accuracy_on_accepted", "rejection_rate"]
FUSION_HEADER = ["window", "reset", "accuracy"]

_SYNTH_FLAGS = {
    "classes": "num_classes",
    "categories": "num_categories",
    "sessions": "num_sessions",
    "frames": "frames_per_sequence",
    "dim": "feature_dim",
    "center_scale": "class_center_scale",
    "center_mean": "center_mean",
    "session_offset": "session_offset_scale",
    "walk_step": "walk_step_scale",
    "walk_bound": "walk_bound",
    "noise": "noise_scale",
}


def _fmt(x) -> str:
    return repr(float(x))


def _int_list(text):
    """Parse ``"0-4,7,9"`` into a sorted list of non-negative ints."""
    out = set()
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, _, hi = part.partition("-")
        out.update(range(int(lo), int(hi or lo) + 1))
    return sorted(out)


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _default_workers():
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


# -- argument wiring -----------------------------------------------------------


def _add_synthetic_args(p):
    g = p.add_argument_group("synthetic stream")
    d = SyntheticStreamConfig()
    g.add_argument("--classes", type=int, default=d.num_classes)
    g.add_argument("--categories", type=int, default=d.num_categories)
    g.add_argument("--sessions", type=int, default=d.num_sessions)
    g.add_argument("--frames", type=int, default=d.frames_per_sequence)
    g.add_argument("--dim", type=int, default=d.feature_dim)
    g.add_argument("--center-scale", type=float, default=d.class_center_scale)
    g.add_argument("--center-mean", type=float, default=d.center_mean)
    g.add_argument("--session-offset", type=float, default=d.session_offset_scale)
    g.add_argument("--walk-step", type=float, default=d.walk_step_scale)
    g.add_argument("--walk-bound", type=float, default=d.walk_bound)
    g.add_argument("--noise", type=float, default=d.noise_scale)


def _add_data_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", type=Path, help="feature file to load")
    src.add_argument("--synthetic", action="store_true", help="generate a synthetic stream (default)")
    p.add_argument("--data-seed", type=int, default=0, help="seed for the synthetic stream")
    p.add_argument("--test-sessions", type=_int_list, default=sorted(DEFAULT_TEST_SESSIONS))
    _add_synthetic_args(p)


def _add_train_args(p):
    g = p.add_argument_group("training")
    d = TrainConfig()
    g.add_argument("--lr", type=float, default=d.learning_rate)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--minibatch", type=int, default=d.minibatch_size)
    g.add_argument("--init-mean", type=float, default=d.init_mean)
    g.add_argument("--init-std", type=float, default=d.init_std)
    g.add_argument("--patience", type=int, default=d.early_stop_patience)
    g.add_argument("--holdout", type=float, default=d.holdout_fraction)
    g.add_argument("--train-seed", type=int, default=d.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic feature file")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_synthetic_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run a continual-learning experiment")
    p.add_argument("--config", type=Path)
    p.add_argument("--scenario", choices=[s.value for s in Scenario], default="nc")
    p.add_argument("--strategy", choices=[s.value for s in StrategyKind], default="cwr")
    p.add_argument("--protocol", choices=["full", "partial", "reject"], default="full")
    p.add_argument("--threshold", type=float, default=0.5, help="rejection threshold (reject protocol)")
    p.add_argument("--level", choices=["object", "category"], default="object")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--cumulative-runs", type=int, default=None)
    p.add_argument("--schedule-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help=f"parallel runs (default ${WORKERS_ENV} or CPU count)")
    p.add_argument("--out", type=Path, required=True)
    _add_train_args(p)
    _add_data_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fuse", help="sum-rule temporal fusion sweep for a head checkpoint")
    p.add_argument("--config", type=Path)
    p.add_argument("--head", type=Path, required=True)
    p.add_argument("--windows", type=_int_list, default=[1, 10, 50])
    p.add_argument("--reset", choices=["on", "off", "both"], default="both")
    p.add_argument("--level", choices=["object", "category"], default="object")
    p.add_argument("--out", type=Path, required=True)
    _add_data_args(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("roc", help="rejection-threshold sweep for a head checkpoint")
    p.add_argument("--config", type=Path)
    p.add_argument("--head", type=Path, required=True)
    p.add_argument("--thresholds", type=_float_list, default=[round(0.1 * i, 1) for i in range(11)])
    p.add_argument("--seen", type=_int_list, default=None, help="seen classes, e.g. 0-9,12 (default: all)")
    p.add_argument("--level", choices=["object", "category"], default="object")
    p.add_argument("--out", type=Path, required=True)
    _add_data_args(p)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("report", help="render aggregate CSVs as text tables, optionally plot")
    p.add_argument("inputs", nargs="+", type=Path, help="aggregate CSV files or run output directories")
    p.add_argument("--plot", type=Path, default=None, help="write a mean +/- std plot here")
    p.set_defaults(func=cmd_report)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = getattr(args, "config", None)
    if cfg is not None:
        values = read_config_file(cfg)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown keys in {cfg}: {sorted(unknown)}")
        if "synthetic" in values:
            values["synthetic"] = values["synthetic"].lower() in ("1", "true", "yes", "on")
        # string defaults go through each option's type converter on re-parse
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# -- helpers -------------------------------------------------------------------


def synthetic_config(args, seed) -> SyntheticStreamConfig:
    return SyntheticStreamConfig(seed=seed, **{field: getattr(args, flag) for flag, field in _SYNTH_FLAGS.items()})


def load_dataset(args):
    if args.data is not None:
        return load_feature_file(args.data)
    return generate_synthetic_stream(synthetic_config(args, args.data_seed))


def train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        minibatch_size=args.minibatch,
        init_mean=args.init_mean,
        init_std=args.init_std,
        early_stop_patience=args.patience,
        holdout_fraction=args.holdout,
        seed=args.train_seed,
    )


def write_csv(path, header, rows):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="ascii")


def _test_split(args, ds):
    return split_train_test(ds, args.test_sessions)[1]


# -- commands ------------------------------------------------------------------


def cmd_generate(args):
    ds = generate_synthetic_stream(synthetic_config(args, args.seed))
    if args.out.parent != Path(""):
        args.out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_file(ds, args.out)
    print(
        f"wrote {args.out}: C={ds.num_classes} K={ds.num_categories} D={ds.feature_dim} "
        f"S={ds.num_sessions} samples={len(ds)}"
    )


def cmd_run(args):
    ds = load_dataset(args)
    threshold = args.threshold if args.protocol == "reject" else None
    protocol = EvalProtocol(args.protocol, threshold, args.level)
    workers = args.workers if args.workers is not None else _default_workers()
    run_cfg = RunConfig(
        num_runs=args.runs,
        base_seed=args.schedule_seed,
        cumulative_runs_override=args.cumulative_runs,
        n_jobs=workers,
    )
    log.debug("run config %s, train config %s", run_cfg, train_config(args))
    result = run_experiment(ds, args.scenario, args.strategy, train_config(args), run_cfg, protocol, args.test_sessions)
    sc, st = result.scenario.value, result.strategy.value
    runs_rows = [
        [sc, st, r, b, _fmt(acc)] for r, curve in enumerate(result.curves) for b, acc in enumerate(curve)
    ]
    agg_rows = [[sc, st, b, _fmt(m), _fmt(s)] for b, (m, s) in enumerate(zip(result.mean, result.std))]
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(args.out / "runs.csv", RUNS_HEADER, runs_rows)
    write_csv(args.out / "aggregate.csv", AGGREGATE_HEADER, agg_rows)
    write_head(result.final_heads[0], args.out / "final_head.txt")
    print(
        f"{sc} {st} ({len(result.curves)} runs, {result.curves.shape[1]} batches): "
        f"final accuracy {result.mean[-1]:.4f} +/- {result.std[-1]:.4f}"
    )


def cmd_fuse(args):
    head = load_head(args.head)
    test = _test_split(args, load_dataset(args))
    conf = forward(head, test.features)
    starts = test.sequence_starts()
    if args.level == "category":
        labels, class_map = test.category, test.class_to_category
    else:
        labels, class_map = test.object_class, None
    modes = {"on": [True], "off": [False], "both": [True, False]}[args.reset]
    rows = []
    for reset in modes:
        for w in args.windows:
            acc = temporal_fuse(conf, labels, starts, FusionConfig(w, reset), class_map)
            rows.append([w, "on" if reset else "off", _fmt(acc)])
    write_csv(args.out, FUSION_HEADER, rows)
    frame = np.mean(predict(head, test.features) == test.object_class)
    print(f"wrote {args.out}: {len(rows)} rows; frame-level object accuracy {frame:.4f}")


def cmd_roc(args):
    head = load_head(args.head)
    test = _test_split(args, load_dataset(args))
    seen = args.seen if args.seen is not None else range(test.num_classes)
    points = roc_sweep(head, test, seen, args.thresholds, args.level)
    write_csv(args.out, ROC_HEADER, [[_fmt(p.threshold), _fmt(p.accuracy_on_accepted), _fmt(p.rejection_rate)] for p in points])
    print(f"wrote {args.out}: {len(points)} thresholds")


def _read_aggregate(path):
    path = Path(path)
    if path.is_dir():
        path = path / "aggregate.csv"
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != AGGREGATE_HEADER:
            raise UsageError(f"{path}: not an aggregate CSV (header {header})")
        return path, [row for row in reader]


def render_table(rows) -> str:
    label = f"{rows[0][0]}/{rows[0][1]}" if rows else "?"
    lines = [f"{label}", f"{'batch':>5}  {'mean':>8}  {'std':>8}"]
    for _, _, b, m, s in rows:
        lines.append(f"{int(b):>5}  {float(m):>8.4f}  {float(s):>8.4f}")
    return "\n".join(lines)


def cmd_report(args):
    tables = [_read_aggregate(p) for p in args.inputs]
    for path, rows in tables:
        print(f"# {path}")
        print(render_table(rows))
        print()
    if args.plot is not None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4))
        for _, rows in tables:
            x = np.array([int(r[2]) for r in rows]) + 1
            m = np.array([float(r[3]) for r in rows])
            s = np.array([float(r[4]) for r in rows])
            ax.plot(x, m, label=f"{rows[0][0]}/{rows[0][1]}" if rows else "?")
            ax.fill_between(x, m - s, m + s, alpha=0.25)
        ax.set_xlabel("batch")
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1)
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot)
        plt.close(fig)
        print(f"wrote {args.plot}")


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ContrecError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ContrecError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        category = "io" if isinstance(exc, OSError) else "value"
        print(f"error[{category}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
