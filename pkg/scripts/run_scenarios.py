"""Run every strategy on the NI, NC and NIC schedules of the synthetic stream.

Writes ``<out>/<scenario>_<strategy>.csv`` (batch, mean, std) and, with
matplotlib available, one accuracy-vs-batch plot per scenario.

    python3 scripts/run_scenarios.py --runs 10 --out results/
"""

import argparse
import csv
import time
from pathlib import Path

from contrec.head import TrainConfig
from contrec.scenarios import RunConfig, run_experiment
from contrec.stream import SyntheticStreamConfig, generate_synthetic_stream

STRATEGIES = ["naive", "cwr", "cw", "fw", "cumulative"]
# cumulative retrains on everything seen so far, so its NC/NIC repetitions are capped
CUMULATIVE_RUNS = {"ni": None, "nc": 5, "nic": 3}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", nargs="+", default=["ni", "nc", "nic"])
    ap.add_argument("--strategies", nargs="+", default=STRATEGIES)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    stream = generate_synthetic_stream(SyntheticStreamConfig(seed=args.data_seed))
    curves = {}
    for scenario in args.scenarios:
        for strategy in args.strategies:
            t0 = time.perf_counter()
            cfg = RunConfig(num_runs=args.runs, cumulative_runs_override=CUMULATIVE_RUNS[scenario], n_jobs=args.workers)
            res = run_experiment(stream, scenario, strategy, TrainConfig(), cfg)
            curves[scenario, strategy] = res
            with open(args.out / f"{scenario}_{strategy}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["batch", "mean", "std"])
                w.writerows([b, repr(float(m)), repr(float(s))] for b, (m, s) in enumerate(zip(res.mean, res.std)))
            print(
                f"{scenario:>3} {strategy:<10} final {res.mean[-1]:.4f} +/- {res.std[-1]:.4f} "
                f"({len(res.curves)} runs, {time.perf_counter() - t0:.0f}s)"
            )

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    for scenario in args.scenarios:
        fig, ax = plt.subplots(figsize=(7, 4))
        for strategy in args.strategies:
            res = curves[scenario, strategy]
            x = range(1, len(res.mean) + 1)
            ax.plot(x, res.mean, label=strategy)
            ax.fill_between(x, res.mean - res.std, res.mean + res.std, alpha=0.2)
        ax.set(title=scenario.upper(), xlabel="batch", ylabel="accuracy", ylim=(0, 1))
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.out / f"{scenario}.png")
        plt.close(fig)


if __name__ == "__main__":
    main()
