"""Amortized vs fixed-ratio reconstruction models on the phantom set.

Prints MSE, redundancy ratio and the variance/error correlation per ratio for
the amortized model, each fixed-ratio model and variable-density masks.
"""

import argparse
import time

import numpy as np

from infomri.data import gen_seg_dataset
from infomri.evaluation import evaluate
from infomri.sampling import redundancy_ratio
from infomri.training import TrainConfig, set_threads, train_seg

RATIOS = (0.1, 0.2, 0.3)


def scores(result, test, r, kind, seeds):
    rows = [evaluate(result.pgn, result.heads, test, r, 0.01, np.random.default_rng(s), kind=kind) for s in seeds]
    return (np.mean([row[0]["mse"] for row in rows]),
            np.mean([redundancy_ratio(row[2]) for row in rows]),
            np.mean([row[0]["uncertainty_pearson"] for row in rows]))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-seeds", type=int, default=3)
    args = ap.parse_args()
    set_threads()
    train, test = gen_seg_dataset(200, seed=1), gen_seg_dataset(60, seed=99)
    seeds = range(args.eval_seeds)
    base = dict(task="reconstruction", lr=1e-3, steps=args.steps, seed=args.seed)

    t = time.perf_counter()
    amortized = train_seg(TrainConfig(a=0.05, b=0.3, **base), train)
    print(f"amortized model trained in {time.perf_counter() - t:.0f} s")
    print(f"{'ratio':>6} {'model':>10} {'mse':>10} {'redund':>7} {'pearson':>8}")
    for r in RATIOS:
        fixed = train_seg(TrainConfig(a=r, b=r, **base), train)
        for name, res, kind in (("amortized", amortized, "pgn"), ("fixed", fixed, "pgn"),
                                ("vardens", amortized, "variable-density")):
            mse, rr, pe = scores(res, test, r, kind, seeds)
            print(f"{r:6.2f} {name:>10} {mse:10.3e} {rr:7.3f} {pe:8.3f}")


if __name__ == "__main__":
    main()
