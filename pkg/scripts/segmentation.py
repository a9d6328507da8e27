"""Segmentation quality and sample diversity across acceleration factors."""

import argparse

import numpy as np

from infomri.data import gen_seg_dataset
from infomri.evaluation import evaluate
from infomri.training import TrainConfig, set_threads, train_seg


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=32)
    args = ap.parse_args()
    set_threads()
    train, test = gen_seg_dataset(200, seed=1), gen_seg_dataset(60, seed=99)
    res = train_seg(TrainConfig(task="segmentation", a=1 / 32, b=1 / 8, lr=1e-3, steps=args.steps,
                                seed=args.seed), train)
    keys = ("dice", "ged", "ged_point", "mse")
    print(f"{'accel':>5} " + " ".join(f"{k:>10}" for k in keys))
    for accel in (8, 16, 32):
        rows = [evaluate(res.pgn, res.heads, test, 1 / accel, 0.01, np.random.default_rng(s),
                         n_samples=args.samples)[0] for s in range(3)]
        print(f"{accel:5d} " + " ".join(f"{np.mean([r[k] for r in rows]):10.4f}" for k in keys))


if __name__ == "__main__":
    main()
