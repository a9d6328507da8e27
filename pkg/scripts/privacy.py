"""Classification at 32x: learned vs fixed uniform masks, and a beta grid.

Beta is scored on a validation set, never on the test set. The linear-attack
PSNR measures how well a ridge regression recovers images from the
measurements.
"""

import argparse

import numpy as np

from infomri.data import gen_cls_dataset
from infomri.entropy import estimate_kspace_stats
from infomri.evaluation import evaluate, linear_attack_psnr
from infomri.training import TrainConfig, set_threads, train_cls

R = 1 / 32


def score(res, train_images, records, seeds=range(3)):
    images = np.stack([r.image for r in records])
    acc, attack = [], []
    for s in seeds:
        sc, _, p = evaluate(res.pgn, res.heads, records, R, 0.01, np.random.default_rng(s), pattern=res.pattern)
        acc.append(sc["accuracy"])
        attack.append(linear_attack_psnr(train_images, images, p.mask, 0.01, np.random.default_rng(s))["linear_psnr"])
    return np.mean(acc), np.mean(attack)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--betas", default="0,1e-7,2e-7,3e-7,4e-7,5e-7,6e-7,1e-6")
    args = ap.parse_args()
    set_threads()
    train = gen_cls_dataset(600, classes=6, seed=1)
    val, test = gen_cls_dataset(300, classes=6, seed=7), gen_cls_dataset(300, classes=6, seed=99)
    tr = np.stack([r.image for r in train])
    stats = estimate_kspace_stats(tr)
    base = dict(task="classification", a=R, b=R, lr=1e-3, steps=args.steps, seed=args.seed)

    uniform = train_cls(TrainConfig(pattern="uniform", redraw=False, **base), train, stats)
    print(f"{'run':>14} {'split':>5} {'accuracy':>8} {'attack dB':>9}")
    print(f"{'fixed uniform':>14} {'test':>5} " + "{:8.3f} {:9.2f}".format(*score(uniform, tr, test)))
    for beta in (float(b) for b in args.betas.split(",")):
        res = train_cls(TrainConfig(beta=beta, **base), train, stats)
        for split, records in (("val", val), ("test", test)):
            print(f"{'beta ' + format(beta, 'g'):>14} {split:>5} " + "{:8.3f} {:9.2f}".format(*score(res, tr, records)))


if __name__ == "__main__":
    main()
