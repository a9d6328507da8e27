"""``infomri`` command-line entry point.

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 invalid config
or corrupt input, 5 runtime failure (rejection exhaustion, divergence).

rd-sweep CSV columns, in order: ratio, psnr, ssim, dice, ged, mse, accuracy.
Columns that do not apply to a checkpoint's task are written as ``nan``.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import entropy, evaluation, sampling, training
from .inference import eval_pattern
from .serialization import FormatError, load_array, save_array

EXIT_USAGE, EXIT_MISSING, EXIT_INVALID, EXIT_RUNTIME = 2, 3, 4, 5
RD_COLUMNS = ("ratio", "psnr", "ssim", "dice", "ged", "mse", "accuracy")
PATTERN_KINDS = ("pgn", "uniform", "vardens", "equispaced", "lowfreq")


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file: {path}", EXIT_MISSING)
    return p


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


# -- subcommands ------------------------------------------------------------

def cmd_gen_data(args) -> int:
    dims = (args.height, args.width)
    if args.kind == "seg":
        records = data_mod.gen_seg_dataset(args.count, dims, args.annotators, args.seed, args.max_radius)
    else:
        records = data_mod.gen_cls_dataset(args.count, dims, args.classes, args.seed)
    data_mod.save_dataset(args.out, records, seed=args.seed)
    print(json.dumps({"out": str(args.out), "kind": args.kind, "count": len(records), "dims": list(dims)}))
    return 0


def cmd_stats(args) -> int:
    records = data_mod.load_dataset(_existing(args.data))
    stats = entropy.estimate_kspace_stats([r.image for r in records])
    entropy.save_stats(args.out, stats)
    print(json.dumps({"out": str(args.out), "count": len(records), "dims": list(stats.dims)}))
    return 0


def cmd_train(args) -> int:
    cfg = json.loads(_existing(args.config).read_text())
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}", EXIT_USAGE)
        cfg[key] = _parse_value(raw)
    for key in ("seed", "steps"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    config = training.TrainConfig.from_dict(cfg)
    records = data_mod.load_dataset(_existing(args.data))
    stats = entropy.load_stats(_existing(args.stats)) if args.stats else None
    result = training.train(config, records, stats)
    out = training.save_run(args.out, result, config)
    last = result.log[-1]["total"] if result.log else None
    print(json.dumps({"out": str(out), "steps": len(result.log), "final_total": last}))
    return 0


def _sigma(args, config) -> float:
    return config.sigma if args.sigma is None else args.sigma


def _kind(name: str) -> str:
    return {"uniform": "uniform-random", "vardens": "variable-density", "lowfreq": "low-frequency"}.get(name, name)


def cmd_eval(args) -> int:
    pgn, heads, config = training.load_run(_existing(args.ckpt))
    records = data_mod.load_dataset(_existing(args.data))
    rng = np.random.default_rng(args.seed)
    # a run trained on one fixed mask is scored on that mask unless --kind asks otherwise
    fixed = training.load_fixed_pattern(args.ckpt) if args.kind == "pgn" else None
    scores, preds, pattern = evaluation.evaluate(pgn, heads, records, args.ratio, _sigma(args, config), rng,
                                                 n_samples=args.samples, kind=_kind(args.kind), pattern=fixed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sampling.save_pattern(out / "pattern.mask", pattern)
    for name, arr in preds.items():
        save_array(out / f"{name}.bin", arr)
    scores |= {"ratio": args.ratio, "samples": args.samples, "task": heads.cfg.task}
    _write_json(out / "metrics.json", scores)
    print(json.dumps(scores, sort_keys=True))
    return 0


def _score_predictions(pred: Path, records) -> dict:
    scores = {}
    if (pred / "recon.bin").exists():
        images = np.stack([r.image for r in records])
        mean, _ = load_array(pred / "recon.bin")
        var, _ = load_array(pred / "variance.bin")
        if mean.shape != images.shape:
            raise CliError(f"prediction shape {mean.shape} does not match dataset {images.shape}", EXIT_INVALID)
        scores |= evaluation.recon_scores(images, mean, var)
    if (pred / "samples.bin").exists():
        samples, _ = load_array(pred / "samples.bin")
        probs, _ = load_array(pred / "probs.bin")
        scores |= evaluation.seg_scores(records, samples, probs)
    elif (pred / "probs.bin").exists() and data_mod.dataset_kind(records) == "cls":
        probs, _ = load_array(pred / "probs.bin")
        scores |= evaluation.cls_scores(records, probs)
    if not scores:
        raise CliError(f"{pred}: no prediction arrays found", EXIT_MISSING)
    return scores


def cmd_metrics(args) -> int:
    pred = _existing(args.pred)
    records = data_mod.load_dataset(_existing(args.gt))
    scores = _score_predictions(pred, records)
    _write_json(args.out, scores)
    with open(Path(args.out).with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        keys = sorted(scores)
        w.writerow(keys)
        w.writerow([repr(float(scores[k])) for k in keys])
    print(json.dumps(scores, sort_keys=True))
    return 0


def cmd_sample_mask(args) -> int:
    dims = (args.height, args.width)
    rng = np.random.default_rng(args.seed)
    if args.kind == "pgn":
        if args.ckpt:
            pgn, _, _ = training.load_run(_existing(args.ckpt))
            if pgn.mode != args.mode:
                raise CliError(f"checkpoint mode {pgn.mode} differs from --mode {args.mode}", EXIT_INVALID)
        else:
            pgn = sampling.init_pgn(dims, args.mode, rng=np.random.default_rng(args.seed))
        pattern = eval_pattern(pgn, args.ratio, rng)
    else:
        pattern = sampling.traditional_pattern(_kind(args.kind), args.ratio, dims, args.mode, rng)
    sampling.save_pattern(args.out, pattern)
    info = {"out": str(args.out), "cardinality": pattern.cardinality, "tries": pattern.tries}
    if pattern.cardinality:
        info["redundancy_ratio"] = float(sampling.redundancy_ratio(pattern))
    print(json.dumps(info))
    return 0


def cmd_entropy_report(args) -> int:
    stats = entropy.load_stats(_existing(args.stats))
    pattern = sampling.load_pattern(_existing(args.mask))
    I, J = sampling.redundancy_sets(pattern.mask)
    report = {
        "entropy": entropy.marginal_entropy(pattern, stats, args.sigma),
        "I": int(I.sum()),
        "J": int(J.sum()),
        "redundancy_ratio": float(sampling.redundancy_ratio(pattern)) if pattern.cardinality else None,
    }
    print(json.dumps(report))
    return 0


def cmd_rd_sweep(args) -> int:
    pgn, heads, config = training.load_run(_existing(args.ckpt))
    if training.load_fixed_pattern(args.ckpt) is not None:
        raise CliError(f"{args.ckpt}: run was trained on one fixed mask; there is no ratio to sweep", EXIT_INVALID)
    records = data_mod.load_dataset(_existing(args.data))
    if args.ratios:
        ratios = [float(x) for x in args.ratios.split(",")]
    else:
        lo = config.a if args.rmin is None else args.rmin
        hi = config.b if args.rmax is None else args.rmax
        ratios = list(np.linspace(lo, hi, args.points))
    seeds = np.random.SeedSequence(args.seed).spawn(len(ratios))
    rows = []
    for r, ss in zip(ratios, seeds):
        scores, _, _ = evaluation.evaluate(pgn, heads, records, r, _sigma(args, config),
                                           np.random.default_rng(ss), n_samples=args.samples)
        rows.append({"ratio": r} | {k: scores.get(k, float("nan")) for k in RD_COLUMNS[1:]})
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RD_COLUMNS)
        for row in rows:
            w.writerow([repr(float(row[k])) for k in RD_COLUMNS])
    print(json.dumps({"out": str(args.out), "points": len(rows)}))
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infomri", description="Task-adapted compressed-sensing MRI toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", choices=("seg", "cls"), default="seg")
    g.add_argument("--count", type=int, default=200)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--annotators", type=int, default=6)
    g.add_argument("--max-radius", type=int, default=2)
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("stats", help="precompute k-space statistics of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="train a generator and heads from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stats", help="k-space stats file (classification); estimated from the data if omitted")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (JSON value)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint at one ratio")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ratio", type=float, required=True)
    e.add_argument("--samples", type=int, default=32)
    e.add_argument("--kind", choices=PATTERN_KINDS, default="pgn")
    e.add_argument("--sigma", type=float)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("sample-mask", help="draw a sampling pattern")
    m.add_argument("--ratio", type=float, required=True)
    m.add_argument("--mode", choices=sampling.MODES, default="2d")
    m.add_argument("--kind", choices=PATTERN_KINDS, default="pgn")
    m.add_argument("--ckpt", help="checkpoint for --kind pgn; a fresh generator is used if omitted")
    m.add_argument("--height", type=int, default=32)
    m.add_argument("--width", type=int, default=32)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_sample_mask)

    r = sub.add_parser("entropy-report", help="marginal entropy and redundancy of a mask")
    r.add_argument("--stats", required=True)
    r.add_argument("--mask", required=True)
    r.add_argument("--sigma", type=float, required=True)
    r.set_defaults(func=cmd_entropy_report)

    q = sub.add_parser("metrics", help="score saved predictions against a dataset")
    q.add_argument("--pred", required=True)
    q.add_argument("--gt", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_metrics)

    d = sub.add_parser("rd-sweep", help="evaluate a checkpoint across a ratio grid")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--ratios", help="comma-separated ratios; overrides the grid")
    d.add_argument("--points", type=int, default=64)
    d.add_argument("--rmin", type=float)
    d.add_argument("--rmax", type=float)
    d.add_argument("--samples", type=int, default=8)
    d.add_argument("--sigma", type=float)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_rd_sweep)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        training.set_threads()
        return args.func(args)
    except CliError as exc:
        print(f"infomri {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"infomri {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FormatError, training.ConfigError, json.JSONDecodeError, TypeError) as exc:
        print(f"infomri {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"infomri {args.command}: invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (sampling.RejectionExhausted, training.TrainingDiverged, FloatingPointError) as exc:
        print(f"infomri {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
