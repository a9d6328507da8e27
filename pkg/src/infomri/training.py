"""Training loops for the segmentation and classification paths.

Each step draws a ratio ``r ~ U[a, b]``, one mask for the whole batch by
rejection sampling from the pattern generator, and takes one Adam step on the
generator and the heads jointly. All randomness comes from one numpy
Generator seeded by ``config.seed``.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from . import nets
from .data import ClsRecord, SegRecord
from .entropy import KSpaceStats, estimate_kspace_stats
from .kspace import noisy_kspace
from .models import HeadConfig, Heads
from .objectives import DEFAULT_WEIGHTS, cls_terms, seg_terms, straight_through, units_to_mask
from .sampling import (KINDS, MODES, PgnParams, RatioConstraint, SamplingPattern, _KIND_ALIASES, draw_units,
                       init_pgn, load_pattern, save_pattern, traditional_pattern)

LOG_COLUMNS = ("step", "r", "tries", "task_nll", "kl", "recon_nll", "entropy_hat", "total")


class TrainingDiverged(FloatingPointError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    task: str = "segmentation"
    a: float = 0.05
    b: float = 0.3
    epsilon: float | None = None        # None: three standard deviations of the count
    sigma: float = 0.01
    beta: float = 0.0
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    steps: int = 2000
    batch: int = 8
    lr: float = 1e-4
    lr_pgn: float = 1e-2
    weight_decay: float = 1e-4
    seed: int = 0
    mode: str = "2d"
    pattern: str = "pgn"                # or a traditional kind
    redraw: bool = True                 # traditional kinds only; False draws one mask and keeps it
    hidden: int = 64
    channels: int = 16
    feature: int = 64
    latent: int = 8
    max_tries: int = 1000

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        if self.task not in ("segmentation", "classification", "reconstruction"):
            raise ConfigError(f"unknown task {self.task!r}")
        if not 0 <= self.a <= self.b <= 1:
            raise ConfigError("need 0 <= a <= b <= 1")
        if self.steps < 0 or self.batch < 1:
            raise ConfigError("steps must be >= 0 and batch >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.pattern != "pgn" and _KIND_ALIASES.get(self.pattern, self.pattern) not in KINDS:
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if len(self.weights) != 3 or min(self.weights) < 0:
            raise ConfigError("weights must be three nonnegative numbers")
        if self.sigma < 0 or self.lr <= 0 or self.lr_pgn <= 0:
            raise ConfigError("sigma must be >= 0 and learning rates > 0")
        if not self.redraw and (self.pattern == "pgn" or self.a != self.b):
            raise ConfigError("redraw=false needs a traditional pattern and a == b")
        if self.task == "classification" and self.beta < 0:
            raise ConfigError("classification needs beta >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    def constraint(self, r: float, n: int) -> RatioConstraint:
        if self.epsilon is None:
            return RatioConstraint.three_sigma(r, n)
        return RatioConstraint(r, self.epsilon, n)


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: nets.ParamStore, grads: dict, state: AdamState, lr: float,
              names=None, weight_decay: float = 0.0) -> AdamState:
    """Bias-corrected Adam update in place; ``weight_decay`` is added to the gradient."""
    names = list(grads) if names is None else list(names)
    with torch.no_grad():
        for n in names:
            p = store[n]
            g = torch.as_tensor(np.asarray(grads[n], dtype=np.float64)) if not torch.is_tensor(grads[n]) else grads[n]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {n!r}")
            if weight_decay:
                g = g + weight_decay * p
            t = state.t.get(n, 0) + 1
            m = state.beta1 * state.m.get(n, torch.zeros_like(p)) + (1 - state.beta1) * g
            v = state.beta2 * state.v.get(n, torch.zeros_like(p)) + (1 - state.beta2) * g * g
            state.t[n], state.m[n], state.v[n] = t, m, v
            m_hat = m / (1 - state.beta1**t)
            v_hat = v / (1 - state.beta2**t)
            p -= lr * m_hat / (torch.sqrt(v_hat) + state.eps)
    store.mark_updated()
    return state


# -- loops ------------------------------------------------------------------

class TrainResult(NamedTuple):
    pgn: PgnParams
    heads: Heads
    log: list
    pattern: SamplingPattern | None = None    # the mask a redraw=false run trained on


def head_config(config: TrainConfig, dims, classes: int) -> HeadConfig:
    return HeadConfig(dims=tuple(dims), task=config.task, channels=config.channels,
                      feature=config.feature, latent=config.latent, classes=classes)


def _setup(config: TrainConfig, dims, classes):
    rng = np.random.default_rng(config.seed)
    pgn = init_pgn(dims, config.mode, config.hidden, rng)
    heads = Heads.init(head_config(config, dims, classes), rng)
    return rng, pgn, heads


def _fixed_pattern(config: TrainConfig, pgn: PgnParams, rng) -> SamplingPattern | None:
    if config.redraw:
        return None
    return traditional_pattern(config.pattern, config.a, pgn.dims, config.mode, rng)


def _draw_mask(config: TrainConfig, pgn: PgnParams, r: float, rng, fixed: SamplingPattern | None = None):
    """Return the relaxed mask tensor, the unit count and the number of tries."""
    if fixed is not None:
        return torch.as_tensor(fixed.mask, dtype=nets.DTYPE), 1
    if config.pattern != "pgn":
        p = traditional_pattern(config.pattern, r, pgn.dims, config.mode, rng)
        return torch.as_tensor(p.mask, dtype=nets.DTYPE), 1
    mu = pgn.probs(r)
    c = config.constraint(r, pgn.n)
    bits, tries = draw_units(mu.detach().numpy(), c, config.max_tries, rng)
    return units_to_mask(straight_through(bits, mu), pgn.dims, config.mode), tries


def _step(config, pgn, heads, terms, states, row):
    total = terms["total"]
    if not torch.isfinite(total):
        raise TrainingDiverged(f"non-finite loss at step {row['step']}: " +
                               ", ".join(f"{k}={float(v.detach())}" for k, v in terms.items()))
    pgn.store.zero_grad()
    heads.store.zero_grad()
    total.backward()
    if config.pattern == "pgn":
        adam_step(pgn.store, pgn.store.grads, states[0], config.lr_pgn)
    adam_step(heads.store, heads.store.grads, states[1], config.lr, weight_decay=config.weight_decay)
    row.update({k: float(v.detach()) for k, v in terms.items()})
    return row


def train_seg(config: TrainConfig, dataset: list[SegRecord]) -> TrainResult:
    """Joint training of the generator with the segmentation and reconstruction heads.

    ``config.task == "reconstruction"`` trains only the reconstruction head
    (the task weights are ignored).
    """
    if not dataset or not isinstance(dataset[0], SegRecord):
        raise ConfigError("segmentation training needs a nonempty segmentation dataset")
    dims = dataset[0].image.shape
    rng, pgn, heads = _setup(config, dims, 2)
    fixed = _fixed_pattern(config, pgn, rng)
    weights = config.weights if config.task == "segmentation" else (0.0, 0.0, config.weights[2] or 1.0)
    images = np.stack([r.image for r in dataset])
    ann = np.stack([r.annotations for r in dataset])
    states, log = (AdamState(), AdamState()), []
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), config.batch)
        who = rng.integers(0, ann.shape[1], config.batch)
        targets = ann[idx, who].astype(np.int64)
        r = float(rng.uniform(config.a, config.b))
        mask, tries = _draw_mask(config, pgn, r, rng, fixed)
        k = noisy_kspace(images[idx], config.sigma, rng)
        eps = rng.standard_normal((config.batch, config.latent))
        terms = seg_terms(heads, images[idx], targets, mask, k, eps, weights)
        log.append(_step(config, pgn, heads, terms, states,
                         {"step": step, "r": r, "tries": tries, "entropy_hat": 0.0}))
    return TrainResult(pgn, heads, log, fixed)


def train_cls(config: TrainConfig, dataset: list[ClsRecord], stats: KSpaceStats | None = None) -> TrainResult:
    """Joint training of the generator with the classifier and the entropy penalty."""
    if not dataset or not isinstance(dataset[0], ClsRecord):
        raise ConfigError("classification training needs a nonempty classification dataset")
    images = np.stack([r.image for r in dataset])
    labels = np.asarray([r.label for r in dataset])
    stats = estimate_kspace_stats(images) if stats is None else stats
    rng, pgn, heads = _setup(config, images.shape[1:], int(labels.max()) + 1)
    fixed = _fixed_pattern(config, pgn, rng)
    states, log = (AdamState(), AdamState()), []
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), config.batch)
        r = float(rng.uniform(config.a, config.b))
        mask, tries = _draw_mask(config, pgn, r, rng, fixed)
        k = noisy_kspace(images[idx], config.sigma, rng)
        # entropy needs sigma > 0; a noiseless run uses the smallest positive noise
        terms = cls_terms(heads, images[idx], labels[idx], mask, k, stats,
                          max(config.sigma, 1e-6), config.beta)
        log.append(_step(config, pgn, heads, terms, states,
                         {"step": step, "r": r, "tries": tries, "kl": 0.0, "recon_nll": 0.0}))
    return TrainResult(pgn, heads, log, fixed)


def train(config: TrainConfig, dataset, stats: KSpaceStats | None = None) -> TrainResult:
    if config.task == "classification":
        return train_cls(config, dataset, stats)
    return train_seg(config, dataset)


# -- persistence ------------------------------------------------------------

CKPT_NAME = "checkpoint.bin"
LOG_NAME = "log.csv"
PATTERN_NAME = "pattern.mask"


def save_run(out_dir, result: TrainResult, config: TrainConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = nets.ParamStore(result.pgn.store.numpy())
    store.update(result.heads.store)
    meta = {
        "train_config": config.to_dict(),
        "head_config": result.heads.cfg.to_dict(),
        "pgn": {"dims": list(result.pgn.dims), "mode": result.pgn.mode, "hidden": result.pgn.hidden},
        "specs": {p: s.to_dict() for p, s in result.heads.specs.items()} | {"pgn.mlp.": result.pgn.spec.to_dict()},
    }
    nets.save_checkpoint(out / CKPT_NAME, store, meta)
    write_log(out / LOG_NAME, result.log)
    if result.pattern is not None:
        save_pattern(out / PATTERN_NAME, result.pattern)
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)
    return out


def load_run(path) -> tuple[PgnParams, Heads, TrainConfig]:
    path = Path(path)
    if path.is_dir():
        path = path / CKPT_NAME
    store, meta = nets.load_checkpoint(path)
    config = TrainConfig.from_dict(meta["train_config"])
    p = meta["pgn"]
    pgn = PgnParams(tuple(p["dims"]), p["mode"], int(p["hidden"]), nets.ParamStore(store.subset("pgn.")))
    hc = meta["head_config"]
    hc["dims"] = tuple(hc["dims"])
    heads_store = nets.ParamStore({n: t for n, t in store.params.items() if not n.startswith("pgn.")})
    return pgn, Heads(HeadConfig(**hc), heads_store), config


def load_fixed_pattern(path) -> SamplingPattern | None:
    """The training mask of a redraw=false run, or None for other runs."""
    path = Path(path)
    f = (path if path.is_dir() else path.parent) / PATTERN_NAME
    return load_pattern(f) if f.exists() else None


def write_log(path, log: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in log:
            w.writerow({k: (repr(float(row.get(k, 0.0))) if k not in ("step", "tries") else int(row[k]))
                        for k in LOG_COLUMNS})


def epoch_means(log: list[dict], key: str = "total", window: int = 100) -> list[float]:
    vals = [row[key] for row in log]
    return [float(np.mean(vals[i:i + window])) for i in range(0, len(vals), window)]


def set_threads() -> int:
    """Apply ``INFOMRI_THREADS`` (default 1) to torch's intra-op pool."""
    raw = os.environ.get("INFOMRI_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"INFOMRI_THREADS must be an integer, got {raw!r}") from None
    n = max(1, n)
    torch.set_num_threads(n)
    return n


__all__ = [
    "AdamState", "ConfigError", "LOG_COLUMNS", "TrainConfig", "TrainResult", "TrainingDiverged",
    "adam_step", "epoch_means", "load_run", "save_run", "set_threads", "train", "train_cls", "train_seg",
]
