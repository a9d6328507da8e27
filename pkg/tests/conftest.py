"""Session-scoped acceptance training runs and the criterion report.

Each run is trained once per session, on first use. Unit tests that only
need small models build their own.
"""

import sys
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from infomri.data import gen_cls_dataset, gen_seg_dataset  # noqa: E402
from infomri.entropy import estimate_kspace_stats  # noqa: E402
from infomri.training import TrainConfig, set_threads, train_cls, train_seg  # noqa: E402

_REPORT: list[str] = []

SEG_TRAIN, SEG_TEST = 200, 60
CLS_TRAIN, CLS_TEST, CLASSES = 600, 300, 6

# ratios for the fixed-ratio reconstruction models; the amortized one spans [0.05, 0.3]
RECON_FIXED = (0.1, 0.2, 0.3)
RECON_BASE = dict(task="reconstruction", lr=1e-3, steps=2000, seed=0)
SEG_CONFIG = dict(task="segmentation", a=1 / 32, b=1 / 8, lr=1e-3, steps=2000, seed=0)
# classification runs at 32x: r = 1/32
CLS_BASE = dict(task="classification", a=1 / 32, b=1 / 32, lr=1e-3, steps=2000, seed=0)
# picked on a validation set (seed 7), see the design notes
CLS_BETA = 4e-7
UNIFORM_SEEDS = range(5)


def record(criterion: int, ok: bool, detail: str) -> None:
    _REPORT.append(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT):
            terminalreporter.write_line(line)


def _timed(fn, *args):
    t = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t


@pytest.fixture(scope="session", autouse=True)
def _threads():
    set_threads()


@pytest.fixture(scope="session")
def seg_data():
    return gen_seg_dataset(SEG_TRAIN, seed=1), gen_seg_dataset(SEG_TEST, seed=99)


@pytest.fixture(scope="session")
def cls_data():
    train = gen_cls_dataset(CLS_TRAIN, classes=CLASSES, seed=1)
    stats = estimate_kspace_stats(np.stack([r.image for r in train]))
    return train, gen_cls_dataset(CLS_TEST, classes=CLASSES, seed=99), stats


@pytest.fixture(scope="session")
def recon_runs(seg_data):
    """Amortized model plus one fixed-ratio model per entry of RECON_FIXED."""
    train, _ = seg_data
    runs, seconds = {}, 0.0
    for name, (a, b) in [("amortized", (0.05, 0.3))] + [(f"fixed{r}", (r, r)) for r in RECON_FIXED]:
        cfg = TrainConfig(a=a, b=b, **RECON_BASE)
        runs[name], dt = _timed(train_seg, cfg, train)
        seconds += dt
    return SimpleNamespace(runs=runs, seconds=seconds)


@pytest.fixture(scope="session")
def seg_run(seg_data):
    train, test = seg_data
    cfg = TrainConfig(**SEG_CONFIG)
    result, seconds = _timed(train_seg, cfg, train)
    return SimpleNamespace(result=result, config=cfg, test=test, seconds=seconds)


@pytest.fixture(scope="session")
def cls_runs(cls_data):
    """Learned pattern at beta 0 and at CLS_BETA, and fixed uniform-random baselines."""
    train, _, stats = cls_data
    runs = {
        "learned": train_cls(TrainConfig(**CLS_BASE), train, stats),
        # one fixed uniform-random mask per training seed; whether the heads leave the
        # chance plateau within the budget depends on the mask, so one draw is not enough
        "uniform": [train_cls(TrainConfig(pattern="uniform", redraw=False, **(CLS_BASE | {"seed": s})), train, stats)
                    for s in UNIFORM_SEEDS],
        "beta": train_cls(TrainConfig(beta=CLS_BETA, **CLS_BASE), train, stats),
    }
    return runs
