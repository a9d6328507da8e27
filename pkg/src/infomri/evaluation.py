"""Dataset-level scoring shared by the CLI and the acceptance runs.

One evaluation mask is drawn per call and used for every record, so numbers
from different models are comparable at a fixed ratio.
"""

import numpy as np

from . import metrics
from .data import ClsRecord, SegRecord
from .kspace import idft2, noisy_kspace
from .inference import classify_batch, eval_pattern, reconstruct_batch, seg_probs_batch
from .models import Heads
from .sampling import PgnParams, SamplingPattern, traditional_pattern

SEG_KEYS = ("psnr", "ssim", "mse", "dice", "ged", "ged_point", "ece", "brier", "uncertainty_pearson")


def recon_scores(images: np.ndarray, mean: np.ndarray, var: np.ndarray) -> dict:
    """Image-quality scores plus the variance/error correlation."""
    sq_err = (mean.real - images) ** 2
    return {
        "psnr": float(np.mean([metrics.psnr(x, m, peak=float(np.abs(x).max()) or 1.0)
                               for x, m in zip(images, mean)])),
        "ssim": float(np.mean([metrics.ssim(x, m) for x, m in zip(images, mean)])),
        "mse": float(np.mean(np.abs(mean - images) ** 2)),
        "uncertainty_pearson": metrics.pearson(var, sq_err),
    }


def seg_scores(records: list[SegRecord], samples: np.ndarray, mean_p: np.ndarray) -> dict:
    """Scores from sampled masks ``(B, K, H, W)`` and mean foreground probabilities ``(B, H, W)``."""
    point = mean_p > 0.5
    votes = np.stack([metrics.majority_vote(r.annotations) for r in records])
    ged = [metrics.ged(list(s), list(r.annotations)) for s, r in zip(samples, records)]
    ged_point = [metrics.ged([p], list(r.annotations)) for p, r in zip(point, records)]
    return {
        "dice": float(np.mean([metrics.dice(p, v) for p, v in zip(point, votes)])),
        "ged": float(np.mean(ged)),
        "ged_point": float(np.mean(ged_point)),
        "ece": metrics.ece(mean_p, votes),
        "brier": metrics.brier(mean_p, votes),
    }


def evaluate_seg(heads: Heads, records: list[SegRecord], pattern: SamplingPattern, sigma: float,
                 rng: np.random.Generator, n_samples: int = 32) -> tuple[dict, dict]:
    """Full segmentation/reconstruction scoring at one fixed pattern.

    Returns ``(scores, predictions)``; predictions hold ``recon``, ``variance``,
    ``probs`` and ``samples`` arrays (the last two only with a task head).
    """
    images = np.stack([r.image for r in records])
    mean, var = reconstruct_batch(heads, images, pattern.mask, sigma, rng) if "dec_x." in heads.specs \
        else (None, None)
    scores, preds = {"ratio_actual": pattern.cardinality / images[0].size}, {}
    if mean is not None:
        scores |= recon_scores(images, mean, var)
        preds |= {"recon": mean, "variance": var}
    if heads.cfg.task == "segmentation":
        probs = seg_probs_batch(heads, images, pattern.mask, sigma, rng, n_samples)
        samples = rng.random(probs.shape) < probs
        scores |= seg_scores(records, samples, probs.mean(1))
        preds |= {"probs": probs.mean(1), "samples": samples}
    return scores, preds


def cls_scores(records: list[ClsRecord], probs: np.ndarray) -> dict:
    labels = np.asarray([r.label for r in records])
    onehot = np.eye(probs.shape[1])[labels]
    return {
        "accuracy": float(np.mean(probs.argmax(1) == labels)),
        "nll": float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300)))),
        "brier": float(np.mean(np.sum((probs - onehot) ** 2, axis=1))),
    }


def evaluate_cls(heads: Heads, records: list[ClsRecord], pattern: SamplingPattern, sigma: float,
                 rng: np.random.Generator) -> tuple[dict, dict]:
    images = np.stack([r.image for r in records])
    probs = classify_batch(heads, images, pattern.mask, sigma, rng)
    scores = cls_scores(records, probs) | {"ratio_actual": pattern.cardinality / images[0].size}
    return scores, {"probs": probs}


def evaluate(pgn: PgnParams, heads: Heads, records, r: float, sigma: float, rng: np.random.Generator,
             n_samples: int = 32, pattern: SamplingPattern | None = None, kind: str = "pgn"):
    """Draw an evaluation pattern (unless given) and score ``records``."""
    if pattern is None:
        if kind == "pgn":
            pattern = eval_pattern(pgn, r, rng)
        else:
            pattern = traditional_pattern(kind, r, pgn.dims, pgn.mode, rng)
    if records and isinstance(records[0], ClsRecord):
        scores, preds = evaluate_cls(heads, records, pattern, sigma, rng)
    else:
        scores, preds = evaluate_seg(heads, records, pattern, sigma, rng, n_samples)
    return scores, preds, pattern


def _zf_features(images: np.ndarray, mask: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    k = noisy_kspace(images, sigma, rng) * mask
    zf = idft2(k)
    return np.concatenate([zf.real.reshape(len(images), -1), zf.imag.reshape(len(images), -1)], axis=1)


def linear_attack_psnr(train_images: np.ndarray, test_images: np.ndarray, mask: np.ndarray, sigma: float,
                       rng: np.random.Generator, ridge: float = 1e-3) -> dict:
    """PSNR of the zero-fill and of a ridge-regression reconstruction fitted on it.

    The linear map (with intercept) is fitted on ``train_images`` measured with
    ``mask`` and scored on ``test_images``. It stands for an observer who
    knows the image distribution and tries to recover images from the
    measurements.
    """
    mask = np.asarray(mask, dtype=bool)
    a = _zf_features(train_images, mask, sigma, rng)
    b = _zf_features(test_images, mask, sigma, rng)
    y = train_images.reshape(len(train_images), -1)
    a_mean, y_mean = a.mean(0), y.mean(0)
    a0 = a - a_mean
    gram = a0.T @ a0 + ridge * len(a) * np.eye(a.shape[1])
    w = np.linalg.solve(gram, a0.T @ (y - y_mean))
    pred = ((b - a_mean) @ w + y_mean).reshape(test_images.shape)
    zf = b[:, :mask.size].reshape(test_images.shape)

    def score(est):
        return float(np.mean([metrics.psnr(x, e, peak=float(np.abs(x).max()) or 1.0)
                              for x, e in zip(test_images, est)]))

    return {"zf_psnr": score(zf), "linear_psnr": score(pred)}
