"""Image-quality, overlap, distribution and calibration metrics."""

import math

import numpy as np
from skimage.metrics import structural_similarity


def psnr(ref, test, peak: float = 1.0) -> float:
    ref, test = np.abs(np.asarray(ref)), np.abs(np.asarray(test))
    if ref.shape != test.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def ssim(ref, test) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5)."""
    ref, test = np.abs(np.asarray(ref, dtype=np.complex128)), np.abs(np.asarray(test, dtype=np.complex128))
    if ref.shape != test.shape:
        raise ValueError("shape mismatch")
    if min(ref.shape) < 11:
        raise ValueError("image smaller than the 11x11 SSIM window")
    data_range = float(ref.max() - ref.min()) or 1.0
    return float(structural_similarity(
        ref, test, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
        K1=0.01, K2=0.03, data_range=data_range,
    ))


def _pair(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    return a, b


def dice(a, b) -> float:
    a, b = _pair(a, b)
    total = a.sum() + b.sum()
    return 1.0 if total == 0 else 2.0 * (a & b).sum() / total


def iou(a, b) -> float:
    a, b = _pair(a, b)
    union = (a | b).sum()
    return 1.0 if union == 0 else (a & b).sum() / union


def _iou_distances(xs, ys) -> np.ndarray:
    X = np.stack([np.asarray(x, dtype=bool).ravel() for x in xs]).astype(np.int64)
    Y = np.stack([np.asarray(y, dtype=bool).ravel() for y in ys]).astype(np.int64)
    inter = X @ Y.T
    union = X.sum(1)[:, None] + Y.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 - np.where(union == 0, 1.0, inter / np.where(union == 0, 1, union))
    return d


def ged(pred_samples, gt_samples) -> float:
    """Squared generalized energy distance with ``d = 1 - IoU``.

    All three expectations average over every pair, diagonal included, so
    ``ged(S, S) == 0`` for any multiset ``S``.
    """
    if len(pred_samples) == 0 or len(gt_samples) == 0:
        raise ValueError("ged needs nonempty sample lists")
    cross = float(_iou_distances(pred_samples, gt_samples).mean())
    within_p = float(_iou_distances(pred_samples, pred_samples).mean())
    within_g = float(_iou_distances(gt_samples, gt_samples).mean())
    return 2.0 * cross - within_p - within_g


def ece(probs, labels, bins: int = 16) -> float:
    """Expected calibration error for binary per-pixel probabilities.

    Bin ``n`` holds ``(n-1)/bins < p <= n/bins``; ``p = 0`` joins the first bin.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    p = np.asarray(probs, dtype=np.float64).ravel()
    t = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError("probs and labels differ in length")
    idx = np.clip(np.ceil(p * bins).astype(int) - 1, 0, bins - 1)
    total = 0.0
    for n in np.unique(idx):
        sel = idx == n
        total += sel.sum() / p.size * abs(t[sel].mean() - p[sel].mean())
    return float(total)


def brier(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64).ravel()
    t = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError("probs and labels differ in length")
    return float(np.mean((p - t) ** 2))


def pearson(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
    return float(np.corrcoef(a, b)[0, 1])


def majority_vote(masks) -> np.ndarray:
    stack = np.stack([np.asarray(m, dtype=bool) for m in masks])
    return stack.mean(0) > 0.5
