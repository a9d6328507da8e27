"""Posterior sampling from trained heads, plus batched evaluation helpers."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .kspace import Measurement, noisy_kspace, zero_fill, zero_fill_torch
from .models import Heads
from .nets import DTYPE
from .sampling import PgnParams, RatioConstraint, SamplingPattern, rejection_sample

DEFAULT_SAMPLES = 32


@dataclass
class SegInference:
    recon_mean: np.ndarray       # (H, W) complex
    recon_var: np.ndarray        # (H, W) variance of the real channel
    samples: list[np.ndarray]    # n_samples label maps; bool when there are two classes
    probs: np.ndarray            # (C, H, W) mean class probabilities over the draws

    @property
    def point_mask(self) -> np.ndarray:
        """Per-pixel argmax of the sample-mean probabilities."""
        lab = self.probs.argmax(0)
        return lab.astype(bool) if self.probs.shape[0] == 2 else lab


@dataclass
class ClsInference:
    labels: list[int]
    probs: np.ndarray  # (C,)


def _zf_tensor(measurement: Measurement, pattern: SamplingPattern | None) -> torch.Tensor:
    if pattern is not None:
        if tuple(pattern.dims) != tuple(measurement.pattern.dims):
            raise ValueError(f"pattern dims {pattern.dims} differ from measurement dims {measurement.pattern.dims}")
        if not np.array_equal(pattern.mask, measurement.pattern.mask):
            raise ValueError("pattern does not match the measurement's sampled positions")
    zf = zero_fill(measurement)
    return torch.as_tensor(np.stack([zf.real, zf.imag])[None], dtype=DTYPE)


def _mask_of(measurement: Measurement) -> torch.Tensor:
    return torch.as_tensor(measurement.pattern.mask, dtype=DTYPE)


def _check_dims(heads: Heads, dims) -> None:
    if tuple(dims) != tuple(heads.cfg.dims):
        raise ValueError(f"measurement dims {tuple(dims)} differ from model dims {heads.cfg.dims}")


def _draw_labels(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per pixel from ``(C, H, W)`` probabilities."""
    cum = np.cumsum(probs, axis=0)
    u = rng.random(probs.shape[1:])
    return np.minimum((u[None] > cum).sum(0), probs.shape[0] - 1)


def infer_seg(heads: Heads, measurement: Measurement, pattern: SamplingPattern | None = None,
              n_samples: int = DEFAULT_SAMPLES, rng: np.random.Generator | None = None) -> SegInference:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if heads.cfg.task != "segmentation":
        raise ValueError("heads were not built for segmentation")
    _check_dims(heads, measurement.pattern.dims)
    rng = np.random.default_rng() if rng is None else rng
    zf = _zf_tensor(measurement, pattern)
    with torch.no_grad():
        feat, g = heads.encode(zf)
        mean, logvar = heads.recon(feat, zf, g, _mask_of(measurement))
        mu, lv = heads.latent(g)
        eps = torch.as_tensor(rng.standard_normal((n_samples, heads.cfg.latent)))
        z = mu + torch.exp(0.5 * lv) * eps
        probs = F.softmax(heads.task_logits(feat.expand(n_samples, -1, -1, -1), z), dim=1).numpy()
    samples = [_draw_labels(p, rng) for p in probs]
    if heads.cfg.classes == 2:
        samples = [s.astype(bool) for s in samples]
    m = mean[0].numpy()
    return SegInference(m[0] + 1j * m[1], np.exp(logvar[0, 0].numpy()), samples, probs.mean(0))


def infer_cls(heads: Heads, measurement: Measurement, pattern: SamplingPattern | None = None,
              n_samples: int = DEFAULT_SAMPLES, rng: np.random.Generator | None = None) -> ClsInference:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _check_dims(heads, measurement.pattern.dims)
    rng = np.random.default_rng() if rng is None else rng
    with torch.no_grad():
        _, g = heads.encode(_zf_tensor(measurement, pattern))
        probs = F.softmax(heads.class_logits(g), dim=1)[0].numpy()
    return ClsInference(sample_labels(probs, n_samples, rng), probs)


def sample_labels(probs, n_samples: int, rng: np.random.Generator) -> list[int]:
    probs = np.asarray(probs, dtype=np.float64)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return [int(x) for x in rng.choice(probs.size, size=n_samples, p=probs / probs.sum())]


def uncertainty_map(heads: Heads, measurement: Measurement, pattern: SamplingPattern | None = None) -> np.ndarray:
    """Predicted per-pixel variance ``exp(logvar)`` of the real channel."""
    _check_dims(heads, measurement.pattern.dims)
    zf = _zf_tensor(measurement, pattern)
    with torch.no_grad():
        feat, g = heads.encode(zf)
        _, logvar = heads.recon(feat, zf, g, _mask_of(measurement))
    return np.exp(logvar[0, 0].numpy())


# -- batched helpers used by evaluation and the acceptance runs -------------

def eval_pattern(pgn: PgnParams, r: float, rng: np.random.Generator, epsilon: float | None = None,
                 max_tries: int = 1000) -> SamplingPattern:
    c = RatioConstraint.three_sigma(r, pgn.n) if epsilon is None else RatioConstraint(r, epsilon, pgn.n)
    return rejection_sample(pgn, c, max_tries, rng)


def _batched_zf(images, mask, sigma, rng):
    k = noisy_kspace(np.asarray(images, dtype=np.float64), sigma, rng)
    return zero_fill_torch(torch.as_tensor(k), torch.as_tensor(np.asarray(mask), dtype=DTYPE))


def reconstruct_batch(heads: Heads, images, mask, sigma: float, rng: np.random.Generator,
                      chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction mean (complex) and real-channel variance for a batch."""
    means, vars_ = [], []
    with torch.no_grad():
        for i in range(0, len(images), chunk):
            zf = _batched_zf(images[i:i + chunk], mask, sigma, rng)
            feat, g = heads.encode(zf)
            mean, logvar = heads.recon(feat, zf, g, torch.as_tensor(np.asarray(mask), dtype=DTYPE))
            means.append((mean[:, 0] + 1j * mean[:, 1]).numpy())
            vars_.append(torch.exp(logvar[:, 0]).numpy())
    return np.concatenate(means), np.concatenate(vars_)


def seg_probs_batch(heads: Heads, images, mask, sigma: float, rng: np.random.Generator,
                    n_samples: int = DEFAULT_SAMPLES) -> np.ndarray:
    """Per-draw class-1 probabilities ``(B, n_samples, H, W)`` under the prior latent."""
    out = []
    with torch.no_grad():
        zf = _batched_zf(images, mask, sigma, rng)
        feat, g = heads.encode(zf)
        mu, lv = heads.latent(g)
        for b in range(len(images)):
            eps = torch.as_tensor(rng.standard_normal((n_samples, heads.cfg.latent)))
            z = mu[b] + torch.exp(0.5 * lv[b]) * eps
            logits = heads.task_logits(feat[b:b + 1].expand(n_samples, -1, -1, -1), z)
            out.append(F.softmax(logits, dim=1)[:, 1].numpy())
    return np.stack(out)


def classify_batch(heads: Heads, images, mask, sigma: float, rng: np.random.Generator,
                   chunk: int = 256) -> np.ndarray:
    """Class probabilities ``(B, C)``."""
    out = []
    with torch.no_grad():
        for i in range(0, len(images), chunk):
            _, g = heads.encode(_batched_zf(images[i:i + chunk], mask, sigma, rng))
            out.append(F.softmax(heads.class_logits(g), dim=1).numpy())
    return np.concatenate(out)
