"""Loss terms and their assembly for the two training paths.

The scalar kernels accept numpy or torch input. With any torch input they
return a differentiable torch scalar, otherwise a float.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .entropy import KSpaceStats, marginal_entropy_torch
from .kspace import noisy_kspace, zero_fill_torch
from .models import Heads
from .nets import DTYPE
from .sampling import SamplingPattern, bernoulli_units

DEFAULT_WEIGHTS = (1.0, 50.0, 1.0)


def _tensor(x) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    arr = np.asarray(x)
    return torch.as_tensor(arr if np.iscomplexobj(arr) else arr.astype(np.float64))


def _result(value: torch.Tensor, *inputs):
    return value if any(torch.is_tensor(x) for x in inputs) else float(value)


def _split_complex(x: torch.Tensor) -> torch.Tensor:
    return torch.stack([x.real, x.imag]) if x.is_complex() else x


def gaussian_nll(x, mean, logvar):
    """``0.5 * sum((x - mean)^2 exp(-logvar) + logvar)``; complex input is
    scored on its real and imaginary parts, sharing a real ``logvar`` of the
    image shape if one is given."""
    xt, mt, lt = _tensor(x), _tensor(mean), _tensor(logvar)
    was_complex = xt.is_complex() or mt.is_complex()
    if was_complex:
        xt = _split_complex(xt.to(torch.complex128))
        mt = _split_complex(mt.to(torch.complex128))
        if lt.shape == xt.shape[1:]:
            lt = torch.stack([lt, lt])
    if xt.shape != mt.shape or lt.shape != xt.shape:
        raise ValueError(f"shape mismatch: x {tuple(xt.shape)}, mean {tuple(mt.shape)}, logvar {tuple(lt.shape)}")
    for name, t in (("x", xt), ("mean", mt), ("logvar", lt)):
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite {name}")
    val = 0.5 * ((xt - mt) ** 2 * torch.exp(-lt) + lt).sum()
    return _result(val, x, mean, logvar)


def categorical_nll(t, logits, axis: int = -1):
    """Summed ``-log softmax(logits)[t]`` with classes along ``axis``.

    ``t`` holds integer labels (the logits shape without ``axis``) or a
    one-hot array of the logits shape.
    """
    lg = _tensor(logits)
    C = lg.shape[axis]
    if C < 2:
        raise ValueError("need at least two classes")
    logp = F.log_softmax(lg, dim=axis)
    tt = _tensor(t)
    if tt.shape == lg.shape:
        val = -(tt.to(lg.dtype) * logp).sum()
    else:
        tt = tt.to(torch.int64)
        if (tt < 0).any() or (tt >= C).any():
            raise ValueError(f"label out of range [0, {C})")
        val = -torch.gather(logp, axis % lg.ndim, tt.unsqueeze(axis)).sum()
    return _result(val, t, logits)


def kl_diag_gaussians(mu_q, logv_q, mu_p, logv_p):
    """``KL(N(mu_q, e^logv_q) || N(mu_p, e^logv_p))`` summed over dims."""
    mq, lq, mp, lp = map(_tensor, (mu_q, logv_q, mu_p, logv_p))
    if not (mq.shape == lq.shape == mp.shape == lp.shape):
        raise ValueError("all parameters must share one shape")
    val = 0.5 * (torch.exp(lq - lp) + (mp - mq) ** 2 * torch.exp(-lp) - 1 + lp - lq).sum()
    return _result(val, mu_q, logv_q, mu_p, logv_p)


# -- segmentation path ------------------------------------------------------

@dataclass
class SegLossTerms:
    task_nll: float
    kl: float
    recon_nll: float
    w1: float = DEFAULT_WEIGHTS[0]
    w2: float = DEFAULT_WEIGHTS[1]
    w3: float = DEFAULT_WEIGHTS[2]

    @property
    def total(self) -> float:
        return self.w1 * self.task_nll + self.w2 * self.kl + self.w3 * self.recon_nll


@dataclass
class SegBatch:
    images: np.ndarray   # (B, H, W) real
    targets: np.ndarray  # (B, H, W) integer class map


def seg_terms(heads: Heads, images, targets, mask: torch.Tensor, kspace, eps_z,
              weights=DEFAULT_WEIGHTS) -> dict[str, torch.Tensor]:
    """Batch-mean per-image terms as differentiable tensors.

    ``kspace`` is the noisy full grid and ``eps_z`` the standard-normal latent
    draw, so the result is a deterministic function of parameters and mask.
    Terms with zero weight are skipped and reported as zeros.
    """
    w1, w2, w3 = (float(w) for w in weights)
    B = len(images)
    zf = zero_fill_torch(_tensor(kspace), mask)
    feat, g = heads.encode(zf)
    zero = torch.zeros((), dtype=DTYPE)
    task = kl = recon = zero
    if (w1 or w2) and heads.cfg.task == "segmentation":
        tgt = torch.as_tensor(np.asarray(targets), dtype=torch.int64)
        onehot = F.one_hot(tgt, heads.cfg.classes).permute(0, 3, 1, 2).to(DTYPE)
        mu_q, lv_q = heads.latent(heads.encode_teacher(zf, onehot))
        mu_p, lv_p = heads.latent(g)
        z = mu_q + torch.exp(0.5 * lv_q) * _tensor(eps_z)
        task = categorical_nll(tgt, heads.task_logits(feat, z), axis=1) / B
        kl = kl_diag_gaussians(mu_q, lv_q, mu_p, lv_p) / B
    if w3:
        mean, logvar = heads.recon(feat, zf, g, mask)
        x = torch.as_tensor(np.asarray(images, dtype=np.float64))
        target = torch.stack([x, torch.zeros_like(x)], dim=1)
        recon = gaussian_nll(target, mean, logvar) / B
    total = w1 * task + w2 * kl + w3 * recon
    return {"task_nll": task, "kl": kl, "recon_nll": recon, "total": total}


def _mask_tensor(pattern) -> torch.Tensor:
    if isinstance(pattern, SamplingPattern):
        return torch.as_tensor(pattern.mask, dtype=DTYPE)
    return _tensor(pattern).to(DTYPE)


def seg_elbo_loss(batch: SegBatch, heads: Heads, pattern, weights=DEFAULT_WEIGHTS,
                  rng: np.random.Generator | None = None, sigma: float = 0.0):
    """One-sample weighted ELBO loss and its gradients.

    Returns ``(SegLossTerms, grads)`` where ``grads`` maps head parameter names
    to arrays and ``"mask"`` to the gradient with respect to the (relaxed)
    mask values.
    """
    rng = np.random.default_rng() if rng is None else rng
    images = np.asarray(batch.images, dtype=np.float64)
    k = noisy_kspace(images, sigma, rng)
    eps = rng.standard_normal((len(images), heads.cfg.latent))
    mask = _mask_tensor(pattern).detach().clone().requires_grad_(True)
    heads.store.zero_grad()
    terms = seg_terms(heads, images, batch.targets, mask, k, eps, weights)
    terms["total"].backward()
    grads = {n: g.numpy() for n, g in heads.store.grads.items()}
    grads["mask"] = mask.grad.numpy().copy()
    heads.store.zero_grad()
    out = SegLossTerms(*(float(terms[k].detach()) for k in ("task_nll", "kl", "recon_nll")), *map(float, weights))
    return out, grads


# -- classification path ----------------------------------------------------

@dataclass
class ClsLossTerms:
    task_nll: float
    entropy_hat: float
    beta: float

    @property
    def total(self) -> float:
        return self.task_nll + self.beta * self.entropy_hat


@dataclass
class ClsBatch:
    images: np.ndarray  # (B, H, W)
    labels: np.ndarray  # (B,)


def straight_through(m, mu: torch.Tensor) -> torch.Tensor:
    """Binary ``m`` in the forward pass, identity gradient to ``mu``."""
    m = torch.as_tensor(np.asarray(m, dtype=np.float64)) if not torch.is_tensor(m) else m.to(DTYPE)
    return m + mu - mu.detach()


def units_to_mask(units: torch.Tensor, dims, mode: str = "2d") -> torch.Tensor:
    if mode == "1d":
        return units[None, :].expand(*dims)
    return units.reshape(dims)


def cls_terms(heads: Heads, images, labels, mask: torch.Tensor, kspace,
              stats: KSpaceStats | None, sigma: float, beta: float) -> dict[str, torch.Tensor]:
    """Batch-mean classification NLL plus ``beta`` times the relaxed entropy."""
    zf = zero_fill_torch(_tensor(kspace), mask)
    _, g = heads.encode(zf)
    task = categorical_nll(np.asarray(labels), heads.class_logits(g)) / len(images)
    ent = marginal_entropy_torch(mask, stats, sigma) if stats is not None else torch.zeros((), dtype=DTYPE)
    return {"task_nll": task, "entropy_hat": ent, "total": task + beta * ent}


def cls_entropy_loss(batch: ClsBatch, heads: Heads, mu, stats: KSpaceStats, sigma: float, beta: float,
                     rng: np.random.Generator | None = None, m=None, mode: str = "2d"):
    """Entropy-regularized classification loss on one Bernoulli mask.

    ``mu`` holds the per-unit probabilities (positions or columns). Returns
    ``(ClsLossTerms, grads)`` with head gradients and ``grads["mu"]``.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0; negative weights belong to the segmentation path")
    rng = np.random.default_rng() if rng is None else rng
    mu_t = _tensor(mu).to(DTYPE).detach().clone().requires_grad_(True)
    if m is None:
        m = bernoulli_units(mu_t.detach().numpy(), rng)
    images = np.asarray(batch.images, dtype=np.float64)
    k = noisy_kspace(images, sigma, rng)
    mask = units_to_mask(straight_through(m, mu_t), stats.dims, mode)
    heads.store.zero_grad()
    terms = cls_terms(heads, images, batch.labels, mask, k, stats, sigma, beta)
    terms["total"].backward()
    grads = {n: g.numpy() for n, g in heads.store.grads.items()}
    grads["mu"] = mu_t.grad.numpy().copy()
    heads.store.zero_grad()
    return ClsLossTerms(float(terms["task_nll"].detach()), float(terms["entropy_hat"].detach()), float(beta)), grads


def mask_gradient(loss_grad_at_mask, mu, m) -> np.ndarray:
    """Straight-through rule: the gradient at ``m`` is passed to ``mu`` as is.

    Chaining on to the generator parameters goes through
    :func:`infomri.sampling.rescale_jacobian` and the MLP (autograd does this
    in the training loops).
    """
    g = np.asarray(loss_grad_at_mask, dtype=np.float64)
    mu, m = np.asarray(mu), np.asarray(m)
    if not (g.shape == mu.shape == m.shape):
        raise ValueError("gradient, mu and m must share one shape")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("m must be binary")
    return g.copy()
