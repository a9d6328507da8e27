"""Analytic marginal entropy of masked noisy k-space measurements.

Each k-space coefficient is modelled as independent Gaussians on its real and
imaginary parts, with dataset mean/variance precomputed per position. A
sampled position whose point reflection is also sampled (set I) shares one
bivariate Gaussian with its partner; the pair entropy is split evenly between
the two positions. Positions without a sampled partner, including the
self-conjugate ones, form set J and contribute a univariate entropy per part.

All values are in nats.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch

from .kspace import conjugate_flat_indices, self_conjugate
from .sampling import SamplingPattern, redundancy_sets
from .serialization import FormatError, f64_bytes, f64_from, read_container, write_container

VAR_FLOOR = 1e-12
_LOG2PI = math.log(2 * math.pi)


@dataclass
class KSpaceStats:
    dims: tuple[int, int]
    mu_r: np.ndarray
    mu_c: np.ndarray
    v_r: np.ndarray
    v_c: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        for name in ("mu_r", "mu_c", "v_r", "v_c"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(self.dims)
            setattr(self, name, arr)
        if (self.v_r < 0).any() or (self.v_c < 0).any():
            raise ValueError("variances must be nonnegative")


def estimate_kspace_stats(dataset) -> KSpaceStats:
    """Per-position sample mean and population variance of the k-space parts."""
    images = [np.asarray(x) for x in dataset]
    if not images:
        raise ValueError("cannot estimate statistics of an empty dataset")
    dims = images[0].shape
    if any(x.shape != dims for x in images):
        raise ValueError("all images must share the same dims")
    k = np.fft.fft2(np.stack(images).astype(np.complex128), norm="ortho")
    return KSpaceStats(dims, k.real.mean(0), k.imag.mean(0), k.real.var(0), k.imag.var(0))


def _single(v, sigma):
    return 0.5 * (1 + _LOG2PI + np.log(np.maximum(sigma**2 + v, VAR_FLOOR)))


def _pair_share(v, sigma):
    # half of the bivariate entropy with covariance sigma^2 I + v 11^T
    return 0.5 * (1 + _LOG2PI + 0.5 * np.log(max(sigma**2, VAR_FLOOR))
                  + 0.5 * np.log(np.maximum(sigma**2 + 2 * v, VAR_FLOOR)))


def pointwise_terms(stats: KSpaceStats, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-position entropy share if the position lands in I, and in J.

    Both maps already sum the real and imaginary parts.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h_i = _pair_share(stats.v_r, sigma) + _pair_share(stats.v_c, sigma)
    h_j = _single(stats.v_r, sigma) + _single(stats.v_c, sigma)
    return h_i, h_j


def marginal_entropy(p, stats: KSpaceStats, sigma: float) -> float:
    mask = p.mask if isinstance(p, SamplingPattern) else np.asarray(p, dtype=bool)
    if mask.shape != stats.dims:
        raise ValueError(f"mask dims {mask.shape} do not match stats dims {stats.dims}")
    h_i, h_j = pointwise_terms(stats, sigma)
    I, J = redundancy_sets(mask)
    return float(h_i[I].sum() + h_j[J].sum())


def marginal_entropy_torch(mask: torch.Tensor, stats: KSpaceStats, sigma: float) -> torch.Tensor:
    """Multilinear relaxation of :func:`marginal_entropy` in the mask values.

    Indicators are replaced by products of mask entries, ``I_i = s_i s_i*`` and
    ``J_i = s_i (1 - s_i*)``, which reproduces the exact value at binary masks and
    lets straight-through gradients reach the probabilities.
    """
    dims = stats.dims
    h_i, h_j = pointwise_terms(stats, sigma)
    selfc = torch.as_tensor(self_conjugate(dims).ravel(), dtype=mask.dtype)
    s = mask.reshape(-1)
    partner = s[torch.as_tensor(conjugate_flat_indices(dims))] * (1 - selfc)
    h_i = torch.as_tensor(h_i.ravel(), dtype=mask.dtype)
    h_j = torch.as_tensor(h_j.ravel(), dtype=mask.dtype)
    return (s * partner * h_i + s * (1 - partner) * h_j).sum()


def entropy_greedy_mask(stats: KSpaceStats, sigma: float, M: int) -> SamplingPattern:
    """Add, one at a time, the position with the largest entropy gain.

    Ties go to the lowest flat index.
    """
    N = stats.dims[0] * stats.dims[1]
    if not 1 <= M <= N:
        raise ValueError("M must lie in [1, N]")
    h_i, h_j = (h.ravel() for h in pointwise_terms(stats, sigma))
    conj = conjugate_flat_indices(stats.dims)
    selfc = self_conjugate(stats.dims).ravel()
    mask = np.zeros(N, dtype=bool)
    for _ in range(M):
        partner_in = mask[conj] & ~selfc
        # joining a sampled partner moves the partner from J to I as well
        gain = np.where(partner_in, h_i + h_i[conj] - h_j[conj], h_j)
        gain[mask] = -np.inf
        mask[int(np.argmax(gain))] = True
    return SamplingPattern(stats.dims, mask.reshape(stats.dims))


def joint_gaussian_entropy(mask, stats: KSpaceStats, sigma: float) -> float:
    """Entropy of the sampled measurements from an explicit covariance log-det.

    Independent of the pointwise bookkeeping above: builds the covariance of
    the real vector (Re y, Im y) over sampled positions, with each conjugate
    pair driven by one shared latent coefficient.
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    conj = conjugate_flat_indices(stats.dims)
    idx = np.flatnonzero(mask)
    vr, vc = stats.v_r.ravel(), stats.v_c.ravel()
    n = 2 * idx.size
    cov = sigma**2 * np.eye(n)
    for a, i in enumerate(idx):
        for b, j in enumerate(idx):
            if i == j:
                cov[2 * a, 2 * b] += vr[i]
                cov[2 * a + 1, 2 * b + 1] += vc[i]
            elif conj[i] == j:
                cov[2 * a, 2 * b] += vr[i]
                cov[2 * a + 1, 2 * b + 1] -= vc[i]
    _, logdet = np.linalg.slogdet(cov)
    return 0.5 * (n * (1 + _LOG2PI) + logdet)


def symmetric_stats(dims, rng: np.random.Generator, scale: float = 1.0) -> KSpaceStats:
    """Random stats obeying the conjugate-symmetry invariants of real images."""
    N = dims[0] * dims[1]
    conj = conjugate_flat_indices(dims)
    mu_r, mu_c = rng.normal(size=N), rng.normal(size=N)
    v_r, v_c = scale * rng.uniform(0.1, 4.0, N), scale * rng.uniform(0.1, 4.0, N)
    mu_r = 0.5 * (mu_r + mu_r[conj])
    mu_c = 0.5 * (mu_c - mu_c[conj])
    v_r = 0.5 * (v_r + v_r[conj])
    v_c = 0.5 * (v_c + v_c[conj])
    return KSpaceStats(dims, mu_r, mu_c, v_r, v_c)


def save_stats(path, stats: KSpaceStats) -> None:
    H, W = stats.dims
    payload = b"".join(f64_bytes(a.ravel()) for a in (stats.mu_r, stats.mu_c, stats.v_r, stats.v_c))
    write_container(path, {"H": H, "W": W, "fields": ["mu_r", "mu_c", "v_r", "v_c"]}, payload)


def load_stats(path) -> KSpaceStats:
    header, payload = read_container(path)
    try:
        H, W = int(header["H"]), int(header["W"])
    except KeyError as exc:
        raise FormatError(f"{path}: stats header missing {exc}") from exc
    n = H * W
    parts = [f64_from(payload, n, 8 * n * i) for i in range(4)]
    return KSpaceStats((H, W), *parts)
