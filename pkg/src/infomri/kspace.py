"""Single-coil Cartesian forward model.

Images and k-space grids are complex128 arrays of shape ``(H, W)``. The DFT is
unitary (``norm="ortho"``) in both directions, so Parseval holds exactly and
the entropy formulas need no extra scale factors.

Noise is ``Normal(0, sigma^2)`` independently on the real and the imaginary
part of every sampled coefficient.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .serialization import f64_bytes, f64_from, read_container, write_container, FormatError


def dft2(img: np.ndarray) -> np.ndarray:
    return np.fft.fft2(np.asarray(img, dtype=np.complex128), norm="ortho")


def idft2(k: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.asarray(k, dtype=np.complex128), norm="ortho")


def conjugate_index(pos, dims):
    """Point-reflected k-space position, ``((-row) mod H, (-col) mod W)``."""
    row, col = pos
    H, W = dims
    if not (0 <= row < H and 0 <= col < W):
        raise IndexError(f"position {pos} outside grid {dims}")
    return (-row) % H, (-col) % W


def conjugate_flat_indices(dims) -> np.ndarray:
    """Flat index of the point reflection of every flat index."""
    H, W = dims
    rows = (-np.arange(H)) % H
    cols = (-np.arange(W)) % W
    return (rows[:, None] * W + cols[None, :]).ravel()


def self_conjugate(dims) -> np.ndarray:
    """Boolean ``(H, W)`` map of positions that are their own reflection."""
    return (conjugate_flat_indices(dims) == np.arange(dims[0] * dims[1])).reshape(dims)


@dataclass(frozen=True)
class Measurement:
    """Noisy k-space samples at the selected positions of ``pattern``.

    ``values`` follow ascending flat index order of the sampled positions.
    """

    pattern: "object"  # sampling.SamplingPattern; kept loose to avoid an import cycle
    values: np.ndarray
    sigma: float

    def __post_init__(self):
        if self.values.shape != (int(self.pattern.cardinality),):
            raise ValueError(
                f"values length {self.values.shape} != pattern cardinality {self.pattern.cardinality}"
            )


def acquire(img, pattern, sigma: float, rng: np.random.Generator) -> Measurement:
    img = np.asarray(img)
    if img.shape != tuple(pattern.dims):
        raise ValueError(f"image dims {img.shape} do not match pattern dims {pattern.dims}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    idx = np.flatnonzero(pattern.mask.ravel())
    vals = dft2(img).ravel()[idx]
    if sigma > 0 and idx.size:
        vals = vals + sigma * (rng.standard_normal(idx.size) + 1j * rng.standard_normal(idx.size))
    return Measurement(pattern=pattern, values=vals.astype(np.complex128), sigma=float(sigma))


def zero_fill(m: Measurement) -> np.ndarray:
    grid = np.zeros(int(np.prod(m.pattern.dims)), dtype=np.complex128)
    grid[np.flatnonzero(m.pattern.mask.ravel())] = m.values
    return idft2(grid.reshape(m.pattern.dims))


def recover_pattern(zf: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Sampled positions are the nonzero coefficients of ``dft2(zf)``."""
    k = dft2(zf)
    return np.abs(k) > tol * max(1.0, np.abs(k).max())


# -- differentiable path used by the training loops ------------------------

def to_channels(z: np.ndarray) -> np.ndarray:
    """Complex ``(..., H, W)`` -> real ``(..., 2, H, W)`` (real, imaginary)."""
    return np.stack([z.real, z.imag], axis=-3)


def zero_fill_torch(kspace: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Zero-filled reconstruction as two real channels.

    ``kspace`` is the complex noisy full grid ``(B, H, W)``; ``mask`` is a real
    ``(H, W)`` (or ``(B, H, W)``) tensor that may carry straight-through
    gradients. Returns ``(B, 2, H, W)``.
    """
    zf = torch.fft.ifft2(kspace * mask, norm="ortho")
    return torch.stack([zf.real, zf.imag], dim=1)


def noisy_kspace(images: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Full-grid k-space of a batch plus per-component Gaussian noise."""
    k = np.fft.fft2(np.asarray(images, dtype=np.complex128), norm="ortho")
    if sigma > 0:
        k = k + sigma * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return k


# -- image files ------------------------------------------------------------

def save_image(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.complex128)
    H, W = img.shape
    inter = np.empty(2 * H * W)
    inter[0::2] = img.real.ravel()
    inter[1::2] = img.imag.ravel()
    write_container(path, {"height": H, "width": W, "dtype": "c128"}, f64_bytes(inter))


def load_image(path) -> np.ndarray:
    header, payload = read_container(path)
    if header.get("dtype") != "c128":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    H, W = int(header["height"]), int(header["width"])
    inter = f64_from(payload, 2 * H * W)
    return (inter[0::2] + 1j * inter[1::2]).reshape(H, W)
