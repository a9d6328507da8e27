import numpy as np
import pytest
import torch

from infomri.kspace import conjugate_index, zero_fill_torch
from infomri.models import HeadConfig, Heads, data_consistent

DIMS = (6, 8)


def _setup(seed, p=0.4):
    rng = np.random.default_rng(seed)
    x = rng.random((2, *DIMS))
    mask = torch.as_tensor(rng.random(DIMS) < p, dtype=torch.float64)
    k = torch.fft.fft2(torch.as_tensor(x), norm="ortho")
    return rng, x, mask, k


def _kspace(out):
    return torch.fft.fft2(torch.complex(out[:, 0], out[:, 1]), norm="ortho")


@pytest.mark.parametrize("seed", range(5))
def test_measured_and_reflected_values_are_kept(seed):
    rng, _, mask, k = _setup(seed)
    residual = torch.as_tensor(rng.normal(size=(2, *DIMS)))
    out = _kspace(data_consistent(zero_fill_torch(k, mask), residual, mask))
    m = mask.numpy().astype(bool)
    reflected = np.zeros_like(m)
    for r, c in zip(*np.nonzero(m)):
        reflected[conjugate_index((r, c), DIMS)] = True
    known = torch.as_tensor(m | reflected)
    torch.testing.assert_close(out[:, known], k[:, known], rtol=0, atol=1e-12)
    free = torch.as_tensor(~(m | reflected))
    rk = torch.fft.fft2(residual.to(torch.complex128), norm="ortho")
    torch.testing.assert_close(out[:, free], rk[:, free], rtol=0, atol=1e-12)


def test_full_mask_returns_the_image_and_zero_residual_is_real():
    _, x, _, k = _setup(0)
    full = torch.ones(DIMS, dtype=torch.float64)
    out = data_consistent(zero_fill_torch(k, full), torch.zeros(2, *DIMS, dtype=torch.float64), full)
    np.testing.assert_allclose(out[:, 0].numpy(), x, atol=1e-12)
    _, _, mask, k = _setup(1)
    out = data_consistent(zero_fill_torch(k, mask), torch.zeros(2, *DIMS, dtype=torch.float64), mask)
    assert float(out[:, 1].abs().max()) < 1e-12


def test_recon_shapes():
    rng = np.random.default_rng(0)
    heads = Heads.init(HeadConfig(dims=(8, 8), task="reconstruction", channels=3, feature=6), rng)
    zf = torch.as_tensor(rng.normal(size=(3, 2, 8, 8)))
    feat, g = heads.encode(zf)
    mean, logvar = heads.recon(feat, zf, g, torch.ones(8, 8, dtype=torch.float64))
    assert mean.shape == logvar.shape == (3, 2, 8, 8)
    torch.testing.assert_close(mean, zf)
