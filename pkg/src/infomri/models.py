"""Desk-scale variational heads built from :mod:`infomri.nets`.

The measurement encoder maps the two-channel zero-filled image to a spatial
feature map (two 3x3 convolutions) and a global feature vector (average pool
then a dense layer). Decoders:

* latent: global feature -> (mean, log-variance) of a diagonal Gaussian;
  shared by the prior ``q(z|y)`` and the teacher ``q(z|t,y)``
* task (segmentation): feature map with the latent tiled over the grid ->
  per-pixel class logits
* task (classification): global feature -> class logits
* reconstruction: feature map, zero-fill and a projection of the global
  feature tiled over the grid -> per-pixel mean and log-variance for real
  and imaginary channels. Measured k-space values and their conjugate
  reflections are kept exactly; a real residual fills the rest.
"""

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import nets
from .nets import Layer, NetSpec

TASKS = ("segmentation", "classification", "reconstruction")


@dataclass(frozen=True)
class HeadConfig:
    dims: tuple[int, int] = (32, 32)
    task: str = "segmentation"
    channels: int = 16
    feature: int = 64
    latent: int = 8
    classes: int = 2
    pool: int = 4

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.dims[0] % self.pool or self.dims[1] % self.pool:
            raise ValueError("dims must be divisible by the pooling factor")

    def to_dict(self) -> dict:
        return asdict(self)


def _conv_encoder(cin, ch, name):
    return NetSpec((Layer("conv3x3", cin, ch, "softplus"), Layer("conv3x3", ch, ch, "softplus")), name)


class Heads:
    """Parameter store plus the specs that read from it."""

    def __init__(self, cfg: HeadConfig, store: nets.ParamStore):
        self.cfg = cfg
        self.store = store
        c, H, W = cfg.channels, *cfg.dims
        flat = c * (H // cfg.pool) * (W // cfg.pool)
        self.specs: dict[str, NetSpec] = {
            "enc_y.conv.": _conv_encoder(2, c, "enc_y"),
            "enc_y.fc.": NetSpec((Layer("dense", flat, cfg.feature, "softplus"),), "enc_y_fc"),
        }
        if cfg.task == "segmentation":
            d = cfg.latent
            self.specs |= {
                "enc_t.conv.": _conv_encoder(2 + cfg.classes, c, "enc_t"),
                "enc_t.fc.": NetSpec((Layer("dense", flat, cfg.feature, "softplus"),), "enc_t_fc"),
                "dec_z.": NetSpec((Layer("dense", cfg.feature, 2 * d),), "dec_z"),
                "dec_t.": NetSpec((Layer("conv1x1", c + d, c, "softplus"),
                                   Layer("conv3x3", c, c, "softplus"),
                                   Layer("conv1x1", c, cfg.classes)), "dec_t"),
            }
        if cfg.task in ("segmentation", "reconstruction"):
            self.specs["dec_xg."] = NetSpec((Layer("dense", cfg.feature, c, "softplus"),), "dec_xg")
            self.specs["dec_x."] = NetSpec((Layer("conv3x3", 2 * c + 2, c, "softplus"),
                                            Layer("conv3x3", c, c, "softplus"),
                                            Layer("conv3x3", c, 3)), "dec_x")
        if cfg.task == "classification":
            self.specs["dec_c."] = NetSpec((Layer("dense", cfg.feature, cfg.feature, "softplus"),
                                            Layer("dense", cfg.feature, cfg.classes)), "dec_c")

    @classmethod
    def init(cls, cfg: HeadConfig, rng: np.random.Generator, store: nets.ParamStore | None = None) -> "Heads":
        store = nets.ParamStore() if store is None else store
        tmp = cls(cfg, store)
        for prefix, spec in tmp.specs.items():
            nets.init(spec, rng, prefix=prefix, store=store)
        return tmp

    @property
    def names(self) -> list[str]:
        return [n for p, s in self.specs.items() for n in s.param_shapes(p)]

    def _run(self, prefix, x):
        return nets.apply(self.store, self.specs[prefix], x, prefix)

    def _global(self, feat, prefix):
        pooled = F.avg_pool2d(feat, self.cfg.pool).flatten(1)
        return self._run(prefix, pooled)

    # -- pieces -------------------------------------------------------------

    def encode(self, zf: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feat = self._run("enc_y.conv.", zf)
        return feat, self._global(feat, "enc_y.fc.")

    def encode_teacher(self, zf: torch.Tensor, t_onehot: torch.Tensor) -> torch.Tensor:
        feat = self._run("enc_t.conv.", torch.cat([zf, t_onehot], dim=1))
        return self._global(feat, "enc_t.fc.")

    def latent(self, g: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self._run("dec_z.", g)
        d = self.cfg.latent
        return out[:, :d], out[:, d:]

    def task_logits(self, feat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return self._run("dec_t.", nets.broadcast_concat(feat, z))

    def class_logits(self, g: torch.Tensor) -> torch.Tensor:
        return self._run("dec_c.", g)

    def recon(self, feat: torch.Tensor, zf: torch.Tensor, g: torch.Tensor,
              mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = nets.broadcast_concat(torch.cat([feat, zf], dim=1), self._run("dec_xg.", g))
        out = self._run("dec_x.", x)
        return data_consistent(zf, out[:, 0], mask), out[:, 1:]


def data_consistent(zf: torch.Tensor, residual: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Project the decoder's residual onto the unmeasured frequencies.

    Measured values pass through. A position whose conjugate partner is
    measured takes the conjugate of that measurement (the targets are real
    images). Only positions with neither measured take the (real) residual,
    so apart from measurement noise the result is real.
    ``mask`` is ``(H, W)`` or ``(B, H, W)``; straight-through masks keep their
    gradient.
    """
    ky = torch.fft.fft2(torch.complex(zf[:, 0], zf[:, 1]), norm="ortho")
    partner = _reflect(mask)
    kr = torch.fft.fft2(residual.to(ky.dtype), norm="ortho")
    k = ky + (1 - mask) * torch.conj(_reflect(ky)) + (1 - mask) * (1 - partner) * kr
    x = torch.fft.ifft2(k, norm="ortho")
    return torch.stack([x.real, x.imag], dim=1)


def _reflect(a: torch.Tensor) -> torch.Tensor:
    """``a[..., (-r) % H, (-c) % W]``."""
    return torch.roll(torch.flip(a, dims=(-2, -1)), shifts=(1, 1), dims=(-2, -1))
