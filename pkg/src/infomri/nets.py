"""Small differentiable building blocks on top of torch autograd.

Networks are plain sequences of layers described by a :class:`NetSpec`; their
weights live in a :class:`ParamStore` under ``"<prefix><index>.weight"`` and
``"<prefix><index>.bias"``. Composite heads (concatenation, broadcasting a
latent over the image grid, mean pooling) are assembled from these pieces in
:mod:`infomri.models`.

Everything runs in float64.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .serialization import FormatError, f64_bytes, f64_from, read_container, write_container

DTYPE = torch.float64

_KERNEL = {"dense": None, "conv1x1": 1, "conv3x3": 3}
_ACTIVATIONS = {
    None: lambda x: x,
    "softplus": F.softplus,
    "sigmoid": torch.sigmoid,
    "tanh": torch.tanh,
}


class StaleTapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Layer:
    kind: str
    fan_in: int
    fan_out: int
    activation: str | None = None

    def __post_init__(self):
        if self.kind not in _KERNEL:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        k = _KERNEL[self.kind]
        if k is None:
            return (self.fan_out, self.fan_in)
        return (self.fan_out, self.fan_in, k, k)

    @property
    def init_fan_in(self) -> int:
        k = _KERNEL[self.kind] or 1
        return self.fan_in * k * k


@dataclass(frozen=True)
class NetSpec:
    layers: tuple[Layer, ...] = ()
    name: str = "net"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for a, b in zip(self.layers, self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ValueError(f"{self.name}: layer widths do not compose ({a.fan_out} -> {b.fan_in})")

    def param_shapes(self, prefix: str = "") -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, layer in enumerate(self.layers):
            shapes[f"{prefix}{i}.weight"] = layer.weight_shape
            shapes[f"{prefix}{i}.bias"] = (layer.fan_out,)
        return shapes

    def to_dict(self) -> dict:
        return {"name": self.name, "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(layers=tuple(Layer(**l) for l in d["layers"]), name=d["name"])


class ParamStore:
    """Named float64 leaf tensors plus a matching gradient buffer each."""

    def __init__(self, params: dict[str, torch.Tensor] | None = None):
        self.params: dict[str, torch.Tensor] = {}
        self.version = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> torch.Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        if torch.is_tensor(value):
            value = value.detach().numpy()
        t = torch.as_tensor(np.asarray(value, dtype=np.float64)).clone().requires_grad_(True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def numel(self) -> int:
        return sum(p.numel() for p in self.params.values())

    @property
    def grads(self) -> dict[str, torch.Tensor]:
        return {
            n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for n, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def subset(self, prefix: str) -> dict[str, torch.Tensor]:
        return {n: p for n, p in self.params.items() if n.startswith(prefix)}

    def mark_updated(self) -> None:
        self.version += 1

    def assert_finite(self) -> None:
        for n, p in self.params.items():
            if not torch.isfinite(p).all():
                raise FloatingPointError(f"parameter {n!r} is not finite")

    def numpy(self) -> dict[str, np.ndarray]:
        return {n: p.detach().numpy().copy() for n, p in self.params.items()}

    def copy(self) -> "ParamStore":
        return ParamStore(self.numpy())

    def update(self, other: "ParamStore") -> "ParamStore":
        for n, p in other.params.items():
            self.add(n, p.detach().numpy())
        return self


def init(spec: NetSpec, rng: np.random.Generator, prefix: str = "", store: ParamStore | None = None) -> ParamStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    store = ParamStore() if store is None else store
    for i, layer in enumerate(spec.layers):
        bound = 1.0 / np.sqrt(layer.init_fan_in)
        store.add(f"{prefix}{i}.weight", rng.uniform(-bound, bound, size=layer.weight_shape))
        store.add(f"{prefix}{i}.bias", np.zeros(layer.fan_out))
    return store


def apply(store: ParamStore, spec: NetSpec, x: torch.Tensor, prefix: str = "") -> torch.Tensor:
    """Graph-connected forward pass.

    Dense layers act on the last axis; convolutions expect ``(B, C, H, W)`` with
    same-size zero padding.
    """
    for i, layer in enumerate(spec.layers):
        w = store[f"{prefix}{i}.weight"]
        b = store[f"{prefix}{i}.bias"]
        if layer.kind == "dense":
            if x.shape[-1] != layer.fan_in:
                raise ValueError(f"{spec.name}[{i}]: expected last dim {layer.fan_in}, got {tuple(x.shape)}")
            x = x @ w.T + b
        else:
            if x.dim() != 4 or x.shape[1] != layer.fan_in:
                raise ValueError(f"{spec.name}[{i}]: expected (B, {layer.fan_in}, H, W), got {tuple(x.shape)}")
            x = F.conv2d(x, w, b, padding=w.shape[-1] // 2)
        x = _ACTIVATIONS[layer.activation](x)
    return x


@dataclass
class Tape:
    store: ParamStore
    names: list[str]
    inputs: torch.Tensor
    output: torch.Tensor
    version: int
    consumed: bool = field(default=False)


def forward(store: ParamStore, spec: NetSpec, x, prefix: str = "") -> tuple[torch.Tensor, Tape]:
    xin = torch.as_tensor(np.asarray(x, dtype=np.float64) if not torch.is_tensor(x) else x.detach(), dtype=DTYPE)
    xin = xin.clone().requires_grad_(True)
    out = apply(store, spec, xin, prefix)
    names = list(spec.param_shapes(prefix))
    return out.detach(), Tape(store, names, xin, out, store.version)


def backward(tape: Tape, output_gradient) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
    if tape.consumed:
        raise StaleTapeError("tape already consumed by a previous backward")
    if tape.version != tape.store.version:
        raise StaleTapeError("parameters changed since forward")
    tape.consumed = True
    g = torch.as_tensor(output_gradient, dtype=DTYPE)
    leaves = [tape.store[n] for n in tape.names] + [tape.inputs]
    grads = torch.autograd.grad(tape.output, leaves, grad_outputs=g, allow_unused=True)
    out = {}
    for n, gr, leaf in zip(tape.names, grads, leaves):
        out[n] = torch.zeros_like(leaf) if gr is None else gr
    gin = grads[-1] if grads[-1] is not None else torch.zeros_like(tape.inputs)
    return out, gin


# -- helpers for composite heads -------------------------------------------

def mean_pool(x: torch.Tensor) -> torch.Tensor:
    """``(B, C, H, W)`` -> ``(B, C)``."""
    return x.mean(dim=(-2, -1))


def broadcast_concat(feat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Tile a ``(B, D)`` vector over the grid and append it as channels."""
    B, _, H, W = feat.shape
    return torch.cat([feat, z[:, :, None, None].expand(B, z.shape[1], H, W)], dim=1)


# -- verification -----------------------------------------------------------

def gradient_check(loss_fn, store: ParamStore, names=None, step: float = 1e-5,
                   coords_per_tensor: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare autograd against central differences of ``loss_fn()``.

    The error for one tensor is ``||analytic - numeric|| / (||numeric|| + 1e-8)``
    over the checked coordinates; the result is the max over tensors. Large
    tensors are checked on ``coords_per_tensor`` random coordinates.
    """
    names = store.names() if names is None else list(names)
    if not names:
        return 0.0
    rng = np.random.default_rng(0) if rng is None else rng
    params = [store[n] for n in names]
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            a = torch.zeros_like(p) if a is None else a
            flat = p.view(-1)
            if coords_per_tensor is None or flat.numel() <= coords_per_tensor:
                coords = np.arange(flat.numel())
            else:
                coords = rng.choice(flat.numel(), size=coords_per_tensor, replace=False)
            num = np.empty(coords.size)
            for k, j in enumerate(coords):
                orig = flat[j].item()
                flat[j] = orig + step
                lp = float(loss_fn())
                flat[j] = orig - step
                lm = float(loss_fn())
                flat[j] = orig
                num[k] = (lp - lm) / (2 * step)
            ana = a.reshape(-1).numpy()[coords]
            err = np.linalg.norm(ana - num) / (np.linalg.norm(num) + 1e-8)
            worst = max(worst, float(err))
    return worst


def finite_diff_check(store: ParamStore, spec: NetSpec, x, scalar_loss, prefix: str = "", **kw) -> float:
    """Gradient check of ``scalar_loss(net(x))`` over the net's parameters."""
    xin = torch.as_tensor(np.asarray(x, dtype=np.float64)) if not torch.is_tensor(x) else x.detach()
    return gradient_check(lambda: scalar_loss(apply(store, spec, xin, prefix)), store,
                          names=spec.param_shapes(prefix), **kw)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, store: ParamStore, meta: dict | None = None) -> None:
    arrays = store.numpy()
    manifest = {
        "names": list(arrays),
        "shapes": [list(a.shape) for a in arrays.values()],
        "meta": meta or {},
    }
    payload = b"".join(f64_bytes(a.ravel()) for a in arrays.values())
    write_container(path, manifest, payload)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    manifest, payload = read_container(path)
    try:
        names, shapes = manifest["names"], manifest["shapes"]
    except KeyError as exc:
        raise FormatError(f"{path}: manifest missing {exc}") from exc
    store, offset = ParamStore(), 0
    for n, s in zip(names, shapes):
        count = int(np.prod(s)) if s else 1
        store.add(n, f64_from(payload, count, offset).reshape(s))
        offset += 8 * count
    if offset != len(payload):
        raise FormatError(f"{path}: payload has {len(payload) - offset} trailing bytes")
    return store, manifest.get("meta", {})
