"""Sampling patterns: traditional baselines, the pattern-generation network,
the rescale projection, Bernoulli draws and rejection sampling.

Grids use the unshifted FFT layout, so DC sits at flat index 0 and the
centered frequency of row ``i`` is ``fftfreq(H)[i] * H``.

In ``"1d"`` (Cartesian) mode the generator works on the ``W`` columns: one
probability and one Bernoulli draw per column, broadcast over all rows. Ratio
constraints are then counted in columns.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from . import nets
from .kspace import conjugate_flat_indices, self_conjugate
from .serialization import FormatError, pack_bits, read_container, unpack_bits, write_container

MODES = ("2d", "1d")
KINDS = ("uniform-random", "variable-density", "equispaced", "low-frequency")
_KIND_ALIASES = {"uniform": "uniform-random", "vardens": "variable-density", "lowfreq": "low-frequency"}
VD_POWER = 3.0


class RejectionExhausted(RuntimeError):
    """No pattern met the ratio constraint within ``max_tries`` draws."""


@dataclass
class SamplingPattern:
    dims: tuple[int, int]
    mask: np.ndarray
    mode: str = "2d"
    tries: int = 1

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.dims)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "1d":
            cols = self.mask.any(axis=0)
            if not np.array_equal(self.mask, np.broadcast_to(cols, self.dims)):
                raise ValueError("1d pattern must consist of whole columns")

    @property
    def cardinality(self) -> int:
        return int(self.mask.sum())

    @property
    def columns(self) -> np.ndarray:
        return self.mask.any(axis=0)

    def units(self) -> np.ndarray:
        """The Bernoulli units: positions (2d) or columns (1d)."""
        return self.columns if self.mode == "1d" else self.mask.ravel()


@dataclass(frozen=True)
class RatioConstraint:
    r: float
    epsilon: float
    N: int

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError("r must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def satisfied(self, count: int) -> bool:
        return abs(count - self.r * self.N) < self.epsilon

    @classmethod
    def three_sigma(cls, r: float, N: int) -> "RatioConstraint":
        return cls(r, max(3.0 * np.sqrt(N * r * (1 - r)), 0.5), N)


def _units(dims, mode) -> int:
    return dims[1] if mode == "1d" else dims[0] * dims[1]


def pattern_from_units(bits, dims, mode="2d", tries=1) -> SamplingPattern:
    bits = np.asarray(bits, dtype=bool)
    if mode == "1d":
        mask = np.broadcast_to(bits[None, :], dims)
    else:
        mask = bits.reshape(dims)
    return SamplingPattern(dims, mask.copy(), mode, tries)


# -- rescale ----------------------------------------------------------------

def rescale_torch(b: torch.Tensor, r: float) -> torch.Tensor:
    """Project probabilities onto the slice with L1 norm ``r * N``."""
    N = b.numel()
    target = r * N
    s = b.sum()
    if s.item() >= target:
        if s.item() == 0.0:
            return torch.full_like(b, r)
        return b * (target / s)
    if s.item() == N:
        return torch.full_like(b, r)
    return 1 - (N - target) / (N - s) * (1 - b)


def rescale(b, r: float) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 0) or np.any(b > 1):
        raise ValueError("rescale expects b in [0, 1]")
    if not 0 <= r <= 1:
        raise ValueError("r must lie in [0, 1]")
    return rescale_torch(torch.as_tensor(b), r).numpy()


def rescale_jacobian(b, r: float) -> np.ndarray:
    """Exact Jacobian ``d out_i / d b_j`` of :func:`rescale`."""
    b = np.asarray(b, dtype=np.float64)
    N = b.size
    target, s = r * N, b.sum()
    eye = np.eye(N)
    if s >= target:
        if s == 0:
            return np.zeros((N, N))
        return target * (eye * s - b[:, None]) / s**2
    c = (N - target) / (N - s)
    return c * eye - np.outer(1 - b, np.full(N, (N - target) / (N - s) ** 2))


# -- pattern generation network -------------------------------------------

def pgn_spec(hidden: int = 64) -> nets.NetSpec:
    return nets.NetSpec(
        (nets.Layer("dense", 2, hidden, "softplus"), nets.Layer("dense", hidden, 1, "sigmoid")),
        name="pgn",
    )


@dataclass
class PgnParams:
    """Position embedding plus a one-hidden-layer MLP shared by all positions."""

    dims: tuple[int, int]
    mode: str = "2d"
    hidden: int = 64
    store: nets.ParamStore = field(default_factory=nets.ParamStore)
    prefix: str = "pgn."

    @property
    def n(self) -> int:
        return _units(self.dims, self.mode)

    @property
    def spec(self) -> nets.NetSpec:
        return pgn_spec(self.hidden)

    @property
    def position_embedding(self) -> torch.Tensor:
        return self.store[self.prefix + "pe"]

    def probs(self, r: float) -> torch.Tensor:
        """Differentiable ``mu(r)``: shape ``(n,)``, sums to ``r * n``."""
        pe = self.position_embedding
        x = torch.stack([torch.full_like(pe, float(r)), pe], dim=-1)
        b = nets.apply(self.store, self.spec, x, self.prefix + "mlp.")[:, 0]
        return rescale_torch(b, r)


def init_pgn(dims, mode: str = "2d", hidden: int = 64, rng: np.random.Generator | None = None,
             store: nets.ParamStore | None = None) -> PgnParams:
    rng = np.random.default_rng(0) if rng is None else rng
    store = nets.ParamStore() if store is None else store
    p = PgnParams(tuple(dims), mode, hidden, store)
    store.add(p.prefix + "pe", rng.uniform(-1.0, 1.0, size=p.n))
    nets.init(p.spec, rng, prefix=p.prefix + "mlp.", store=store)
    return p


def pgn_forward(params: PgnParams, r: float) -> np.ndarray:
    if not 0 <= r <= 1:
        raise ValueError("r must lie in [0, 1]")
    for n, t in params.store.subset(params.prefix).items():
        if not torch.isfinite(t).all():
            raise FloatingPointError(f"non-finite PGN parameter {n!r}")
    with torch.no_grad():
        return params.probs(r).numpy()


# -- Bernoulli sampling -----------------------------------------------------

def bernoulli_units(mu, rng: np.random.Generator) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    return rng.random(mu.shape) < mu


def sample_pattern(mu, rng: np.random.Generator, dims=None, mode: str = "2d") -> SamplingPattern:
    mu = np.asarray(mu, dtype=np.float64)
    if dims is None:
        if mu.ndim != 2:
            raise ValueError("dims required for flat probabilities")
        dims = mu.shape
    return pattern_from_units(bernoulli_units(mu.ravel(), rng), dims, mode)


def draw_units(mu: np.ndarray, constraint: RatioConstraint, max_tries: int,
               rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Algorithm-1 style loop: redraw until the count meets the constraint."""
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    for tries in range(1, max_tries + 1):
        bits = bernoulli_units(mu, rng)
        if constraint.satisfied(int(bits.sum())):
            return bits, tries
    raise RejectionExhausted(
        f"no pattern with |count - {constraint.r * constraint.N:.1f}| < {constraint.epsilon} "
        f"after {max_tries} tries"
    )


def rejection_sample(params: PgnParams, c: RatioConstraint, max_tries: int = 1000,
                     rng: np.random.Generator | None = None) -> SamplingPattern:
    rng = np.random.default_rng() if rng is None else rng
    if c.N != params.n:
        raise ValueError(f"constraint N={c.N} does not match generator size {params.n}")
    bits, tries = draw_units(pgn_forward(params, c.r), c, max_tries, rng)
    return pattern_from_units(bits, params.dims, params.mode, tries)


# -- traditional baselines --------------------------------------------------

def centered_radius(dims) -> np.ndarray:
    H, W = dims
    fy = np.fft.fftfreq(H) * H
    fx = np.fft.fftfreq(W) * W
    return np.hypot(fy[:, None], fx[None, :])


def variable_density_weights(dims, mode="2d", power: float = VD_POWER) -> np.ndarray:
    if mode == "1d":
        d = np.abs(np.fft.fftfreq(dims[1]) * dims[1])
    else:
        d = centered_radius(dims).ravel()
    return (1.0 + d / d.max()) ** (-power)


def traditional_pattern(kind: str, r: float, dims, mode: str = "2d",
                        rng: np.random.Generator | None = None) -> SamplingPattern:
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown pattern kind {kind!r}")
    if not 0 <= r <= 1:
        raise ValueError("r must lie in [0, 1]")
    if kind == "equispaced" and mode != "1d":
        raise ValueError("equispaced sampling is only defined for 1d Cartesian mode")
    rng = np.random.default_rng() if rng is None else rng
    dims = tuple(dims)
    n = _units(dims, mode)
    count = int(round(r * n))
    bits = np.zeros(n, dtype=bool)
    if kind == "uniform-random":
        bits[rng.choice(n, size=count, replace=False)] = True
    elif kind == "variable-density":
        w = variable_density_weights(dims, mode)
        bits[rng.choice(n, size=count, replace=False, p=w / w.sum())] = True
    elif kind == "equispaced":
        if count:
            bits[np.unique(np.round(np.arange(count) * n / count).astype(int) % n)] = True
    else:
        if mode == "1d":
            d = np.abs(np.fft.fftfreq(n) * n)
        else:
            d = centered_radius(dims).ravel()
        order = np.lexsort((np.arange(n), d))
        bits[order[:count]] = True
    return pattern_from_units(bits, dims, mode)


# -- redundancy -------------------------------------------------------------

def redundancy_sets(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boolean maps of redundant (I) and non-redundant (J) sampled positions.

    Self-conjugate positions have no separate partner and always land in J.
    """
    mask = np.asarray(mask, dtype=bool)
    dims = mask.shape
    flat = mask.ravel()
    partner = flat[conjugate_flat_indices(dims)]
    selfc = self_conjugate(dims).ravel()
    I = flat & partner & ~selfc
    J = flat & ~I
    return I.reshape(dims), J.reshape(dims)


def redundancy_ratio(p) -> float:
    mask = p.mask if isinstance(p, SamplingPattern) else np.asarray(p, dtype=bool)
    if not mask.any():
        raise ValueError("redundancy ratio is undefined for an empty pattern")
    I, J = redundancy_sets(mask)
    return I.sum() / (I.sum() + J.sum())


# -- mask files -------------------------------------------------------------

def save_pattern(path, p: SamplingPattern) -> None:
    H, W = p.dims
    write_container(path, {"H": H, "W": W, "mode": p.mode}, pack_bits(p.mask))


def load_pattern(path) -> SamplingPattern:
    header, payload = read_container(path)
    try:
        H, W, mode = int(header["H"]), int(header["W"]), header["mode"]
    except KeyError as exc:
        raise FormatError(f"{path}: mask header missing {exc}") from exc
    return SamplingPattern((H, W), unpack_bits(payload, H * W).reshape(H, W), mode)
