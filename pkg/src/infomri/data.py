"""Synthetic phantoms: multi-annotator segmentation set and a shape
classification set, plus their on-disk format.

Every record gets its own seed derived from the dataset seed, so records can be
generated independently and in any order.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .serialization import FormatError, pack_bits, read_container, unpack_bits, write_container, f64_bytes, f64_from

FORMAT_VERSION = 1
SHAPES = ("disk", "square", "cross", "annulus", "triangle", "bars", "diamond", "frame")


@dataclass
class SegRecord:
    image: np.ndarray          # (H, W) float64, real and nonnegative
    annotations: np.ndarray    # (A, H, W) bool

    def __post_init__(self):
        self.annotations = np.asarray(self.annotations, dtype=bool)
        if self.annotations.ndim != 3 or self.annotations.shape[0] < 1:
            raise ValueError("annotations must be a nonempty (A, H, W) stack")
        if self.annotations.shape[1:] != self.image.shape:
            raise ValueError("annotation dims differ from image dims")


@dataclass
class ClsRecord:
    image: np.ndarray
    label: int


def _grid(dims):
    H, W = dims
    y = (np.arange(H) + 0.5) / H * 2 - 1
    x = (np.arange(W) + 0.5) / W * 2 - 1
    return np.meshgrid(y, x, indexing="ij")


def _ellipse(Y, X, cy, cx, ay, ax, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (Y - cy) * c + (X - cx) * s
    v = -(Y - cy) * s + (X - cx) * c
    return (u / ay) ** 2 + (v / ax) ** 2 <= 1.0


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return r[:, None] ** 2 + r[None, :] ** 2 <= radius**2


def perturb_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation (radius > 0) or erosion (radius < 0) by a disk."""
    if radius == 0:
        return mask.copy()
    se = _disk(abs(radius))
    if radius > 0:
        return ndimage.binary_dilation(mask, structure=se)
    return ndimage.binary_erosion(mask, structure=se, border_value=0)


def _texture(rng, dims, amplitude):
    return amplitude * ndimage.gaussian_filter(rng.standard_normal(dims), 1.5, mode="wrap")


def _record_rngs(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def seg_record(rng: np.random.Generator, dims=(32, 32), annotators: int = 6, max_radius: int = 2) -> SegRecord:
    Y, X = _grid(dims)
    body = _ellipse(Y, X, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                    rng.uniform(0.78, 0.92), rng.uniform(0.78, 0.92), rng.uniform(0, np.pi))
    ramp = 1.0 + 0.25 * (rng.uniform(-1, 1) * Y + rng.uniform(-1, 1) * X)
    img = rng.uniform(0.25, 0.4) * ramp * body
    canonical = np.zeros(dims, dtype=bool)
    for _ in range(rng.integers(1, 4)):
        rad, ang = rng.uniform(0, 0.35), rng.uniform(0, 2 * np.pi)
        e = _ellipse(Y, X, rad * np.sin(ang), rad * np.cos(ang),
                     rng.uniform(0.28, 0.46), rng.uniform(0.28, 0.46), rng.uniform(0, np.pi)) & body
        img = img + rng.uniform(0.35, 0.6) * e
        canonical |= e
    img = np.clip(img + _texture(rng, dims, 0.03) * body, 0.0, None)
    radii = rng.integers(-max_radius, max_radius + 1, size=annotators)
    ann = np.stack([perturb_mask(canonical, int(r)) for r in radii])
    return SegRecord(img.astype(np.float64), ann)


def gen_seg_dataset(count: int, dims=(32, 32), annotators: int = 6, seed: int = 0,
                    max_radius: int = 2) -> list[SegRecord]:
    if count < 1 or annotators < 1:
        raise ValueError("count and annotators must be >= 1")
    return [seg_record(rng, tuple(dims), annotators, max_radius) for rng in _record_rngs(seed, count)]


def _shape(kind, Y, X, scale, theta):
    c, s = np.cos(theta), np.sin(theta)
    u, v = Y * c + X * s, -Y * s + X * c
    a = 0.55 * scale
    if kind == "disk":
        return u**2 + v**2 <= a**2
    if kind == "square":
        return (np.abs(u) <= 0.8 * a) & (np.abs(v) <= 0.8 * a)
    if kind == "cross":
        w = 0.25 * a
        return ((np.abs(u) <= a) & (np.abs(v) <= w)) | ((np.abs(v) <= a) & (np.abs(u) <= w))
    if kind == "annulus":
        rr = u**2 + v**2
        return (rr <= a**2) & (rr >= (0.55 * a) ** 2)
    if kind == "triangle":
        return (u <= 0.6 * a) & (u >= -a + 1.7 * np.abs(v))
    if kind == "bars":
        return (np.abs(v) <= a) & (np.abs(np.abs(u) - 0.5 * a) <= 0.22 * a)
    if kind == "diamond":
        return np.abs(u) + np.abs(v) <= a
    if kind == "frame":
        box = (np.abs(u) <= 0.85 * a) & (np.abs(v) <= 0.85 * a)
        return box & ~((np.abs(u) <= 0.5 * a) & (np.abs(v) <= 0.5 * a))
    raise ValueError(kind)


def cls_record(rng: np.random.Generator, label: int, dims=(32, 32)) -> ClsRecord:
    Y, X = _grid(dims)
    cy, cx = rng.uniform(-1.5, 1.5, size=2) * 2 / np.asarray(dims)
    shape = _shape(SHAPES[label], Y - cy, X - cx, rng.uniform(0.9, 1.1), rng.uniform(-0.2, 0.2))
    img = rng.uniform(0.75, 1.0) * shape + _texture(rng, dims, 0.03) * shape
    return ClsRecord(np.clip(img, 0.0, None).astype(np.float64), int(label))


def gen_cls_dataset(count: int, dims=(32, 32), classes: int = 4, seed: int = 0) -> list[ClsRecord]:
    if not 2 <= classes <= len(SHAPES):
        raise ValueError(f"classes must lie in [2, {len(SHAPES)}]")
    if count < 1:
        raise ValueError("count must be >= 1")
    labels = np.arange(count) % classes
    labels = np.random.default_rng(np.random.SeedSequence(seed).generate_state(1)[0]).permutation(labels)
    return [cls_record(rng, int(l), tuple(dims)) for rng, l in zip(_record_rngs(seed, count), labels)]


# -- persistence ------------------------------------------------------------

def save_dataset(path, records, seed: int | None = None) -> None:
    records = list(records)
    kind = "cls" if records and isinstance(records[0], ClsRecord) else "seg"
    dims = list(records[0].image.shape) if records else [0, 0]
    header = {"count": len(records), "dims": dims, "seed": seed, "version": FORMAT_VERSION, "kind": kind}
    images = f64_bytes(np.stack([r.image for r in records]).ravel()) if records else b""
    if kind == "seg":
        A = records[0].annotations.shape[0] if records else 0
        header["annotators"] = A
        tail = pack_bits(np.stack([r.annotations for r in records])) if records else b""
    else:
        header["classes"] = int(max(r.label for r in records)) + 1
        tail = np.asarray([r.label for r in records], dtype=np.uint8).tobytes()
    write_container(path, header, images + tail)


def load_dataset(path):
    header, payload = read_container(path)
    try:
        count, (H, W), kind = int(header["count"]), header["dims"], header["kind"]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: bad dataset header ({exc})") from exc
    if count == 0:
        return []
    n_img = count * H * W
    images = f64_from(payload, n_img).reshape(count, H, W)
    tail = payload[8 * n_img:]
    if kind == "seg":
        A = int(header["annotators"])
        nbits = count * A * H * W
        if len(tail) != (nbits + 7) // 8:
            raise FormatError(f"{path}: mask payload size {len(tail)} does not match header")
        ann = unpack_bits(tail, nbits).reshape(count, A, H, W)
        return [SegRecord(images[i].copy(), ann[i]) for i in range(count)]
    if kind == "cls":
        if len(tail) != count:
            raise FormatError(f"{path}: label payload size {len(tail)} does not match count {count}")
        labels = np.frombuffer(tail, dtype=np.uint8)
        return [ClsRecord(images[i].copy(), int(labels[i])) for i in range(count)]
    raise FormatError(f"{path}: unknown dataset kind {kind!r}")


def dataset_kind(records) -> str:
    return "cls" if records and isinstance(records[0], ClsRecord) else "seg"
