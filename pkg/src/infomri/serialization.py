"""Container format shared by every on-disk artifact.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header,
then the raw little-endian payload.
"""

import json
import struct
from pathlib import Path

import numpy as np

_LEN = struct.Struct("<Q")


class FormatError(ValueError):
    """Raised for corrupt headers or truncated payloads."""


def write_container(path, header: dict, payload: bytes) -> None:
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(raw)))
        fh.write(raw)
        fh.write(payload)


def read_container(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < _LEN.size:
        raise FormatError(f"{path}: file too short for header length")
    (n,) = _LEN.unpack_from(data)
    if _LEN.size + n > len(data):
        raise FormatError(f"{path}: header length {n} exceeds file size")
    try:
        header = json.loads(data[_LEN.size:_LEN.size + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a JSON object")
    return header, data[_LEN.size + n:]


def pack_bits(mask: np.ndarray) -> bytes:
    """Row-major bitmask, little bit order within each byte."""
    return np.packbits(np.asarray(mask, dtype=bool).ravel(), bitorder="little").tobytes()


def unpack_bits(buf: bytes, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    if bits.size < count:
        raise FormatError(f"bitmask payload holds {bits.size} bits, expected {count}")
    return bits[:count].astype(bool)


def f64_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def f64_from(buf: bytes, count: int, offset: int = 0) -> np.ndarray:
    need = offset + 8 * count
    if len(buf) < need:
        raise FormatError(f"float64 payload truncated: need {need} bytes, have {len(buf)}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)


def save_array(path, arr: np.ndarray, meta: dict | None = None) -> None:
    """Store a float64, complex128 or boolean array with its shape."""
    arr = np.asarray(arr)
    if arr.dtype == bool:
        dtype, payload = "bits", pack_bits(arr)
    elif np.iscomplexobj(arr):
        dtype, payload = "c128", f64_bytes(np.stack([arr.real, arr.imag], axis=-1).ravel())
    else:
        dtype, payload = "f64", f64_bytes(arr.ravel())
    write_container(path, {"shape": list(arr.shape), "dtype": dtype, "meta": meta or {}}, payload)


def load_array(path) -> tuple[np.ndarray, dict]:
    header, payload = read_container(path)
    try:
        shape, dtype = tuple(int(s) for s in header["shape"]), header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad array header ({exc})") from exc
    n = int(np.prod(shape))
    if dtype == "bits":
        arr = unpack_bits(payload, n)
    elif dtype == "c128":
        pairs = f64_from(payload, 2 * n).reshape(-1, 2)
        arr = pairs[:, 0] + 1j * pairs[:, 1]
    elif dtype == "f64":
        arr = f64_from(payload, n)
    else:
        raise FormatError(f"{path}: unknown dtype {dtype!r}")
    return arr.reshape(shape), header.get("meta", {})
