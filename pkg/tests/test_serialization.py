import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from infomri.serialization import (
    FormatError, load_array, pack_bits, read_container, save_array, unpack_bits, write_container,
)


def test_container_round_trip(tmp_path):
    write_container(tmp_path / "x", {"a": 1, "b": [1, 2]}, b"\x01\x02")
    assert read_container(tmp_path / "x") == ({"a": 1, "b": [1, 2]}, b"\x01\x02")


def test_container_errors(tmp_path):
    (tmp_path / "short").write_bytes(b"\x01")
    (tmp_path / "long").write_bytes(b"\xff\0\0\0\0\0\0\0{}")
    (tmp_path / "list").write_bytes(b"\x02\0\0\0\0\0\0\0[]")
    for name in ("short", "long", "list"):
        with pytest.raises(FormatError):
            read_container(tmp_path / name)


def test_bit_order_is_little():
    assert pack_bits(np.array([1, 0, 0, 0, 0, 0, 0, 0, 1], bool)) == b"\x01\x01"
    with pytest.raises(FormatError):
        unpack_bits(b"\x01", 9)


@settings(max_examples=30, deadline=None)
@given(st.one_of(
    arrays(np.float64, array_shapes(max_dims=3), elements=st.floats(allow_nan=False)),
    arrays(np.complex128, array_shapes(max_dims=2), elements=st.complex_numbers(allow_nan=False, allow_infinity=False)),
    arrays(bool, array_shapes(max_dims=3)),
))
def test_array_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("a") / "arr.bin"
    save_array(path, arr, {"k": 1})
    back, meta = load_array(path)
    assert meta == {"k": 1} and back.dtype.kind == arr.dtype.kind
    np.testing.assert_array_equal(back, arr)
