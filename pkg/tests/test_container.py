import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from petforge import container
from petforge.errors import FormatError


def test_layout_is_little_endian_without_padding():
    buf = container.dumps({"ab": np.array([1.0, 2.0], dtype=np.float32)})
    expected = (b"PETW" + struct.pack("<II", 1, 1) + struct.pack("<I", 2) + b"ab"
                + struct.pack("<BB", 0, 1) + struct.pack("<Q", 2) + np.array([1, 2], "<f4").tobytes())
    assert buf == expected


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=8),
                       st.one_of(arrays(np.float32, array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4)),
                                 arrays(np.float64, array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4))),
                       max_size=4))
def test_round_trip_bit_exact(tensors):
    back = container.loads(container.dumps(tensors))
    assert list(back) == list(tensors)
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert back[k].tobytes() == v.tobytes()


def test_bad_magic():
    buf = bytearray(container.dumps({"x": np.zeros(2)}))
    buf[:4] = b"NOPE"
    with pytest.raises(FormatError, match="offset 0"):
        container.loads(bytes(buf))


def test_bad_version():
    buf = bytearray(container.dumps({"x": np.zeros(2)}))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(FormatError, match="offset 4"):
        container.loads(bytes(buf))


@pytest.mark.parametrize("cut", [3, 10, 15, 20, 30])
def test_truncation_reports_offset(cut):
    buf = container.dumps({"name": np.arange(4, dtype=np.float64)})
    with pytest.raises(FormatError, match="offset"):
        container.loads(buf[:cut])


def test_trailing_bytes():
    with pytest.raises(FormatError):
        container.loads(container.dumps({"x": np.zeros(1)}) + b"\0")


def test_unsupported_dtype():
    with pytest.raises(FormatError):
        container.dumps({"x": np.zeros(2, dtype=np.int32)})


def test_save_load_file(tmp_path):
    path = tmp_path / "w.petw"
    container.save(path, {"a": np.ones((2, 3), dtype=np.float32)})
    assert container.load(path)["a"].tolist() == [[1.0] * 3] * 2
    assert not (tmp_path / "w.petw.tmp").exists()
