import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from comhr import container
from comhr.errors import (
    BadMagicError,
    ContainerError,
    DimOverflowError,
    MissingFileError,
    TruncatedPayloadError,
    VersionMismatchError,
)


def test_layout_is_bit_exact():
    buf = container.encode(np.array([[1.0, 2.0, 3.0]]))
    assert buf[:4] == b"CMHR"
    assert struct.unpack_from("<III", buf, 4) == (1, 2, 1)
    assert struct.unpack_from("<I", buf, 16) == (3,)
    assert struct.unpack_from("<3f", buf, 20) == (1.0, 2.0, 3.0)
    assert len(buf) == 20 + 12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_float32_values_round_trip_exactly(x):
    back = container.decode(container.encode(x))
    assert back.dtype == np.float64
    assert back.tobytes() == x.astype(np.float64).tobytes()


def test_bad_magic():
    buf = b"XXXX" + container.encode(np.ones(2))[4:]
    with pytest.raises(BadMagicError, match="bad magic"):
        container.decode(buf)


def test_version_mismatch():
    buf = bytearray(container.encode(np.ones(2)))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError):
        container.decode(bytes(buf))


@pytest.mark.parametrize("cut", [6, 14, 20])
def test_truncated(cut):
    buf = container.encode(np.ones((2, 2)))
    with pytest.raises(TruncatedPayloadError):
        container.decode(buf[:cut])


def test_dim_overflow():
    buf = b"CMHR" + struct.pack("<III", 1, 2, 2**20) + struct.pack("<I", 2**20)
    with pytest.raises(DimOverflowError):
        container.decode(buf)
    with pytest.raises(DimOverflowError):
        container.decode(b"CMHR" + struct.pack("<II", 1, 99))


def test_trailing_bytes_rejected():
    with pytest.raises(ContainerError):
        container.decode(container.encode(np.ones(2)) + b"\0")


def test_missing_file_names_path(tmp_path):
    target = tmp_path / "nope.cmhr"
    with pytest.raises(MissingFileError, match="nope.cmhr"):
        container.load_tensor(target)
