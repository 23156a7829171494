import io
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swinlip.errors import MagicError, TruncatedFileError, WeightFileError
from swinlip.rng import Rng
from swinlip.tensorio import decode_tensor, encode_tensor, read_tensor, read_tensor_from, write_tensor


@given(st.lists(st.integers(1, 5), min_size=0, max_size=4), st.sampled_from([np.float32, np.float64]),
       st.integers(0, 2 ** 32))
def test_round_trip_is_bitwise(shape, dtype, seed):
    arr = Rng(seed).normal(tuple(shape)).astype(dtype)
    back = decode_tensor(encode_tensor(arr)).data
    assert back.dtype == dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_header_layout():
    buf = encode_tensor(np.zeros((2, 3), dtype=np.float32))
    assert buf[:4] == b"SLT1"
    assert struct.unpack("<BB2I", buf[4:14]) == (0, 2, 2, 3)
    assert len(buf) == 14 + 6 * 4


def test_file_round_trip(tmp_path):
    arr = np.arange(12, dtype=np.float64).reshape(3, 4)
    write_tensor(tmp_path / "t.slt", arr)
    np.testing.assert_array_equal(read_tensor(tmp_path / "t.slt").data, arr)


def test_bad_magic():
    buf = bytearray(encode_tensor(np.ones(3, dtype=np.float32)))
    buf[0:4] = b"XXXX"
    with pytest.raises(MagicError):
        decode_tensor(bytes(buf))


@pytest.mark.parametrize("cut", [2, 5, 9, 20])
def test_truncated_payload(cut):
    buf = encode_tensor(np.ones((2, 3), dtype=np.float32))
    with pytest.raises(TruncatedFileError):
        decode_tensor(buf[:cut])


def test_unknown_dtype_code():
    buf = bytearray(encode_tensor(np.ones(2, dtype=np.float32)))
    buf[4] = 7
    with pytest.raises(WeightFileError):
        decode_tensor(bytes(buf))


def test_unsupported_dtype_rejected():
    with pytest.raises(WeightFileError):
        encode_tensor(np.ones(2, dtype=np.int32))


def test_stream_reads_consecutive_tensors():
    fh = io.BytesIO(encode_tensor(np.ones(2, np.float32)) + encode_tensor(np.zeros(3, np.float64)))
    assert read_tensor_from(fh).shape == (2,)
    assert read_tensor_from(fh).shape == (3,)
