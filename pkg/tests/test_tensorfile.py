import numpy as np
import pytest

from kernopt.errors import TensorFormatError
from kernopt.tensorfile import read_tensor, write_tensor


@pytest.mark.parametrize("dtype", ["float32", "float64", "int32", "int64", "float16"])
def test_roundtrip_dtypes(tmp_path, dtype):
    rng = np.random.default_rng(7)
    arr = (rng.standard_normal((3, 4, 5)) * 10).astype(dtype)
    p = tmp_path / "t.kstn"
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.dtype == np.dtype(dtype).newbyteorder("<")
    assert back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_roundtrip_scalar_and_empty(tmp_path):
    p = tmp_path / "s.kstn"
    write_tensor(p, np.float32(3.5))
    assert read_tensor(p).shape == ()
    write_tensor(p, np.zeros((0, 4), dtype=np.float32))
    assert read_tensor(p).shape == (0, 4)


def test_deterministic_bytes(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    a, b = tmp_path / "a.kstn", tmp_path / "b.kstn"
    write_tensor(a, arr)
    write_tensor(b, arr)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XXXX" + b[4:],            # bad magic
        lambda b: b[:4] + bytes([99]) + b[5:],  # unknown dtype code
        lambda b: b[:-3],                      # truncated payload
        lambda b: b[:8],                       # truncated header
    ],
)
def test_malformed_files_raise(tmp_path, mutate):
    p = tmp_path / "t.kstn"
    write_tensor(p, np.ones((2, 2), dtype=np.float32))
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(TensorFormatError):
        read_tensor(p)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(TensorFormatError):
        write_tensor(tmp_path / "t.kstn", np.ones(3, dtype=np.complex64))
