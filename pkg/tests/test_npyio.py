import hashlib
import struct

import numpy as np
import pytest

from dualengage.npyio import NpyFormatError, TensorFile, read_tensor, write_tensor


def _file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_scalar_shaped_round_trip(tmp_path):
    path = tmp_path / "scalar.npy"
    handle = write_tensor(np.zeros(1, dtype=np.float32), path)
    assert handle == TensorFile(path=path, dtype="f32", shape=(1,))
    out = read_tensor(path)
    assert out.shape == (1,)
    assert out[0] == 0.0


def test_identity_round_trip_exact(tmp_path):
    eye = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    path = tmp_path / "eye.npy"
    write_tensor(eye, path)
    assert np.array_equal(read_tensor(path), eye)


def test_random_tensor_checksum_round_trip(tmp_path, rng):
    arr = rng.random((5, 2, 128, 128)).astype(np.float32)
    before = hashlib.sha256(arr.tobytes()).hexdigest()
    path = tmp_path / "big.npy"
    write_tensor(arr, path)
    after = hashlib.sha256(read_tensor(path).tobytes()).hexdigest()
    assert before == after


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(1,), (7,), (3, 4), (2, 3, 4, 5)])
def test_round_trip_value_exact_both_dtypes(tmp_path, rng, dtype, shape):
    arr = rng.standard_normal(shape).astype(dtype)
    path = tmp_path / "t.npy"
    write_tensor(arr, path)
    out = read_tensor(path)
    assert out.dtype == dtype
    assert np.array_equal(out, arr)


def test_numpy_reads_our_files(tmp_path, rng):
    # independent oracle: the reference NPY reader accepts our layout
    arr = rng.random((3, 5)).astype(np.float32)
    path = tmp_path / "ours.npy"
    write_tensor(arr, path)
    assert np.array_equal(np.load(path), arr)


def test_we_read_numpy_files(tmp_path, rng):
    arr = rng.random((4, 6)).astype(np.float64)
    path = tmp_path / "theirs.npy"
    np.save(path, arr)
    assert np.array_equal(read_tensor(path), arr)


def test_zero_length_file_is_format_error(tmp_path):
    path = tmp_path / "empty.npy"
    path.write_bytes(b"")
    with pytest.raises(NpyFormatError) as exc:
        read_tensor(path)
    assert exc.value.offset == 0


def test_wrong_magic_names_first_bad_byte(tmp_path):
    path = tmp_path / "bad.npy"
    path.write_bytes(b"\x93NUMPX" + b"\x01\x00" + b"\x00" * 32)
    with pytest.raises(NpyFormatError) as exc:
        read_tensor(path)
    assert exc.value.offset == 5


def test_bad_version_is_rejected(tmp_path):
    path = tmp_path / "v2.npy"
    path.write_bytes(b"\x93NUMPY\x02\x00" + b"\x00" * 32)
    with pytest.raises(NpyFormatError) as exc:
        read_tensor(path)
    assert exc.value.offset == 6


def test_short_payload_fixture(tmp_path):
    # header declares shape (3,) f32 but only 2 elements of payload follow
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': (3,), }"
    pad = -(10 + len(header) + 1) % 64
    header = (header + " " * pad + "\n").encode()
    blob = b"\x93NUMPY\x01\x00" + struct.pack("<H", len(header)) + header
    blob += np.zeros(2, dtype=np.float32).tobytes()
    path = tmp_path / "short.npy"
    path.write_bytes(blob)
    with pytest.raises(NpyFormatError) as exc:
        read_tensor(path)
    assert exc.value.offset == len(blob)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "long.npy"
    write_tensor(np.zeros(3, dtype=np.float32), path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(NpyFormatError):
        read_tensor(path)


def test_unsupported_descr_rejected(tmp_path):
    path = tmp_path / "int.npy"
    np.save(path, np.zeros(3, dtype=np.int32))
    with pytest.raises(NpyFormatError):
        read_tensor(path)


def test_unwritable_path_mentions_path(tmp_path):
    bad = tmp_path / "no_such_dir" / "x.npy"
    with pytest.raises(OSError, match="no_such_dir"):
        write_tensor(np.zeros(3, dtype=np.float32), bad)


def test_write_rejects_non_finite_and_rank_zero():
    with pytest.raises(ValueError):
        write_tensor(np.array([np.nan], dtype=np.float32), "unused.npy")
    with pytest.raises(ValueError):
        write_tensor(np.float32(1.0), "unused.npy")


def test_other_dtypes_cast_to_f32(tmp_path):
    path = tmp_path / "ints.npy"
    handle = write_tensor(np.arange(4), path)
    assert handle.dtype == "f32"
    assert np.array_equal(read_tensor(path), np.arange(4, dtype=np.float32))
