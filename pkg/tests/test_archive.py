import struct
import zlib

import numpy as np
import pytest

from archive import MAGIC, TensorArchive
from errors import ArchiveCorrupt


def sample():
    archive = TensorArchive()
    archive.add("conv0.weight", np.arange(24, dtype=np.float32).reshape(2, 2, 2, 3))
    archive.add("dense0.weight", np.linspace(-1, 1, 6).reshape(3, 2))
    archive.add("dense0.bias", np.array([0.5, -0.25]))
    return archive


def test_layout_of_a_single_entry():
    blob = TensorArchive.from_arrays({"w": np.array([[1.0, 2.0]])}).to_bytes()
    expected = (MAGIC + struct.pack("<HI", 1, 1) + struct.pack("<H", 1) + b"w"
                + struct.pack("<BB", 1, 2) + struct.pack("<II", 1, 2) + struct.pack("<2d", 1.0, 2.0))
    assert blob[:-4] == expected
    assert blob[-4:] == struct.pack("<I", zlib.crc32(expected))


def test_round_trip_is_byte_identical(tmp_path):
    path = tmp_path / "ckpt.rptk"
    sample().write(path)
    first = path.read_bytes()
    loaded = TensorArchive.read(path)
    loaded.write(path)
    assert path.read_bytes() == first
    assert loaded.names == ["conv0.weight", "dense0.weight", "dense0.bias"]
    assert loaded["conv0.weight"].dtype == np.float32
    np.testing.assert_array_equal(loaded["dense0.weight"], np.linspace(-1, 1, 6).reshape(3, 2))


def test_unicode_names_survive():
    archive = TensorArchive.from_arrays({"schicht-ä.weight": np.ones((2, 2))})
    assert TensorArchive.from_bytes(archive.to_bytes()).names == ["schicht-ä.weight"]


def test_duplicate_and_empty_entries_are_rejected():
    archive = sample()
    with pytest.raises(ValueError):
        archive.add("dense0.bias", np.zeros(2))
    with pytest.raises(ValueError):
        archive.add("empty", np.zeros((0, 3)))


@pytest.mark.parametrize("mutate", [
    lambda b: b[:-10],
    lambda b: b[:6],
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:20] + bytes([b[20] ^ 0xFF]) + b[21:],
    lambda b: b[:4] + struct.pack("<H", 2) + b[6:],
])
def test_corruption_is_detected(mutate):
    with pytest.raises(ArchiveCorrupt):
        TensorArchive.from_bytes(mutate(sample().to_bytes()))


def test_entry_count_mismatch_with_valid_checksum():
    blob = sample().to_bytes()[:-4]
    payload = blob[:6] + struct.pack("<I", 5) + blob[10:]
    with pytest.raises(ArchiveCorrupt):
        TensorArchive.from_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def test_missing_file(tmp_path):
    with pytest.raises(ArchiveCorrupt):
        TensorArchive.read(tmp_path / "absent.rptk")


def test_write_leaves_no_temp_files(tmp_path):
    sample().write(tmp_path / "a.rptk")
    assert [p.name for p in tmp_path.iterdir()] == ["a.rptk"]
