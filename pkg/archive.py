"""Weight checkpoint container.

Layout (little-endian): magic b"RPTK", u16 version, u32 entry count, then per
entry u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 ndim, u32 dims,
row-major data; a trailing u32 CRC32 covers every preceding byte.
"""
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from errors import ArchiveCorrupt

logger = logging.getLogger(__name__)

MAGIC = b"RPTK"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
NATIVE = {0: np.float32, 1: np.float64}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}

_HEADER = struct.Struct("<4sHI")
_CRC = struct.Struct("<I")


@dataclass
class ArchiveEntry:
    name: str
    data: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValueError("entry name must be non-empty")
        if len(self.name.encode("utf-8")) > 0xFFFF:
            raise ValueError(f"entry name too long: {self.name[:32]!r}...")
        data = np.asarray(self.data)
        if data.dtype not in DTYPE_CODES:
            data = data.astype(np.float64)
        if data.ndim == 0 or data.ndim > 0xFF or 0 in data.shape:
            raise ValueError(f"{self.name!r}: dims must be a non-empty list of positive integers, got {data.shape}")
        self.data = np.ascontiguousarray(data)

    @property
    def dtype_code(self):
        return DTYPE_CODES[self.data.dtype]

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.data.shape)


@dataclass
class TensorArchive:
    entries: List[ArchiveEntry] = field(default_factory=list)

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("entry names must be unique")

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]):
        return cls([ArchiveEntry(name, value) for name, value in arrays.items()])

    def add(self, name, data):
        if name in self.names:
            raise ValueError(f"duplicate entry {name!r}")
        self.entries.append(ArchiveEntry(name, data))

    @property
    def names(self):
        return [e.name for e in self.entries]

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e.data
        raise KeyError(name)

    def __len__(self):
        return len(self.entries)

    def to_bytes(self):
        parts = [_HEADER.pack(MAGIC, VERSION, len(self.entries))]
        for e in self.entries:
            name = e.name.encode("utf-8")
            parts.append(struct.pack("<H", len(name)))
            parts.append(name)
            parts.append(struct.pack("<BB", e.dtype_code, len(e.dims)))
            parts.append(struct.pack(f"<{len(e.dims)}I", *e.dims))
            parts.append(e.data.astype(DTYPES[e.dtype_code], copy=False).tobytes(order="C"))
        payload = b"".join(parts)
        return payload + _CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < _HEADER.size + _CRC.size:
            raise ArchiveCorrupt(f"archive is truncated ({len(blob)} bytes)")
        payload, (crc,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
        magic, version, count = _HEADER.unpack_from(payload, 0)
        if magic != MAGIC:
            raise ArchiveCorrupt(f"bad magic {magic!r}")
        if version != VERSION:
            raise ArchiveCorrupt(f"unsupported archive version {version}")
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise ArchiveCorrupt("checksum mismatch")

        offset = _HEADER.size
        entries = []
        try:
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", payload, offset)
                offset += 2
                name = payload[offset:offset + name_len].decode("utf-8")
                offset += name_len
                code, ndim = struct.unpack_from("<BB", payload, offset)
                offset += 2
                if code not in DTYPES:
                    raise ArchiveCorrupt(f"{name!r}: unknown dtype code {code}")
                dims = struct.unpack_from(f"<{ndim}I", payload, offset)
                offset += 4 * ndim
                dtype = DTYPES[code]
                size = int(np.prod(dims)) * dtype.itemsize
                if offset + size > len(payload):
                    raise ArchiveCorrupt(f"{name!r}: data runs past the end of the archive")
                data = np.frombuffer(payload, dtype=dtype, count=int(np.prod(dims)), offset=offset)
                offset += size
                entries.append(ArchiveEntry(name, data.reshape(dims).astype(NATIVE[code])))
        except (struct.error, UnicodeDecodeError, ValueError) as e:
            raise ArchiveCorrupt(f"malformed entry table: {e}") from e
        if offset != len(payload):
            raise ArchiveCorrupt(f"{len(payload) - offset} trailing bytes after the last entry")
        try:
            return cls(entries)
        except ValueError as e:
            raise ArchiveCorrupt(str(e)) from e

    def write(self, path):
        atomic_write_bytes(path, self.to_bytes())
        logger.info("wrote %d tensors to %s", len(self.entries), path)

    @classmethod
    def read(cls, path):
        try:
            with open(path, "rb") as f:
                blob = f.read()
        except OSError as e:
            raise ArchiveCorrupt(f"cannot read {path}: {e}") from e
        return cls.from_bytes(blob)


def atomic_write_bytes(path, data):
    """Write to a temp file in the target directory, then rename over `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
