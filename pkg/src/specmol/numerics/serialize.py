"""Binary serialization of named float64 arrays.

Layout (everything little endian):

    u32 format version
    u32 entry count
    per entry: u16 name length, UTF-8 name,
               u8 ndim, u32 x ndim dimensions,
               float64 data in row-major order
    u32 CRC-32 of all preceding bytes

The raw-byte round trip is exact: loading reproduces every array bitwise.
"""

from __future__ import annotations

import struct
import zlib
from typing import Mapping

import numpy as np

FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    """The byte stream is not a valid parameter segment."""


def dump_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, values in arrays.items():
        values = np.ascontiguousarray(values, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(values.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def load_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 12:
        raise CheckpointFormatError("segment too short")
    body, stored_crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CheckpointFormatError("checksum mismatch: segment is corrupted")
    version, count = struct.unpack_from("<II", body, 0)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported segment format version {version}")
    offset = 8
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", body, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", body, offset)
            offset += 4 * ndim
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
            data = np.frombuffer(body[offset : offset + n_bytes], dtype="<f8").reshape(shape)
            offset += n_bytes
            arrays[name] = data.astype(np.float64).copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointFormatError(f"truncated or malformed segment: {exc}") from exc
    if offset != len(body):
        raise CheckpointFormatError("trailing bytes after final entry")
    return arrays
