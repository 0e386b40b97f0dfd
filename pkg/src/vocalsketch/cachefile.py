"""Binary matrix files with a small versioned header.

Layout (little-endian)::

    magic     8 bytes   b"VSKMATRX"
    version   uint32
    tag       32 bytes  ASCII, NUL-padded (registry hash or config hash)
    rows      uint64
    cols      uint32
    data      rows * cols float32, row-major
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"VSKMATRX"
VERSION = 1
_HEADER = struct.Struct("<8sI32sQI")


class CacheError(Exception):
    pass


class StaleCacheError(CacheError):
    """The cache was written for a different registry or configuration."""


def write_matrix(path, matrix, tag: str):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("cache matrices are 2-D")
    raw_tag = tag.encode("ascii")
    if len(raw_tag) > 32:
        raise ValueError("cache tag longer than 32 bytes")
    data = np.ascontiguousarray(matrix, dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, raw_tag, data.shape[0], data.shape[1])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    # write-then-rename so readers never see a half-written file
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise CacheError(f"{path}: truncated header")
    magic, version, tag, rows, cols = _HEADER.unpack(head)
    if magic != MAGIC:
        raise CacheError(f"{path}: not a matrix cache")
    if version != VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    return tag.rstrip(b"\0").decode("ascii", "replace"), rows, cols


def read_matrix(path, expected_tag: str | None = None) -> np.ndarray:
    """Load a cache as float32; raise :class:`StaleCacheError` on tag mismatch."""
    tag, rows, cols = read_header(path)
    if expected_tag is not None and tag != expected_tag:
        raise StaleCacheError(f"{path}: cache tag {tag!r} does not match {expected_tag!r}")
    data = np.fromfile(path, dtype="<f4", offset=_HEADER.size)
    if data.size != rows * cols:
        raise CacheError(f"{path}: expected {rows}x{cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(np.float32)
