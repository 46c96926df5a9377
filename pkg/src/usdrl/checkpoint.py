"""Checkpoint container: a JSON header followed by raw little-endian arrays.

Layout::

    uint64 LE   header length in bytes
    bytes       UTF-8 JSON header
    bytes       array data, row-major, offsets relative to the end of the header

The header carries ``format_version``, ``config`` and ``arrays``
(name -> {shape, dtype, offset}) plus any extra keys the caller supplies.
"""

from __future__ import annotations

import fcntl
import json
import os
import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8"}
_CODES = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64", np.dtype("<i8"): "i64"}


def _code(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise TypeError(f"unsupported array dtype {arr.dtype}")
    return _CODES[dt]


def write_container(path, config: dict, arrays: dict[str, np.ndarray], **extra) -> None:
    directory, offset = {}, 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise ValueError(f"array {name!r} has non-finite values")
        code = _code(arr)
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        directory[name] = {"shape": list(arr.shape), "dtype": code, "offset": offset}
        blobs.append(blob)
        offset += len(blob)
    header = {"format_version": FORMAT_VERSION, "config": config, "arrays": directory, **extra}
    raw = json.dumps(header, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", data[:8])
    header = json.loads(data[8:8 + n])
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format version {header.get('format_version')}")
    base = 8 + n
    arrays = {}
    for name, spec in header["arrays"].items():
        dt = np.dtype(_DTYPES[spec["dtype"]])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        start = base + spec["offset"]
        arrays[name] = np.frombuffer(data, dtype=dt, count=count, offset=start).reshape(spec["shape"]).copy()
    return header, arrays


class CheckpointLocked(RuntimeError):
    pass


@contextmanager
def locked(path):
    """Advisory lock so one process owns a checkpoint file at a time."""
    lock = open(str(path) + ".lock", "w")
    try:
        fcntl.flock(lock, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except BlockingIOError:
        lock.close()
        raise CheckpointLocked(f"checkpoint {path} is locked by another process") from None
    try:
        yield
    finally:
        fcntl.flock(lock, fcntl.LOCK_UN)
        lock.close()
