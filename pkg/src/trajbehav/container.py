"""Versioned binary container for checkpoints and prepared-dataset dumps.

Layout: magic | u16 version | u32 header length | canonical-JSON header |
concatenated little-endian array bytes | sha256 of everything before it.
Writes are atomic (temp file + rename) and byte-reproducible: the header
JSON is canonical (sorted keys, no whitespace) and arrays are stored in the
listed order, C-contiguous, little-endian, in their native width.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError

MAGIC = b"TBHV"
VERSION = 1

_DTYPES = {"<f4", "<f8", "<i8"}


def _canonical_dtype(arr):
    dt = arr.dtype.newbyteorder("<")
    s = dt.str
    if s not in _DTYPES:
        raise CheckpointError(f"unsupported array dtype {arr.dtype}")
    return s


def write_container(path, kind, meta, arrays):
    """Write `arrays` (ordered name -> ndarray) plus a JSON-able `meta`."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        dt = _canonical_dtype(arr)
        data = np.ascontiguousarray(arr, dtype=np.dtype(dt))
        entries.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
        blobs.append(data.tobytes())
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<H", VERSION)
    payload += struct.pack("<I", len(header))
    payload += header
    for blob in blobs:
        payload += blob
    digest = hashlib.sha256(bytes(payload)).digest()
    payload += digest

    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path):
    """Read back (kind, meta, arrays). Verifies magic, version, checksum."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 6 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a container file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<H", body, off)
    off += 2
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack_from("<I", body, off)
    off += 4
    try:
        header = json.loads(body[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dt.itemsize
        chunk = body[off:off + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dt).reshape(shape).copy()
        off += nbytes
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after arrays")
    return header["kind"], header["meta"], arrays
