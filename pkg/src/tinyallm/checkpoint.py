"""Named-array checkpoint container and content digests.

File layout: an 8-byte little-endian uint64 header length, a UTF-8 JSON
header, then the concatenated raw array payloads.  The header carries
``arrays`` ({name -> {dtype, shape, offset}}, offsets relative to the
payload start) plus a free-form ``meta`` object for config echoes and
attestations.  Arrays are stored little-endian, C order, float32 by
default.  Headers are serialized with sorted keys and arrays written in
name order, so identical contents produce identical files.

Digests are SHA-256 over (name, dtype, shape, raw bytes) and back the
frozen-parameter checks: equal digests mean bitwise-equal weights.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = "tinyallm-ckpt-1"


def save_arrays(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    meta: dict | None = None,
    dtype: str = "<f4",
) -> None:
    """Write named arrays plus metadata to a single container file."""
    names = sorted(arrays)
    index: dict[str, dict] = {}
    payload = bytearray()
    for name in names:
        # np.asarray keeps 0-d shapes; ascontiguousarray would force ndim >= 1
        arr = np.asarray(arrays[name], dtype=np.dtype(dtype), order="C")
        index[name] = {"dtype": dtype, "shape": list(arr.shape), "offset": len(payload)}
        payload.extend(arr.tobytes(order="C"))
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "arrays": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container file back into ({name -> array}, meta)."""
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported container format in {path!s}")
        payload = fh.read()
    arrays: dict[str, np.ndarray] = {}
    for name, entry in header["arrays"].items():
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=start).reshape(shape)
        arrays[name] = arr.copy()
    return arrays, header["meta"]


def array_digest(arr: np.ndarray) -> str:
    """SHA-256 over dtype, shape, and raw little-endian bytes of one array."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    h = hashlib.sha256()
    h.update(arr.dtype.str.encode("ascii"))
    h.update(str(arr.shape).encode("ascii"))
    h.update(arr.tobytes(order="C"))
    return h.hexdigest()


def digest_map(arrays: dict[str, np.ndarray]) -> dict[str, str]:
    """Per-array digests, keyed by array name."""
    return {name: array_digest(arr) for name, arr in arrays.items()}


def combined_digest(arrays: dict[str, np.ndarray]) -> str:
    """One digest over all arrays, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(array_digest(arrays[name]).encode("ascii"))
    return h.hexdigest()


def file_digest(path: str | Path) -> str:
    """SHA-256 of a file's raw bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
