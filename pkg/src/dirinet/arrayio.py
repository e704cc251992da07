"""Flat single-file archive for named numeric arrays.

Layout: an ASCII format tag line, a 4-byte little-endian header length,
a JSON header carrying free-form metadata plus the array manifest
(name, shape, dtype), then the raw array payloads concatenated in
manifest order (C order, little-endian dtypes).  Writes are atomic and
byte-deterministic for identical content.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError


def write_archive(path, format_tag: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        payloads.append(arr.tobytes(order="C"))
    header = json.dumps(
        {"format": format_tag, "meta": meta, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(format_tag.encode("ascii") + b"\n")
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)
    os.replace(tmp, path)


def read_archive(path, expected_tag: str):
    """Returns (meta, arrays) or raises CheckpointError on any defect."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read archive {path}: {exc}") from exc
    tag_line = expected_tag.encode("ascii") + b"\n"
    if not raw.startswith(tag_line):
        found = raw.split(b"\n", 1)[0][:32].decode("ascii", "replace")
        raise CheckpointError(
            f"{path}: unknown format version {found!r} (expected {expected_tag!r})"
        )
    off = len(tag_line)
    if len(raw) < off + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    off += hlen
    arrays = {}
    for entry in header.get("arrays", []):
        name = entry["name"]
        shape = tuple(entry["shape"])
        dtype = np.dtype(entry["dtype"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload for array {name!r}")
        arrays[name] = (
            np.frombuffer(raw[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        )
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes after payload")
    return header.get("meta", {}), arrays
