"""Sectioned binary container used by the model (GAGM) and avatar (GAGA) files.

Layout: 4-byte magic, u32 version, u32 header length, JSON header, then raw
little-endian blobs in the order the header declares. The header carries
free-form metadata plus, per section, name/dtype/shape so loads can validate
byte counts and name the offending section on truncation.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

_DTYPES = {"float32": "<f4", "int32": "<i4"}


def write_sections(path, magic: bytes, version: int, meta: dict,
                   sections: list[tuple[str, np.ndarray]]) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    decls = []
    blobs = []
    for name, arr in sections:
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.integer):
            dtype = "int32"
        else:
            dtype = "float32"
        blob = np.ascontiguousarray(arr.astype(_DTYPES[dtype])).tobytes()
        decls.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                      "bytes": len(blob)})
        blobs.append(blob)
    header = json.dumps({"meta": meta, "sections": decls},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", version, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_sections(path, magic: bytes, version: int):
    """Read a sectioned file; returns ``(meta, {name: array})`` (float64/int64)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    if len(raw) < 12:
        raise FormatError(f"{path}: too short to hold a header")
    if raw[:4] != magic:
        raise FormatError(
            f"{path}: bad magic {raw[:4]!r}, expected {magic.decode('ascii')}"
        )
    file_version, header_len = struct.unpack_from("<II", raw, 4)
    if file_version != version:
        raise FormatError(
            f"{path}: unsupported version {file_version} (this build reads "
            f"version {version}); regenerate the file with this software"
        )
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt JSON header ({exc})") from None
    offset = 12 + header_len
    arrays = {}
    for decl in header.get("sections", []):
        name, dtype, shape, nbytes = decl["name"], decl["dtype"], decl["shape"], decl["bytes"]
        if dtype not in _DTYPES:
            raise FormatError(f"{path}: section '{name}' has unknown dtype {dtype}")
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if nbytes != expected:
            raise FormatError(
                f"{path}: section '{name}' declares {nbytes} bytes, shape implies {expected}"
            )
        if offset + nbytes > len(raw):
            raise FormatError(
                f"{path}: truncated in section '{name}' "
                f"(need {nbytes} bytes, {len(raw) - offset} left)"
            )
        arr = np.frombuffer(raw, dtype=_DTYPES[dtype], count=expected // 4,
                            offset=offset).reshape(shape)
        arrays[name] = arr.astype(np.int64 if dtype == "int32" else np.float64)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after last section")
    return header.get("meta", {}), arrays
