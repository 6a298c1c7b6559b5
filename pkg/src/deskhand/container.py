"""Binary chunked container shared by demo, dataset, and policy-index files.

Layout, normative for every tool that touches these files (all integers
little-endian, tensors C-order little-endian float32 unless a record type
says otherwise):

    bytes 0..3    magic ``b"DHCF"``
    bytes 4..5    u16 format version (currently 1)
    bytes 6..7    u16 content kind: 1 demo, 2 dataset, 3 neighbor index
    bytes 8..11   u32 header byte length N
    bytes 12..    N bytes of UTF-8 JSON header
    afterwards, records until end of file:
        u16 record tag, u32 payload byte length, payload bytes

Readers must skip record tags they do not recognize so files can grow new
record types without breaking old tools.  Each failure mode gets its own
exception class; the `code` attribute doubles as a CLI exit status.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, List, Tuple

import numpy as np

MAGIC = b"DHCF"
FORMAT_VERSION = 1

KIND_DEMO = 1
KIND_DATASET = 2
KIND_INDEX = 3

_FIXED = struct.Struct("<HHI")      # version, kind, header length
_RECORD = struct.Struct("<HI")      # tag, payload length


class ContainerError(Exception):
    """Base class for malformed container files."""

    code = 10


class MagicError(ContainerError):
    """File does not start with the container magic."""

    code = 11


class VersionError(ContainerError):
    """File declares a format version this reader does not speak."""

    code = 12


class KindError(ContainerError):
    """File holds a different content kind than the caller asked for."""

    code = 13


class TruncatedError(ContainerError):
    """File ends inside a structure a length field promised."""

    code = 14


class DimensionError(ContainerError):
    """Record payload size disagrees with the dimensions in the header."""

    code = 15


def pack_tensor(arr: np.ndarray) -> bytes:
    """Serialize an array as C-order little-endian float32."""
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def unpack_tensor(buf: bytes, shape: Tuple[int, ...], what: str = "tensor") -> np.ndarray:
    """Inverse of pack_tensor; returns an owned, writable array."""
    n = int(np.prod(shape)) if shape else 1
    if len(buf) != 4 * n:
        raise DimensionError(
            f"{what}: expected {4 * n} bytes for shape {tuple(shape)}, got {len(buf)}"
        )
    return np.frombuffer(buf, dtype="<f4").reshape(shape).copy()


def write_container(
    path, kind: int, header: dict, records: Iterable[Tuple[int, bytes]]
) -> None:
    """Write magic, header JSON, and tagged records to `path`.

    The header is serialized with sorted keys so identical content always
    produces identical bytes.
    """
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_FIXED.pack(FORMAT_VERSION, kind, len(blob)))
        f.write(blob)
        for tag, payload in records:
            f.write(_RECORD.pack(tag, len(payload)))
            f.write(payload)


def read_container(path, expect_kind: int | None = None):
    """Read a container fully; returns (kind, header, [(tag, payload), ...]).

    Raises MagicError / VersionError / KindError / TruncatedError; payloads
    are returned verbatim, including tags the caller may not know.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 + _FIXED.size:
        raise TruncatedError(f"{path}: shorter than the fixed header")
    if data[:4] != MAGIC:
        raise MagicError(f"{path}: bad magic {data[:4]!r}")
    version, kind, header_len = _FIXED.unpack_from(data, 4)
    if version != FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version}, this reader speaks {FORMAT_VERSION}"
        )
    if expect_kind is not None and kind != expect_kind:
        raise KindError(f"{path}: content kind {kind}, expected {expect_kind}")
    off = 4 + _FIXED.size
    if off + header_len > len(data):
        raise TruncatedError(f"{path}: header extends past end of file")
    try:
        header = json.loads(data[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TruncatedError(f"{path}: header is not valid JSON ({e})") from None
    off += header_len

    records: List[Tuple[int, bytes]] = []
    while off < len(data):
        if off + _RECORD.size > len(data):
            raise TruncatedError(f"{path}: record prefix cut short at byte {off}")
        tag, n = _RECORD.unpack_from(data, off)
        off += _RECORD.size
        if off + n > len(data):
            raise TruncatedError(
                f"{path}: record tag {tag} declares {n} bytes, "
                f"only {len(data) - off} remain"
            )
        records.append((tag, data[off : off + n]))
        off += n
    return kind, header, records
