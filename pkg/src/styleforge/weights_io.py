"""Reader, writer and inspector for the binary weight-file format.

Layout (all integers little-endian):

    bytes 0..3   magic b"SFW1"
    u32          format version (currently 1)
    3 x f32      per-channel means, in the declared channel order
    u8           channel-order flag: 0 = RGB, 1 = BGR
    u32          entry count
    per entry:   u16 name length, UTF-8 name,
                 u8 rank, rank x u32 dimensions,
                 prod(dims) x f32 payload
    u32          CRC-32 of all payload bytes in file order

Entries are stored in a canonical order (each conv layer's weight then
bias, layers in network order) so that a read/write round trip is
byte-identical.  The reader accepts any entry order but requires exactly
the entry set and shapes of the fixed architecture.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .architecture import ENTRY_ORDER, EXPECTED_SHAPES
from .errors import (
    BadMagicError,
    ChecksumError,
    ConfigurationError,
    LayerShapeError,
    TruncatedFileError,
    UnsupportedVersionError,
)

MAGIC = b"SFW1"
VERSION = 1
_ORDER_FLAGS = {0: "rgb", 1: "bgr"}
_ORDER_CODES = {v: k for k, v in _ORDER_FLAGS.items()}


@dataclass
class WeightFile:
    """Parsed contents of a weight file."""

    channel_means: np.ndarray  # (3,) float32, in channel_order
    channel_order: str  # "rgb" or "bgr"
    entries: dict[str, np.ndarray]  # entry name -> float32 tensor


@dataclass(frozen=True)
class EntryInfo:
    name: str
    shape: tuple[int, ...]
    n_bytes: int
    shape_ok: bool


@dataclass(frozen=True)
class WeightFileReport:
    """Diagnostic summary produced by inspect_weight_file."""

    version: int
    channel_means: tuple[float, float, float]
    channel_order: str
    entries: tuple[EntryInfo, ...]
    total_parameters: int
    checksum_ok: bool
    stored_checksum: int
    computed_checksum: int


class _Cursor:
    """Byte cursor over a buffer that raises on under-reads."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"file ends inside {what}: needed {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _parse(data: bytes):
    """Structural parse shared by the reader and the inspector.

    Returns (version, means, order, entries, stored_crc, computed_crc)
    without judging checksum or shape validity.
    """
    cur = _Cursor(data)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"unsupported format version {version}, this reader handles {VERSION}"
        )
    means = np.frombuffer(cur.take(12, "channel means"), dtype="<f4").astype(np.float32)
    flag = cur.u8("channel-order flag")
    if flag not in _ORDER_FLAGS:
        raise ConfigurationError(f"unknown channel-order flag {flag}")
    order = _ORDER_FLAGS[flag]
    count = cur.u32("entry count")
    entries: dict[str, np.ndarray] = {}
    crc = 0
    for i in range(count):
        what = f"entry {i}"
        name_len = cur.u16(f"{what} name length")
        name = cur.take(name_len, f"{what} name").decode("utf-8")
        rank = cur.u8(f"{name} rank")
        dims = tuple(cur.u32(f"{name} dimension") for _ in range(rank))
        n_values = 1
        for d in dims:
            n_values *= d
        payload = cur.take(4 * n_values, f"{name} payload")
        crc = zlib.crc32(payload, crc)
        if name in entries:
            raise LayerShapeError(f"duplicate entry {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(
            np.float32
        )
    stored_crc = cur.u32("checksum")
    if cur.pos != len(data):
        raise TruncatedFileError(
            f"{len(data) - cur.pos} unexpected trailing bytes after checksum"
        )
    return version, means, order, entries, stored_crc, crc


def _check_entry_table(entries: dict[str, np.ndarray]) -> None:
    for name, arr in entries.items():
        expected = EXPECTED_SHAPES.get(name)
        if expected is None:
            raise LayerShapeError(f"entry {name!r} is not part of the architecture")
        if arr.shape != expected:
            raise LayerShapeError(
                f"entry {name!r} has shape {arr.shape}, architecture requires {expected}"
            )
    missing = [name for name in ENTRY_ORDER if name not in entries]
    if missing:
        raise LayerShapeError(f"missing entries: {', '.join(missing)}")


def read_weight_file(path) -> WeightFile:
    """Read and fully validate a weight file.

    Raises BadMagicError, UnsupportedVersionError, TruncatedFileError,
    ChecksumError or LayerShapeError; a successful return means the file
    matches the fixed architecture exactly.
    """
    data = Path(path).read_bytes()
    _version, means, order, entries, stored_crc, crc = _parse(data)
    if stored_crc != crc:
        raise ChecksumError(
            f"payload checksum mismatch: stored {stored_crc:#010x}, "
            f"computed {crc:#010x}"
        )
    _check_entry_table(entries)
    return WeightFile(channel_means=means, channel_order=order, entries=entries)


def write_weight_file(path, weight_file: WeightFile) -> None:
    """Write a weight file in canonical entry order.

    The entry set must match the fixed architecture; writing is refused
    otherwise so that every file this function produces is readable.
    """
    _check_entry_table(weight_file.entries)
    if weight_file.channel_order not in _ORDER_CODES:
        raise ConfigurationError(
            f"channel order must be 'rgb' or 'bgr', got {weight_file.channel_order!r}"
        )
    means = np.asarray(weight_file.channel_means, dtype="<f4")
    if means.shape != (3,):
        raise ConfigurationError(f"channel means must have shape (3,), got {means.shape}")
    parts = [MAGIC, struct.pack("<I", VERSION), means.tobytes(),
             bytes([_ORDER_CODES[weight_file.channel_order]]),
             struct.pack("<I", len(ENTRY_ORDER))]
    crc = 0
    for name in ENTRY_ORDER:
        arr = np.ascontiguousarray(weight_file.entries[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(bytes([arr.ndim]))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = arr.tobytes()
        parts.append(payload)
        crc = zlib.crc32(payload, crc)
    parts.append(struct.pack("<I", crc))
    Path(path).write_bytes(b"".join(parts))


def inspect_weight_file(path) -> WeightFileReport:
    """Summarise a weight file without requiring it to be fully valid.

    Structural problems (magic, version, truncation) still raise, but
    checksum and per-entry shape mismatches are reported in the returned
    summary instead so corrupt files can be examined.
    """
    data = Path(path).read_bytes()
    version, means, order, entries, stored_crc, crc = _parse(data)
    infos = []
    total = 0
    for name, arr in entries.items():
        total += arr.size
        infos.append(
            EntryInfo(
                name=name,
                shape=arr.shape,
                n_bytes=arr.size * 4,
                shape_ok=EXPECTED_SHAPES.get(name) == arr.shape,
            )
        )
    return WeightFileReport(
        version=version,
        channel_means=tuple(float(m) for m in means),
        channel_order=order,
        entries=tuple(infos),
        total_parameters=total,
        checksum_ok=stored_crc == crc,
        stored_checksum=stored_crc,
        computed_checksum=crc,
    )
