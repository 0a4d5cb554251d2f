"""Bit-packed binary archives for shot records and detection events.

Layout: a 16-byte little-endian header ``<4s H I H H H H`` (magic "RSTB",
version, n_shots, n_measure, n_rounds, n_data, flags) followed by one
fixed-size, byte-padded bit row per shot. Bits are packed LSB first.

Shot rows hold stabilizer bits (round-major, then measure qubit), the final
data bits and the burst flag. Detection rows (flags bit 0) hold the
(rounds + 1) x n_measure node bits, the node mask, the final data bits, and,
when flags bit 1 is set, the initial data string and burst flag.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .detection import DetectionBatch
from .sampling import ShotBatch

MAGIC = b"RSTB"
VERSION = 1
HEADER = struct.Struct("<4sHIHHHH")
FLAG_DETECTIONS = 1
FLAG_INIT = 2


class ArchiveError(ValueError):
    pass


def _pack(rows: np.ndarray) -> bytes:
    return np.packbits(rows.astype(np.uint8), axis=1, bitorder="little").tobytes()


def _unpack(buf: bytes, n: int, width: int) -> np.ndarray:
    row_bytes = (width + 7) // 8
    arr = np.frombuffer(buf, dtype=np.uint8)
    if arr.size != n * row_bytes:
        raise ArchiveError(f"payload has {arr.size} bytes, expected {n * row_bytes}")
    return np.unpackbits(arr.reshape(n, row_bytes), axis=1, count=width, bitorder="little")


def _read_header(data: bytes):
    if len(data) < HEADER.size:
        raise ArchiveError("file shorter than the archive header")
    magic, version, n, nm, nr, nd, flags = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ArchiveError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    return n, nm, nr, nd, flags


def shots_to_bytes(batch: ShotBatch) -> bytes:
    n = len(batch)
    rows = np.concatenate([batch.stabilizer_bits.reshape(n, -1), batch.final_data_bits,
                           batch.burst_flag.reshape(n, 1)], axis=1)
    return HEADER.pack(MAGIC, VERSION, n, batch.n_measure, batch.n_rounds, batch.n_data, 0) + _pack(rows)


def shots_from_bytes(data: bytes, init_bits: np.ndarray | None = None, start: int = 0) -> ShotBatch:
    """Decode a shot archive. Initial strings are not stored; pass them in
    (or regenerate them from the run seed) when detections are needed."""
    n, nm, nr, nd, flags = _read_header(data)
    if flags & FLAG_DETECTIONS:
        raise ArchiveError("this is a detection archive, not a shot archive")
    rows = _unpack(data[HEADER.size:], n, nm * nr + nd + 1)
    stab = rows[:, :nm * nr].reshape(n, nr, nm)
    final = rows[:, nm * nr:nm * nr + nd]
    flag = rows[:, -1].astype(bool)
    if init_bits is None:
        init_bits = np.zeros((n, nd), dtype=np.uint8)
    return ShotBatch(np.ascontiguousarray(stab), np.ascontiguousarray(final), flag,
                     np.asarray(init_bits, dtype=np.uint8), np.arange(start, start + n, dtype=np.int64))


def detections_to_bytes(batch: DetectionBatch) -> bytes:
    n = len(batch)
    mask = np.broadcast_to(batch.mask.reshape(1, -1), (n, batch.mask.size))
    rows = np.concatenate([batch.events.reshape(n, -1), mask, batch.final_bits,
                           batch.init_bits, batch.burst_flag.reshape(n, 1)], axis=1)
    head = HEADER.pack(MAGIC, VERSION, n, batch.n_measure, batch.n_rounds, batch.n_data,
                       FLAG_DETECTIONS | FLAG_INIT)
    return head + _pack(rows)


def detections_from_bytes(data: bytes, start: int = 0) -> DetectionBatch:
    n, nm, nr, nd, flags = _read_header(data)
    if not flags & FLAG_DETECTIONS:
        raise ArchiveError("this is a shot archive, not a detection archive")
    nodes = (nr + 1) * nm
    width = 2 * nodes + nd + (nd + 1 if flags & FLAG_INIT else 0)
    rows = _unpack(data[HEADER.size:], n, width)
    ev = rows[:, :nodes].reshape(n, nr + 1, nm)
    mask = (rows[0, nodes:2 * nodes] if n else np.ones(nodes, dtype=np.uint8)).reshape(nr + 1, nm).astype(bool)
    final = rows[:, 2 * nodes:2 * nodes + nd]
    if flags & FLAG_INIT:
        init = rows[:, 2 * nodes + nd:2 * nodes + 2 * nd]
        flag = rows[:, -1].astype(bool)
    else:
        init = np.zeros((n, nd), dtype=np.uint8)
        flag = np.zeros(n, dtype=bool)
    return DetectionBatch(np.ascontiguousarray(ev), mask, np.ascontiguousarray(init),
                          np.ascontiguousarray(final), np.arange(start, start + n, dtype=np.int64), flag)


def write_shots(path, batch: ShotBatch) -> None:
    Path(path).write_bytes(shots_to_bytes(batch))


def read_shots(path, init_bits=None, start: int = 0) -> ShotBatch:
    return shots_from_bytes(Path(path).read_bytes(), init_bits, start)


def write_detections(path, batch: DetectionBatch) -> None:
    Path(path).write_bytes(detections_to_bytes(batch))


def read_detections(path) -> DetectionBatch:
    return detections_from_bytes(Path(path).read_bytes())
