"""Time-tag file formats.

Binary layout (little-endian): a 16-byte header ``b"QTT1"``, u32 channel
count, u64 record count, followed by 16-byte records {u8 channel, 7 zero
bytes, u64 time_ps}. Records are written channel by channel in the order of
the stream mapping; each channel's tags stay sorted.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .emission import TimeTagStream

MAGIC = b"QTT1"
_HEADER = struct.Struct("<4sIQ")
RECORD = np.dtype([("channel", "u1"), ("pad", "V7"), ("time_ps", "<u8")])
assert RECORD.itemsize == 16


def _records(streams: Mapping[int, TimeTagStream]) -> np.ndarray:
    n = sum(len(s) for s in streams.values())
    rec = np.zeros(n, dtype=RECORD)
    i = 0
    for ch, s in streams.items():
        if not 0 <= int(ch) < 256:
            raise ValueError(f"channel {ch} does not fit in u8")
        rec["channel"][i:i + len(s)] = ch
        rec["time_ps"][i:i + len(s)] = s.tags
        i += len(s)
    return rec


def _streams(channel: np.ndarray, time_ps: np.ndarray) -> Dict[int, TimeTagStream]:
    out = {}
    for ch in dict.fromkeys(channel.tolist()):  # first-appearance order
        out[int(ch)] = TimeTagStream(int(ch), time_ps[channel == ch])
    return out


def to_bytes(streams: Mapping[int, TimeTagStream]) -> bytes:
    rec = _records(streams)
    return _HEADER.pack(MAGIC, len(streams), rec.size) + rec.tobytes()


def from_bytes(data: bytes) -> Dict[int, TimeTagStream]:
    if len(data) < _HEADER.size:
        raise ValueError("truncated time-tag header")
    magic, n_ch, n_rec = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != n_rec * RECORD.itemsize:
        raise ValueError(f"expected {n_rec} records, found {len(body) / RECORD.itemsize:g}")
    rec = np.frombuffer(body, dtype=RECORD)
    if np.any(np.frombuffer(rec["pad"].tobytes(), dtype=np.uint8)):
        raise ValueError("non-zero padding bytes")
    streams = _streams(rec["channel"], rec["time_ps"].astype(np.uint64))
    if len(streams) > n_ch:
        raise ValueError(f"header declares {n_ch} channels, records use {len(streams)}")
    return streams


def to_csv(streams: Mapping[int, TimeTagStream]) -> str:
    out = io.StringIO()
    out.write("channel,time_ps\n")
    for ch, s in streams.items():
        for t in s.tags.tolist():
            out.write(f"{int(ch)},{t}\n")
    return out.getvalue()


def from_csv(text: str) -> Dict[int, TimeTagStream]:
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if rows and rows[0].startswith("channel"):
        rows = rows[1:]
    if not rows:
        return {}
    ch = np.array([int(r.split(",")[0]) for r in rows], dtype=np.int64)
    t = np.array([int(r.split(",")[1]) for r in rows], dtype=np.uint64)
    return _streams(ch, t)


def write(path, streams: Mapping[int, TimeTagStream]) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(to_csv(streams))
    else:
        path.write_bytes(to_bytes(streams))


def read(path) -> Dict[int, TimeTagStream]:
    path = Path(path)
    if path.suffix == ".csv":
        return from_csv(path.read_text())
    return from_bytes(path.read_bytes())
