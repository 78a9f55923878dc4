"""Append-only journal of ledger transitions.

Record layout: u32 LE payload length, payload, u32 LE crc32 of the payload.
The payload is ``key=value`` lines (``ts``, ``job``, ``op``, ``worker`` and,
for ``add`` records, ``step`` and ``param.*``). A damaged record at the very
end is a torn write and is dropped; damage anywhere else is fatal.
"""
from __future__ import annotations

import os
import struct
import threading
import zlib
from pathlib import Path

from ..errors import JournalCorruptionError
from .protocol import decode

_HEAD = struct.Struct("<I")
_CRC = struct.Struct("<I")
MAX_RECORD = 1 << 20


def pack_record(fields: dict) -> bytes:
    payload = "".join(f"{k}={v}\n" for k, v in fields.items()).encode("utf-8")
    return _HEAD.pack(len(payload)) + payload + _CRC.pack(zlib.crc32(payload))


def read_journal(path) -> tuple[list[dict], int]:
    """All intact records and the byte length they span (a torn tail is excluded)."""
    data = Path(path).read_bytes() if Path(path).exists() else b""
    records = []
    pos = 0
    while pos < len(data):
        if pos + _HEAD.size > len(data):
            break  # torn header
        (n,) = _HEAD.unpack_from(data, pos)
        end = pos + _HEAD.size + n + _CRC.size
        if n > MAX_RECORD or end > len(data):
            if n > MAX_RECORD and end <= len(data):
                raise JournalCorruptionError(f"{path}: implausible record length at byte {pos}")
            break  # torn body
        payload = data[pos + _HEAD.size: pos + _HEAD.size + n]
        (crc,) = _CRC.unpack_from(data, end - _CRC.size)
        if zlib.crc32(payload) != crc:
            if end == len(data):
                break  # torn final record
            raise JournalCorruptionError(f"{path}: checksum mismatch in record at byte {pos}")
        try:
            records.append(decode(payload))
        except Exception as exc:
            raise JournalCorruptionError(f"{path}: undecodable record at byte {pos}") from exc
        pos = end
    return records, pos


class Journal:
    """Durable writer; truncates any torn tail on open so new records follow intact ones."""

    def __init__(self, path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self.records, good = read_journal(self.path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")
        if self._fh.tell() != good:
            self._fh.truncate(good)
            self._fh.seek(good)
        self._lock = threading.Lock()

    def append(self, fields: dict) -> None:
        rec = pack_record(fields)
        with self._lock:
            self._fh.write(rec)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()
