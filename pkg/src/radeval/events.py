"""Append-only event log: length-prefixed JSON records, fsync on append.

Each record is a 4-byte big-endian payload length followed by UTF-8
JSON. Sequence numbers are assigned by the log (position order) and
embedded in the record, so a replay reconstructs exactly the sequence
the writer acknowledged. Single-writer: appends serialize through an
internal lock.
"""

from __future__ import annotations

import json
import os
import struct
import threading
from pathlib import Path
from typing import Iterator

_LENGTH = struct.Struct(">I")


class CorruptLogError(ValueError):
    """Truncated or non-decodable record in the log file."""


class EventLog:
    def __init__(self, path: str | Path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self._count = sum(1 for _ in self.iter_events()) if self.path.exists() else 0
        self._fh = open(self.path, "ab")

    def __len__(self) -> int:
        return self._count

    def append(self, payload: dict) -> int:
        """Durably append one event; returns its sequence number."""
        with self._lock:
            seq = self._count
            record = dict(payload)
            record["seq"] = seq
            data = json.dumps(record, ensure_ascii=False, sort_keys=True).encode("utf-8")
            self._fh.write(_LENGTH.pack(len(data)))
            self._fh.write(data)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
            self._count += 1
            return seq

    def iter_events(self) -> Iterator[dict]:
        """Read every event from disk, oldest first."""
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            index = 0
            while True:
                header = fh.read(_LENGTH.size)
                if not header:
                    return
                if len(header) < _LENGTH.size:
                    raise CorruptLogError(f"truncated length prefix at record {index}")
                (length,) = _LENGTH.unpack(header)
                data = fh.read(length)
                if len(data) < length:
                    raise CorruptLogError(f"truncated payload at record {index}")
                try:
                    event = json.loads(data.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise CorruptLogError(f"bad JSON at record {index}: {exc}") from None
                yield event
                index += 1

    def read_all(self) -> list[dict]:
        return list(self.iter_events())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
