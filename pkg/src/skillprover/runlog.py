"""Structured newline-delimited run logs.

Records carry a monotonic sequence number instead of wall-clock times so
that a replayed run writes byte-identical logs.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path


class RunLog:
    def __init__(self, path: str | Path, start_seq: int = 0, echo=None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seq = start_seq
        self._lock = threading.Lock()
        self._fh = self.path.open("a", encoding="utf-8")
        self._echo = echo

    @property
    def seq(self) -> int:
        with self._lock:
            return self._seq

    def write(self, record: dict) -> int:
        with self._lock:
            seq = self._seq
            self._seq += 1
            entry = {"seq": seq, **record}
            self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._fh.flush()
        if self._echo is not None:
            self._echo(entry)
        return seq

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def read_log(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records
