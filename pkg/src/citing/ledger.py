"""Append-only JSONL run ledger.

One line per provider or trainer call. Timestamps are the only
non-deterministic field; :func:`normalize_event` strips them so two runs of a
mock pipeline can be compared byte-for-byte.
"""

from __future__ import annotations

import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

from .jsonio import dump_json_line, read_jsonl


class RunLedger:
    """Serialized append channel; safe to share across threads."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, kind: str, **fields: Any) -> None:
        event = {"ts": datetime.now(timezone.utc).isoformat(), "kind": kind}
        event.update(fields)
        line = dump_json_line(event)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def events(self, kind: str | None = None) -> list[dict]:
        if not self.path.exists():
            return []
        rows = list(read_jsonl(self.path))
        if kind is not None:
            rows = [row for row in rows if row.get("kind") == kind]
        return rows


def normalize_event(event: dict) -> dict:
    """Copy of an event with the wall-clock timestamp removed."""
    cleaned = dict(event)
    cleaned.pop("ts", None)
    return cleaned


def normalized_events(path: str | Path) -> Iterator[dict]:
    for event in read_jsonl(path):
        yield normalize_event(event)
