"""Durable state for the telemetry service.

Channel and user metadata live in small JSON documents rewritten atomically;
feeds are append-only JSON-lines files, one per channel. A line only counts
once its newline hit the disk, so a torn tail is detected and truncated away
on load.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

log = logging.getLogger(__name__)

CHANNELS_FILE = "channels.json"
USERS_FILE = "users.json"


def feed_path(data_dir: Path, channel_id: int) -> Path:
    return Path(data_dir) / f"feed_{channel_id}.jsonl"


def append_jsonl(path: Path, record: dict, fsync: bool = False) -> None:
    line = json.dumps(record, separators=(",", ":")) + "\n"
    with open(path, "a", encoding="utf-8") as f:
        f.write(line)
        f.flush()
        if fsync:
            os.fsync(f.fileno())


def load_jsonl(path: Path) -> list[dict]:
    """Read records back, truncating the file at the first corrupt line."""
    if not Path(path).exists():
        return []
    records: list[dict] = []
    good_bytes = 0
    with open(path, "rb") as f:
        data = f.read()
    offset = 0
    while offset < len(data):
        newline = data.find(b"\n", offset)
        if newline < 0:
            break  # unterminated tail: treat as torn write
        line = data[offset : newline]
        try:
            records.append(json.loads(line.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError):
            break
        offset = newline + 1
        good_bytes = offset
    if good_bytes < len(data):
        log.warning(
            "%s: truncating %d corrupt trailing bytes (%d records recovered)",
            path,
            len(data) - good_bytes,
            len(records),
        )
        with open(path, "r+b") as f:
            f.truncate(good_bytes)
    return records


def write_json(path: Path, payload) -> None:
    """Atomic whole-document rewrite via a temp file."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def read_json(path: Path, default):
    path = Path(path)
    if not path.exists():
        return default
    return json.loads(path.read_text(encoding="utf-8"))
