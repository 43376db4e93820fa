"""Run-directory persistence: append-only JSON-lines logs and atomic JSON files."""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path
from typing import Iterable

from .errors import MalformedLine


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:10]


def default_run_dir(root: str | Path, tag: str) -> Path:
    """``<root>/<UTC timestamp>-<tag>``; ``tag`` is normally a config hash."""
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    return Path(root) / f"{stamp}-{tag}"


class RunStore:
    def __init__(self, run_dir: str | Path) -> None:
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.dir / name

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def read_jsonl(self, name: str) -> list[dict]:
        """Read a log, dropping a torn final line left by a crash mid-write."""
        p = self.path(name)
        if not p.exists():
            return []
        lines = p.read_text(encoding="utf-8").split("\n")
        rows = []
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            last = i == len(lines) - 1  # no trailing newline: write never finished
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                if last:
                    break
                raise MalformedLine(i + 1, "invalid JSON in run log", str(p)) from None
            if last:
                rows.pop()
        return rows

    def rewrite_jsonl(self, name: str, rows: Iterable[dict]) -> None:
        tmp = self.path(name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(dumps(row) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path(name))

    def append_jsonl(self, name: str, rows: Iterable[dict]) -> None:
        with open(self.path(name), "a", encoding="utf-8") as fh:
            for row in rows:
                fh.write(dumps(row) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def write_json(self, name: str, obj) -> None:
        tmp = self.path(name + ".tmp")
        tmp.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        os.replace(tmp, self.path(name))

    def read_json(self, name: str):
        return json.loads(self.path(name).read_text(encoding="utf-8"))
