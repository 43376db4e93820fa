"""Catalog / session loading and seeded candidate sampling."""

from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path
from typing import Iterable, Iterator

from .domain import CandidateKind, CandidateSet, Catalog, DatasetSplit, Item, Session
from .errors import (
    CatalogTooSmall,
    DuplicateId,
    DuplicateSession,
    EmptySession,
    MalformedLine,
    UnknownItem,
)


def _json_lines(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, f"invalid JSON ({exc.msg})", str(path)) from None
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "expected a JSON object", str(path))
            yield line_no, obj


def _required_str(obj: dict, key: str, line_no: int, path: Path) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise MalformedLine(line_no, f"missing or empty {key!r}", str(path))
    return value


def load_catalog(path: str | Path) -> Catalog:
    path = Path(path)
    items: list[Item] = []
    seen: set[str] = set()
    for line_no, obj in _json_lines(path):
        item_id = _required_str(obj, "id", line_no, path)
        title = _required_str(obj, "title", line_no, path)
        category = obj.get("category", "")
        attributes = obj.get("attributes") or {}
        sustainable = obj.get("sustainable", False)
        if not isinstance(category, str):
            raise MalformedLine(line_no, "'category' must be a string", str(path))
        if not isinstance(attributes, dict):
            raise MalformedLine(line_no, "'attributes' must be an object", str(path))
        if not isinstance(sustainable, bool):
            raise MalformedLine(line_no, "'sustainable' must be a boolean", str(path))
        if item_id in seen:
            raise DuplicateId(item_id, line_no)
        seen.add(item_id)
        items.append(Item.from_mapping(item_id, title, category, attributes, sustainable))
    return Catalog(items)


def load_sessions(path: str | Path, catalog: Catalog) -> list[Session]:
    path = Path(path)
    sessions: list[Session] = []
    seen: set[str] = set()
    for line_no, obj in _json_lines(path):
        sid = obj.get("session_id")
        if isinstance(sid, int) and not isinstance(sid, bool):
            sid = str(sid)
        if not isinstance(sid, str) or not sid:
            raise MalformedLine(line_no, "missing or empty 'session_id'", str(path))
        items = obj.get("items")
        target = obj.get("target")
        if not isinstance(items, list) or not all(isinstance(i, str) for i in items):
            raise MalformedLine(line_no, "'items' must be an array of item ids", str(path))
        if not isinstance(target, str):
            raise MalformedLine(line_no, "'target' must be an item id", str(path))
        if not items:
            raise EmptySession(sid)
        for item_id in [*items, target]:
            if item_id not in catalog:
                raise UnknownItem(sid, item_id)
        if sid in seen:
            raise DuplicateSession(sid)
        seen.add(sid)
        sessions.append(Session(sid, tuple(items), target))
    return sessions


def load_split(path: str | Path, catalog: Catalog, name: str) -> DatasetSplit:
    return DatasetSplit(name, tuple(load_sessions(path, catalog)))


def derive_rng(*parts: object) -> random.Random:
    """RNG seeded from a hash of ``parts``; independent of PYTHONHASHSEED."""
    key = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def session_rng(seed: int, session_id: str) -> random.Random:
    """Per-session stream, stable under dataset reordering."""
    return derive_rng("candidates", seed, session_id)


def sample_candidates(session: Session, catalog: Catalog, n_initial: int = 100, seed: int = 0) -> CandidateSet:
    """Draw ``n_initial`` distinct items that always include the target.

    The other ``n_initial - 1`` items are sampled uniformly without
    replacement from the rest of the catalog, and the final order is shuffled
    so the target's position is uniform.
    """
    if n_initial < 1:
        raise ValueError("n_initial must be >= 1")
    if len(catalog) < n_initial:
        raise CatalogTooSmall(len(catalog), n_initial)
    rng = session_rng(seed, session.session_id)
    pool = [i for i in catalog.ids if i != session.target]
    picked = rng.sample(pool, n_initial - 1)
    picked.append(session.target)
    rng.shuffle(picked)
    return CandidateSet(session.session_id, tuple(picked), CandidateKind.INITIAL)


def write_candidates(path: str | Path, sets: Iterable[CandidateSet], extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cs in sets:
            obj = cs.to_json()
            if extra:
                obj.update(extra)
            fh.write(json.dumps(obj) + "\n")


def read_candidates(path: str | Path, kind: CandidateKind | None = None) -> list[tuple[dict, CandidateSet]]:
    """Read a candidates file; returns (raw record, set) pairs, optionally filtered by kind."""
    out = []
    for _, obj in _json_lines(Path(path)):
        cs = CandidateSet.from_json(obj)
        if kind is None or cs.kind is kind:
            out.append((obj, cs))
    return out

