"""Parsers for LLM output, with repair rules for rankings."""

from __future__ import annotations

import json
import re

from ..domain import CandidateSet, Catalog, RankedList, render_item
from ..errors import NoVariants, TagNotFound, Unparseable

_NUMBERED = re.compile(r"^\s*\d+\s*[.)]\s+(.*?)\s*$")
_TAGGED = re.compile(r"<START>(.*?)<END>", re.DOTALL)
_WRAPPERS = "*`\"' "

_MISSING = object()


def _json_arrays(text: str):
    decoder = json.JSONDecoder()
    pos = text.find("[")
    while pos != -1:
        try:
            value, _ = decoder.raw_decode(text, pos)
        except ValueError:
            value = None
        if isinstance(value, list):
            yield value
        pos = text.find("[", pos + 1)


def _resolve_json_entry(entry, candidates: tuple[str, ...]):
    if isinstance(entry, bool):
        return _MISSING
    if isinstance(entry, float) and entry.is_integer():
        entry = int(entry)
    if isinstance(entry, int):
        return candidates[entry - 1] if 1 <= entry <= len(candidates) else _MISSING
    if isinstance(entry, str):
        if entry in candidates:
            return entry
        stripped = entry.strip()
        if stripped.isdigit():
            return _resolve_json_entry(int(stripped), candidates)
    return _MISSING


def _line_lookup(candidates: tuple[str, ...], catalog: Catalog | None) -> dict[str, list[str]]:
    """Exact-text keys a numbered line may use: item title, then rendered forms."""
    table: dict[str, list[str]] = {}
    if catalog is None:
        return table
    for cid in candidates:
        if cid not in catalog:
            continue
        item = catalog[cid]
        for key in dict.fromkeys((item.title, render_item(item, True), render_item(item, False))):
            table.setdefault(key, []).append(cid)
    return table


def _from_numbered_lines(text: str, candidates: tuple[str, ...], catalog: Catalog | None) -> list:
    lookup = _line_lookup(candidates, catalog)
    entries: list = []
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if not m:
            continue
        body = m.group(1).strip(_WRAPPERS)
        if body in candidates:
            entries.append(body)
        elif body in lookup:
            used = set(entries)
            # duplicate titles: take the first candidate not yet placed
            fresh = [c for c in lookup[body] if c not in used]
            entries.append(fresh[0] if fresh else lookup[body][0])
        else:
            entries.append(_MISSING)
    return entries


def parse_ranked_list(text: str, candidates: CandidateSet, catalog: Catalog | None = None) -> RankedList:
    """Turn a completion into a full permutation of ``candidates``.

    Tries the first JSON array that yields a known candidate (1-based
    indices or ids), then numbered lines matched by id or exact title. Unknown
    and duplicate entries are dropped and missing candidates appended in
    candidate order; ``repaired`` records whether any of that happened.
    """
    cands = candidates.candidates
    if not cands:
        raise ValueError("empty candidate set")
    entries: list = []
    for array in _json_arrays(text):
        resolved = [_resolve_json_entry(e, cands) for e in array]
        if any(r is not _MISSING for r in resolved):
            entries = resolved
            break
    else:
        entries = _from_numbered_lines(text, cands, catalog)
    if not any(e is not _MISSING for e in entries):
        raise Unparseable(f"no candidate found in completion for session {candidates.session_id!r}")

    order: list[str] = []
    seen: set[str] = set()
    repaired = False
    for e in entries:
        if e is _MISSING or e in seen:
            repaired = True
            continue
        seen.add(e)
        order.append(e)
    missing = [c for c in cands if c not in seen]
    if missing:
        repaired = True
        order.extend(missing)
    return RankedList(candidates.session_id, tuple(order), repaired)


def extract_tagged(text: str, start_tag: str = "<START>", end_tag: str = "<END>") -> str:
    start = text.find(start_tag)
    if start == -1:
        raise TagNotFound(f"{start_tag} not found")
    end = text.find(end_tag, start + len(start_tag))
    if end == -1:
        raise TagNotFound(f"no {end_tag} after {start_tag}")
    return text[start + len(start_tag):end].strip()


def parse_numbered(text: str) -> list[str]:
    out = []
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if m and m.group(1).strip():
            out.append(m.group(1).strip())
    return out


def parse_variants(text: str) -> list[str]:
    blocks = [b.strip() for b in _TAGGED.findall(text)]
    blocks = [b for b in blocks if b]
    if not blocks:
        blocks = parse_numbered(text)
    variants = list(dict.fromkeys(blocks))
    if not variants:
        raise NoVariants("no prompt variants found")
    return variants
