"""Deterministic scripted stand-in for the LLM.

Resolution order for a request:

1. ``fingerprints``: exact request fingerprint -> text
2. ``rules``: first rule whose ``tag`` (if given) matches and whose
   ``contains`` substring (if given) occurs in the user message
3. quality-biased ranking, for ``evaluate`` requests whose text carries a
   ``{{q=x}}`` marker
4. ``tags``: request tag -> text
5. ``default`` text, else :class:`MockNoMatch`

The quality-biased ranker puts the session target at rank 1 with
probability ``x`` and otherwise uniformly on ranks 2..n, using an RNG keyed
by (session id, prompt id). The backend keeps no state between calls.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..errors import MockNoMatch
from .backend import ChatRequest, ChatResponse

QUALITY_MARKER = re.compile(r"\{\{q=([0-9]*\.?[0-9]+)\}\}")


@dataclass(frozen=True)
class MockRule:
    text: str
    tag: str | None = None
    contains: str | None = None

    def matches(self, req: ChatRequest) -> bool:
        if self.tag is not None and self.tag != req.tag:
            return False
        return self.contains is None or self.contains in req.user


@dataclass(frozen=True)
class MockScript:
    tags: Mapping[str, str] = field(default_factory=dict)
    fingerprints: Mapping[str, str] = field(default_factory=dict)
    rules: tuple[MockRule, ...] = ()
    default: str | None = None

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> MockScript:
        unknown = set(obj) - {"tags", "fingerprints", "rules", "default"}
        if unknown:
            raise ValueError(f"unknown mock script keys: {sorted(unknown)}")
        rules = tuple(
            MockRule(text=r["text"], tag=r.get("tag"), contains=r.get("contains"))
            for r in obj.get("rules", ())
        )
        return cls(
            tags=dict(obj.get("tags", {})),
            fingerprints=dict(obj.get("fingerprints", {})),
            rules=rules,
            default=obj.get("default"),
        )

    @classmethod
    def load(cls, path: str | Path) -> MockScript:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def quality_ranking(q: float, candidates: Sequence[str], target: str | None, seed_key: str) -> list[int]:
    """1-based candidate indices with the target at rank 1 w.p. ``q``."""
    digest = hashlib.sha256(seed_key.encode()).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    n = len(candidates)
    indices = list(range(1, n + 1))
    if target not in candidates:
        rng.shuffle(indices)
        return indices
    t = candidates.index(target) + 1
    others = [i for i in indices if i != t]
    hit = rng.random() < q
    rank = 1 if hit or n == 1 else rng.randint(2, n)
    rng.shuffle(others)
    others.insert(rank - 1, t)
    return others


class MockBackend:
    def __init__(self, script: MockScript | None = None, concurrency: int = 8) -> None:
        self.script = script or MockScript()
        self.concurrency = concurrency

    def complete(self, req: ChatRequest) -> ChatResponse:
        text = self._resolve(req)
        return ChatResponse(
            text=text,
            prompt_tokens=len(req.user.split()),
            completion_tokens=len(text.split()),
        )

    def _resolve(self, req: ChatRequest) -> str:
        s = self.script
        fp = req.fingerprint()
        if fp in s.fingerprints:
            return s.fingerprints[fp]
        for rule in s.rules:
            if rule.matches(req):
                return rule.text
        if req.tag == "evaluate":
            m = QUALITY_MARKER.search(req.user)
            if m:
                ctx = req.context
                if "candidates" not in ctx:
                    raise MockNoMatch("quality-biased ranking needs candidates in the request context")
                key = f"{ctx.get('session_id')}:{ctx.get('prompt_id')}"
                order = quality_ranking(float(m.group(1)), list(ctx["candidates"]), ctx.get("target"), key)
                return json.dumps(order)
        if req.tag in s.tags:
            return s.tags[req.tag]
        if s.default is not None:
            return s.default
        raise MockNoMatch(f"no scripted response for tag {req.tag!r} (fingerprint {fp})")
