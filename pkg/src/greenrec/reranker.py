"""Stage-1 relevance filtering.

Each candidate is scored against every session item by a pluggable pair
scorer, the pair scores are averaged over the session, and the top
``k_filter`` candidates are kept.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import httpx

from .domain import (
    ECO_TOKEN,
    CandidateKind,
    CandidateSet,
    Catalog,
    Item,
    Session,
    render_item,
)
from .errors import ScorerFailure

_TOKEN = re.compile(r"[a-z0-9]+")


@runtime_checkable
class Scorer(Protocol):
    """Scores a (session item text, candidate text) pair into [0, 1].

    Must be deterministic. Symmetry is not required.
    """

    def score(self, session_text: str, candidate_text: str) -> float: ...

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


class LexicalScorer:
    """Dependency-free reference scorer.

    ``0.75 * jaccard(tokens) + 0.25 * [same category]`` over rendered item
    texts. Tokens are lowercased alphanumeric runs, so punctuation and the
    ``|`` separators never count.
    """

    token_weight = 0.75
    category_weight = 0.25

    @staticmethod
    def tokens(text: str) -> frozenset[str]:
        return frozenset(_TOKEN.findall(text.lower()))

    @staticmethod
    def category(text: str) -> str:
        body = text.removesuffix(" " + ECO_TOKEN)
        parts = body.split(" | ")
        return parts[1].strip().lower() if len(parts) > 1 else ""

    def score(self, session_text: str, candidate_text: str) -> float:
        a, b = self.tokens(session_text), self.tokens(candidate_text)
        union = a | b
        jaccard = len(a & b) / len(union) if union else 1.0
        same_cat = self.category(session_text) == self.category(candidate_text)
        return self.token_weight * jaccard + self.category_weight * float(same_cat)

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        return [self.score(a, b) for a, b in pairs]


class RemoteScorer:
    """Posts text pairs to an external scoring service.

    Wire format: ``{"pairs": [[s, c], ...]}`` -> ``{"scores": [...]}``.
    """

    def __init__(self, endpoint: str, timeout_s: float = 30.0, batch_size: int = 256,
                 client: httpx.Client | None = None) -> None:
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.batch_size = batch_size
        self._client = client or httpx.Client(timeout=timeout_s)

    def score(self, session_text: str, candidate_text: str) -> float:
        return self.score_batch([(session_text, candidate_text)])[0]

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        scores: list[float] = []
        for start in range(0, len(pairs), self.batch_size):
            chunk = pairs[start:start + self.batch_size]
            scores.extend(self._post(chunk))
        return scores

    def _post(self, chunk: Sequence[tuple[str, str]]) -> list[float]:
        try:
            resp = self._client.post(self.endpoint, json={"pairs": [list(p) for p in chunk]})
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise ScorerFailure(f"remote scorer request failed: {exc}") from exc
        scores = body.get("scores") if isinstance(body, dict) else None
        if not isinstance(scores, list) or len(scores) != len(chunk):
            raise ScorerFailure("remote scorer returned a malformed 'scores' array")
        try:
            return [float(s) for s in scores]
        except (TypeError, ValueError) as exc:
            raise ScorerFailure(f"non-numeric score: {exc}") from exc


def _checked(value: float) -> float:
    if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0) or math.isnan(value):
        raise ScorerFailure(f"score {value!r} outside [0, 1]")
    return float(value)


def score_pair(scorer: Scorer, s: Item, c: Item) -> float:
    return _checked(scorer.score(render_item(s, True), render_item(c, True)))


def score_candidate(scorer: Scorer, session: Session, candidate: Item, catalog: Catalog) -> float:
    """Mean pair score of ``candidate`` over all session interactions."""
    scores = [score_pair(scorer, catalog[s], candidate) for s in session.interactions]
    return _mean(scores)


def _mean(scores: Sequence[float]) -> float:
    return sum(scores) / len(scores)


@dataclass(frozen=True)
class FilterDiagnostics:
    session_id: str
    target_retained: bool
    target_prefilter_rank: int | None  # None when the target is not in the input set
    scores: tuple[float, ...]  # aligned with the input candidate order

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "target_retained": self.target_retained,
            "target_prefilter_rank": self.target_prefilter_rank,
        }


def candidate_scores(scorer: Scorer, session: Session, c_inp: CandidateSet, catalog: Catalog) -> list[float]:
    """``score_candidate`` for every candidate, with one batched scorer call."""
    session_texts = [render_item(catalog[s], True) for s in session.interactions]
    cand_texts = [render_item(catalog[c], True) for c in c_inp.candidates]
    pairs = [(s, c) for c in cand_texts for s in session_texts]
    flat = [_checked(v) for v in scorer.score_batch(pairs)]
    if len(flat) != len(pairs):
        raise ScorerFailure("scorer returned the wrong number of scores")
    n = len(session_texts)
    return [_mean(flat[i * n:(i + 1) * n]) for i in range(len(cand_texts))]


def filter_candidates(
    scorer: Scorer,
    session: Session,
    c_inp: CandidateSet,
    catalog: Catalog,
    k_filter: int = 20,
) -> tuple[CandidateSet, FilterDiagnostics]:
    """Keep the ``k_filter`` best-scoring candidates, best first.

    Ties keep input order. The target gets no special treatment: if it does
    not make the cut it is lost, and the diagnostics say so.
    """
    if len(c_inp) < k_filter:
        raise ValueError(f"need at least {k_filter} candidates, got {len(c_inp)}")
    scores = candidate_scores(scorer, session, c_inp, catalog)
    ranking = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = tuple(c_inp.candidates[i] for i in ranking[:k_filter])

    prefilter_rank = None
    if session.target in c_inp.candidates:
        pos = c_inp.candidates.index(session.target)
        prefilter_rank = ranking.index(pos) + 1
    diag = FilterDiagnostics(
        session_id=session.session_id,
        target_retained=session.target in kept,
        target_prefilter_rank=prefilter_rank,
        scores=tuple(scores),
    )
    return CandidateSet(session.session_id, kept, CandidateKind.FILTERED), diag


def make_scorer(kind: str, endpoint: str | None = None) -> Scorer:
    if kind == "lexical":
        return LexicalScorer()
    if kind == "remote":
        if not endpoint:
            raise ValueError("remote scorer needs an endpoint")
        return RemoteScorer(endpoint)
    raise ValueError(f"unknown scorer kind {kind!r}")
