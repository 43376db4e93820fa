"""The six agents of the optimization loop.

Evaluate, DetectError, InferReason, RefinePrompt and Augment talk to the LLM
backend (or, for DetectError, only inspect a ranking); Select is the UCB rule.
Each function is pure given the backend's responses.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

from .domain import (
    CandidateSet,
    Catalog,
    Prompt,
    PromptOrigin,
    PromptStats,
    RankedList,
    Session,
    render_item,
)
from .errors import MissingPlaceholders, NoReasons, NoVariants
from .llm.backend import Backend, ChatRequest
from .llm.parsing import (
    extract_tagged,
    parse_numbered,
    parse_ranked_list,
    parse_variants,
)

PLACEHOLDERS = ("{session}", "{candidates}")

EVALUATE_TEMPERATURE = 0.2
CREATIVE_TEMPERATURE = 0.8
EVALUATE_MAX_TOKENS = 512
CREATIVE_MAX_TOKENS = 1024
MAX_REASONS = 5


def load_template(name: str) -> str:
    return resources.files("greenrec.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8").strip()


def seed_prompt_text() -> str:
    return load_template("seed")


def fill_template(template: str, values: Mapping[str, str]) -> str:
    """Replace ``{name}`` for the given names only, in a single pass.

    Single-pass matters: substituted values (such as a prompt that itself
    contains ``{session}``) are never expanded again, and braces belonging to
    other text are left alone.
    """
    if not values:
        return template
    pattern = re.compile("|".join(re.escape("{" + k + "}") for k in values))
    return pattern.sub(lambda m: values[m.group(0)[1:-1]], template)


def missing_placeholders(text: str) -> list[str]:
    return [p for p in PLACEHOLDERS if p not in text]


def numbered(lines: Sequence[str]) -> str:
    return "\n".join(f"{i}. {line}" for i, line in enumerate(lines, start=1))


def render_session(session: Session, catalog: Catalog) -> str:
    return numbered([render_item(catalog[i], True) for i in session.interactions])


def render_candidates(c_filter: CandidateSet, catalog: Catalog) -> str:
    return numbered([render_item(catalog[i], True) for i in c_filter.candidates])


def evaluation_request(prompt: Prompt, session: Session, c_filter: CandidateSet, catalog: Catalog) -> ChatRequest:
    user = fill_template(prompt.text, {
        "session": render_session(session, catalog),
        "candidates": render_candidates(c_filter, catalog),
    })
    return ChatRequest(
        user=user,
        temperature=EVALUATE_TEMPERATURE,
        max_tokens=EVALUATE_MAX_TOKENS,
        tag="evaluate",
        context={
            "session_id": session.session_id,
            "prompt_id": prompt.id,
            "target": session.target,
            "candidates": list(c_filter.candidates),
        },
    )


def evaluate(backend: Backend, prompt: Prompt, session: Session, c_filter: CandidateSet,
             catalog: Catalog) -> RankedList:
    req = evaluation_request(prompt, session, c_filter, catalog)
    resp = backend.complete(req)
    return parse_ranked_list(resp.text, c_filter, catalog)


# -- DetectError ---------------------------------------------------------------


@dataclass(frozen=True)
class ErrorCase:
    session_id: str
    prompt_id: int | None
    target_rank: int  # |order| + 1 when the target is absent
    threshold: int
    repaired: bool


def target_rank(ranked: RankedList, target: str) -> int:
    rank = ranked.rank_of(target)
    return rank if rank is not None else len(ranked.order) + 1


def detect_error(ranked: RankedList, target: str, threshold: int = 10,
                 prompt_id: int | None = None) -> ErrorCase | None:
    """Flag the session when the target lands strictly below ``threshold``."""
    rank = target_rank(ranked, target)
    if rank <= threshold:
        return None
    return ErrorCase(ranked.session_id, prompt_id, rank, threshold, ranked.repaired)


# -- InferReason ---------------------------------------------------------------


@dataclass(frozen=True)
class ReasonList:
    hypotheses: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.hypotheses or not all(h.strip() for h in self.hypotheses):
            raise ValueError("ReasonList needs at least one non-empty hypothesis")


def reflection_request(prompt: Prompt, error: ErrorCase, session: Session, c_filter: CandidateSet,
                       catalog: Catalog, ranked: RankedList | None = None, top_n: int = 5) -> ChatRequest:
    top = (ranked.order if ranked is not None else c_filter.candidates)[:top_n]
    user = fill_template(load_template("infer_reason"), {
        "prompt": prompt.text,
        "session": render_session(session, catalog),
        "target": render_item(catalog[session.target], True),
        "rank": str(error.target_rank),
        "n_candidates": str(len(c_filter)),
        "top_items": numbered([render_item(catalog[i], True) for i in top]),
    })
    return ChatRequest(
        user=user,
        temperature=CREATIVE_TEMPERATURE,
        max_tokens=CREATIVE_MAX_TOKENS,
        tag="infer_reason",
        context={"session_id": session.session_id, "prompt_id": prompt.id},
    )


def infer_reason(backend: Backend, prompt: Prompt, error: ErrorCase, session: Session, c_filter: CandidateSet,
                 catalog: Catalog, ranked: RankedList | None = None) -> ReasonList:
    resp = backend.complete(reflection_request(prompt, error, session, c_filter, catalog, ranked))
    reasons = parse_numbered(resp.text)[:MAX_REASONS]
    if not reasons:
        raise NoReasons("reflection response contains no numbered reasons")
    return ReasonList(tuple(reasons))


# -- RefinePrompt / Augment ----------------------------------------------------


def refine_prompt(backend: Backend, prompt: Prompt, reasons: ReasonList, new_id: int) -> Prompt:
    user = fill_template(load_template("refine"), {
        "prompt": prompt.text,
        "reasons": numbered(reasons.hypotheses),
    })
    req = ChatRequest(user=user, temperature=CREATIVE_TEMPERATURE, max_tokens=CREATIVE_MAX_TOKENS,
                      tag="refine_prompt", context={"prompt_id": prompt.id})
    text = extract_tagged(backend.complete(req).text)
    missing = missing_placeholders(text)
    if missing:
        raise MissingPlaceholders(missing)
    return Prompt(new_id, text, parent=prompt.id, origin=PromptOrigin.REFINED)


def augment(backend: Backend, prompt: Prompt, n_variants: int, first_id: int) -> list[Prompt]:
    """Paraphrase ``prompt``; variants that lose a placeholder are dropped."""
    if not 3 <= n_variants <= 5:
        raise ValueError("n_variants must be between 3 and 5")
    user = fill_template(load_template("augment"), {"prompt": prompt.text, "n_variants": str(n_variants)})
    req = ChatRequest(user=user, temperature=CREATIVE_TEMPERATURE, max_tokens=CREATIVE_MAX_TOKENS,
                      tag="augment", context={"prompt_id": prompt.id})
    texts = [t for t in parse_variants(backend.complete(req).text) if not missing_placeholders(t)]
    if not texts:
        raise NoVariants("every variant lost a placeholder")
    return [Prompt(first_id + i, t, parent=prompt.id, origin=PromptOrigin.VARIANT)
            for i, t in enumerate(texts[:n_variants])]


# -- Select ----------------------------------------------------------------------


def ucb_value(stats: PromptStats, t: int, c: float = math.sqrt(2)) -> float:
    if t < 1:
        raise ValueError("t must be >= 1")
    if stats.pull_count == 0:
        return math.inf
    return stats.reward_sum / stats.pull_count + c * math.sqrt(math.log(t) / stats.pull_count)


def select_prompt(pool: Mapping[int, PromptStats], t: int, c: float = math.sqrt(2)) -> int:
    """Arg-max UCB; ties (including several unpulled prompts) go to the lowest id."""
    if not pool:
        raise ValueError("empty prompt pool")
    best_id, best_value = None, -math.inf
    for pid in sorted(pool):
        value = ucb_value(pool[pid], t, c)
        if best_id is None or value > best_value:
            best_id, best_value = pid, value
    return best_id
