"""Closed-loop prompt optimization.

Each trial selects one prompt by UCB, evaluates it on a batch of training
sessions, credits the batch's mean reward to that prompt as a single bandit
pull, and then expands the pool from the trial's error cases
(InferReason -> RefinePrompt -> Augment).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Callable, Mapping, Sequence

from .agents import (
    augment,
    detect_error,
    evaluate,
    infer_reason,
    missing_placeholders,
    refine_prompt,
    seed_prompt_text,
    select_prompt,
    target_rank,
)
from .domain import (
    CandidateSet,
    Catalog,
    Prompt,
    PromptOrigin,
    PromptStats,
    RankedList,
    Session,
)
from .errors import (
    Aborted,
    BackendError,
    ConfigError,
    GreenRecError,
    MissingPlaceholders,
    ParseError,
)
from .ingest import derive_rng, sample_candidates
from .llm.backend import Backend
from .reranker import Scorer, filter_candidates
from .runstore import RunStore

log = logging.getLogger(__name__)

TRIALS_LOG = "trials.jsonl"
PROMPTS_LOG = "prompts.jsonl"
RESULT_FILE = "result.json"
ABORT_AFTER = 3


class RewardMode(str, Enum):
    NDCG_FULL = "ndcg_full"
    HIT_AT_THRESHOLD = "hit_at_threshold"


@dataclass(frozen=True)
class OptimizerConfig:
    max_trials: int = 50
    batch_size: int = 16
    error_threshold: int = 10
    errors_per_trial: int = 2
    n_variants: int = 3
    pool_max: int = 12
    min_pulls_for_best: int = 3
    reward_mode: RewardMode = RewardMode.NDCG_FULL
    c: float = math.sqrt(2)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))
        for name in ("max_trials", "batch_size", "error_threshold", "errors_per_trial", "min_pulls_for_best"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 3 <= self.n_variants <= 5:
            raise ValueError("n_variants must be between 3 and 5")
        if self.pool_max < 2:
            raise ValueError("pool_max must be >= 2")
        if self.c < 0:
            raise ValueError("exploration parameter c must be >= 0")


def reward(ranked: RankedList, target: str, mode: RewardMode | str = RewardMode.NDCG_FULL,
           threshold: int = 10) -> float:
    mode = RewardMode(mode)
    rank = ranked.rank_of(target)
    if rank is None:
        return 0.0
    if mode is RewardMode.NDCG_FULL:
        return 1.0 / math.log2(rank + 1)
    return 1.0 if rank <= threshold else 0.0


@dataclass(frozen=True)
class SessionOutcome:
    session_id: str
    target_rank: int | None  # None when the session failed
    reward: float
    failed: bool = False
    repaired: bool = False
    flagged: bool = False
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "target_rank": self.target_rank,
            "reward": self.reward,
            "failed": self.failed,
            "repaired": self.repaired,
            "flagged": self.flagged,
            "error": self.error,
        }


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    prompt_id: int
    outcomes: tuple[SessionOutcome, ...]
    mean_reward: float
    errors_flagged: int
    prompts_added: tuple[int, ...] = ()
    prompts_evicted: tuple[int, ...] = ()

    @property
    def session_ids(self) -> list[str]:
        return [o.session_id for o in self.outcomes]

    @property
    def all_failed(self) -> bool:
        return all(o.failed for o in self.outcomes)

    def to_json(self) -> dict:
        return {
            "trial": self.trial,
            "prompt_id": self.prompt_id,
            "session_ids": self.session_ids,
            "mean_reward": self.mean_reward,
            "errors_flagged": self.errors_flagged,
            "prompts_added": list(self.prompts_added),
            "prompts_evicted": list(self.prompts_evicted),
            "sessions": [o.to_json() for o in self.outcomes],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> TrialRecord:
        return cls(
            trial=int(obj["trial"]),
            prompt_id=int(obj["prompt_id"]),
            outcomes=tuple(SessionOutcome(**o) for o in obj["sessions"]),
            mean_reward=float(obj["mean_reward"]),
            errors_flagged=int(obj["errors_flagged"]),
            prompts_added=tuple(obj.get("prompts_added", ())),
            prompts_evicted=tuple(obj.get("prompts_evicted", ())),
        )


class PromptPool:
    """Bandit state: live prompts with their stats, plus an archive of evicted ones."""

    def __init__(self, prompts: Sequence[Prompt] = ()) -> None:
        self.prompts: dict[int, Prompt] = {}
        self.stats: dict[int, PromptStats] = {}
        self.archive: dict[int, tuple[Prompt, PromptStats]] = {}
        self.next_id = 1
        for p in prompts:
            self.insert(p)

    @classmethod
    def seeded(cls, texts: Sequence[str]) -> PromptPool:
        return cls([Prompt(i, text) for i, text in enumerate(texts, start=1)])

    def __len__(self) -> int:
        return len(self.prompts)

    def insert(self, prompt: Prompt) -> None:
        self.prompts[prompt.id] = prompt
        self.stats[prompt.id] = PromptStats()
        self.next_id = max(self.next_id, prompt.id + 1)

    def record(self, prompt_id: int, value: float) -> None:
        self.stats[prompt_id] = self.stats[prompt_id].pulled(value)

    def evict(self, prompt_id: int) -> None:
        self.archive[prompt_id] = (self.prompts.pop(prompt_id), self.stats.pop(prompt_id))

    def total_pulls(self) -> int:
        live = sum(s.pull_count for s in self.stats.values())
        return live + sum(s.pull_count for _, s in self.archive.values())

    def known_text(self, text: str) -> bool:
        return any(p.text == text for p in self.prompts.values()) or any(
            p.text == text for p, _ in self.archive.values()
        )

    def best(self, min_pulls: int) -> int:
        """Highest mean among prompts with enough pulls; falls back to all prompts."""
        eligible = [pid for pid, s in self.stats.items() if s.pull_count >= min_pulls]
        if not eligible:
            eligible = [pid for pid, s in self.stats.items() if s.pull_count > 0] or list(self.stats)
        return min(eligible, key=lambda pid: (-self.stats[pid].mean, pid))

    def eviction_candidate(self, min_pulls: int) -> int | None:
        incumbent = self.best(min_pulls)
        options = [
            pid for pid, s in self.stats.items()
            if s.pull_count >= min_pulls and pid != incumbent
        ]
        if not options:
            return None
        return min(options, key=lambda pid: (self.stats[pid].mean, pid))

    def admit(self, prompt: Prompt, pool_max: int, min_pulls: int) -> tuple[Prompt | None, list[int]]:
        """Add a generated prompt under the next free id, evicting if the pool is full.

        Returns the stored prompt (None when rejected as a duplicate or when
        nothing may be evicted) and the ids evicted to make room.
        """
        if self.known_text(prompt.text):
            return None, []
        evicted = []
        if len(self.prompts) >= pool_max:
            victim = self.eviction_candidate(min_pulls)
            if victim is None:
                return None, []
            self.evict(victim)
            evicted.append(victim)
        stored = replace(prompt, id=self.next_id)
        self.insert(stored)
        return stored, evicted


@dataclass
class OptimizationResult:
    best_prompt: Prompt
    pool: PromptPool
    trials: list[TrialRecord] = field(default_factory=list)

    def to_json(self) -> dict:
        def row(p: Prompt, s: PromptStats, evicted: bool) -> dict:
            return {
                "id": p.id,
                "parent": p.parent,
                "origin": p.origin.value,
                "pull_count": s.pull_count,
                "reward_sum": s.reward_sum,
                "mean_reward": s.mean,
                "evicted": evicted,
            }

        best_stats = self.pool.stats[self.best_prompt.id]
        rows = [row(self.pool.prompts[pid], self.pool.stats[pid], False) for pid in sorted(self.pool.prompts)]
        rows += [row(p, s, True) for pid, (p, s) in sorted(self.pool.archive.items())]
        return {
            "best_prompt_id": self.best_prompt.id,
            "best_prompt_text": self.best_prompt.text,
            "best_mean_reward": best_stats.mean,
            "best_pull_count": best_stats.pull_count,
            "trials_completed": len(self.trials),
            "total_pulls": self.pool.total_pulls(),
            "pool": sorted(rows, key=lambda r: r["id"]),
        }


@lru_cache(maxsize=64)
def _epoch_order(n: int, epoch: int, seed: int) -> tuple[int, ...]:
    order = list(range(n))
    derive_rng("epoch", seed, epoch).shuffle(order)
    return tuple(order)


def batch_indices(n_sessions: int, batch_size: int, trial: int, seed: int) -> list[int]:
    """Session indices for ``trial`` (1-based).

    Sessions are consumed in epoch-wise shuffled order without replacement,
    reshuffling every epoch. The result depends only on the arguments, which
    is what makes resuming a run exact.
    """
    b = min(batch_size, n_sessions)
    start = (trial - 1) * b
    out = []
    for pos in range(start, start + b):
        epoch, offset = divmod(pos, n_sessions)
        out.append(_epoch_order(n_sessions, epoch, seed)[offset])
    return out


Batch = Sequence[tuple[Session, CandidateSet]]


def _evaluate_one(backend: Backend, prompt: Prompt, catalog: Catalog, item: tuple[Session, CandidateSet]):
    session, cands = item
    try:
        return evaluate(backend, prompt, session, cands, catalog), None
    except (BackendError, ParseError) as exc:
        log.warning("session %s failed under prompt %d: %s", session.session_id, prompt.id, exc)
        return None, type(exc).__name__


def run_trial(pool: PromptPool, prompt: Prompt, t: int, batch: Batch, backend: Backend,
              cfg: OptimizerConfig, catalog: Catalog, executor: Executor | None = None) -> TrialRecord:
    if not batch:
        raise ValueError("empty batch")
    if executor is not None:
        results = list(executor.map(lambda item: _evaluate_one(backend, prompt, catalog, item), batch))
    else:
        results = [_evaluate_one(backend, prompt, catalog, item) for item in batch]

    outcomes: list[SessionOutcome] = []
    errors = []
    for (session, cands), (ranked, err) in zip(batch, results):
        if ranked is None:
            outcomes.append(SessionOutcome(session.session_id, None, 0.0, failed=True, error=err))
            continue
        case = detect_error(ranked, session.target, cfg.error_threshold, prompt.id)
        if case is not None:
            errors.append((case, session, cands, ranked))
        outcomes.append(SessionOutcome(
            session.session_id,
            target_rank(ranked, session.target),
            reward(ranked, session.target, cfg.reward_mode, cfg.error_threshold),
            repaired=ranked.repaired,
            flagged=case is not None,
        ))
    mean_reward = sum(o.reward for o in outcomes) / len(outcomes)
    pool.record(prompt.id, mean_reward)

    added: list[int] = []
    evicted: list[int] = []

    def admit(p: Prompt) -> Prompt | None:
        stored, gone = pool.admit(p, cfg.pool_max, cfg.min_pulls_for_best)
        evicted.extend(gone)
        if stored is not None:
            added.append(stored.id)
        return stored

    for case, session, cands, ranked in errors[:cfg.errors_per_trial]:
        try:
            reasons = infer_reason(backend, prompt, case, session, cands, catalog, ranked)
            refined = admit(refine_prompt(backend, prompt, reasons, pool.next_id))
        except GreenRecError as exc:
            log.info("trial %d: refinement of prompt %d failed: %s", t, prompt.id, exc)
            continue
        if refined is None:
            continue
        try:
            variants = augment(backend, refined, cfg.n_variants, pool.next_id)
        except GreenRecError as exc:
            log.info("trial %d: augmenting prompt %d failed: %s", t, refined.id, exc)
            continue
        for v in variants:
            admit(v)

    return TrialRecord(
        trial=t,
        prompt_id=prompt.id,
        outcomes=tuple(outcomes),
        mean_reward=mean_reward,
        errors_flagged=len(errors),
        prompts_added=tuple(added),
        prompts_evicted=tuple(evicted),
    )


def replay(trials: Sequence[TrialRecord], prompts: Mapping[int, Prompt], cfg: OptimizerConfig) -> PromptPool:
    """Rebuild the pool from logged trials, checking each logged selection."""
    pool = PromptPool(sorted((p for p in prompts.values() if p.origin is PromptOrigin.SEED), key=lambda p: p.id))
    for rec in trials:
        expected = select_prompt(pool.stats, rec.trial, cfg.c)
        if expected != rec.prompt_id:
            raise ConfigError(
                f"trial {rec.trial} selected prompt {rec.prompt_id} but replay selects {expected}; "
                "the run directory was produced with a different configuration"
            )
        pool.record(rec.prompt_id, rec.mean_reward)
        for pid in rec.prompts_evicted:
            pool.evict(pid)
        for pid in rec.prompts_added:
            pool.insert(prompts[pid])
    return pool


def prepare_candidates(sessions: Sequence[Session], catalog: Catalog, scorer: Scorer,
                       n_initial: int = 100, k_filter: int = 20, seed: int = 0) -> dict[str, CandidateSet]:
    out = {}
    for s in sessions:
        initial = sample_candidates(s, catalog, n_initial, seed)
        out[s.session_id], _ = filter_candidates(scorer, s, initial, catalog, k_filter)
    return out


def _resume(store: RunStore, cfg: OptimizerConfig, seeds: Sequence[str]) -> tuple[PromptPool, list[TrialRecord]]:
    trials = [TrialRecord.from_json(r) for r in store.read_jsonl(TRIALS_LOG)]
    logged = {int(r["id"]): Prompt.from_json(r) for r in store.read_jsonl(PROMPTS_LOG)}
    if not trials or not logged:
        pool = PromptPool.seeded(seeds)
        store.rewrite_jsonl(PROMPTS_LOG, [p.to_json() for p in pool.prompts.values()])
        store.rewrite_jsonl(TRIALS_LOG, [])
        return pool, []
    for i, rec in enumerate(trials, start=1):
        if rec.trial != i:
            raise ConfigError(f"{TRIALS_LOG}: expected trial {i}, found {rec.trial}")
    pool = replay(trials, logged, cfg)
    # keep only prompts that some completed trial accounts for
    referenced = {p.id for p in logged.values() if p.origin is PromptOrigin.SEED}
    for rec in trials:
        referenced.update(rec.prompts_added)
    store.rewrite_jsonl(PROMPTS_LOG, [logged[pid].to_json() for pid in sorted(referenced)])
    store.rewrite_jsonl(TRIALS_LOG, [rec.to_json() for rec in trials])
    log.info("resumed %d trials from %s", len(trials), store.dir)
    return pool, trials


def optimize(
    cfg: OptimizerConfig,
    train_sessions: Sequence[Session],
    catalog: Catalog,
    backend: Backend,
    scorer: Scorer | None = None,
    *,
    candidates: Mapping[str, CandidateSet] | None = None,
    seed_prompts: Sequence[str] | None = None,
    n_initial: int = 100,
    k_filter: int = 20,
    store: RunStore | None = None,
    on_trial: Callable[[TrialRecord], None] | None = None,
) -> OptimizationResult:
    """Run (or resume) the bandit loop for ``cfg.max_trials`` trials.

    ``candidates`` maps session ids to filtered candidate sets; when omitted
    they are sampled and filtered here with ``scorer``. With a ``store``, every
    trial is appended to the run directory as it completes and an existing log
    there is replayed first.
    """
    if not train_sessions:
        raise ValueError("no training sessions")
    if candidates is None:
        if scorer is None:
            raise ValueError("need either filtered candidates or a scorer")
        candidates = prepare_candidates(train_sessions, catalog, scorer, n_initial, k_filter, cfg.seed)
    data = [(s, candidates[s.session_id]) for s in train_sessions]
    seeds = list(seed_prompts) if seed_prompts else [seed_prompt_text()]
    for text in seeds:
        missing = missing_placeholders(text)
        if missing:
            raise MissingPlaceholders(missing)

    if store is not None:
        pool, trials = _resume(store, cfg, seeds)
    else:
        pool, trials = PromptPool.seeded(seeds), []

    streak = 0
    for rec in reversed(trials):
        if not rec.all_failed:
            break
        streak += 1

    with ThreadPoolExecutor(max_workers=backend.concurrency) as executor:
        for t in range(len(trials) + 1, cfg.max_trials + 1):
            pid = select_prompt(pool.stats, t, cfg.c)
            batch = [data[i] for i in batch_indices(len(data), cfg.batch_size, t, cfg.seed)]
            rec = run_trial(pool, pool.prompts[pid], t, batch, backend, cfg, catalog, executor)
            trials.append(rec)
            if store is not None:
                store.append_jsonl(PROMPTS_LOG, [pool.prompts[i].to_json() for i in rec.prompts_added])
                store.append_jsonl(TRIALS_LOG, [rec.to_json()])
            log.info("trial %d: prompt %d mean reward %.4f, %d errors, +%d prompts",
                     t, pid, rec.mean_reward, rec.errors_flagged, len(rec.prompts_added))
            if on_trial is not None:
                on_trial(rec)
            streak = streak + 1 if rec.all_failed else 0
            if streak >= ABORT_AFTER:
                raise Aborted(t)

    best = pool.prompts[pool.best(cfg.min_pulls_for_best)]
    result = OptimizationResult(best, pool, trials)
    if store is not None:
        store.write_json(RESULT_FILE, result.to_json())
        (store.path("best_prompt.txt")).write_text(best.text + "\n", encoding="utf-8")
    return result
