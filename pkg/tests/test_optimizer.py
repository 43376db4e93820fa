from __future__ import annotations

import random

import pytest

from greenrec.domain import (
    CandidateKind,
    CandidateSet,
    Catalog,
    Item,
    Prompt,
    PromptOrigin,
    PromptStats,
    RankedList,
    Session,
)
from greenrec.errors import Aborted, ConfigError, MissingPlaceholders
from greenrec.llm import MockBackend, MockScript
from greenrec.optimizer import (
    PROMPTS_LOG,
    RESULT_FILE,
    TRIALS_LOG,
    OptimizerConfig,
    PromptPool,
    RewardMode,
    TrialRecord,
    batch_indices,
    optimize,
    reward,
    run_trial,
)
from greenrec.runstore import RunStore


def quality_prompt(q, body="Rank"):
    return f"{body} {{{{q={q}}}}} {{session}} {{candidates}}"


def make_world(n_sessions=40, n_items=80, k=20, seed=0):
    rng = random.Random(seed)
    catalog = Catalog([Item(f"i{j:03d}", f"Item {j}") for j in range(n_items)])
    sessions, cands = [], {}
    for n in range(n_sessions):
        ids = rng.sample(catalog.ids, k + 2)
        s = Session(f"s{n:03d}", (ids[0], ids[1]), ids[2])
        pool = ids[2:]
        rng.shuffle(pool)
        sessions.append(s)
        cands[s.session_id] = CandidateSet(s.session_id, tuple(pool), CandidateKind.FILTERED)
    return catalog, sessions, cands


# -- reward ---------------------------------------------------------------------------------


def ranked_at(rank, n=20):
    order = [f"x{k}" for k in range(n - 1)]
    order.insert(rank - 1, "t")
    return RankedList("s", tuple(order))


def test_reward_examples():
    assert reward(ranked_at(1), "t") == 1.0
    assert reward(ranked_at(3), "t", RewardMode.NDCG_FULL) == 0.5
    assert reward(ranked_at(11), "t", RewardMode.HIT_AT_THRESHOLD, 10) == 0.0
    assert reward(ranked_at(10), "t", "hit_at_threshold", 10) == 1.0
    assert reward(RankedList("s", ("a",)), "t") == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(n_variants=6)
    with pytest.raises(ValueError):
        OptimizerConfig(pool_max=1)
    with pytest.raises(ValueError):
        OptimizerConfig(reward_mode="mrr")
    assert OptimizerConfig(reward_mode="hit_at_threshold").reward_mode is RewardMode.HIT_AT_THRESHOLD


# -- single trials ---------------------------------------------------------------------------


def _batch(sessions, cands):
    return [(s, cands[s.session_id]) for s in sessions]


def test_trial_with_perfect_prompt():
    catalog, sessions, cands = make_world(16)
    pool = PromptPool.seeded([quality_prompt(1.0)])
    rec = run_trial(pool, pool.prompts[1], 1, _batch(sessions, cands), MockBackend(), OptimizerConfig(), catalog)
    assert rec.mean_reward == 1.0
    assert rec.errors_flagged == 0 and rec.prompts_added == ()
    assert pool.stats[1] == PromptStats(1.0, 1)


def test_trial_with_q_zero_flag_rate():
    # Oracle: simulate the mock's placement rule directly. With q=0 the target is
    # uniform on ranks 2..20, so P(rank > 10) = |{11..20}| / |{2..20}|.
    rng = random.Random(123)
    draws = [rng.randint(2, 20) for _ in range(200_000)]
    oracle = sum(r > 10 for r in draws) / len(draws)
    assert oracle == pytest.approx(10 / 19, abs=0.005)

    catalog, sessions, cands = make_world(2000, n_items=200)
    pool = PromptPool.seeded([quality_prompt(0.0)])
    rec = run_trial(pool, pool.prompts[1], 1, _batch(sessions, cands), MockBackend(), OptimizerConfig(), catalog)
    rate = rec.errors_flagged / len(sessions)
    # binomial(2000, 0.526): sd is about 0.011
    assert abs(rate - oracle) < 0.04
    assert all(o.target_rank != 1 for o in rec.outcomes)
    assert rec.prompts_added == ()  # nothing scripted for InferReason: chains fail and are skipped


def test_trial_failures_score_zero():
    catalog, sessions, cands = make_world(4)
    pool = PromptPool.seeded(["plain {session} {candidates}"])
    rec = run_trial(pool, pool.prompts[1], 1, _batch(sessions, cands), MockBackend(), OptimizerConfig(), catalog)
    assert rec.all_failed and rec.mean_reward == 0.0
    assert {o.error for o in rec.outcomes} == {"MockNoMatch"}
    assert pool.stats[1].pull_count == 1


def test_trial_expands_pool():
    catalog, sessions, cands = make_world(8)
    script = MockScript.from_dict({
        "tags": {
            "infer_reason": "1. ignored recency",
            "refine_prompt": f"<START>{quality_prompt(0.8)}<END>",
            "augment": "".join(f"<START>{quality_prompt(0.5, f'v{k}')}<END>" for k in range(3)),
        },
    })
    pool = PromptPool.seeded([quality_prompt(0.0)])
    cfg = OptimizerConfig(errors_per_trial=2)
    rec = run_trial(pool, pool.prompts[1], 1, _batch(sessions, cands), MockBackend(script), cfg, catalog)
    assert rec.errors_flagged >= 2
    # second error case refines to the same text: rejected as a duplicate
    assert rec.prompts_added == (2, 3, 4, 5)
    assert pool.prompts[2].origin is PromptOrigin.REFINED and pool.prompts[2].parent == 1
    assert all(pool.prompts[i].parent == 2 for i in (3, 4, 5))


# -- pool management ------------------------------------------------------------------------------


def test_eviction_of_worst_pulled_prompt():
    pool = PromptPool.seeded([f"p{k} {{session}} {{candidates}}" for k in range(3)])
    for pid, r in [(1, 0.9), (2, 0.1), (3, 0.5)]:
        for _ in range(3):
            pool.record(pid, r)
    stored, evicted = pool.admit(Prompt(0, "new {session} {candidates}", 1, PromptOrigin.REFINED), 3, 3)
    assert evicted == [2] and stored.id == 4
    assert set(pool.prompts) == {1, 3, 4} and 2 in pool.archive
    assert pool.total_pulls() == 9


def test_no_eligible_victim_discards_new_prompt():
    pool = PromptPool.seeded([f"p{k} {{session}} {{candidates}}" for k in range(2)])
    pool.record(1, 0.5)
    stored, evicted = pool.admit(Prompt(0, "new {session} {candidates}", 1, PromptOrigin.REFINED), 2, 3)
    assert stored is None and evicted == [] and len(pool) == 2


def test_incumbent_is_never_evicted():
    pool = PromptPool.seeded([f"p{k} {{session}} {{candidates}}" for k in range(2)])
    for _ in range(3):
        pool.record(1, 0.9)
    stored, _ = pool.admit(Prompt(0, "new {session} {candidates}", 1, PromptOrigin.REFINED), 2, 3)
    assert stored is None and 1 in pool.prompts


def test_duplicate_text_rejected_even_after_eviction():
    pool = PromptPool.seeded(["a {session} {candidates}", "b {session} {candidates}"])
    for pid, r in [(1, 0.9), (2, 0.1)]:
        for _ in range(3):
            pool.record(pid, r)
    pool.evict(2)
    stored, _ = pool.admit(Prompt(0, "b {session} {candidates}", 1, PromptOrigin.REFINED), 12, 3)
    assert stored is None


def test_best_prefers_min_pulls():
    pool = PromptPool.seeded(["a {session} {candidates}", "b {session} {candidates}"])
    pool.record(1, 0.6)
    pool.record(1, 0.6)
    pool.record(1, 0.6)
    pool.record(2, 1.0)
    assert pool.best(3) == 1
    assert pool.best(1) == 2


# -- batches ----------------------------------------------------------------------------------------


def test_batches_cover_each_epoch():
    seen = []
    for t in range(1, 6):
        seen += batch_indices(20, 8, t, seed=4)
    assert sorted(seen[:20]) == list(range(20))
    assert sorted(seen[20:40]) == list(range(20))
    assert batch_indices(20, 8, 3, 4) == batch_indices(20, 8, 3, 4)
    assert sorted(batch_indices(5, 16, 1, 0)) == list(range(5))  # batch capped at the split size


# -- full loop ----------------------------------------------------------------------------------------


def test_single_trial_run_selects_seed():
    catalog, sessions, cands = make_world(8)
    result = optimize(OptimizerConfig(max_trials=1, batch_size=4), sessions, catalog, MockBackend(),
                      candidates=cands, seed_prompts=[quality_prompt(0.5)])
    assert result.best_prompt.id == 1 and result.best_prompt.origin is PromptOrigin.SEED
    assert [r.prompt_id for r in result.trials] == [1]


def test_seed_prompt_must_have_placeholders():
    catalog, sessions, cands = make_world(2)
    with pytest.raises(MissingPlaceholders):
        optimize(OptimizerConfig(max_trials=1), sessions, catalog, MockBackend(), candidates=cands,
                 seed_prompts=["no placeholders"])


def test_abort_after_three_failed_trials(tmp_path):
    catalog, sessions, cands = make_world(4)
    store = RunStore(tmp_path / "run")
    with pytest.raises(Aborted) as exc:
        optimize(OptimizerConfig(max_trials=10, batch_size=2), sessions, catalog, MockBackend(),
                 candidates=cands, seed_prompts=["plain {session} {candidates}"], store=store)
    assert exc.value.trial == 3
    assert len(store.read_jsonl(TRIALS_LOG)) == 3


SCRIPT = {
    "tags": {
        "infer_reason": "1. ignored recency\n2. ignored category",
        "augment": "".join(f"<START>{quality_prompt(q, f'v{q}')}<END>" for q in (0.5, 0.6, 0.4)),
    },
    "rules": [
        {"tag": "refine_prompt", "contains": "{{q=0.2}}", "text": f"<START>{quality_prompt(0.7)}<END>"},
        {"tag": "refine_prompt", "text": f"<START>{quality_prompt(0.75, 'Again')}<END>"},
    ],
}


def _run(tmp_path, name, max_trials, on_trial=None, pool_max=6):
    catalog, sessions, cands = make_world(30)
    cfg = OptimizerConfig(max_trials=max_trials, batch_size=6, pool_max=pool_max, seed=3)
    store = RunStore(tmp_path / name)
    return optimize(cfg, sessions, catalog, MockBackend(MockScript.from_dict(SCRIPT)), candidates=cands,
                    seed_prompts=[quality_prompt(0.2)], store=store, on_trial=on_trial), store


def _files(store):
    return {name: store.path(name).read_bytes() for name in (TRIALS_LOG, PROMPTS_LOG, RESULT_FILE, "best_prompt.txt")}


def test_determinism_and_conservation(tmp_path):
    a, store_a = _run(tmp_path, "a", 25, pool_max=4)
    b, store_b = _run(tmp_path, "b", 25, pool_max=4)
    assert _files(store_a) == _files(store_b)
    assert a.pool.total_pulls() == 25
    assert len(a.pool) <= 4 and a.pool.archive  # the loop hit pool_max and evicted
    assert a.best_prompt.origin is not PromptOrigin.SEED


class Kill(Exception):
    pass


def _kill_after(n):
    def hook(rec: TrialRecord):
        if rec.trial == n:
            raise Kill
    return hook


def test_kill_and_resume_matches_uninterrupted(tmp_path):
    _, reference = _run(tmp_path, "ref", 20)
    with pytest.raises(Kill):
        _run(tmp_path, "resumed", 20, on_trial=_kill_after(3))
    _, store = _run(tmp_path, "resumed", 20)
    assert _files(store) == _files(reference)


def test_resume_drops_torn_line_and_orphan_prompts(tmp_path):
    _, reference = _run(tmp_path, "ref", 12)
    with pytest.raises(Kill):
        _run(tmp_path, "torn", 12, on_trial=_kill_after(5))
    store = RunStore(tmp_path / "torn")
    # crash mid-trial: an orphan prompt was logged and the trial line is half written
    store.append_jsonl(PROMPTS_LOG, [Prompt(99, "orphan {session} {candidates}", 1, PromptOrigin.REFINED).to_json()])
    with open(store.path(TRIALS_LOG), "a", encoding="utf-8") as fh:
        fh.write('{"trial": 6, "prompt_id"')
    _run(tmp_path, "torn", 12)
    assert _files(store) == _files(reference)


def test_resume_with_different_config_is_refused(tmp_path):
    _run(tmp_path, "x", 15)
    catalog, sessions, cands = make_world(30)
    cfg = OptimizerConfig(max_trials=20, batch_size=6, pool_max=6, seed=3, c=0.0)
    with pytest.raises(ConfigError):
        optimize(cfg, sessions, catalog, MockBackend(MockScript.from_dict(SCRIPT)), candidates=cands,
                 seed_prompts=[quality_prompt(0.2)], store=RunStore(tmp_path / "x"))


def test_trial_record_round_trip(tmp_path):
    result, _ = _run(tmp_path, "rt", 4)
    for rec in result.trials:
        assert TrialRecord.from_json(rec.to_json()) == rec
