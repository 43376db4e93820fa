from __future__ import annotations

import math
import random

import pytest

from greenrec.domain import Catalog, Item, RankedList
from greenrec.metrics import (
    SessionResult,
    aggregate,
    green_share_at_k,
    hr_at_k,
    ndcg_at_k,
)


def ranked_at(rank, n=20):
    order = [f"x{k}" for k in range(n - 1)]
    order.insert(rank - 1, "t")
    return RankedList("s", tuple(order))


def dcg_oracle(order, target, k):
    """Textbook DCG/IDCG with binary relevance, summed over every position."""
    dcg = sum((1.0 if item == target else 0.0) / math.log2(pos + 2) for pos, item in enumerate(order[:k]))
    idcg = 1.0 / math.log2(2)
    return dcg / idcg


def test_hit_rate_examples():
    assert hr_at_k(ranked_at(1), "t", 1) == 1
    assert hr_at_k(ranked_at(5), "t", 5) == 1
    assert hr_at_k(ranked_at(5), "t", 4) == 0
    absent = RankedList("s", ("a", "b", "c"))
    assert all(hr_at_k(absent, "t", k) == 0 and ndcg_at_k(absent, "t", k) == 0.0 for k in (1, 2, 3, 10))


def test_ndcg_examples():
    assert all(ndcg_at_k(ranked_at(1), "t", k) == 1.0 for k in (1, 5, 20))
    assert ndcg_at_k(ranked_at(3), "t", 5) == 0.5
    assert ndcg_at_k(ranked_at(6), "t", 5) == 0.0


def test_random_permutations_against_oracle():
    rng = random.Random(0)
    for _ in range(300):
        order = [f"c{k}" for k in range(20)]
        rng.shuffle(order)
        target = rng.choice(order)
        ranked = RankedList("s", tuple(order))
        for k in (1, 5):
            assert abs(ndcg_at_k(ranked, target, k) - dcg_oracle(order, target, k)) <= 1e-12
            assert hr_at_k(ranked, target, k) == int(target in order[:k])


def test_duplicates_rejected():
    with pytest.raises(ValueError):
        hr_at_k(RankedList("s", ("a", "a")), "a", 1)
    with pytest.raises(ValueError):
        ndcg_at_k(ranked_at(1), "t", 0)


@pytest.fixture
def green_catalog():
    return Catalog([Item(f"g{k}", f"G{k}", sustainable=True) for k in range(5)]
                   + [Item(f"n{k}", f"N{k}") for k in range(5)])


def test_green_share(green_catalog):
    assert green_share_at_k(RankedList("s", ("g0", "g1", "g2", "g3", "g4", "n0")), green_catalog, 5) == 1.0
    assert green_share_at_k(RankedList("s", ("n0", "n1", "n2", "n3", "n4", "g0")), green_catalog, 5) == 0.0
    assert green_share_at_k(RankedList("s", ("g0", "n1", "g2", "n3", "n4")), green_catalog, 5) == 0.4
    with pytest.raises(ValueError):
        green_share_at_k(RankedList("s", ("g0",)), green_catalog, 5)


def test_aggregate_single_and_pair(green_catalog):
    hit = SessionResult("s1", "g0", RankedList("s1", ("g0", "n0", "n1", "n2", "n3")))
    report = aggregate([hit], green_catalog)
    assert report.hr[1] == report.ndcg[1] == 1.0
    miss = SessionResult("s2", "n4", RankedList("s2", ("g1", "n4", "n1", "n2", "n3")))
    assert aggregate([hit, miss], green_catalog).hr[1] == 0.5


def test_aggregate_failures_and_retention(green_catalog):
    failed = SessionResult("s1", "g0", None, retained=True, failed=True)
    lost = SessionResult("s2", "n0", RankedList("s2", ("g1", "g2", "n1", "n2", "n3")), retained=False)
    ok = SessionResult("s3", "n1", RankedList("s3", ("n1", "g2", "n0", "n2", "n3")))
    report = aggregate([failed, lost, ok], green_catalog, cutoffs=(5, 1))
    assert report.cutoffs == (1, 5)
    assert report.hr == {1: pytest.approx(1 / 3), 5: pytest.approx(1 / 3)}
    assert report.failure_rate == pytest.approx(1 / 3)
    assert report.target_retention_rate == pytest.approx(2 / 3)
    # green share averages only over sessions that produced a ranking
    assert report.green_share[5] == pytest.approx((0.4 + 0.2) / 2)
    assert report.n_green_targets == 1
    assert report.green_target_hr == {1: 0.0, 5: 0.0}
    out = report.to_json()
    assert list(out)[:8] == ["n_sessions", "cutoffs", "target_retention_rate", "failure_rate",
                             "HR@1", "HR@5", "NDCG@1", "NDCG@5"]


def test_aggregate_without_green_targets(green_catalog):
    report = aggregate([SessionResult("s", "n0", RankedList("s", ("n0", "g0")))], green_catalog, cutoffs=(1,))
    assert report.green_target_hr is None
    assert "green_target_HR@1" not in report.to_json()


def test_aggregate_matches_brute_force_recomputation():
    rng = random.Random(9)
    catalog = Catalog([Item(f"i{k}", f"I{k}", sustainable=rng.random() < 0.3) for k in range(60)])
    results, planted = [], []
    for n in range(500):
        order = rng.sample(catalog.ids, 20)
        target = order[rng.randrange(20)] if rng.random() < 0.9 else rng.choice(
            [i for i in catalog.ids if i not in order])
        failed = rng.random() < 0.05
        results.append(SessionResult(f"s{n}", target, None if failed else RankedList(f"s{n}", tuple(order)),
                                     retained=target in order, failed=failed))
        planted.append((order, target, failed))
    report = aggregate(results, catalog, (1, 5))

    for k in (1, 5):
        hr = ndcg = 0.0
        share, n_ranked = 0.0, 0
        for order, target, failed in planted:
            if failed:
                continue
            n_ranked += 1
            if target in order[:k]:
                hr += 1
                ndcg += 1 / math.log2(order.index(target) + 2)
            share += sum(catalog[i].sustainable for i in order[:k]) / k
        assert abs(report.hr[k] - hr / 500) <= 1e-12
        assert abs(report.ndcg[k] - ndcg / 500) <= 1e-12
        assert abs(report.green_share[k] - share / n_ranked) <= 1e-12
    assert report.n_sessions == 500


def test_empty_results():
    with pytest.raises(ValueError):
        aggregate([], Catalog([]))
