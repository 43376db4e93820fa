"""Ranking and sustainability metrics for next-item prediction.

There is exactly one relevant item per session (the target), so the ideal
DCG is 1 and NDCG@K reduces to ``1 / log2(rank + 1)`` inside the cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .domain import Catalog, RankedList


def _audit(ranked: RankedList) -> None:
    if len(set(ranked.order)) != len(ranked.order):
        raise ValueError(f"ranking for {ranked.session_id!r} is not a permutation (duplicate ids)")


def _rank(ranked: RankedList, target: str) -> int | None:
    _audit(ranked)
    return ranked.rank_of(target)


def hr_at_k(ranked: RankedList, target: str, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    rank = _rank(ranked, target)
    return int(rank is not None and rank <= k)


def ndcg_at_k(ranked: RankedList, target: str, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    rank = _rank(ranked, target)
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def green_share_at_k(ranked: RankedList, catalog: Catalog, k: int) -> float:
    if not 1 <= k <= len(ranked.order):
        raise ValueError(f"k={k} outside 1..{len(ranked.order)}")
    _audit(ranked)
    return sum(catalog[i].sustainable for i in ranked.order[:k]) / k


@dataclass(frozen=True)
class SessionResult:
    """One evaluated session. ``ranked`` is None when the backend failed."""

    session_id: str
    target: str
    ranked: RankedList | None
    retained: bool = True  # target survived stage-1 filtering
    failed: bool = False


@dataclass
class MetricsReport:
    cutoffs: tuple[int, ...]
    n_sessions: int
    hr: dict[int, float]
    ndcg: dict[int, float]
    target_retention_rate: float
    failure_rate: float
    green_share: dict[int, float]
    n_green_targets: int
    green_target_hr: dict[int, float] | None = None
    green_target_ndcg: dict[int, float] | None = None
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        out: dict = {
            "n_sessions": self.n_sessions,
            "cutoffs": list(self.cutoffs),
            "target_retention_rate": self.target_retention_rate,
            "failure_rate": self.failure_rate,
        }
        for k in self.cutoffs:
            out[f"HR@{k}"] = self.hr[k]
        for k in self.cutoffs:
            out[f"NDCG@{k}"] = self.ndcg[k]
        for k in self.cutoffs:
            out[f"green_share@{k}"] = self.green_share[k]
        out["n_green_targets"] = self.n_green_targets
        if self.green_target_hr is not None and self.green_target_ndcg is not None:
            for k in self.cutoffs:
                out[f"green_target_HR@{k}"] = self.green_target_hr[k]
            for k in self.cutoffs:
                out[f"green_target_NDCG@{k}"] = self.green_target_ndcg[k]
        return out


def session_row(result: SessionResult, catalog: Catalog, cutoffs: Sequence[int]) -> dict:
    row: dict = {
        "session_id": result.session_id,
        "target": result.target,
        "target_rank": None,
        "retained": result.retained,
        "failed": result.failed,
        "green_target": catalog[result.target].sustainable,
    }
    ranked = result.ranked
    if ranked is not None:
        row["target_rank"] = _rank(ranked, result.target)
    for k in cutoffs:
        row[f"HR@{k}"] = hr_at_k(ranked, result.target, k) if ranked else 0
        row[f"NDCG@{k}"] = ndcg_at_k(ranked, result.target, k) if ranked else 0.0
        row[f"green_share@{k}"] = green_share_at_k(ranked, catalog, k) if ranked else None
    return row


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def aggregate(results: Sequence[SessionResult], catalog: Catalog, cutoffs: Sequence[int] = (1, 5)) -> MetricsReport:
    """Average per-session metrics.

    Failed sessions and sessions whose target was filtered out count as
    misses. Green share averages over sessions that produced a ranking; the
    green-target metrics cover only sessions with a sustainable target and are
    left out when there are none.
    """
    if not results:
        raise ValueError("no sessions to aggregate")
    cutoffs = tuple(sorted(set(cutoffs)))
    rows = [session_row(r, catalog, cutoffs) for r in results]
    ranked_rows = [row for row in rows if not row["failed"]]
    green_rows = [row for row in rows if row["green_target"]]

    report = MetricsReport(
        cutoffs=cutoffs,
        n_sessions=len(rows),
        hr={k: _mean([row[f"HR@{k}"] for row in rows]) for k in cutoffs},
        ndcg={k: _mean([row[f"NDCG@{k}"] for row in rows]) for k in cutoffs},
        target_retention_rate=_mean([float(row["retained"]) for row in rows]),
        failure_rate=_mean([float(row["failed"]) for row in rows]),
        green_share={
            k: _mean([row[f"green_share@{k}"] for row in ranked_rows]) if ranked_rows else 0.0
            for k in cutoffs
        },
        n_green_targets=len(green_rows),
        rows=rows,
    )
    if green_rows:
        report.green_target_hr = {k: _mean([row[f"HR@{k}"] for row in green_rows]) for k in cutoffs}
        report.green_target_ndcg = {k: _mean([row[f"NDCG@{k}"] for row in green_rows]) for k in cutoffs}
    return report
