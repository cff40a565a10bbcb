"""Retrieval evaluation: Recall@K, mean average precision, per-condition
grouping and parameter sweeps.

Conventions, pinned for reproducibility: relevant items never retrieved
contribute zero to average precision (rankings here are top-K truncations);
the mean row of a grouped report is the unweighted mean over conditions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .agents import Checklist
from .data import QueryRecord
from .errors import EmptyRelevant, MissingQrels, UnknownTag
from .pipeline import CascadePipeline
from .squad import SquadConfig, run_squad

DEFAULT_KS = (1, 5, 10)


def recall_at_k(ranking: Sequence[str], relevant: set[str], k: int) -> int:
    """1 iff any relevant id appears in the first min(k, len) positions."""
    if not relevant:
        raise EmptyRelevant("recall@k needs a non-empty relevant set")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return int(any(item in relevant for item in ranking[:k]))


def average_precision(ranking: Sequence[str], relevant: set[str]) -> float:
    """Mean of precision-at-rank over the relevant items, divided by the full
    relevant count, so unfound relevants contribute zero."""
    if not relevant:
        raise EmptyRelevant("average precision needs a non-empty relevant set")
    hits = 0
    precision_sum = 0.0
    for rank, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(relevant)


@dataclass
class EvalMetrics:
    r_at: dict[int, float]
    map_score: float
    query_count: int

    def to_record(self) -> dict:
        return {
            "r_at": {str(k): v for k, v in sorted(self.r_at.items())},
            "map": self.map_score,
            "query_count": self.query_count,
        }


@dataclass
class ConditionReport:
    conditions: dict[str, EvalMetrics]
    mean: EvalMetrics

    def to_record(self) -> dict:
        return {
            "conditions": {name: m.to_record() for name, m in sorted(self.conditions.items())},
            "mean": self.mean.to_record(),
        }


def _aggregate(per_query: list[tuple[dict[int, int], float]], ks: Sequence[int]) -> EvalMetrics:
    n = len(per_query)
    r_at = {k: sum(r[k] for r, _ in per_query) / n for k in ks}
    map_score = sum(ap for _, ap in per_query) / n
    return EvalMetrics(r_at=r_at, map_score=map_score, query_count=n)


def evaluate(
    rankings: Mapping[str, Sequence[str]],
    qrels: Mapping[str, set[str]],
    group_by: str | None = None,
    queries: Iterable[QueryRecord] | None = None,
    ks: Sequence[int] = DEFAULT_KS,
) -> EvalMetrics | ConditionReport:
    """Average per-query metrics arithmetically; with group_by, partition the
    queries by that tag's value and append an unweighted mean row.

    Every ranked query must appear in qrels; grouping requires query records
    carrying the tag.
    """
    if not rankings:
        raise ValueError("no rankings to evaluate")
    per_query: dict[str, tuple[dict[int, int], float]] = {}
    for query_id in rankings:
        if query_id not in qrels:
            raise MissingQrels(f"query {query_id!r} missing from qrels")
        relevant = qrels[query_id]
        ranking = list(rankings[query_id])
        scores = {k: recall_at_k(ranking, relevant, k) for k in ks}
        per_query[query_id] = (scores, average_precision(ranking, relevant))

    if group_by is None:
        return _aggregate(list(per_query.values()), ks)

    if queries is None:
        raise ValueError("grouping requires the query records")
    tags_by_id = {q.query_id: q.tags for q in queries}
    groups: dict[str, list[tuple[dict[int, int], float]]] = {}
    for query_id in rankings:
        tags = tags_by_id.get(query_id)
        if tags is None or group_by not in tags:
            raise UnknownTag(f"query {query_id!r} has no tag {group_by!r}")
        groups.setdefault(tags[group_by], []).append(per_query[query_id])

    conditions = {name: _aggregate(rows, ks) for name, rows in groups.items()}
    n_conditions = len(conditions)
    mean = EvalMetrics(
        r_at={k: sum(m.r_at[k] for m in conditions.values()) / n_conditions for k in ks},
        map_score=sum(m.map_score for m in conditions.values()) / n_conditions,
        query_count=sum(m.query_count for m in conditions.values()),
    )
    return ConditionReport(conditions=conditions, mean=mean)


def format_table(report: EvalMetrics | ConditionReport, ks: Sequence[int] = DEFAULT_KS) -> str:
    """Aligned-column text table for humans."""
    header = ["condition"] + [f"R@{k}" for k in ks] + ["mAP", "queries"]

    def row(name: str, m: EvalMetrics) -> list[str]:
        return [name] + [f"{m.r_at[k]:.4f}" for k in ks] + [f"{m.map_score:.4f}", str(m.query_count)]

    if isinstance(report, EvalMetrics):
        rows = [row("all", report)]
    else:
        rows = [row(name, m) for name, m in sorted(report.conditions.items())]
        rows.append(row("mean", report.mean))
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = [
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)) for r in [header] + rows
    ]
    return "\n".join(lines)


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)
    cache_hits: int = 0
    cache_misses: int = 0

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "xi", "rounds", "r1", "r5", "r10", "map"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["lambda"],
                        row["xi"],
                        row["rounds"],
                        row["r1"],
                        row["r5"],
                        row["r10"],
                        row["map"],
                    ]
                )


def sweep(
    pipeline: CascadePipeline,
    queries: list[QueryRecord],
    qrels: Mapping[str, set[str]],
    lambda_grid: Sequence[float],
    xi_grid: Sequence[float],
    rounds_grid: Sequence[int],
) -> SweepResult:
    """Evaluate every (lambda, xi, rounds) grid point.

    Retrieval is shared across the whole grid; verification transcripts are
    cached per (xi, rounds) since lambda only changes the fusion, so grid
    points sharing (xi, rounds) reuse the same transcripts.
    """
    if not lambda_grid or not xi_grid or not rounds_grid:
        raise ValueError("sweep grids must be non-empty")
    pipeline._check_fitted()
    pools = {q.query_id: pipeline.retriever_.retrieve(q, pipeline.k) for q in queries}
    transcript_cache: dict[tuple[float, int], dict[str, list]] = {}
    result = SweepResult()

    for lam in lambda_grid:
        for xi in xi_grid:
            for rounds in rounds_grid:
                key = (float(xi), int(rounds))
                if key in transcript_cache:
                    result.cache_hits += 1
                else:
                    result.cache_misses += 1
                    cfg = SquadConfig(
                        xi=float(xi),
                        rounds=int(rounds),
                        checklist=pipeline.checklist or Checklist(),
                        include_query_in_writer=pipeline.include_query_in_writer,
                        gate_on_raw=pipeline.gate_on_raw,
                    )
                    transcript_cache[key] = {
                        q.query_id: run_squad(
                            q,
                            pools[q.query_id],
                            cfg,
                            pipeline.backend,
                            image_refs=pipeline.image_refs_,
                            workers=pipeline.workers,
                        )
                        for q in queries
                    }
                transcripts = transcript_cache[key]
                rankings = {
                    q.query_id: pipeline.fuse_pool(
                        q, pools[q.query_id], transcripts[q.query_id], lam=float(lam)
                    ).ranked_ids()
                    for q in queries
                }
                metrics = evaluate(rankings, qrels)
                result.rows.append(
                    {
                        "lambda": float(lam),
                        "xi": float(xi),
                        "rounds": int(rounds),
                        "r1": metrics.r_at[1],
                        "r5": metrics.r_at[5],
                        "r10": metrics.r_at[10],
                        "map": metrics.map_score,
                        "metrics": metrics,
                    }
                )
    return result
