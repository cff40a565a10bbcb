"""End-to-end cascade: retrieve -> gated verification -> fusion -> re-rank.

CascadePipeline is an sklearn-style estimator: parameters in the constructor
(get_params/set_params work, so parameter sweeps can clone and reconfigure),
fit on the gallery, then search queries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .agents import AgentBackend, Checklist
from .data import GalleryItem, QueryRecord
from .errors import EmbedderFailure, EmptyInput, ZeroNormVector
from .fusion import FusedScore, HashedEmbedder, RankedEntry, TextEmbedder, fuse, rerank, semantic_score
from .retriever import CandidatePool, CoarseRetriever
from .squad import Outcome, SquadConfig, VerificationTranscript, run_squad
from .validation import check_positive_int, check_unit_interval

logger = logging.getLogger(__name__)

_SEMANTIC_FAILURES = (EmbedderFailure, ZeroNormVector, EmptyInput)


@dataclass
class QueryResult:
    """Everything one query produced: pool, transcripts, fused scores and the
    final ranking. outcomes holds the effective per-item outcome (a verified
    candidate whose semantic scoring failed is reported degraded)."""

    query_id: str
    pool: CandidatePool
    transcripts: list[VerificationTranscript] = field(default_factory=list)
    fused: list[FusedScore] = field(default_factory=list)
    ranking: list[RankedEntry] = field(default_factory=list)
    outcomes: dict[str, Outcome] = field(default_factory=dict)

    def ranked_ids(self) -> list[str]:
        return [e.item_id for e in self.ranking]

    def to_record(self) -> dict:
        by_id = {f.item_id: f for f in self.fused}
        return {
            "query_id": self.query_id,
            "ranking": [
                {
                    "item_id": e.item_id,
                    "s_final": e.s_final,
                    "s_str_norm": by_id[e.item_id].s_str_norm,
                    "s_sem": by_id[e.item_id].s_sem,
                    "branch": by_id[e.item_id].branch.value,
                    "outcome": self.outcomes[e.item_id].value,
                }
                for e in self.ranking
            ],
        }


class CascadePipeline(BaseEstimator):
    """Coarse-to-fine retrieval with threshold-gated semantic verification.

    Parameters
    ----------
    k : pool size for coarse retrieval.
    lam : convex fusion weight on the structural score (1 - lam on semantic).
    xi : gate threshold; verification activates only above it (strict).
    rounds : verification rounds per gated candidate.
    backend : AgentBackend answering Detective/Analyst/Writer calls.
    embedder : TextEmbedder for semantic scoring; defaults to a hashed
        bag-of-words embedder seeded by `seed`.
    checklist : Analyst checklist; defaults to the standard 15 keys.
    include_query_in_writer : let the Writer see the original query text
        (off by default; copying the query would inflate semantic scores).
    gate_on_raw : gate on the raw cosine instead of the pool-normalized score.
    workers : per-pool verification concurrency; output is identical for any
        worker count.
    """

    def __init__(
        self,
        k: int = 128,
        lam: float = 0.4,
        xi: float = 0.95,
        rounds: int = 2,
        backend: AgentBackend | None = None,
        embedder: TextEmbedder | None = None,
        checklist: Checklist | None = None,
        include_query_in_writer: bool = False,
        gate_on_raw: bool = False,
        workers: int = 1,
        seed: int = 0,
    ):
        self.k = k
        self.lam = lam
        self.xi = xi
        self.rounds = rounds
        self.backend = backend
        self.embedder = embedder
        self.checklist = checklist
        self.include_query_in_writer = include_query_in_writer
        self.gate_on_raw = gate_on_raw
        self.workers = workers
        self.seed = seed

    def _validate_params(self) -> None:
        check_unit_interval(self.lam, "lam")
        check_unit_interval(self.xi, "xi")
        check_positive_int(self.k, "k")
        check_positive_int(self.rounds, "rounds")

    def fit(self, gallery: list[GalleryItem], y=None) -> "CascadePipeline":
        self._validate_params()
        self.retriever_ = CoarseRetriever(k=self.k).fit(gallery)
        self.image_refs_ = {g.item_id: (g.image_ref or g.item_id) for g in gallery}
        self.embedder_ = self.embedder or HashedEmbedder(seed=self.seed)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "retriever_"):
            raise NotFittedError("CascadePipeline must be fitted on a gallery first")

    def squad_config(self) -> SquadConfig:
        return SquadConfig(
            xi=self.xi,
            rounds=self.rounds,
            checklist=self.checklist or Checklist(),
            include_query_in_writer=self.include_query_in_writer,
            gate_on_raw=self.gate_on_raw,
        )

    def search(self, query: QueryRecord) -> QueryResult:
        """Run the full cascade for one query."""
        self._check_fitted()
        if self.backend is None:
            raise ValueError("CascadePipeline needs a backend to run verification")
        pool = self.retriever_.retrieve(query, self.k)
        transcripts = run_squad(
            query,
            pool,
            self.squad_config(),
            self.backend,
            image_refs=self.image_refs_,
            workers=self.workers,
        )
        return self.fuse_pool(query, pool, transcripts)

    def fuse_pool(
        self,
        query: QueryRecord,
        pool: CandidatePool,
        transcripts: list[VerificationTranscript],
        lam: float | None = None,
    ) -> QueryResult:
        """Score, fuse and re-rank an already-verified pool. Split out so
        sweeps and the file-level rerank command can reuse cached transcripts."""
        self._check_fitted()
        lam = self.lam if lam is None else lam
        fused: list[FusedScore] = []
        outcomes: dict[str, Outcome] = {}
        for entry, transcript in zip(pool.entries, transcripts):
            effective = transcript.outcome
            semantic: float | Outcome = transcript.outcome
            if transcript.outcome is Outcome.VERIFIED:
                try:
                    semantic = semantic_score(self.embedder_, query.text, transcript.final_caption)
                except _SEMANTIC_FAILURES as exc:
                    logger.warning(
                        "semantic scoring degraded for query=%s item=%s: %s",
                        query.query_id,
                        entry.item_id,
                        exc,
                    )
                    semantic = Outcome.DEGRADED
                    effective = Outcome.DEGRADED
            fused.append(
                fuse(
                    entry.s_str_norm,
                    semantic,
                    lam,
                    self.xi,
                    item_id=entry.item_id,
                    s_str_raw=entry.s_str_raw,
                    gated=transcript.gate_activated,
                )
            )
            outcomes[entry.item_id] = effective
        ranking = rerank(pool, fused)
        return QueryResult(
            query_id=query.query_id,
            pool=pool,
            transcripts=transcripts,
            fused=fused,
            ranking=ranking,
            outcomes=outcomes,
        )

    def search_all(self, queries: list[QueryRecord]) -> list[QueryResult]:
        return [self.search(q) for q in queries]

    def predict(self, queries: list[QueryRecord]) -> list[list[str]]:
        """Ranked item ids per query, in query order."""
        return [r.ranked_ids() for r in self.search_all(queries)]
