"""Stage-one structural filter: exact top-K retrieval over a gallery of
precomputed embeddings, by cosine similarity.

CoarseRetriever follows the sklearn estimator protocol: construct with
parameters, fit on gallery items, then query. get_params/set_params come from
BaseEstimator so the retriever composes with parameter sweeps and cloning.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import GalleryItem, QueryRecord, load_gallery
from .errors import DimensionMismatch, DuplicateId, ZeroNormVector
from .ops import min_max_normalize

DEFAULT_TOP_K = 128


@dataclass
class PoolEntry:
    item_id: str
    s_str_raw: float
    s_str_norm: float
    rank: int


@dataclass
class CandidatePool:
    """Top-K candidates for one query, sorted by raw score descending with
    lexicographic item_id tie-break; s_str_norm is min-max normalized over
    exactly this pool's raw scores."""

    query_id: str
    entries: list[PoolEntry] = field(default_factory=list)

    def item_ids(self) -> list[str]:
        return [e.item_id for e in self.entries]

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "entries": [
                {
                    "item_id": e.item_id,
                    "s_str_raw": e.s_str_raw,
                    "s_str_norm": e.s_str_norm,
                    "rank": e.rank,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_record(cls, obj: dict) -> "CandidatePool":
        entries = [
            PoolEntry(
                item_id=str(e["item_id"]),
                s_str_raw=float("-inf") if e["s_str_raw"] is None else float(e["s_str_raw"]),
                s_str_norm=float(e["s_str_norm"]),
                rank=int(e["rank"]),
            )
            for e in obj.get("entries", [])
        ]
        return cls(query_id=str(obj["query_id"]), entries=entries)


class CoarseRetriever(BaseEstimator):
    """Exact cosine top-K scan over a fitted gallery.

    Parameters
    ----------
    k : int, default 128
        Pool size; each query returns min(k, gallery size) candidates.
    """

    def __init__(self, k: int = DEFAULT_TOP_K):
        self.k = k

    def fit(self, gallery: list[GalleryItem], y=None) -> "CoarseRetriever":
        """Index the gallery. Ids must be unique, dimensions uniform, entries
        finite. Zero-norm embeddings are tolerated here and rank last at query
        time rather than failing the whole batch."""
        ids: list[str] = []
        seen: set[str] = set()
        dim: int | None = None
        for item in gallery:
            if item.item_id in seen:
                raise DuplicateId(f"duplicate item_id {item.item_id!r} in gallery")
            seen.add(item.item_id)
            vec = np.asarray(item.embedding, dtype=np.float64)
            if vec.ndim != 1:
                raise DimensionMismatch(f"item {item.item_id!r}: embedding must be 1-D")
            if dim is None:
                dim = int(vec.size)
            elif vec.size != dim:
                raise DimensionMismatch(
                    f"item {item.item_id!r}: dimension {vec.size} differs from {dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"item {item.item_id!r}: embedding contains NaN or Inf")
            ids.append(item.item_id)

        self.ids_ = ids
        self.dim_ = dim
        if gallery:
            self.matrix_ = np.stack([np.asarray(g.embedding, dtype=np.float64) for g in gallery])
            self.norms_ = np.linalg.norm(self.matrix_, axis=1)
        else:
            self.matrix_ = np.zeros((0, 0))
            self.norms_ = np.zeros(0)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "ids_"):
            raise NotFittedError("CoarseRetriever must be fitted on a gallery first")

    @property
    def item_count(self) -> int:
        self._check_fitted()
        return len(self.ids_)

    def raw_scores(self, query: QueryRecord) -> np.ndarray:
        """Cosine similarity of the query against every gallery item, in
        gallery order. Zero-norm gallery items score -inf."""
        self._check_fitted()
        q = np.asarray(query.embedding, dtype=np.float64)
        if self.dim_ is not None and q.size != self.dim_:
            raise DimensionMismatch(
                f"query {query.query_id!r}: dimension {q.size} differs from index {self.dim_}"
            )
        qnorm = float(np.linalg.norm(q))
        if qnorm == 0.0:
            raise ZeroNormVector(f"query {query.query_id!r} has a zero-norm embedding")
        if not self.ids_:
            return np.zeros(0)
        scores = np.full(len(self.ids_), -np.inf)
        ok = self.norms_ > 0.0
        scores[ok] = (self.matrix_[ok] @ q) / (self.norms_[ok] * qnorm)
        return scores

    def retrieve(self, query: QueryRecord, k: int | None = None) -> CandidatePool:
        """Return the top-k pool for one query.

        Exactly min(k, gallery size) entries, sorted by raw score descending
        with ties broken by item_id ascending, ranks contiguous from 1.
        """
        self._check_fitted()
        k = self.k if k is None else int(k)
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        scores = self.raw_scores(query)
        order = sorted(range(len(self.ids_)), key=lambda i: (-scores[i], self.ids_[i]))
        top = order[: min(k, len(order))]
        raw = [float(scores[i]) for i in top]
        # Normalize over the pool's finite raw scores; -inf (zero-norm) items
        # pin to 0 so they stay below any gate threshold.
        finite = [s for s in raw if np.isfinite(s)]
        if finite:
            normed = iter(min_max_normalize(finite))
            norm = [float(next(normed)) if np.isfinite(s) else 0.0 for s in raw]
        else:
            norm = [0.0 for _ in raw]
        entries = [
            PoolEntry(item_id=self.ids_[i], s_str_raw=raw[j], s_str_norm=norm[j], rank=j + 1)
            for j, i in enumerate(top)
        ]
        return CandidatePool(query_id=query.query_id, entries=entries)

    def retrieve_all(self, queries: list[QueryRecord], k: int | None = None) -> list[CandidatePool]:
        return [self.retrieve(q, k) for q in queries]


def build_index(manifest_path, k: int = DEFAULT_TOP_K) -> CoarseRetriever:
    """Load a gallery manifest and fit a retriever over it."""
    return CoarseRetriever(k=k).fit(load_gallery(manifest_path))
