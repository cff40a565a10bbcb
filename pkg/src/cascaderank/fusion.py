"""Semantic scoring of synthesized captions, threshold-gated score fusion and
final re-ranking.

The semantic score is the cosine similarity between embeddings of the original
query text and the Writer's caption. The final score mixes the normalized
structural score with the semantic score only for candidates the gate
activated; everything else keeps its structural score untouched so
infrastructure failures can never reorder results unpredictably.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import requests

from .errors import CoverageMismatch, EmbedderFailure, EmptyInput, ParseError
from .ops import cosine_similarity
from .retriever import CandidatePool
from .squad import Outcome


class TextEmbedder:
    """Maps text to a fixed-dimension embedding vector."""

    dimension: int

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class LookupEmbedder(TextEmbedder):
    """Fixture-backed embedder: exact text -> vector, loaded from JSONL lines
    {"text": ..., "embedding": [...]}. Deterministic; unknown text is an
    EmbedderFailure."""

    def __init__(self, table: dict[str, np.ndarray]):
        if not table:
            raise ValueError("lookup embedder needs at least one entry")
        dims = {v.size for v in table.values()}
        if len(dims) != 1:
            raise ValueError(f"lookup fixture mixes dimensions: {sorted(dims)}")
        self._table = table
        self.dimension = dims.pop()

    @classmethod
    def from_file(cls, path: str | Path) -> "LookupEmbedder":
        path = Path(path)
        table: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    table[str(obj["text"])] = np.asarray(obj["embedding"], dtype=np.float64)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(f"{path}:{line_no}: bad embedding entry: {exc}") from exc
        return cls(table)

    def embed(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise EmbedderFailure(f"no fixture embedding for text: {text!r}") from None


class HashedEmbedder(TextEmbedder):
    """Deterministic, dependency-free bag-of-words embedder.

    Lowercase, split on whitespace, hash each token into one of `dimension`
    buckets (seeded, stable across platforms), count, L2-normalize. Identical
    texts embed identically and token overlap raises the cosine.
    """

    def __init__(self, dimension: int = 256, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = int(dimension)
        self.seed = int(seed)

    def _bucket(self, token: str) -> int:
        digest = hashlib.md5(f"{self.seed}:{token}".encode("utf-8")).hexdigest()
        return int(digest, 16) % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        for token in text.lower().split():
            vec[self._bucket(token)] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class HttpEmbedder(TextEmbedder):
    """OpenAI-compatible /embeddings client; any transport or shape problem is
    an EmbedderFailure."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        dimension: int = 0,
        timeout_ms: int = 30_000,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        token_env: str = "OPENAI_API_KEY",
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model_name = model_name
        self.dimension = dimension
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.token_env = token_env
        self._session = session or requests.Session()
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        attempts = 1 + max(0, self.max_retries)
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(
                    self.endpoint,
                    json={"model": self.model_name, "input": [text]},
                    headers=headers,
                    timeout=self.timeout_ms / 1000.0,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = EmbedderFailure(f"server returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise EmbedderFailure(f"embedding request rejected: {resp.status_code}")
            try:
                vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise EmbedderFailure(f"malformed embedding response: {exc}") from exc
            if vec.ndim != 1 or vec.size == 0:
                raise EmbedderFailure("embedding response is not a vector")
            with self._lock:
                if not self.dimension:
                    self.dimension = int(vec.size)
            return vec
        raise EmbedderFailure(f"embedder unreachable after {attempts} attempts: {last_error}")


def semantic_score(embedder: TextEmbedder, query_text: str, new_caption: str) -> float:
    """Cosine similarity between the embedded query and the embedded caption."""
    if not query_text or not new_caption:
        raise EmptyInput("semantic_score requires non-empty query and caption")
    return cosine_similarity(embedder.embed(query_text), embedder.embed(new_caption))


class Branch(str, Enum):
    FUSED = "fused"
    STRUCTURAL_ONLY = "structural_only"


@dataclass
class FusedScore:
    item_id: str
    s_str_raw: float
    s_str_norm: float
    s_sem: float | None
    s_final: float
    branch: Branch


def fuse(
    s_str_norm: float,
    semantic: float | Outcome,
    lam: float,
    xi: float,
    item_id: str = "",
    s_str_raw: float = float("nan"),
    gated: bool | None = None,
) -> FusedScore:
    """Threshold-gated convex fusion of structural and semantic scores.

    `semantic` is either the computed semantic score or the verification
    outcome marker for candidates without one. Ungated, skipped and degraded
    candidates keep their structural score (structural-only branch). Verified
    candidates fuse lam * s_str_norm + (1 - lam) * s_sem. Rejected candidates
    fuse with s_sem = 0: demotion by lam * s_str_norm is recoverable on a
    Detective error, hard removal is not, and metrics stay defined over full
    rankings.

    `gated` overrides the default gate recomputation (s_str_norm > xi) so the
    fusion branch always follows the squad's actual gate decision, including
    raw-score gating.
    """
    if gated is None:
        gated = s_str_norm > xi
    structural_only = FusedScore(
        item_id=item_id,
        s_str_raw=s_str_raw,
        s_str_norm=s_str_norm,
        s_sem=None,
        s_final=s_str_norm,
        branch=Branch.STRUCTURAL_ONLY,
    )
    if not gated:
        return structural_only
    if isinstance(semantic, Outcome):
        if semantic in (Outcome.SKIPPED, Outcome.DEGRADED):
            return structural_only
        if semantic is Outcome.REJECTED:
            s_sem = 0.0
        else:
            raise ValueError("verified candidates must pass a semantic score, not an outcome")
    else:
        s_sem = float(semantic)
    return FusedScore(
        item_id=item_id,
        s_str_raw=s_str_raw,
        s_str_norm=s_str_norm,
        s_sem=s_sem,
        s_final=lam * s_str_norm + (1.0 - lam) * s_sem,
        branch=Branch.FUSED,
    )


@dataclass
class RankedEntry:
    item_id: str
    s_final: float
    rank: int


def rerank(pool: CandidatePool, fused: list[FusedScore]) -> list[RankedEntry]:
    """Sort fused scores descending (item_id ascending on ties) into the final
    ranking. The fused list must cover exactly the pool's items."""
    pool_ids = set(pool.item_ids())
    fused_ids = {f.item_id for f in fused}
    if pool_ids != fused_ids or len(fused) != len(pool.entries):
        missing = sorted(pool_ids - fused_ids)
        extra = sorted(fused_ids - pool_ids)
        raise CoverageMismatch(f"fused scores do not cover the pool: missing={missing} extra={extra}")
    ordered = sorted(fused, key=lambda f: (-f.s_final, f.item_id))
    return [RankedEntry(item_id=f.item_id, s_final=f.s_final, rank=i + 1) for i, f in enumerate(ordered)]
