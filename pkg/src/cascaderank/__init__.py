"""cascaderank: coarse-to-fine cross-modal retrieval.

Fast structural top-K retrieval over an embedding gallery, threshold-gated
multi-agent semantic verification, score fusion and re-ranking, hard-negative
dataset mining, and an evaluation harness.
"""
from .agents import (
    AgentBackend,
    AgentBackendConfig,
    AgentRole,
    Checklist,
    HttpBackend,
    ScriptedBackend,
    Verdict,
    VerdictLabel,
    parse_checklist,
    parse_verdict,
    render_prompt,
)
from .data import GalleryItem, QueryRecord, load_gallery, load_qrels, load_queries
from .evalmetrics import (
    ConditionReport,
    EvalMetrics,
    SweepResult,
    average_precision,
    evaluate,
    recall_at_k,
    sweep,
)
from .fusion import (
    Branch,
    FusedScore,
    HashedEmbedder,
    HttpEmbedder,
    LookupEmbedder,
    RankedEntry,
    TextEmbedder,
    fuse,
    rerank,
    semantic_score,
)
from .mining import MiningConfig, SftRecord, emit_sft_dataset, mine_hard_negatives
from .ops import (
    AttentionWeights,
    cosine_similarity,
    min_max_normalize,
    pose_cross_attention,
    softmax_rows,
)
from .pipeline import CascadePipeline, QueryResult
from .retriever import CandidatePool, CoarseRetriever, PoolEntry, build_index
from .squad import (
    Outcome,
    SquadConfig,
    VerificationTranscript,
    gate,
    run_squad,
    verify_candidate,
)

__version__ = "0.1.0"

__all__ = [
    "AgentBackend",
    "AgentBackendConfig",
    "AgentRole",
    "AttentionWeights",
    "Branch",
    "CandidatePool",
    "CascadePipeline",
    "Checklist",
    "CoarseRetriever",
    "ConditionReport",
    "EvalMetrics",
    "FusedScore",
    "GalleryItem",
    "HashedEmbedder",
    "HttpBackend",
    "HttpEmbedder",
    "LookupEmbedder",
    "MiningConfig",
    "Outcome",
    "PoolEntry",
    "QueryRecord",
    "QueryResult",
    "RankedEntry",
    "ScriptedBackend",
    "SftRecord",
    "SquadConfig",
    "SweepResult",
    "TextEmbedder",
    "Verdict",
    "VerdictLabel",
    "VerificationTranscript",
    "average_precision",
    "build_index",
    "cosine_similarity",
    "emit_sft_dataset",
    "evaluate",
    "fuse",
    "gate",
    "load_gallery",
    "load_qrels",
    "load_queries",
    "min_max_normalize",
    "mine_hard_negatives",
    "parse_checklist",
    "parse_verdict",
    "pose_cross_attention",
    "recall_at_k",
    "render_prompt",
    "rerank",
    "run_squad",
    "semantic_score",
    "softmax_rows",
    "sweep",
    "verify_candidate",
]
