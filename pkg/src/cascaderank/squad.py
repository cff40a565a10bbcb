"""Threshold-gated, multi-round verification of a candidate pool.

Per candidate: gate -> Detective -> Analyst -> Writer, repeated for the
configured number of rounds. A Discard verdict terminates the candidate
immediately (the Detective is a filter; latest evidence wins and termination
bounds cost). Backend failures degrade the candidate instead of failing the
query: availability beats completeness here.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .agents import (
    AgentBackend,
    AgentRole,
    Checklist,
    ChecklistAnswers,
    Verdict,
    VerdictLabel,
    parse_checklist,
    parse_verdict,
    render_prompt,
)
from .data import QueryRecord
from .errors import BackendTimeout, BackendUnavailable, FixtureMiss, UnparseableVerdict
from .retriever import CandidatePool
from .validation import check_positive_int, check_unit_interval

logger = logging.getLogger(__name__)

_BACKEND_FAILURES = (BackendTimeout, BackendUnavailable, FixtureMiss, UnparseableVerdict)


class Outcome(str, Enum):
    SKIPPED = "skipped"
    REJECTED = "rejected"
    VERIFIED = "verified"
    DEGRADED = "degraded"


@dataclass
class SquadConfig:
    """Verification knobs.

    xi is the gate threshold on the pool-normalized structural score; set
    gate_on_raw to gate on the raw cosine score instead. Gains saturate after
    the first couple of rounds, hence the default of 2.
    """

    xi: float = 0.95
    rounds: int = 2
    checklist: Checklist = field(default_factory=Checklist)
    include_query_in_writer: bool = False
    gate_on_raw: bool = False

    def __post_init__(self):
        self.xi = check_unit_interval(self.xi, "xi")
        self.rounds = check_positive_int(self.rounds, "rounds")


@dataclass
class RoundRecord:
    round_index: int
    verdict: Verdict | None = None
    answers: ChecklistAnswers | None = None
    caption: str | None = None


@dataclass
class VerificationTranscript:
    """Full audit trail for one (query, candidate) verification."""

    query_id: str
    item_id: str
    gate_activated: bool
    rounds: list[RoundRecord] = field(default_factory=list)
    final_caption: str | None = None
    outcome: Outcome = Outcome.SKIPPED
    failure_cause: str | None = None

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "item_id": self.item_id,
            "gate_activated": self.gate_activated,
            "rounds": [
                {
                    "round_index": r.round_index,
                    "verdict": None
                    if r.verdict is None
                    else {"label": r.verdict.label.value, "raw_text": r.verdict.raw_text},
                    "answers": r.answers,
                    "caption": r.caption,
                }
                for r in self.rounds
            ],
            "final_caption": self.final_caption,
            "outcome": self.outcome.value,
            "failure_cause": self.failure_cause,
        }

    @classmethod
    def from_record(cls, obj: dict) -> "VerificationTranscript":
        rounds = []
        for r in obj.get("rounds", []):
            verdict = None
            if r.get("verdict") is not None:
                verdict = Verdict(
                    label=VerdictLabel(r["verdict"]["label"]),
                    raw_text=r["verdict"].get("raw_text", ""),
                )
            rounds.append(
                RoundRecord(
                    round_index=int(r["round_index"]),
                    verdict=verdict,
                    answers=r.get("answers"),
                    caption=r.get("caption"),
                )
            )
        return cls(
            query_id=str(obj["query_id"]),
            item_id=str(obj["item_id"]),
            gate_activated=bool(obj["gate_activated"]),
            rounds=rounds,
            final_caption=obj.get("final_caption"),
            outcome=Outcome(obj["outcome"]),
            failure_cause=obj.get("failure_cause"),
        )


def gate(s_str_norm: float, xi: float) -> bool:
    """True iff the structural score strictly exceeds the threshold."""
    return s_str_norm > xi


def verify_candidate(
    query: QueryRecord,
    item_ref: str,
    s_str_norm: float,
    cfg: SquadConfig,
    backend: AgentBackend,
    item_id: str | None = None,
    s_str_raw: float | None = None,
) -> VerificationTranscript:
    """Run the gated verification chain for one candidate.

    item_ref is what the backend sees (the image reference); item_id labels
    the transcript and defaults to item_ref. When cfg.gate_on_raw is set the
    gate compares the raw score (s_str_raw must then be provided).
    """
    item_id = item_ref if item_id is None else item_id
    if cfg.gate_on_raw:
        if s_str_raw is None:
            raise ValueError("gate_on_raw requires s_str_raw")
        activated = gate(s_str_raw, cfg.xi)
    else:
        activated = gate(s_str_norm, cfg.xi)

    transcript = VerificationTranscript(
        query_id=query.query_id, item_id=item_id, gate_activated=activated
    )
    if not activated:
        transcript.outcome = Outcome.SKIPPED
        return transcript

    prior_caption: str | None = None
    try:
        for round_index in range(1, cfg.rounds + 1):
            raw = backend.invoke(
                AgentRole.DETECTIVE, item_ref, render_prompt(AgentRole.DETECTIVE, query.text)
            )
            verdict = parse_verdict(raw)
            if not verdict.is_match:
                transcript.rounds.append(RoundRecord(round_index, verdict=verdict))
                transcript.outcome = Outcome.REJECTED
                return transcript

            analyst_prompt = render_prompt(
                AgentRole.ANALYST,
                query.text,
                checklist=cfg.checklist,
                prior_caption=prior_caption,
            )
            answers = parse_checklist(
                backend.invoke(AgentRole.ANALYST, item_ref, analyst_prompt), cfg.checklist
            )

            writer_query = query.text if cfg.include_query_in_writer else ""
            writer_prompt = render_prompt(AgentRole.WRITER, writer_query, evidence=answers)
            caption = backend.invoke(AgentRole.WRITER, item_ref, writer_prompt).strip()

            transcript.rounds.append(RoundRecord(round_index, verdict, answers, caption))
            prior_caption = caption
    except _BACKEND_FAILURES as exc:
        logger.warning(
            "verification degraded for query=%s item=%s: %s", query.query_id, item_id, exc
        )
        transcript.outcome = Outcome.DEGRADED
        transcript.failure_cause = str(exc)
        return transcript

    final_caption = transcript.rounds[-1].caption if transcript.rounds else None
    if not final_caption:
        transcript.outcome = Outcome.DEGRADED
        transcript.failure_cause = "writer produced an empty caption"
        return transcript
    transcript.final_caption = final_caption
    transcript.outcome = Outcome.VERIFIED
    return transcript


def run_squad(
    query: QueryRecord,
    pool: CandidatePool,
    cfg: SquadConfig,
    backend: AgentBackend,
    image_refs: Mapping[str, str] | None = None,
    workers: int = 1,
) -> list[VerificationTranscript]:
    """Verify every pool entry; one transcript per entry, in pool-rank order.

    Candidates are independent and may be verified concurrently (rounds within
    one candidate stay sequential); output order is by pool rank regardless of
    completion order, so results are deterministic for any worker count.
    """

    def job(entry) -> VerificationTranscript:
        ref = image_refs.get(entry.item_id, entry.item_id) if image_refs else entry.item_id
        return verify_candidate(
            query,
            ref,
            entry.s_str_norm,
            cfg,
            backend,
            item_id=entry.item_id,
            s_str_raw=entry.s_str_raw,
        )

    if workers <= 1 or len(pool.entries) <= 1:
        return [job(entry) for entry in pool.entries]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(job, pool.entries))
