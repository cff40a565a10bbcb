"""Hard-negative mining and instruction-tuning dataset emission.

Hard negatives are gallery items the structural retriever ranks high for a
query even though they are not in its relevant set. The emitted dataset holds
role-specific instruction/response records; Analyst and Writer supervision
targets come only from ground-truth-matched pairs, since nothing labels what
the evidence for a negative would be.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping

from .agents import AgentRole, Checklist, render_prompt
from .data import GalleryItem, QueryRecord
from .errors import InsufficientPairs, MissingQrels
from .retriever import CoarseRetriever

POSITIVE = "positive"
HARD_NEGATIVE = "hard_negative"


@dataclass
class SftRecord:
    role: AgentRole
    query_id: str
    item_id: str
    image_ref: str
    instruction: str
    expected_response: str
    label: str
    needs_annotation: bool = False

    def to_record(self) -> dict:
        return {
            "role": self.role.value,
            "query_id": self.query_id,
            "item_id": self.item_id,
            "image_ref": self.image_ref,
            "instruction": self.instruction,
            "expected_response": self.expected_response,
            "label": self.label,
            "needs_annotation": self.needs_annotation,
        }


@dataclass
class MiningConfig:
    """k_mine bounds how deep mining looks per query; quotas default to equal
    thirds of total_target. All sampling randomness flows from seed."""

    k_mine: int = 16
    per_role_quota: dict[AgentRole, int] | None = None
    total_target: int = 9000
    seed: int = 0

    def quotas(self) -> dict[AgentRole, int]:
        if self.per_role_quota:
            return dict(self.per_role_quota)
        base, remainder = divmod(self.total_target, 3)
        roles = [AgentRole.DETECTIVE, AgentRole.ANALYST, AgentRole.WRITER]
        return {role: base + (1 if i < remainder else 0) for i, role in enumerate(roles)}


def mine_hard_negatives(
    queries: list[QueryRecord],
    retriever: CoarseRetriever,
    qrels: Mapping[str, set[str]],
    k_mine: int,
) -> list[tuple[str, str]]:
    """Per query: the top-k_mine retrieved items minus its relevant set, in
    rank order. Every query must have a qrels entry."""
    pairs: list[tuple[str, str]] = []
    for query in queries:
        if query.query_id not in qrels:
            raise MissingQrels(f"query {query.query_id!r} missing from qrels")
        relevant = qrels[query.query_id]
        pool = retriever.retrieve(query, k_mine)
        pairs.extend(
            (query.query_id, entry.item_id)
            for entry in pool.entries
            if entry.item_id not in relevant
        )
    return pairs


def _slot_fill(item: GalleryItem, checklist: Checklist) -> dict[str, str]:
    return {key: item.tags[key] for key in checklist.keys if key in item.tags}


def _detective_split(quota: int, n_pos: int, n_neg: int) -> tuple[int, int]:
    """Split the Detective quota into (yes, no) balanced within +-1. An odd
    quota favors Yes unless only the other split fits the supply."""
    hi, lo = quota - quota // 2, quota // 2
    if hi <= n_pos and lo <= n_neg:
        return hi, lo
    if lo <= n_pos and hi <= n_neg:
        return lo, hi
    return hi, lo


def emit_sft_dataset(
    pairs: list[tuple[str, str]],
    positives: list[tuple[str, str]],
    cfg: MiningConfig,
    checklist: Checklist,
    captions: Mapping[str, str],
    queries_by_id: Mapping[str, QueryRecord],
    items_by_id: Mapping[str, GalleryItem],
    qrels: Mapping[str, set[str]] | None = None,
) -> tuple[list[SftRecord], dict]:
    """Draw role quotas deterministically under the seed and build records.

    Detective records balance Yes (positives) and No (hard negatives) within
    one; Analyst answers are slot-filled from item tags where available
    (records with nothing fillable are flagged needs_annotation); Writer
    targets are the reference captions of positive items. Raises
    InsufficientPairs with per-role shortfalls when a quota is unreachable.
    """
    quotas = cfg.quotas()
    rng = random.Random(cfg.seed)
    pos_sorted = sorted(set(positives))
    neg_sorted = sorted(set(pairs))

    if qrels is not None:
        for query_id, item_id in pos_sorted:
            if item_id not in qrels.get(query_id, set()):
                raise ValueError(f"positive pair ({query_id!r}, {item_id!r}) not in qrels")
        for query_id, item_id in neg_sorted:
            if item_id in qrels.get(query_id, set()):
                raise ValueError(f"hard-negative pair ({query_id!r}, {item_id!r}) is relevant")

    writer_supply = [(q, i) for q, i in pos_sorted if i in captions]

    shortfall: dict[str, int] = {}
    det_quota = quotas.get(AgentRole.DETECTIVE, 0)
    yes_target, no_target = _detective_split(det_quota, len(pos_sorted), len(neg_sorted))
    if yes_target > len(pos_sorted):
        shortfall["detective_yes"] = yes_target - len(pos_sorted)
    if no_target > len(neg_sorted):
        shortfall["detective_no"] = no_target - len(neg_sorted)
    analyst_quota = quotas.get(AgentRole.ANALYST, 0)
    if analyst_quota > len(pos_sorted):
        shortfall["analyst"] = analyst_quota - len(pos_sorted)
    writer_quota = quotas.get(AgentRole.WRITER, 0)
    if writer_quota > len(writer_supply):
        shortfall["writer"] = writer_quota - len(writer_supply)
    if shortfall:
        raise InsufficientPairs(f"quotas unreachable, shortfall: {shortfall}", shortfall)

    det_yes = sorted(rng.sample(pos_sorted, yes_target))
    det_no = sorted(rng.sample(neg_sorted, no_target))
    analyst_pairs = sorted(rng.sample(pos_sorted, analyst_quota))
    writer_pairs = sorted(rng.sample(writer_supply, writer_quota))

    records: list[SftRecord] = []
    det_yes_set = set(det_yes)

    for query_id, item_id in det_yes + det_no:
        query = queries_by_id[query_id]
        item = items_by_id[item_id]
        positive = (query_id, item_id) in det_yes_set
        records.append(
            SftRecord(
                role=AgentRole.DETECTIVE,
                query_id=query_id,
                item_id=item_id,
                image_ref=item.image_ref or item.item_id,
                instruction=render_prompt(AgentRole.DETECTIVE, query.text),
                expected_response="Yes" if positive else "No",
                label=POSITIVE if positive else HARD_NEGATIVE,
            )
        )

    for query_id, item_id in analyst_pairs:
        query = queries_by_id[query_id]
        item = items_by_id[item_id]
        answers = _slot_fill(item, checklist)
        expected = "\n".join(f"{key}: {answers[key]}" for key in checklist.keys if key in answers)
        records.append(
            SftRecord(
                role=AgentRole.ANALYST,
                query_id=query_id,
                item_id=item_id,
                image_ref=item.image_ref or item.item_id,
                instruction=render_prompt(AgentRole.ANALYST, query.text, checklist=checklist),
                expected_response=expected,
                label=POSITIVE,
                needs_annotation=not answers,
            )
        )

    for query_id, item_id in writer_pairs:
        item = items_by_id[item_id]
        evidence = _slot_fill(item, checklist)
        records.append(
            SftRecord(
                role=AgentRole.WRITER,
                query_id=query_id,
                item_id=item_id,
                image_ref=item.image_ref or item.item_id,
                instruction=render_prompt(AgentRole.WRITER, "", evidence=evidence),
                expected_response=captions[item_id],
                label=POSITIVE,
                needs_annotation=not evidence,
            )
        )

    role_order = {AgentRole.DETECTIVE: 0, AgentRole.ANALYST: 1, AgentRole.WRITER: 2}
    records.sort(key=lambda r: (role_order[r.role], r.query_id, r.item_id))

    per_role = {role.value: sum(1 for r in records if r.role is role) for role in AgentRole}
    per_label = {
        POSITIVE: sum(1 for r in records if r.label == POSITIVE),
        HARD_NEGATIVE: sum(1 for r in records if r.label == HARD_NEGATIVE),
    }
    summary = {
        "per_role_counts": per_role,
        "per_label_counts": per_label,
        "seed": cfg.seed,
        "k_mine": cfg.k_mine,
    }
    return records, summary
