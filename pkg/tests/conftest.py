"""Shared fixture builders: synthetic galleries, query manifests, scripted
agent fixtures and the recovery scenario used across acceptance tests."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from cascaderank import (
    AgentRole,
    GalleryItem,
    QueryRecord,
    ScriptedBackend,
)


def unit_vector_with_cosine(c: float) -> np.ndarray:
    """2-D unit vector whose cosine against (1, 0) is c."""
    return np.array([c, math.sqrt(max(0.0, 1.0 - c * c))])


def make_gallery(cosines: dict[str, float], tags: dict[str, dict[str, str]] | None = None):
    """Gallery items with controlled cosine against the query axis (1, 0)."""
    tags = tags or {}
    return [
        GalleryItem(
            item_id=item_id,
            embedding=unit_vector_with_cosine(c),
            image_ref=f"img_{item_id}",
            tags=tags.get(item_id, {}),
        )
        for item_id, c in cosines.items()
    ]


def make_query(query_id: str = "q1", text: str = "a man falls on wet pavement", tags=None):
    return QueryRecord(
        query_id=query_id, text=text, embedding=np.array([1.0, 0.0]), tags=tags or {}
    )


def scripted_backend(gallery, verdicts: dict[str, str], captions: dict[str, str],
                     analyst: dict[str, str] | None = None) -> ScriptedBackend:
    """Backend answering per item: Detective verdict, Analyst evidence line(s),
    Writer caption. Keys are item ids; image refs resolve via the gallery."""
    analyst = analyst or {}
    responses: dict[tuple[str, str], str] = {}
    for item in gallery:
        ref = item.image_ref or item.item_id
        if item.item_id in verdicts:
            responses[(AgentRole.DETECTIVE.value, ref)] = verdicts[item.item_id]
        if item.item_id in captions:
            responses[(AgentRole.WRITER.value, ref)] = captions[item.item_id]
        responses[(AgentRole.ANALYST.value, ref)] = analyst.get(
            item.item_id, "action: unknown\nscene: street"
        )
    return ScriptedBackend(responses)


def write_jsonl_file(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def write_gallery_manifest(path: Path, gallery: list[GalleryItem]) -> Path:
    return write_jsonl_file(
        path,
        [
            {
                "item_id": g.item_id,
                "embedding": list(g.embedding),
                "image_ref": g.image_ref,
                "tags": g.tags,
            }
            for g in gallery
        ],
    )


def write_query_manifest(path: Path, queries: list[QueryRecord]) -> Path:
    return write_jsonl_file(
        path,
        [
            {
                "query_id": q.query_id,
                "text": q.text,
                "embedding": list(q.embedding),
                "tags": q.tags,
            }
            for q in queries
        ],
    )


def write_qrels(path: Path, qrels: dict[str, set[str]]) -> Path:
    return write_jsonl_file(
        path,
        [{"query_id": qid, "relevant_item_ids": sorted(rel)} for qid, rel in qrels.items()],
    )


def write_agent_fixture(path: Path, backend_responses: dict[tuple[str, str], str]) -> Path:
    return write_jsonl_file(
        path,
        [
            {"role": role, "image_ref": ref, "response": response}
            for (role, ref), response in sorted(backend_responses.items())
        ],
    )


GT_CAPTION = "a man falls on wet pavement"
DISTRACTOR_CAPTION = "someone rides their skateboard through an indoor gym"


@pytest.fixture
def recovery_scenario():
    """Ground truth at coarse rank 3 of 5, gate wide open: the Writer returns
    the query text verbatim for the ground truth and a disjoint-token caption
    for everything else, so semantic fusion must lift it to rank 1."""
    cosines = {"i1": 1.0, "i2": 0.9, "i3": 0.8, "i4": 0.4, "i5": 0.0}
    gallery = make_gallery(cosines)
    query = make_query(text=GT_CAPTION)
    verdicts = {i: "Yes" for i in cosines}
    captions = {i: (GT_CAPTION if i == "i3" else DISTRACTOR_CAPTION) for i in cosines}
    backend = scripted_backend(gallery, verdicts, captions)
    qrels = {"q1": {"i3"}}
    return gallery, query, backend, qrels


@pytest.fixture
def recovery_files(tmp_path, recovery_scenario):
    """The recovery scenario materialized as manifest + fixture files."""
    gallery, query, backend, qrels = recovery_scenario
    paths = {
        "gallery": write_gallery_manifest(tmp_path / "gallery.jsonl", gallery),
        "queries": write_query_manifest(tmp_path / "queries.jsonl", [query]),
        "qrels": write_qrels(tmp_path / "qrels.jsonl", qrels),
        "fixtures": write_agent_fixture(tmp_path / "agents.jsonl", backend._responses),
        "out": tmp_path / "out",
    }
    return paths
