"""Domain records and manifest I/O.

Galleries, queries and qrels are JSONL files, one object per line:

* gallery:  {"item_id": str, "embedding": [float] | "embedding_ref": path,
             "image_ref": str, "tags": {str: str}}
* queries:  {"query_id": str, "text": str, "embedding"/"embedding_ref",
             "tags": {str: str}}
* qrels:    {"query_id": str, "relevant_item_ids": [str]}

An embedding_ref points to a little-endian 32-bit float binary vector file,
resolved relative to the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, DuplicateId, ParseError


@dataclass
class GalleryItem:
    item_id: str
    embedding: np.ndarray
    image_ref: str = ""
    tags: dict[str, str] = field(default_factory=dict)


@dataclass
class QueryRecord:
    query_id: str
    text: str
    embedding: np.ndarray
    tags: dict[str, str] = field(default_factory=dict)


def _load_embedding(obj: dict, manifest_dir: Path, path: str, line_no: int) -> np.ndarray:
    if "embedding" in obj:
        try:
            vec = np.asarray(obj["embedding"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{line_no}: bad embedding array: {exc}") from exc
    elif "embedding_ref" in obj:
        ref = manifest_dir / str(obj["embedding_ref"])
        if not ref.exists():
            raise ParseError(f"{path}:{line_no}: embedding_ref not found: {ref}")
        vec = np.fromfile(ref, dtype="<f4").astype(np.float64)
    else:
        raise ParseError(f"{path}:{line_no}: needs 'embedding' or 'embedding_ref'")
    if vec.ndim != 1 or vec.size == 0:
        raise ParseError(f"{path}:{line_no}: embedding must be a non-empty vector")
    if not np.all(np.isfinite(vec)):
        raise ParseError(f"{path}:{line_no}: embedding contains NaN or Inf")
    return vec


def _iter_jsonl(path: str | Path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{line_no}: expected a JSON object")
            yield line_no, obj


def _check_dim(dim: int | None, vec: np.ndarray, path, line_no: int) -> int:
    if dim is None:
        return int(vec.size)
    if vec.size != dim:
        raise DimensionMismatch(
            f"{path}:{line_no}: embedding dimension {vec.size} differs from {dim}"
        )
    return dim


def load_gallery(path: str | Path) -> list[GalleryItem]:
    """Load a gallery manifest; ids must be unique and dimensions uniform."""
    path = Path(path)
    items: list[GalleryItem] = []
    seen: set[str] = set()
    dim: int | None = None
    for line_no, obj in _iter_jsonl(path):
        if "item_id" not in obj:
            raise ParseError(f"{path}:{line_no}: missing item_id")
        item_id = str(obj["item_id"])
        if item_id in seen:
            raise DuplicateId(f"{path}:{line_no}: duplicate item_id {item_id!r}")
        seen.add(item_id)
        vec = _load_embedding(obj, path.parent, str(path), line_no)
        dim = _check_dim(dim, vec, path, line_no)
        items.append(
            GalleryItem(
                item_id=item_id,
                embedding=vec,
                image_ref=str(obj.get("image_ref", "")),
                tags={str(k): str(v) for k, v in (obj.get("tags") or {}).items()},
            )
        )
    return items


def load_queries(path: str | Path) -> list[QueryRecord]:
    """Load a query manifest; ids must be unique and dimensions uniform."""
    path = Path(path)
    queries: list[QueryRecord] = []
    seen: set[str] = set()
    dim: int | None = None
    for line_no, obj in _iter_jsonl(path):
        if "query_id" not in obj:
            raise ParseError(f"{path}:{line_no}: missing query_id")
        query_id = str(obj["query_id"])
        if query_id in seen:
            raise DuplicateId(f"{path}:{line_no}: duplicate query_id {query_id!r}")
        seen.add(query_id)
        vec = _load_embedding(obj, path.parent, str(path), line_no)
        dim = _check_dim(dim, vec, path, line_no)
        queries.append(
            QueryRecord(
                query_id=query_id,
                text=str(obj.get("text", "")),
                embedding=vec,
                tags={str(k): str(v) for k, v in (obj.get("tags") or {}).items()},
            )
        )
    return queries


def load_qrels(path: str | Path) -> dict[str, set[str]]:
    """Load qrels: query_id -> set of relevant item ids."""
    path = Path(path)
    qrels: dict[str, set[str]] = {}
    for line_no, obj in _iter_jsonl(path):
        if "query_id" not in obj or "relevant_item_ids" not in obj:
            raise ParseError(f"{path}:{line_no}: needs query_id and relevant_item_ids")
        query_id = str(obj["query_id"])
        if query_id in qrels:
            raise DuplicateId(f"{path}:{line_no}: duplicate query_id {query_id!r}")
        rel = obj["relevant_item_ids"]
        if not isinstance(rel, list):
            raise ParseError(f"{path}:{line_no}: relevant_item_ids must be an array")
        qrels[query_id] = {str(r) for r in rel}
    return qrels


def write_jsonl(path: str | Path, records) -> None:
    """Write dicts as JSONL. Non-finite floats are serialized as null so the
    output stays valid JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), ensure_ascii=False) + "\n")


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value
