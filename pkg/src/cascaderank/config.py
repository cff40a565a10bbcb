"""Run configuration: TOML manifests with CLI-flag overrides (flags win).

A config file groups settings by stage::

    [paths]
    gallery = "gallery.jsonl"
    queries = "queries.jsonl"
    qrels = "qrels.jsonl"
    output_dir = "out"

    [retrieval]
    k = 128

    [fusion]
    lam = 0.4
    xi = 0.95

    [squad]
    rounds = 2
    include_query_in_writer = false
    gate_on_raw = false
    # checklist = ["gender", ...]          # exactly 15 keys

    [backend]
    kind = "scripted"                       # or "http"
    fixture_path = "agents.jsonl"
    # endpoint / model_name / timeout_ms / max_retries / concurrency

    [embedder]
    kind = "hashed"                         # or "lookup" / "http"
    dimension = 256
    # fixture_path / endpoint / model_name

    [run]
    seed = 0
    workers = 1
    transcripts = false
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agents import AgentBackendConfig, Checklist
from .fusion import HashedEmbedder, HttpEmbedder, LookupEmbedder, TextEmbedder
from .validation import check_positive_int, check_unit_interval


@dataclass
class EmbedderConfig:
    kind: str = "hashed"
    dimension: int = 256
    seed: int | None = None
    fixture_path: str | None = None
    endpoint: str | None = None
    model_name: str | None = None
    timeout_ms: int = 30_000
    max_retries: int = 3
    token_env: str = "OPENAI_API_KEY"

    def build(self, default_seed: int = 0) -> TextEmbedder:
        if self.kind == "hashed":
            seed = self.seed if self.seed is not None else default_seed
            return HashedEmbedder(dimension=self.dimension, seed=seed)
        if self.kind == "lookup":
            if not self.fixture_path:
                raise ValueError("lookup embedder requires fixture_path")
            return LookupEmbedder.from_file(self.fixture_path)
        if self.kind == "http":
            if not self.endpoint or not self.model_name:
                raise ValueError("http embedder requires endpoint and model_name")
            return HttpEmbedder(
                endpoint=self.endpoint,
                model_name=self.model_name,
                dimension=self.dimension,
                timeout_ms=self.timeout_ms,
                max_retries=self.max_retries,
                token_env=self.token_env,
            )
        raise ValueError(f"unknown embedder kind: {self.kind!r}")


@dataclass
class RunConfig:
    gallery: str | None = None
    queries: str | None = None
    qrels: str | None = None
    output_dir: str = "out"
    k: int = 128
    lam: float = 0.4
    xi: float = 0.95
    rounds: int = 2
    seed: int = 0
    workers: int = 0  # 0 means all available cores
    transcripts: bool = False
    gate_on_raw: bool = False
    include_query_in_writer: bool = False
    checklist_keys: list[str] | None = None
    backend: AgentBackendConfig = field(default_factory=AgentBackendConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)

    def validate(self, require: tuple[str, ...] = ()) -> "RunConfig":
        """Check numeric ranges and that every required/referenced input path
        exists. Raises ValueError; callers map that to a usage error."""
        check_unit_interval(self.lam, "lam")
        check_unit_interval(self.xi, "xi")
        check_positive_int(self.k, "k")
        check_positive_int(self.rounds, "rounds")
        if int(self.workers) < 0:
            raise ValueError(f"workers must be >= 0, got {self.workers}")
        for name in require:
            if getattr(self, name) is None:
                raise ValueError(f"missing required path: --{name}")
        for name in ("gallery", "queries", "qrels"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ValueError(f"{name} path does not exist: {value}")
        if self.backend.kind == "scripted" and self.backend.fixture_path:
            if not Path(self.backend.fixture_path).exists():
                raise ValueError(f"fixture path does not exist: {self.backend.fixture_path}")
        if self.embedder.kind == "lookup" and self.embedder.fixture_path:
            if not Path(self.embedder.fixture_path).exists():
                raise ValueError(
                    f"embedder fixture path does not exist: {self.embedder.fixture_path}"
                )
        if self.checklist_keys is not None:
            Checklist(tuple(self.checklist_keys))
        return self

    def checklist(self) -> Checklist:
        if self.checklist_keys is None:
            return Checklist()
        return Checklist(tuple(self.checklist_keys))


def _take(table: dict, section: str, keys: set[str]) -> dict:
    sub = table.get(section, {})
    if not isinstance(sub, dict):
        raise ValueError(f"config section [{section}] must be a table")
    unknown = set(sub) - keys
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return sub


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        table = tomllib.load(fh)

    cfg = RunConfig()
    paths = _take(table, "paths", {"gallery", "queries", "qrels", "output_dir"})
    base = path.parent

    def resolve(p):
        return str(base / p) if p is not None else None

    cfg.gallery = resolve(paths.get("gallery"))
    cfg.queries = resolve(paths.get("queries"))
    cfg.qrels = resolve(paths.get("qrels"))
    if "output_dir" in paths:
        cfg.output_dir = resolve(paths["output_dir"])

    retrieval = _take(table, "retrieval", {"k"})
    cfg.k = int(retrieval.get("k", cfg.k))

    fusion = _take(table, "fusion", {"lam", "xi"})
    cfg.lam = float(fusion.get("lam", cfg.lam))
    cfg.xi = float(fusion.get("xi", cfg.xi))

    squad = _take(
        table, "squad", {"rounds", "include_query_in_writer", "gate_on_raw", "checklist"}
    )
    cfg.rounds = int(squad.get("rounds", cfg.rounds))
    cfg.include_query_in_writer = bool(squad.get("include_query_in_writer", False))
    cfg.gate_on_raw = bool(squad.get("gate_on_raw", False))
    if "checklist" in squad:
        cfg.checklist_keys = [str(k) for k in squad["checklist"]]

    backend = _take(
        table,
        "backend",
        {"kind", "fixture_path", "endpoint", "model_name", "timeout_ms", "max_retries",
         "concurrency", "token_env"},
    )
    cfg.backend = AgentBackendConfig(
        kind=str(backend.get("kind", "scripted")),
        fixture_path=resolve(backend.get("fixture_path")),
        endpoint=backend.get("endpoint"),
        model_name=backend.get("model_name"),
        timeout_ms=int(backend.get("timeout_ms", 30_000)),
        max_retries=int(backend.get("max_retries", 3)),
        concurrency=int(backend.get("concurrency", 8)),
        token_env=str(backend.get("token_env", "OPENAI_API_KEY")),
    )

    embedder = _take(
        table,
        "embedder",
        {"kind", "dimension", "seed", "fixture_path", "endpoint", "model_name", "timeout_ms",
         "max_retries", "token_env"},
    )
    cfg.embedder = EmbedderConfig(
        kind=str(embedder.get("kind", "hashed")),
        dimension=int(embedder.get("dimension", 256)),
        seed=embedder.get("seed"),
        fixture_path=resolve(embedder.get("fixture_path")),
        endpoint=embedder.get("endpoint"),
        model_name=embedder.get("model_name"),
        timeout_ms=int(embedder.get("timeout_ms", 30_000)),
        max_retries=int(embedder.get("max_retries", 3)),
        token_env=str(embedder.get("token_env", "OPENAI_API_KEY")),
    )

    run = _take(table, "run", {"seed", "workers", "transcripts"})
    cfg.seed = int(run.get("seed", 0))
    cfg.workers = int(run.get("workers", 0))
    cfg.transcripts = bool(run.get("transcripts", False))

    known_sections = {"paths", "retrieval", "fusion", "squad", "backend", "embedder", "run"}
    unknown = set(table) - known_sections
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return cfg
