"""Command-line entry point.

Subcommands: index, retrieve, verify, rerank, mine, evaluate, sweep, pipeline.
Settings come from an optional TOML config file; command-line flags win over
the file. Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
All commands are deterministic on identical inputs (scripted backends).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .agents import AgentRole, build_backend
from .config import RunConfig, load_config
from .data import load_gallery, load_qrels, load_queries, write_jsonl
from .errors import CascadeRankError, InsufficientPairs
from .evalmetrics import evaluate, format_table, sweep
from .mining import MiningConfig, emit_sft_dataset, mine_hard_negatives
from .pipeline import CascadePipeline
from .retriever import CandidatePool, CoarseRetriever
from .squad import VerificationTranscript, run_squad


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascaderank",
        description="Coarse-to-fine retrieval with gated agent verification and score fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file; flags override its values")
        p.add_argument("--gallery", help="gallery manifest (JSONL)")
        p.add_argument("--queries", help="query manifest (JSONL)")
        p.add_argument("--qrels", help="qrels file (JSONL)")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--k", type=int, help="candidate pool size (default: 128)")
        p.add_argument("--lam", type=float, help="fusion weight on structural score (default: 0.4)")
        p.add_argument("--xi", type=float, help="gate threshold (default: 0.95)")
        p.add_argument("--rounds", type=int, help="verification rounds (default: 2)")
        p.add_argument("--seed", type=int, help="seed for all randomness (default: 0)")
        p.add_argument("--workers", type=int, help="parallel workers; 0 = all cores")
        p.add_argument("--gate-on-raw", action="store_true", default=None,
                       help="gate on the raw cosine instead of the normalized score")
        p.add_argument("--include-query-in-writer", action="store_true", default=None,
                       help="let the Writer see the original query text")
        p.add_argument("--backend", choices=["scripted", "http"], dest="backend_kind",
                       help="agent backend kind")
        p.add_argument("--fixtures", help="scripted backend fixture file (JSONL)")
        p.add_argument("--endpoint", help="http backend chat-completions URL")
        p.add_argument("--model", help="http backend model name")
        p.add_argument("--timeout-ms", type=int, help="http timeout in milliseconds")
        p.add_argument("--max-retries", type=int, help="http retry count")
        p.add_argument("--concurrency", type=int, help="max in-flight http requests")
        p.add_argument("--embedder", choices=["hashed", "lookup", "http"], dest="embedder_kind",
                       help="text embedder kind for semantic scoring")
        p.add_argument("--embedder-dim", type=int, help="hashed embedder dimension")
        p.add_argument("--embedder-fixtures", help="lookup embedder fixture file (JSONL)")
        p.add_argument("--embedder-endpoint", help="http embedder URL")
        p.add_argument("--embedder-model", help="http embedder model name")

    p = sub.add_parser("index", help="validate a gallery manifest and report size")
    add_common(p)
    p.set_defaults(handler=cmd_index)

    p = sub.add_parser("retrieve", help="write top-K candidate pools per query")
    add_common(p)
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("verify", help="run gated squad verification, write transcripts")
    add_common(p)
    p.add_argument("--pools", help="candidate pools file; retrieved in-memory when omitted")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("rerank", help="fuse scores from pools + transcripts, write rankings")
    add_common(p)
    p.add_argument("--pools", required=True, help="candidate pools file (JSONL)")
    p.add_argument("--transcripts", required=True, help="verification transcripts file (JSONL)")
    p.set_defaults(handler=cmd_rerank)

    p = sub.add_parser("mine", help="mine hard negatives and emit the SFT dataset")
    add_common(p)
    p.add_argument("--k-mine", type=int, default=16, help="mining depth per query")
    p.add_argument("--total", type=int, default=9000, help="total dataset target size")
    p.add_argument("--quota-detective", type=int, help="Detective record quota")
    p.add_argument("--quota-analyst", type=int, help="Analyst record quota")
    p.add_argument("--quota-writer", type=int, help="Writer record quota")
    p.add_argument("--captions", help="reference captions file (JSONL: item_id, caption); "
                                      "defaults to each positive pair's query text")
    p.set_defaults(handler=cmd_mine)

    p = sub.add_parser("evaluate", help="compute Recall@K and mAP for a ranking file")
    add_common(p)
    p.add_argument("--rankings", help="rankings file (JSONL) to evaluate")
    p.add_argument("--pools", help="evaluate a candidate pools file in pool order instead")
    p.add_argument("--group-by", help="query tag key to group metrics by (e.g. condition)")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate a (lambda, xi, rounds) grid, write CSV")
    add_common(p)
    p.add_argument("--lambda-grid", default="0.0,0.4,1.0", help="comma-separated lambda values")
    p.add_argument("--xi-grid", default="0.0,0.95,1.0", help="comma-separated xi values")
    p.add_argument("--rounds-grid", default="2", help="comma-separated round counts")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("pipeline", help="run retrieve -> verify -> fuse -> rerank -> evaluate")
    add_common(p)
    p.add_argument("--transcripts", action="store_true", default=None,
                   help="also write verification transcripts")
    p.set_defaults(handler=cmd_pipeline)

    return parser


def _assemble_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    simple = {
        "gallery": "gallery",
        "queries": "queries",
        "qrels": "qrels",
        "out": "output_dir",
        "k": "k",
        "lam": "lam",
        "xi": "xi",
        "rounds": "rounds",
        "seed": "seed",
        "workers": "workers",
        "gate_on_raw": "gate_on_raw",
        "include_query_in_writer": "include_query_in_writer",
    }
    for flag, attr in simple.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "backend_kind", None) is not None:
        cfg.backend.kind = args.backend_kind
    if getattr(args, "fixtures", None) is not None:
        cfg.backend.fixture_path = args.fixtures
    if getattr(args, "endpoint", None) is not None:
        cfg.backend.endpoint = args.endpoint
    if getattr(args, "model", None) is not None:
        cfg.backend.model_name = args.model
    if getattr(args, "timeout_ms", None) is not None:
        cfg.backend.timeout_ms = args.timeout_ms
    if getattr(args, "max_retries", None) is not None:
        cfg.backend.max_retries = args.max_retries
    if getattr(args, "concurrency", None) is not None:
        cfg.backend.concurrency = args.concurrency
    if getattr(args, "embedder_kind", None) is not None:
        cfg.embedder.kind = args.embedder_kind
    if getattr(args, "embedder_dim", None) is not None:
        cfg.embedder.dimension = args.embedder_dim
    if getattr(args, "embedder_fixtures", None) is not None:
        cfg.embedder.fixture_path = args.embedder_fixtures
    if getattr(args, "embedder_endpoint", None) is not None:
        cfg.embedder.endpoint = args.embedder_endpoint
    if getattr(args, "embedder_model", None) is not None:
        cfg.embedder.model_name = args.embedder_model
    return cfg


def _workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_pipeline(cfg: RunConfig, gallery) -> CascadePipeline:
    backend = build_backend(cfg.backend)
    embedder = cfg.embedder.build(default_seed=cfg.seed)
    pipe = CascadePipeline(
        k=cfg.k,
        lam=cfg.lam,
        xi=cfg.xi,
        rounds=cfg.rounds,
        backend=backend,
        embedder=embedder,
        checklist=cfg.checklist(),
        include_query_in_writer=cfg.include_query_in_writer,
        gate_on_raw=cfg.gate_on_raw,
        workers=_workers(cfg),
        seed=cfg.seed,
    )
    return pipe.fit(gallery)


def cmd_index(args, cfg: RunConfig) -> int:
    cfg.validate(require=("gallery",))
    gallery = load_gallery(cfg.gallery)
    retriever = CoarseRetriever(k=cfg.k).fit(gallery)
    dim = retriever.dim_ if retriever.dim_ is not None else "-"
    print(f"indexed {retriever.item_count} items, dimension {dim}")
    return 0


def cmd_retrieve(args, cfg: RunConfig) -> int:
    cfg.validate(require=("gallery", "queries"))
    gallery = load_gallery(cfg.gallery)
    queries = load_queries(cfg.queries)
    retriever = CoarseRetriever(k=cfg.k).fit(gallery)
    pools = retriever.retrieve_all(queries)
    out = _out_dir(cfg) / "pools.jsonl"
    write_jsonl(out, (p.to_record() for p in pools))
    print(f"retrieved {len(pools)} pools of up to {cfg.k} candidates "
          f"from {retriever.item_count} gallery items -> {out}")
    return 0


def _load_pools(path: str | Path) -> dict[str, CandidatePool]:
    pools: dict[str, CandidatePool] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                pool = CandidatePool.from_record(json.loads(line))
                pools[pool.query_id] = pool
    return pools


def _load_transcripts(path: str | Path) -> dict[tuple[str, str], VerificationTranscript]:
    transcripts: dict[tuple[str, str], VerificationTranscript] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                t = VerificationTranscript.from_record(json.loads(line))
                transcripts[(t.query_id, t.item_id)] = t
    return transcripts


def cmd_verify(args, cfg: RunConfig) -> int:
    cfg.validate(require=("gallery", "queries"))
    gallery = load_gallery(cfg.gallery)
    queries = load_queries(cfg.queries)
    pipe = _build_pipeline(cfg, gallery)
    if args.pools:
        pools = _load_pools(args.pools)
    else:
        pools = {q.query_id: pipe.retriever_.retrieve(q, cfg.k) for q in queries}
    squad_cfg = pipe.squad_config()
    records = []
    calls_before = pipe.backend.call_count
    for query in queries:
        pool = pools.get(query.query_id)
        if pool is None:
            raise CascadeRankError(f"no pool for query {query.query_id!r}")
        for transcript in run_squad(
            query, pool, squad_cfg, pipe.backend, image_refs=pipe.image_refs_,
            workers=_workers(cfg),
        ):
            records.append(transcript.to_record())
    out = _out_dir(cfg) / "transcripts.jsonl"
    write_jsonl(out, records)
    print(f"verified {len(records)} candidates across {len(queries)} queries "
          f"({pipe.backend.call_count - calls_before} backend calls) -> {out}")
    return 0


def cmd_rerank(args, cfg: RunConfig) -> int:
    cfg.validate(require=("queries",))
    queries = load_queries(cfg.queries)
    for path in (args.pools, args.transcripts):
        if not Path(path).exists():
            print(f"error: input does not exist: {path}", file=sys.stderr)
            return 2
    pools = _load_pools(args.pools)
    transcripts = _load_transcripts(args.transcripts)
    embedder = cfg.embedder.build(default_seed=cfg.seed)
    pipe = CascadePipeline(k=cfg.k, lam=cfg.lam, xi=cfg.xi, embedder=embedder, seed=cfg.seed)
    pipe.fit([])
    records = []
    for query in queries:
        pool = pools.get(query.query_id)
        if pool is None:
            raise CascadeRankError(f"no pool for query {query.query_id!r}")
        ordered = [transcripts[(query.query_id, e.item_id)] for e in pool.entries
                   if (query.query_id, e.item_id) in transcripts]
        if len(ordered) != len(pool.entries):
            missing = [e.item_id for e in pool.entries
                       if (query.query_id, e.item_id) not in transcripts]
            raise CascadeRankError(
                f"transcripts missing for query {query.query_id!r}: {missing}")
        records.append(pipe.fuse_pool(query, pool, ordered).to_record())
    out = _out_dir(cfg) / "rankings.jsonl"
    write_jsonl(out, records)
    print(f"reranked {len(records)} queries -> {out}")
    return 0


def _load_captions(path: str | Path) -> dict[str, str]:
    captions: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                captions[str(obj["item_id"])] = str(obj["caption"])
    return captions


def cmd_mine(args, cfg: RunConfig) -> int:
    cfg.validate(require=("gallery", "queries", "qrels"))
    gallery = load_gallery(cfg.gallery)
    queries = load_queries(cfg.queries)
    qrels = load_qrels(cfg.qrels)
    retriever = CoarseRetriever(k=cfg.k).fit(gallery)
    items_by_id = {g.item_id: g for g in gallery}
    queries_by_id = {q.query_id: q for q in queries}

    pairs = mine_hard_negatives(queries, retriever, qrels, args.k_mine)
    positives = [
        (q.query_id, item_id)
        for q in queries
        for item_id in sorted(qrels[q.query_id])
        if item_id in items_by_id
    ]
    if args.captions:
        captions = _load_captions(args.captions)
    else:
        captions = {}
        for query_id, item_id in positives:
            captions.setdefault(item_id, queries_by_id[query_id].text)

    quota = None
    if any(v is not None for v in (args.quota_detective, args.quota_analyst, args.quota_writer)):
        quota = {
            AgentRole.DETECTIVE: args.quota_detective or 0,
            AgentRole.ANALYST: args.quota_analyst or 0,
            AgentRole.WRITER: args.quota_writer or 0,
        }
    mining_cfg = MiningConfig(
        k_mine=args.k_mine, per_role_quota=quota, total_target=args.total, seed=cfg.seed
    )
    try:
        records, summary = emit_sft_dataset(
            pairs, positives, mining_cfg, cfg.checklist(), captions, queries_by_id, items_by_id,
            qrels=qrels,
        )
    except InsufficientPairs as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = _out_dir(cfg)
    dataset_path = out_dir / "sft_dataset.jsonl"
    summary_path = out_dir / "sft_summary.json"
    write_jsonl(dataset_path, (r.to_record() for r in records))
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"emitted {len(records)} records -> {dataset_path}")
    print(f"summary: {json.dumps(summary['per_role_counts'], sort_keys=True)} -> {summary_path}")
    return 0


def _rankings_from_file(path: str | Path) -> dict[str, list[str]]:
    rankings: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                rankings[str(obj["query_id"])] = [str(e["item_id"]) for e in obj["ranking"]]
    return rankings


def cmd_evaluate(args, cfg: RunConfig) -> int:
    cfg.validate(require=("qrels",))
    if bool(args.rankings) == bool(args.pools):
        print("error: provide exactly one of --rankings or --pools", file=sys.stderr)
        return 2
    source = args.rankings or args.pools
    if not Path(source).exists():
        print(f"error: input does not exist: {source}", file=sys.stderr)
        return 2
    if args.rankings:
        rankings = _rankings_from_file(args.rankings)
    else:
        rankings = {qid: pool.item_ids() for qid, pool in _load_pools(args.pools).items()}
    qrels = load_qrels(cfg.qrels)
    queries = None
    if args.group_by:
        cfg.validate(require=("queries",))
        queries = load_queries(cfg.queries)
    report = evaluate(rankings, qrels, group_by=args.group_by, queries=queries)
    out = _out_dir(cfg) / "metrics.json"
    out.write_text(json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(format_table(report))
    print(f"metrics -> {out}")
    return 0


def _parse_grid(text: str, cast) -> list:
    try:
        return [cast(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ValueError(f"bad grid value in {text!r}: {exc}") from exc


def cmd_sweep(args, cfg: RunConfig) -> int:
    cfg.validate(require=("gallery", "queries", "qrels"))
    lambda_grid = _parse_grid(args.lambda_grid, float)
    xi_grid = _parse_grid(args.xi_grid, float)
    rounds_grid = _parse_grid(args.rounds_grid, int)
    gallery = load_gallery(cfg.gallery)
    queries = load_queries(cfg.queries)
    qrels = load_qrels(cfg.qrels)
    pipe = _build_pipeline(cfg, gallery)
    result = sweep(pipe, queries, qrels, lambda_grid, xi_grid, rounds_grid)
    out = _out_dir(cfg) / "sweep.csv"
    result.write_csv(out)
    print(f"swept {len(result.rows)} grid points "
          f"(transcript cache: {result.cache_hits} hits, {result.cache_misses} misses) -> {out}")
    return 0


def cmd_pipeline(args, cfg: RunConfig) -> int:
    if args.transcripts is not None:
        cfg.transcripts = args.transcripts
    cfg.validate(require=("gallery", "queries"))
    gallery = load_gallery(cfg.gallery)
    queries = load_queries(cfg.queries)
    pipe = _build_pipeline(cfg, gallery)
    out_dir = _out_dir(cfg)

    results = pipe.search_all(queries)
    write_jsonl(out_dir / "rankings.jsonl", (r.to_record() for r in results))
    print(f"ranked {len(results)} queries -> {out_dir / 'rankings.jsonl'}")
    if cfg.transcripts:
        write_jsonl(
            out_dir / "transcripts.jsonl",
            (t.to_record() for r in results for t in r.transcripts),
        )
        print(f"transcripts -> {out_dir / 'transcripts.jsonl'}")

    if cfg.qrels:
        qrels = load_qrels(cfg.qrels)
        rankings = {r.query_id: r.ranked_ids() for r in results}
        report = evaluate(rankings, qrels)
        metrics_path = out_dir / "metrics.json"
        metrics_path.write_text(
            json.dumps(report.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(format_table(report))
        print(f"metrics -> {metrics_path}")
    else:
        print("no qrels given; metrics skipped")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _assemble_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.handler(args, cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CascadeRankError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
