"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are pinned here and nowhere else.
"""
from __future__ import annotations

import json
import math
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from cascaderank import (
    AgentRole,
    AttentionWeights,
    Branch,
    CascadePipeline,
    Checklist,
    CoarseRetriever,
    GalleryItem,
    HashedEmbedder,
    MiningConfig,
    QueryRecord,
    ScriptedBackend,
    average_precision,
    emit_sft_dataset,
    evaluate,
    mine_hard_negatives,
    pose_cross_attention,
    recall_at_k,
    sweep,
)
from cascaderank.cli import main
from conftest import make_gallery, make_query


@contextmanager
def criterion(number: int, label: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} ({label}): FAIL")
        raise
    print(f"ACCEPTANCE {number} ({label}): PASS")


# --- criterion 1 -----------------------------------------------------------

def oracle_recall(ranking, relevant, k):
    return 1 if set(ranking[:k]) & relevant else 0


def oracle_ap(ranking, relevant):
    total = 0.0
    for idx, item in enumerate(ranking):
        if item in relevant:
            total += sum(1 for x in ranking[: idx + 1] if x in relevant) / (idx + 1)
    return total / len(relevant)


def test_criterion_1_metric_oracle_equivalence():
    with criterion(1, "metric oracle equivalence"):
        rng = np.random.default_rng(1001)
        start = time.monotonic()
        for _ in range(1000):
            n = int(rng.integers(1, 21))
            universe = [f"g{j}" for j in range(n + 3)]
            ranking = list(rng.permutation(universe[:n]))
            n_rel = int(rng.integers(1, 4))
            relevant = set(rng.choice(universe, size=n_rel, replace=False))
            for k in (1, 5, 10):
                assert recall_at_k(ranking, relevant, k) == oracle_recall(ranking, relevant, k)
            assert abs(average_precision(ranking, relevant) - oracle_ap(ranking, relevant)) <= 1e-12
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"metric oracle check took {elapsed:.2f}s"


# --- criterion 2 -----------------------------------------------------------

def random_scenario(rng, n_items=8):
    cosines = {}
    values = rng.uniform(-0.5, 1.0, size=n_items)
    for j in range(n_items):
        cosines[f"g{j:02d}"] = float(values[j])
    gallery = make_gallery(cosines)
    query = make_query(text="a cyclist weaves between moving cars")
    responses = {}
    words = ["walking", "running", "falling", "jumping", "sitting", "standing"]
    for item in gallery:
        verdict = "Yes" if rng.random() < 0.7 else "No"
        responses[(AgentRole.DETECTIVE.value, item.image_ref)] = verdict
        responses[(AgentRole.ANALYST.value, item.image_ref)] = "action: " + str(
            rng.choice(words)
        )
        responses[(AgentRole.WRITER.value, item.image_ref)] = " ".join(
            rng.choice(words, size=4)
        )
    return gallery, query, ScriptedBackend(responses)


def test_criterion_2_fusion_degeneracy():
    with criterion(2, "fusion degeneracy"):
        rng = np.random.default_rng(2002)
        for trial in range(8):
            gallery, query, backend = random_scenario(rng)
            # lam = 1: semantic scores cannot change the order
            pipe = CascadePipeline(k=8, lam=1.0, xi=0.3, rounds=1, backend=backend).fit(gallery)
            result = pipe.search(query)
            assert result.ranked_ids() == result.pool.item_ids()

            # xi = 1: nothing strictly exceeds the gate
            pipe = CascadePipeline(k=8, lam=0.4, xi=1.0, rounds=1, backend=backend).fit(gallery)
            result = pipe.search(query)
            assert result.ranked_ids() == result.pool.item_ids()
            assert all(f.branch is Branch.STRUCTURAL_ONLY for f in result.fused)


# --- criterion 3 -----------------------------------------------------------

def test_criterion_3_cascade_vs_exhaustive_oracle():
    with criterion(3, "cascade-vs-exhaustive oracle"):
        rng = np.random.default_rng(3003)
        words = ["red", "blue", "bike", "fence", "street", "jacket", "dog", "rain",
                 "ladder", "bench", "crowd", "lamp"]
        for trial in range(12):
            n, dim = int(rng.integers(3, 9)), 4
            # all-positive embeddings keep every raw cosine above 0, so the
            # raw-score gate at xi = 0 sits below the pool minimum
            gallery = [
                GalleryItem(
                    item_id=f"g{j}",
                    embedding=rng.uniform(0.1, 1.0, size=dim),
                    image_ref=f"img_g{j}",
                )
                for j in range(n)
            ]
            query = QueryRecord(
                query_id="q", text="a man climbs over a metal fence",
                embedding=rng.uniform(0.1, 1.0, size=dim),
            )
            captions = {
                item.item_id: " ".join(rng.choice(words, size=5)) for item in gallery
            }
            responses = {}
            for item in gallery:
                responses[(AgentRole.DETECTIVE.value, item.image_ref)] = "Yes"
                responses[(AgentRole.ANALYST.value, item.image_ref)] = "scene: street"
                responses[(AgentRole.WRITER.value, item.image_ref)] = captions[item.item_id]
            backend = ScriptedBackend(responses)
            embedder = HashedEmbedder(dimension=128, seed=trial)
            lam = 0.4
            pipe = CascadePipeline(
                k=n, lam=lam, xi=0.0, rounds=1, backend=backend, embedder=embedder,
                gate_on_raw=True,
            ).fit(gallery)
            result = pipe.search(query)
            assert all(t.gate_activated for t in result.transcripts)

            # exhaustive oracle: semantic scoring applied to every pool member
            e_query = embedder.embed(query.text)
            oracle = []
            for entry in result.pool.entries:
                e_caption = embedder.embed(captions[entry.item_id])
                sem = float(np.dot(e_query, e_caption)) / (
                    float(np.linalg.norm(e_query)) * float(np.linalg.norm(e_caption))
                )
                oracle.append((entry.item_id, lam * entry.s_str_norm + (1.0 - lam) * sem))
            oracle.sort(key=lambda t: (-t[1], t[0]))
            assert result.ranked_ids() == [item_id for item_id, _ in oracle]
            for ranked, (_, score) in zip(result.ranking, oracle):
                assert ranked.s_final == pytest.approx(score, abs=1e-12)


# --- criterion 4 -----------------------------------------------------------

def test_criterion_4_perfect_agent_recovery(recovery_scenario):
    with criterion(4, "perfect-agent recovery"):
        gallery, query, backend, qrels = recovery_scenario
        pipe = CascadePipeline(
            k=5, lam=0.4, xi=0.0, rounds=2, backend=backend,
            embedder=HashedEmbedder(dimension=256, seed=0),
        ).fit(gallery)
        result = pipe.search(query)

        coarse = evaluate({"q1": result.pool.item_ids()}, qrels)
        fused = evaluate({"q1": result.ranked_ids()}, qrels)
        assert result.pool.item_ids().index("i3") == 2  # coarse rank 3 of 5
        assert coarse.r_at[1] == 0.0
        assert fused.r_at[1] == 1.0
        gt_score = next(f for f in result.fused if f.item_id == "i3")
        assert gt_score.s_sem == pytest.approx(1.0, abs=1e-12)


# --- criterion 5 -----------------------------------------------------------

def gate_economics_world():
    gated = [1.0 - 0.005 * j for j in range(10)]        # 0.955 .. 1.0, all > 0.95
    ungated = [0.95 - j * (0.95 / 89.0) for j in range(90)]  # 0.95 .. 0.0
    cosines = {}
    for j, c in enumerate(gated + ungated):
        cosines[f"c{j:03d}"] = c
    gallery = make_gallery(cosines)
    gated_ids = [f"c{j:03d}" for j in range(10)]
    return gallery, gated_ids


def test_criterion_5_gate_economics():
    with criterion(5, "gate economics"):
        gallery, gated_ids = gate_economics_world()
        yes_ids = set(gated_ids[:6])
        responses = {}
        for item in gallery:
            if item.item_id in gated_ids:
                verdict = "Yes" if item.item_id in yes_ids else "No"
                responses[(AgentRole.DETECTIVE.value, item.image_ref)] = verdict
                responses[(AgentRole.ANALYST.value, item.image_ref)] = "action: falling"
                responses[(AgentRole.WRITER.value, item.image_ref)] = "a person falls down"
        backend = ScriptedBackend(responses)
        pipe = CascadePipeline(k=100, lam=0.4, xi=0.95, rounds=1, backend=backend).fit(gallery)
        result = pipe.search(make_query())

        activated = [t.item_id for t in result.transcripts if t.gate_activated]
        assert sorted(activated) == sorted(gated_ids)
        assert backend.calls_for(AgentRole.DETECTIVE) == 10
        assert backend.calls_for(AgentRole.ANALYST) == 6
        assert backend.calls_for(AgentRole.WRITER) == 6
        assert backend.call_count == 22
        ungated_refs = {
            item.image_ref for item in gallery if item.item_id not in gated_ids
        }
        assert all(ref not in ungated_refs for _, ref in backend.calls)

        # two rounds: every Match verdict re-expands all three roles
        backend.reset_calls()
        pipe = CascadePipeline(k=100, lam=0.4, xi=0.95, rounds=2, backend=backend).fit(gallery)
        pipe.search(make_query())
        assert backend.calls_for(AgentRole.DETECTIVE) == 10 + 6
        assert backend.calls_for(AgentRole.ANALYST) == 12
        assert backend.calls_for(AgentRole.WRITER) == 12
        assert backend.call_count == 40


# --- criterion 6 -----------------------------------------------------------

def straight_line_attention(f_p, f_i, w_q, w_k, w_v):
    """Token-by-token transcription of the fused attention formula."""
    n, d = f_p.shape
    f_ca = np.zeros((n, d))
    for i in range(n):
        q_i = w_q @ f_p[i]
        logits = np.array([float(np.dot(q_i, w_k @ f_i[j])) / math.sqrt(d) for j in range(n)])
        shifted = np.exp(logits - logits.max())
        attn = shifted / shifted.sum()
        for j in range(n):
            f_ca[i] += attn[j] * (w_v @ f_i[j])
    return f_ca, f_i + f_ca


def test_criterion_6_attention_kernel():
    with criterion(6, "cross-attention kernel vs reference"):
        rng = np.random.default_rng(6006)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            d = int(rng.integers(1, 17))
            f_p = rng.normal(size=(n, d))
            f_i = rng.normal(size=(n, d))
            w = AttentionWeights(
                w_q=rng.normal(size=(d, d)),
                w_k=rng.normal(size=(d, d)),
                w_v=rng.normal(size=(d, d)),
            )
            f_ca, f_v = pose_cross_attention(f_p, f_i, w)
            ref_ca, ref_v = straight_line_attention(f_p, f_i, w.w_q, w.w_k, w.w_v)
            assert np.max(np.abs(f_ca - ref_ca)) <= 1e-9
            assert np.max(np.abs(f_v - ref_v)) <= 1e-9

        # exact identities
        f_i = np.array([[2.0, -1.0]])
        f_p = np.array([[0.5, 0.25]])
        f_ca, f_v = pose_cross_attention(f_p, f_i, AttentionWeights.identity(2))
        assert np.array_equal(f_ca, f_i) and np.array_equal(f_v, 2 * f_i)
        rng_w = np.random.default_rng(66)
        w0 = AttentionWeights(
            w_q=rng_w.normal(size=(3, 3)), w_k=rng_w.normal(size=(3, 3)), w_v=np.zeros((3, 3))
        )
        f_p = rng_w.normal(size=(4, 3))
        f_i = rng_w.normal(size=(4, 3))
        f_ca, f_v = pose_cross_attention(f_p, f_i, w0)
        assert np.array_equal(f_ca, np.zeros((4, 3)))
        assert np.array_equal(f_v, f_i)


# --- criterion 7 -----------------------------------------------------------

def test_criterion_7_miner_soundness():
    with criterion(7, "miner soundness"):
        rng = np.random.default_rng(7007)
        tag_pool = ["gender", "action", "scene", "weather"]
        for trial in range(6):
            n = int(rng.integers(4, 12))
            gallery = [
                GalleryItem(
                    item_id=f"g{j}",
                    embedding=rng.normal(size=3),
                    image_ref=f"img_g{j}",
                    tags={str(rng.choice(tag_pool)): "value"},
                )
                for j in range(n)
            ]
            queries = [
                QueryRecord(
                    query_id=f"q{j}",
                    text=f"query number {j} about something",
                    embedding=rng.normal(size=3),
                )
                for j in range(3)
            ]
            qrels = {q.query_id: {f"g{int(rng.integers(0, n))}"} for q in queries}
            retriever = CoarseRetriever().fit(gallery)
            pairs = mine_hard_negatives(queries, retriever, qrels, k_mine=n)
            positives = [(q.query_id, item) for q in queries for item in qrels[q.query_id]]
            captions = {item: f"reference caption for {item}" for _, item in positives}
            cfg = MiningConfig(
                k_mine=n,
                per_role_quota={AgentRole.DETECTIVE: 2, AgentRole.ANALYST: 2,
                                AgentRole.WRITER: 2},
                seed=trial,
            )
            items_by_id = {g.item_id: g for g in gallery}
            queries_by_id = {q.query_id: q for q in queries}
            records, _ = emit_sft_dataset(
                pairs, positives, cfg, Checklist(), captions, queries_by_id, items_by_id,
                qrels=qrels,
            )
            for record in records:
                if record.label == "hard_negative":
                    assert record.item_id not in qrels[record.query_id]
                else:
                    assert record.item_id in qrels[record.query_id]

            rerun, _ = emit_sft_dataset(
                pairs, positives, cfg, Checklist(), captions, queries_by_id, items_by_id,
                qrels=qrels,
            )
            first = "\n".join(json.dumps(r.to_record()) for r in records)
            second = "\n".join(json.dumps(r.to_record()) for r in rerun)
            assert first == second


# --- criterion 8 -----------------------------------------------------------

def test_criterion_8_sensitivity_sweep_smoke(recovery_scenario, tmp_path):
    with criterion(8, "sensitivity sweep smoke"):
        gallery, query, backend, qrels = recovery_scenario
        pipe = CascadePipeline(
            k=5, lam=0.4, xi=0.0, rounds=2, backend=backend,
            embedder=HashedEmbedder(dimension=256, seed=0),
        ).fit(gallery)
        start = time.monotonic()
        result = sweep(pipe, [query], qrels, [0.0, 0.4, 1.0], [0.0, 0.95, 1.0], [2])
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"sweep took {elapsed:.2f}s"

        csv_path = tmp_path / "sweep.csv"
        result.write_csv(csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "lambda,xi,rounds,r1,r5,r10,map"
        assert len(lines) == 1 + 9

        coarse = evaluate({"q1": pipe.retriever_.retrieve(query, 5).item_ids()}, qrels)
        for row in result.rows:
            if row["lambda"] == 1.0 or row["xi"] == 1.0:
                assert row["r1"] == coarse.r_at[1]
                assert row["r5"] == coarse.r_at[5]
                assert row["r10"] == coarse.r_at[10]
                assert row["map"] == pytest.approx(coarse.map_score, abs=1e-12)
        recovery_row = next(
            r for r in result.rows if r["lambda"] == 0.4 and r["xi"] == 0.0
        )
        assert recovery_row["r1"] == 1.0


# --- criterion 9 -----------------------------------------------------------

def test_criterion_9_determinism_across_runs_and_workers(recovery_files):
    with criterion(9, "byte-identical determinism"):
        outputs = {}
        for run_idx, workers in [(0, "1"), (1, "1"), (2, "4"), (3, "4")]:
            out = recovery_files["out"] / f"run{run_idx}"
            argv = [
                "pipeline",
                "--gallery", str(recovery_files["gallery"]),
                "--queries", str(recovery_files["queries"]),
                "--qrels", str(recovery_files["qrels"]),
                "--fixtures", str(recovery_files["fixtures"]),
                "--out", str(out),
                "--k", "5", "--lam", "0.4", "--xi", "0.0", "--seed", "0",
                "--workers", workers, "--transcripts",
            ]
            assert main(argv) == 0
            outputs[run_idx] = {
                name: (out / name).read_bytes()
                for name in ("rankings.jsonl", "transcripts.jsonl", "metrics.json")
            }
        for run_idx in (1, 2, 3):
            assert outputs[run_idx] == outputs[0]


def test_console_entry_point(recovery_files):
    out = recovery_files["out"] / "subprocess"
    proc = subprocess.run(
        [
            sys.executable, "-m", "cascaderank", "pipeline",
            "--gallery", str(recovery_files["gallery"]),
            "--queries", str(recovery_files["queries"]),
            "--qrels", str(recovery_files["qrels"]),
            "--fixtures", str(recovery_files["fixtures"]),
            "--out", str(out), "--k", "5", "--xi", "0.0",
        ],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "metrics.json").exists()
