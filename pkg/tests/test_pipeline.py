"""End-to-end cascade behavior on scripted fixtures."""
from __future__ import annotations

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from cascaderank import (
    Branch,
    CascadePipeline,
    HashedEmbedder,
    LookupEmbedder,
    Outcome,
    ScriptedBackend,
)
from conftest import (
    DISTRACTOR_CAPTION,
    GT_CAPTION,
    make_gallery,
    make_query,
    scripted_backend,
)


class TestEstimatorProtocol:
    def test_get_set_params(self):
        pipe = CascadePipeline(k=5, lam=0.3)
        params = pipe.get_params()
        assert params["k"] == 5 and params["lam"] == 0.3
        pipe.set_params(lam=0.9, xi=0.5)
        assert pipe.lam == 0.9 and pipe.xi == 0.5

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            CascadePipeline(backend=ScriptedBackend({})).search(make_query())

    def test_param_validation_on_fit(self):
        with pytest.raises(ValueError):
            CascadePipeline(lam=1.5).fit([])
        with pytest.raises(ValueError):
            CascadePipeline(xi=-0.1).fit([])

    def test_backend_required_for_search(self):
        pipe = CascadePipeline().fit(make_gallery({"a": 1.0}))
        with pytest.raises(ValueError):
            pipe.search(make_query())


class TestRecovery:
    def test_semantic_fusion_lifts_ground_truth(self, recovery_scenario):
        gallery, query, backend, qrels = recovery_scenario
        pipe = CascadePipeline(
            k=5, lam=0.4, xi=0.0, rounds=2, backend=backend,
            embedder=HashedEmbedder(dimension=256, seed=0),
        ).fit(gallery)
        result = pipe.search(query)
        coarse_ids = result.pool.item_ids()
        assert coarse_ids[0] != "i3"  # structural ranking misses
        assert result.ranked_ids()[0] == "i3"  # fusion recovers
        gt = next(f for f in result.fused if f.item_id == "i3")
        assert gt.s_sem == pytest.approx(1.0, abs=1e-12)
        assert gt.s_final == pytest.approx(0.4 * 0.8 + 0.6 * 1.0, abs=1e-9)

    def test_lambda_one_reduces_to_coarse(self, recovery_scenario):
        gallery, query, backend, _ = recovery_scenario
        pipe = CascadePipeline(
            k=5, lam=1.0, xi=0.0, rounds=1, backend=backend,
        ).fit(gallery)
        result = pipe.search(query)
        assert result.ranked_ids() == result.pool.item_ids()

    def test_xi_one_gates_nothing(self, recovery_scenario):
        gallery, query, backend, _ = recovery_scenario
        pipe = CascadePipeline(k=5, lam=0.4, xi=1.0, backend=backend).fit(gallery)
        result = pipe.search(query)
        assert result.ranked_ids() == result.pool.item_ids()
        assert all(f.branch is Branch.STRUCTURAL_ONLY for f in result.fused)
        assert backend.call_count == 0

    def test_ungated_scores_bit_identical_to_pool(self, recovery_scenario):
        gallery, query, backend, _ = recovery_scenario
        pipe = CascadePipeline(k=5, lam=0.4, xi=0.85, rounds=1, backend=backend).fit(gallery)
        result = pipe.search(query)
        for entry, fused in zip(result.pool.entries, result.fused):
            if not gate_activated(result, entry.item_id):
                assert fused.s_final == entry.s_str_norm

    def test_ungated_relative_order_never_changes(self, recovery_scenario):
        gallery, query, backend, _ = recovery_scenario
        pipe = CascadePipeline(k=5, lam=0.4, xi=0.85, rounds=1, backend=backend).fit(gallery)
        result = pipe.search(query)
        ungated = [
            e.item_id for e in result.pool.entries
            if not gate_activated(result, e.item_id)
        ]
        assert len(ungated) >= 2
        final_order = [i for i in result.ranked_ids() if i in set(ungated)]
        assert final_order == ungated


def gate_activated(result, item_id: str) -> bool:
    return next(t.gate_activated for t in result.transcripts if t.item_id == item_id)


class TestDegradation:
    def test_missing_fixture_degrades_to_structural(self):
        gallery = make_gallery({"a": 1.0, "b": 0.5, "c": 0.0})
        backend = ScriptedBackend({})  # gated candidates will miss fixtures
        pipe = CascadePipeline(k=3, lam=0.4, xi=0.4, rounds=1, backend=backend).fit(gallery)
        result = pipe.search(make_query())
        assert result.ranked_ids() == result.pool.item_ids()
        assert result.outcomes["a"] is Outcome.DEGRADED
        assert result.outcomes["c"] is Outcome.SKIPPED

    def test_semantic_scoring_failure_degrades(self):
        gallery = make_gallery({"a": 1.0, "b": 0.0})
        backend = scripted_backend(gallery, {"a": "Yes"}, {"a": "unknown caption"})
        embedder = LookupEmbedder({GT_CAPTION: np.array([1.0, 0.0])})
        pipe = CascadePipeline(
            k=2, lam=0.4, xi=0.5, rounds=1, backend=backend, embedder=embedder
        ).fit(gallery)
        result = pipe.search(make_query(text=GT_CAPTION))
        assert result.outcomes["a"] is Outcome.DEGRADED
        fused_a = next(f for f in result.fused if f.item_id == "a")
        assert fused_a.branch is Branch.STRUCTURAL_ONLY

    def test_rejected_gets_demoted_not_removed(self):
        gallery = make_gallery({"a": 1.0, "b": 0.9, "c": 0.0})
        backend = scripted_backend(
            gallery, {"a": "No", "b": "Yes"}, {"b": DISTRACTOR_CAPTION}
        )
        pipe = CascadePipeline(k=3, lam=0.4, xi=0.5, rounds=1, backend=backend).fit(gallery)
        result = pipe.search(make_query())
        fused_a = next(f for f in result.fused if f.item_id == "a")
        assert fused_a.s_sem == 0.0
        assert fused_a.s_final == pytest.approx(0.4 * 1.0, abs=1e-12)
        assert "a" in result.ranked_ids()


class TestOutputRecord:
    def test_record_schema(self, recovery_scenario):
        gallery, query, backend, _ = recovery_scenario
        pipe = CascadePipeline(k=5, lam=0.4, xi=0.0, rounds=1, backend=backend).fit(gallery)
        record = pipe.search(query).to_record()
        assert record["query_id"] == "q1"
        assert len(record["ranking"]) == 5
        top = record["ranking"][0]
        assert set(top) == {"item_id", "s_final", "s_str_norm", "s_sem", "branch", "outcome"}

    def test_predict_returns_ranked_ids(self, recovery_scenario):
        gallery, query, backend, _ = recovery_scenario
        pipe = CascadePipeline(k=5, lam=0.4, xi=0.0, rounds=1, backend=backend).fit(gallery)
        assert pipe.predict([query])[0][0] == "i3"
