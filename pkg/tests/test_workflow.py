import logging

import numpy as np
import pytest

import termspot.workflow as workflow
from termspot.corpus import CorpusManifest, LexiconCandidate, Utterance, WordAlignment
from termspot.features import FeatureMatrix
from termspot.match import Hit, SearchConfig
from termspot.workflow import (
    OracleConfirmer,
    SparseTranscript,
    WorkflowConfig,
    WorkflowEngine,
    WorkflowError,
    oracle_confirm,
)


def fm(frames=60, dims=4, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureMatrix(rng.normal(size=(frames, dims)).astype(np.float32), 0.01, 0.025, kind="mfcc")


def hit(utt="u0", s=10, e=20, score=0.9, entry="worda", exemplar="worda~0", status="pending", iteration=0):
    return Hit(utt, s, e, s * 0.01, e * 0.01, score, entry, exemplar, status, iteration)


def manifest_with(words_per_utt, n_utts=2):
    """Fabricated manifest: each utterance has the given aligned words, 0.5 s
    apart; audio paths are fake (never read by these tests)."""
    utts = []
    alis = []
    for k in range(n_utts):
        uid = f"u{k}"
        t = 0.0
        for w in words_per_utt:
            alis.append(WordAlignment(uid, w, round(t, 2), round(t + 0.4, 2)))
            t += 0.5
        utts.append(Utterance(uid, f"{uid}.wav", f"spk{k % 2}", list(words_per_utt), 16000, t + 1.0))
    return CorpusManifest(utts, alis)


def candidates_for(manifest, forms):
    out = []
    for form in forms:
        seed = next(a for a in manifest.alignments if a.word == form)
        out.append(LexiconCandidate(form, 5, seed))
    return out


def engine_for(manifest, forms, config=None, frames=200):
    feats = {u.id: fm(frames=frames, seed=i) for i, u in enumerate(manifest.utterances)}
    config = config or WorkflowConfig(
        initial_words=len(forms), words_per_iteration=0, iterations=3, hits_checked_per_word=10,
        max_extra_exemplars=5,
    )
    return WorkflowEngine(manifest, feats, config, candidates_for(manifest, forms))


class TestOracleConfirm:
    def alis(self):
        return [WordAlignment("u0", "worda", 1.0, 1.4), WordAlignment("u0", "wordb", 2.0, 2.4)]

    def test_exact_overlap(self):
        h = Hit("u0", 100, 140, 1.0, 1.4, 0.9, "worda", "worda~0")
        assert oracle_confirm(h, self.alis(), "worda", 1.0)

    def test_partial_overlap_thresholds(self):
        h = Hit("u0", 100, 140, 1.0, 1.4, 0.9, "worda", "worda~0")
        gold = [WordAlignment("u0", "worda", 1.2, 1.6)]
        # IoU = 0.2/0.6
        assert oracle_confirm(h, gold, "worda", 0.3)
        assert not oracle_confirm(h, gold, "worda", 0.5)

    def test_form_mismatch(self):
        h = Hit("u0", 100, 140, 1.0, 1.4, 0.9, "wordb", "wordb~0")
        assert not oracle_confirm(h, self.alis(), "wordb", 0.3)

    def test_one_gold_token_one_hit(self):
        used = set()
        h1 = Hit("u0", 100, 140, 1.0, 1.4, 0.95, "worda", "worda~0")
        h2 = Hit("u0", 102, 142, 1.02, 1.42, 0.90, "worda", "worda~0")
        assert oracle_confirm(h1, self.alis(), "worda", 0.3, used)
        assert not oracle_confirm(h2, self.alis(), "worda", 0.3, used)

    def test_confirmer_orders_by_score(self):
        manifest = manifest_with(["worda"], n_utts=1)
        confirmer = OracleConfirmer(manifest, 0.3)
        weak = hit(s=0, e=40, score=0.7)   # overlaps gold [0, 0.4]
        strong = hit(s=2, e=42, score=0.9)
        decisions = dict(
            (h.hit_id, ok) for h, ok in confirmer.decide_batch([weak, strong])
        )
        assert decisions[strong.hit_id] is True
        assert decisions[weak.hit_id] is False  # gold token taken by stronger hit

    def test_used_tokens_persist_across_iterations(self):
        manifest = manifest_with(["worda"], n_utts=1)
        confirmer = OracleConfirmer(manifest, 0.3)
        first = confirmer.decide_batch([hit(s=0, e=40, score=0.9)])
        assert first[0][1]
        second = confirmer.decide_batch([hit(s=2, e=38, score=0.8, iteration=2)])
        assert not second[0][1]

    def test_needs_alignments(self):
        manifest = CorpusManifest([Utterance("u0", "x.wav", "s", None, 16000, 1.0)])
        with pytest.raises(WorkflowError, match="alignments"):
            OracleConfirmer(manifest, 0.3)


class CannedConfirmer:
    kind = "oracle"

    def __init__(self, verdicts):
        self.verdicts = verdicts  # hit score -> bool

    def decide_batch(self, hits):
        return [(h, self.verdicts.get(round(h.score, 2), False)) for h in hits]


class TestThresholdRule:
    def run_with_scores(self, monkeypatch, iter_scores, verdicts):
        """Drive 2 iterations with canned search results; returns the engine."""
        manifest = manifest_with(["worda"], n_utts=1)
        calls = {"n": 0}

        def fake_search(entry, feats, config, mask=None, workers=1):
            scores = iter_scores[min(calls["n"], len(iter_scores) - 1)]
            base = 100 * calls["n"]  # fresh spans every iteration
            calls["n"] += 1
            return [
                hit(s=base + 10 * i, e=base + 10 * i + 8, score=sc, entry=entry.id,
                    exemplar=f"{entry.id}~0")
                for i, sc in enumerate(scores)
            ]

        monkeypatch.setattr(workflow, "search_entry", fake_search)
        engine = engine_for(manifest, ["worda"], WorkflowConfig(
            initial_words=1, words_per_iteration=0, iterations=2, hits_checked_per_word=10,
            max_extra_exemplars=0,
        ), frames=600)
        confirmer = CannedConfirmer(verdicts)
        engine.run_iteration(confirmer)
        engine.run_iteration(confirmer)
        return engine

    def test_threshold_set_from_min_confirmed(self, monkeypatch):
        engine = self.run_with_scores(
            monkeypatch,
            iter_scores=[(0.91, 0.84, 0.77, 0.50), (0.91, 0.84, 0.77, 0.50)],
            verdicts={0.91: True, 0.84: True, 0.77: True},
        )
        assert engine.threshold == pytest.approx(0.77)
        it2 = [h for h in engine.presented_log if h.iteration == 2]
        assert it2, "iteration 2 presented nothing"
        assert all(h.score >= 0.77 for h in it2)
        assert engine.reports[0].threshold is None
        assert engine.reports[1].threshold == pytest.approx(0.77)

    def test_no_confirmations_leaves_threshold_unset(self, monkeypatch, caplog):
        with caplog.at_level(logging.WARNING):
            engine = self.run_with_scores(
                monkeypatch,
                iter_scores=[(0.9, 0.8), (0.6, 0.5)],
                verdicts={},
            )
        assert engine.threshold is None
        assert any("threshold stays unset" in r.message for r in caplog.records)
        # iteration 2 unfiltered: low scores still presented
        it2 = [h for h in engine.presented_log if h.iteration == 2]
        assert {round(h.score, 2) for h in it2} == {0.6, 0.5}


class TestEngine:
    def test_bootstrap_and_expansion_schedule(self):
        manifest = manifest_with([f"word{i:02d}" for i in range(10)], n_utts=1)
        forms = [f"word{i:02d}" for i in range(10)]
        config = WorkflowConfig(
            initial_words=4, words_per_iteration=2, iterations=3, hits_checked_per_word=0,
        )
        engine = engine_for(manifest, forms, config, frames=600)
        assert len(engine.lexicon) == 4
        confirmer = CannedConfirmer({})
        engine.run_iteration(confirmer)
        engine.expand_lexicon()
        assert len(engine.lexicon) == 6
        engine.run_iteration(confirmer)
        engine.expand_lexicon()
        engine.run_iteration(confirmer)
        assert len(engine.lexicon) == 8
        assert [e.added_at_iteration for e in engine.lexicon.entries] == [0] * 4 + [1] * 2 + [2] * 2

    def test_candidate_exhaustion_warns(self, caplog):
        manifest = manifest_with(["worda", "wordb", "wordc"], n_utts=1)
        config = WorkflowConfig(initial_words=2, words_per_iteration=2, iterations=2, hits_checked_per_word=0)
        engine = engine_for(manifest, ["worda", "wordb", "wordc"], config)
        with caplog.at_level(logging.WARNING):
            added = engine.expand_lexicon()
        assert added == 1
        assert any("exhausted" in r.message for r in caplog.records)

    def test_n_zero_presents_nothing(self):
        manifest = manifest_with(["worda"], n_utts=1)
        config = WorkflowConfig(initial_words=1, words_per_iteration=0, iterations=1, hits_checked_per_word=0)
        engine = engine_for(manifest, ["worda"], config)
        report = engine.run_iteration(CannedConfirmer({}))
        assert report.checked == 0
        assert report.precision == 0.0
        assert len(engine.transcript) == 0

    def test_exemplar_cap_respected(self, monkeypatch):
        manifest = manifest_with(["worda"], n_utts=1)

        def fake_search(entry, feats, config, mask=None, workers=1):
            return [hit(s=20 * i, e=20 * i + 10, score=0.9 - 0.01 * i, entry=entry.id) for i in range(8)]

        monkeypatch.setattr(workflow, "search_entry", fake_search)
        config = WorkflowConfig(initial_words=1, words_per_iteration=0, iterations=1,
                                hits_checked_per_word=8, max_extra_exemplars=3)
        engine = engine_for(manifest, ["worda"], config)
        engine.run_iteration(CannedConfirmer({round(0.9 - 0.01 * i, 2): True for i in range(8)}))
        assert len(engine.lexicon.get("worda").exemplars) == 1 + 3

    def test_confirmed_spans_masked_next_iteration(self, monkeypatch):
        manifest = manifest_with(["worda"], n_utts=1)
        seen_masks = []

        def fake_search(entry, feats, config, mask=None, workers=1):
            seen_masks.append(mask)
            return [hit(s=0, e=40, score=0.9, entry=entry.id)]

        monkeypatch.setattr(workflow, "search_entry", fake_search)
        config = WorkflowConfig(initial_words=1, words_per_iteration=0, iterations=2, hits_checked_per_word=5)
        engine = engine_for(manifest, ["worda"], config)
        engine.run_iteration(CannedConfirmer({0.9: True}))
        engine.run_iteration(CannedConfirmer({}))
        assert seen_masks[0] is None
        assert seen_masks[1] == {"u0": [(0.0, 0.4)]}

    def test_run_all_and_finished(self, monkeypatch):
        manifest = manifest_with(["worda", "wordb"], n_utts=1)
        monkeypatch.setattr(workflow, "search_entry", lambda *a, **k: [])
        config = WorkflowConfig(initial_words=2, words_per_iteration=0, iterations=3, hits_checked_per_word=5)
        engine = engine_for(manifest, ["worda", "wordb"], config)
        engine.run_all(CannedConfirmer({}))
        assert engine.finished
        assert len(engine.reports) == 3
        with pytest.raises(WorkflowError, match="already run"):
            engine.begin_iteration()

    def test_short_seed_skipped(self):
        manifest = manifest_with(["worda", "wordb"], n_utts=1)
        manifest.alignments[0].end = manifest.alignments[0].start + 0.005  # sub-frame seed
        manifest = CorpusManifest(manifest.utterances, manifest.alignments)
        config = WorkflowConfig(initial_words=2, words_per_iteration=0, iterations=1, hits_checked_per_word=0)
        engine = engine_for(manifest, ["worda", "wordb"], config)
        assert [e.form for e in engine.lexicon.entries] == ["wordb"]


class TestFeatureCache:
    def test_external_cache_gets_mvn_at_load(self, tmp_path):
        from termspot.features import FeatureConfig, FeatureMatrix, save_features
        from termspot.workflow import load_feature_cache

        rng = np.random.default_rng(0)
        manifest = manifest_with(["worda"], n_utts=2)
        for utt in manifest.utterances:
            raw = FeatureMatrix(rng.normal(3.0, 2.0, (30, 5)).astype(np.float32), 0.01, 0.025)
            save_features(raw, tmp_path / f"{utt.id}.sptf")

        plain = load_feature_cache(tmp_path, manifest, FeatureConfig(kind="external", num_filters=1, num_coefficients=1))
        assert not plain["u0"].normalized
        assert abs(plain["u0"].data.mean()) > 0.5  # raw import untouched

        normed = load_feature_cache(
            tmp_path, manifest, FeatureConfig(kind="external", num_filters=1, num_coefficients=1, mvn=True)
        )
        assert normed["u0"].normalized
        assert np.abs(normed["u0"].data.astype(np.float64).mean(axis=0)).max() < 1e-6

    def test_computed_cache_is_not_renormalized(self, tmp_path):
        from termspot.features import FeatureConfig, FeatureMatrix, save_features
        from termspot.workflow import load_feature_cache

        manifest = manifest_with(["worda"], n_utts=1)
        # an mfcc cache already carries MVN'd matrices; loading must not touch data
        data = np.random.default_rng(1).normal(size=(30, 5)).astype(np.float32)
        save_features(FeatureMatrix(data, 0.01, 0.025), tmp_path / "u0.sptf")
        out = load_feature_cache(tmp_path, manifest, FeatureConfig(kind="mfcc", mvn=True))
        assert out["u0"].normalized
        assert np.array_equal(out["u0"].data, data)

    def test_missing_file_names_utterance(self, tmp_path):
        from termspot.features import FeatureConfig
        from termspot.workflow import load_feature_cache

        manifest = manifest_with(["worda"], n_utts=1)
        with pytest.raises(WorkflowError, match="u0"):
            load_feature_cache(tmp_path, manifest, FeatureConfig(kind="mfcc"))


class TestSparseTranscript:
    def test_only_confirmed(self):
        with pytest.raises(WorkflowError, match="only confirmed"):
            SparseTranscript().add(hit(status="pending"))

    def test_overlap_same_entry_rejected(self):
        t = SparseTranscript()
        t.add(hit(s=10, e=20, status="confirmed"))
        with pytest.raises(WorkflowError, match="overlaps"):
            t.add(hit(s=15, e=25, status="confirmed"))
        t.add(hit(s=20, e=30, status="confirmed"))  # adjacent is fine
        t.add(hit(s=12, e=18, entry="wordb", exemplar="wordb~0", status="confirmed"))
        assert len(t) == 3


class TestWorkflowConfig:
    def test_json_round_trip(self):
        c = WorkflowConfig(initial_words=20, words_per_iteration=20, iterations=5,
                           hits_checked_per_word=10, max_extra_exemplars=5,
                           search=SearchConfig(max_hits_per_utterance=3, band_width=12, min_score=0.2))
        assert WorkflowConfig.from_dict(c.to_dict()) == c

    def test_validation(self):
        with pytest.raises(ValueError):
            WorkflowConfig(iterations=0)
        with pytest.raises(ValueError):
            WorkflowConfig(overlap_threshold=0.0)
        with pytest.raises(ValueError):
            WorkflowConfig(initial_words=-1)
