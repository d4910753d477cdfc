"""The iteration loop: search the corpus with every lexicon entry, present
the top hits for confirmation, grow the sparse transcript and the lexicon,
and maintain the score threshold taken from the first iteration.

Confirmation is pluggable: OracleConfirmer simulates a human against gold
word alignments; interactive sessions feed decisions in through the same
engine methods (see termspot.service).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from termspot.corpus import CorpusManifest, LexiconCandidate, WordAlignment, read_wav, select_lexicon_words
from termspot.features import FeatureConfig, FeatureMatrix, extract_features, extract_span, load_external_features, apply_mvn, save_features
from termspot.lexicon import Exemplar, Lexicon
from termspot.match import Hit, SearchConfig, search_entry
from termspot.metrics import IterationReport, interval_iou

logger = logging.getLogger(__name__)


class WorkflowError(RuntimeError):
    """Raised when the loop is driven out of order or inputs are missing."""


@dataclass
class WorkflowConfig:
    """Hyperparameters of the loop: lexicon size s, words checked n, extra
    exemplar cap m, iteration count i, plus the oracle's overlap rule."""

    initial_words: int = 20
    words_per_iteration: int = 20
    iterations: int = 5
    hits_checked_per_word: int = 10
    max_extra_exemplars: int = 5
    overlap_threshold: float = 0.3
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        for name in ("initial_words", "words_per_iteration", "hits_checked_per_word", "max_extra_exemplars"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.overlap_threshold <= 1.0:
            raise ValueError("overlap_threshold must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "initial_words": self.initial_words,
            "words_per_iteration": self.words_per_iteration,
            "iterations": self.iterations,
            "hits_checked_per_word": self.hits_checked_per_word,
            "max_extra_exemplars": self.max_extra_exemplars,
            "overlap_threshold": self.overlap_threshold,
            "search": {
                "max_hits_per_utterance": self.search.max_hits_per_utterance,
                "band_width": self.search.band_width,
                "min_score": self.search.min_score,
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "WorkflowConfig":
        raw = dict(raw)
        search = SearchConfig(**raw.pop("search", {}))
        return cls(search=search, **raw)


@dataclass
class IterationState:
    """Everything one iteration presented and how it was decided."""

    iteration: int
    threshold: float | None
    presented: list[Hit] = field(default_factory=list)
    confirmed: list[Hit] = field(default_factory=list)
    rejected: list[Hit] = field(default_factory=list)

    @property
    def pending(self) -> list[Hit]:
        return [h for h in self.presented if h.status == "pending"]


class SparseTranscript:
    """The growing set of confirmed token annotations over the collection."""

    def __init__(self, tokens: list[Hit] | None = None):
        self.tokens: list[Hit] = []
        for tok in tokens or []:
            self.add(tok)

    def add(self, hit: Hit) -> None:
        if hit.status != "confirmed":
            raise WorkflowError(f"only confirmed hits enter the transcript, got '{hit.status}'")
        for tok in self.tokens:
            if (
                tok.entry_id == hit.entry_id
                and tok.utterance_id == hit.utterance_id
                and tok.overlaps_span(hit.start, hit.end)
            ):
                raise WorkflowError(
                    f"token {hit.hit_id} overlaps an existing '{tok.entry_id}' token in {tok.utterance_id}"
                )
        self.tokens.append(hit)

    def __len__(self) -> int:
        return len(self.tokens)


def oracle_confirm(
    hit: Hit,
    alignments: list[WordAlignment],
    form: str,
    overlap_threshold: float,
    used: set[int] | None = None,
) -> bool:
    """True iff an (unused) gold token of the same form overlaps the hit at
    IoU >= overlap_threshold. When `used` is given, the matched token's
    index is recorded there so a gold token validates at most one hit."""
    best = None
    for idx, ali in enumerate(alignments):
        if ali.word != form:
            continue
        if used is not None and idx in used:
            continue
        iou = interval_iou(hit.start, hit.end, ali.start, ali.end)
        if iou >= overlap_threshold and (best is None or iou > best[0]):
            best = (iou, idx)
    if best is None:
        return False
    if used is not None:
        used.add(best[1])
    return True


class OracleConfirmer:
    """Simulates human verification against gold word alignments.

    Stateful across the whole run: each gold token validates at most one
    hit, hits being examined greedily by descending score.
    """

    kind = "oracle"

    def __init__(self, manifest: CorpusManifest, overlap_threshold: float = 0.3):
        if not manifest.has_alignments:
            raise WorkflowError("oracle confirmation needs gold alignments")
        self.manifest = manifest
        self.overlap_threshold = overlap_threshold
        self._used: dict[str, set[int]] = {}

    def decide_batch(self, hits: list[Hit]) -> list[tuple[Hit, bool]]:
        ordered = sorted(hits, key=lambda h: (-h.score, h.utterance_id, h.start_frame, h.entry_id))
        decisions = []
        for hit in ordered:
            used = self._used.setdefault(hit.utterance_id, set())
            alignments = self.manifest.alignments_for(hit.utterance_id)
            decisions.append(
                (hit, oracle_confirm(hit, alignments, hit.entry_id, self.overlap_threshold, used))
            )
        return decisions


class WorkflowEngine:
    """Owns the lexicon, transcript, threshold, and candidate queue, and
    drives iterations either in one shot (oracle) or decision by decision
    (interactive service)."""

    def __init__(
        self,
        manifest: CorpusManifest,
        corpus_features: dict[str, FeatureMatrix],
        config: WorkflowConfig,
        candidates: list[LexiconCandidate],
        feature_config: FeatureConfig | None = None,
        bootstrap: bool = True,
    ):
        missing = [u.id for u in manifest.utterances if u.id not in corpus_features]
        if missing:
            raise WorkflowError(f"missing features for utterances: {missing[:5]}")
        self.manifest = manifest
        self.corpus_features = corpus_features
        self.config = config
        self.feature_config = feature_config
        self.candidates = candidates
        self.candidates_used = 0
        self.lexicon = Lexicon()
        self.transcript = SparseTranscript()
        self.rejected_log: list[Hit] = []
        self.presented_log: list[Hit] = []
        self.reports: list[IterationReport] = []
        self.threshold: float | None = None
        self.iterations_done = 0
        self.state: IterationState | None = None
        if bootstrap:
            self._bootstrap()

    # -- lexicon growth ----------------------------------------------------

    def _seed_exemplar(self, form: str, seed: WordAlignment) -> Exemplar | None:
        feats = self.corpus_features[seed.utterance_id]
        span_feats = extract_span(feats, seed.start, seed.end)
        if span_feats.frames < 2:
            logger.warning("seed token for '%s' spans < 2 frames, skipping", form)
            return None
        return Exemplar(
            id=f"{form}~0",
            source="seed",
            speaker=self.manifest.by_id[seed.utterance_id].speaker,
            features=span_feats,
            utterance_id=seed.utterance_id,
            span=(seed.start, seed.end),
        )

    def _take_candidates(self, count: int, iteration: int) -> int:
        added = 0
        while added < count and self.candidates_used < len(self.candidates):
            cand = self.candidates[self.candidates_used]
            self.candidates_used += 1
            if cand.form in self.lexicon.forms:
                continue
            seed = self._seed_exemplar(cand.form, cand.seed)
            if seed is None:
                continue
            self.lexicon.add_entry(cand.form, seed, iteration=iteration)
            added += 1
        if added < count:
            logger.warning(
                "candidate list exhausted: wanted %d more words, added %d", count, added
            )
        return added

    def _bootstrap(self) -> None:
        self._take_candidates(self.config.initial_words, iteration=0)

    def expand_lexicon(self, new_words: list[tuple[str, Exemplar]] | None = None) -> int:
        """Grow the lexicon between iterations.

        Explicit (form, seed exemplar) pairs override the frequency-ordered
        candidate queue, supporting manually collected words.
        """
        if new_words is not None:
            for form, seed in new_words:
                self.lexicon.add_entry(form, seed, iteration=self.iterations_done)
            return len(new_words)
        return self._take_candidates(self.config.words_per_iteration, iteration=self.iterations_done)

    # -- one iteration -----------------------------------------------------

    def _masks(self) -> dict[str, dict[str, list[tuple[float, float]]]]:
        masks: dict[str, dict[str, list[tuple[float, float]]]] = {}
        for tok in self.transcript.tokens:
            masks.setdefault(tok.entry_id, {}).setdefault(tok.utterance_id, []).append(
                (tok.start, tok.end)
            )
        return masks

    def begin_iteration(self, workers: int = 1) -> IterationState:
        """Search with every entry and stage the top-n hits per entry for
        confirmation (threshold-filtered from iteration 2 on)."""
        if self.state is not None:
            raise WorkflowError("previous iteration not completed")
        if len(self.lexicon) == 0:
            raise WorkflowError("empty lexicon")
        if self.iterations_done >= self.config.iterations:
            raise WorkflowError("all iterations already run")
        iteration = self.iterations_done + 1
        masks = self._masks()
        presented: list[Hit] = []
        for entry in self.lexicon.entries:
            hits = search_entry(
                entry,
                self.corpus_features,
                self.config.search,
                mask=masks.get(entry.id),
                workers=workers,
            )
            if self.threshold is not None:
                hits = [h for h in hits if h.score >= self.threshold]
            for hit in hits[: self.config.hits_checked_per_word]:
                hit.iteration = iteration
                presented.append(hit)
        self.state = IterationState(iteration, self.threshold, presented)
        self.presented_log.extend(presented)
        return self.state

    def apply_decision(self, hit: Hit, confirm: bool) -> None:
        """Record one confirmation and its side effects (transcript token,
        extra exemplar up to the cap)."""
        if self.state is None:
            raise WorkflowError("no iteration in progress")
        if hit.status != "pending":
            raise WorkflowError(f"hit {hit.hit_id} already decided ({hit.status})")
        if not confirm:
            hit.status = "rejected"
            self.state.rejected.append(hit)
            self.rejected_log.append(hit)
            return
        hit.status = "confirmed"
        self.state.confirmed.append(hit)
        self.transcript.add(hit)
        feats = extract_span(self.corpus_features[hit.utterance_id], hit.start, hit.end)
        if feats.frames < 2:
            logger.warning("confirmed hit %s spans < 2 frames, not usable as exemplar", hit.hit_id)
            return
        entry = self.lexicon.get(hit.entry_id)
        exemplar = Exemplar(
            id=f"{hit.entry_id}~{len(entry.exemplars)}",
            source="confirmed_hit",
            speaker=self.manifest.by_id[hit.utterance_id].speaker,
            features=feats,
            utterance_id=hit.utterance_id,
            span=(hit.start, hit.end),
        )
        self.lexicon.add_exemplar(hit.entry_id, exemplar, self.config.max_extra_exemplars)

    def complete_iteration(self) -> IterationReport:
        """Close the iteration: set the threshold after iteration 1, emit the
        precision report."""
        if self.state is None:
            raise WorkflowError("no iteration in progress")
        pending = self.state.pending
        if pending:
            raise WorkflowError(f"{len(pending)} undecided hits remain")
        if self.state.iteration == 1:
            if self.state.confirmed:
                self.threshold = min(h.score for h in self.state.confirmed)
            else:
                logger.warning("no confirmations in iteration 1: threshold stays unset")
        report = IterationReport.from_counts(
            iteration=self.state.iteration,
            checked=len(self.state.presented),
            correct=len(self.state.confirmed),
            threshold=self.state.threshold,
            lexicon_size=len(self.lexicon),
        )
        self.reports.append(report)
        self.iterations_done += 1
        self.state = None
        return report

    def run_iteration(self, confirmer, workers: int = 1) -> IterationReport:
        """begin -> confirm every presented hit -> complete, in one call."""
        self.begin_iteration(workers=workers)
        for hit, confirmed in confirmer.decide_batch(self.state.pending):
            self.apply_decision(hit, confirmed)
        return self.complete_iteration()

    def run_all(self, confirmer, workers: int = 1) -> None:
        for it in range(1, self.config.iterations + 1):
            report = self.run_iteration(confirmer, workers=workers)
            logger.info(
                "iteration %d: checked=%d correct=%d precision=%.3f lexicon=%d",
                report.iteration,
                report.checked,
                report.correct,
                report.precision,
                report.lexicon_size,
            )
            if it < self.config.iterations:
                self.expand_lexicon()

    @property
    def finished(self) -> bool:
        return self.iterations_done >= self.config.iterations and self.state is None


# -- corpus featurization and the batch entry point -------------------------


def featurize_corpus(
    manifest: CorpusManifest,
    config: FeatureConfig,
    workers: int = 1,
    cache_dir=None,
    external_dir=None,
) -> dict[str, FeatureMatrix]:
    """One feature matrix per utterance, in manifest order.

    With external_dir set, pre-supplied SPTF1 files named <utterance_id>.sptf
    are loaded (and optionally MVN-normalized) instead of computing MFCC/PLP.
    With cache_dir set, computed matrices are written there in that layout.
    """

    def one(utt) -> FeatureMatrix:
        if external_dir is not None:
            path = Path(external_dir) / f"{utt.id}.sptf"
            if not path.exists():
                raise WorkflowError(f"utterance '{utt.id}': missing external feature file {path}")
            feats = load_external_features(path)
            if config.mvn:
                feats = apply_mvn(feats)
            return feats
        samples, rate = read_wav(utt.audio_path)
        return extract_features(samples, rate, config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            mats = list(pool.map(one, manifest.utterances))
    else:
        mats = [one(u) for u in manifest.utterances]
    out = {u.id: m for u, m in zip(manifest.utterances, mats)}
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        for uid, mat in out.items():
            save_features(mat, cache_dir / f"{uid}.sptf")
    return out


def load_feature_cache(
    directory, manifest: CorpusManifest, config: FeatureConfig
) -> dict[str, FeatureMatrix]:
    """Load a featurize cache (one SPTF1 per utterance).

    mfcc/plp caches hold search-ready matrices (MVN already applied when the
    config says so); external caches hold raw imports, so MVN is applied
    here when requested.
    """
    directory = Path(directory)
    out = {}
    for utt in manifest.utterances:
        path = directory / f"{utt.id}.sptf"
        if not path.exists():
            raise WorkflowError(f"utterance '{utt.id}': missing feature file {path}")
        feats = load_external_features(path)
        feats.kind = config.kind
        if config.kind == "external":
            if config.mvn:
                feats = apply_mvn(feats)
        else:
            feats.normalized = config.mvn
        out[utt.id] = feats
    return out


def build_engine(
    manifest: CorpusManifest,
    feature_config: FeatureConfig,
    workflow_config: WorkflowConfig,
    workers: int = 1,
    corpus_features: dict[str, FeatureMatrix] | None = None,
) -> WorkflowEngine:
    """Featurize, select candidate words for the whole schedule, and build
    the engine with its initial lexicon."""
    if corpus_features is None:
        corpus_features = featurize_corpus(manifest, feature_config, workers=workers)
    total_words = workflow_config.initial_words + workflow_config.words_per_iteration * (
        workflow_config.iterations - 1
    )
    candidates = (
        select_lexicon_words(manifest, total_words) if total_words > 0 and manifest.has_transcripts else []
    )
    return WorkflowEngine(manifest, corpus_features, workflow_config, candidates, feature_config)


def run_simulation(
    manifest: CorpusManifest,
    feature_config: FeatureConfig,
    workflow_config: WorkflowConfig,
    workers: int = 1,
) -> tuple[SparseTranscript, list[IterationReport]]:
    """The whole workflow in batch: oracle-confirmed iterations over a
    transcribed, aligned corpus. Fully deterministic for a given input."""
    if not manifest.has_alignments:
        raise WorkflowError("simulation needs gold alignments for the oracle confirmer")
    logger.info(
        "simulation: s=%d +%d/iter n=%d m=%d i=%d",
        workflow_config.initial_words,
        workflow_config.words_per_iteration,
        workflow_config.hits_checked_per_word,
        workflow_config.max_extra_exemplars,
        workflow_config.iterations,
    )
    engine = build_engine(manifest, feature_config, workflow_config, workers=workers)
    confirmer = OracleConfirmer(manifest, workflow_config.overlap_threshold)
    engine.run_all(confirmer, workers=workers)
    return engine.transcript, engine.reports
