"""HTTP session service for the interactive confirmation loop: pending hits,
audio clips for query and candidate, confirmation decisions, iteration
advance, and live reports.

The service is a thin adapter over the workflow engine: running the same
decision sequence through the engine directly yields an identical
transcript. Sessions persist to a directory after every mutation and are
crash-resumable from it.
"""

import io
import json
import logging
import threading
from pathlib import Path

from scipy.io import wavfile

from termspot import lexicon as lexicon_store
from termspot.corpus import load_manifest, slice_audio
from termspot.features import FeatureConfig, extract_span
from termspot.lexicon import Exemplar, LexiconError
from termspot.match import Hit
from termspot.metrics import EvalReport, IterationReport, compose_report
from termspot.workflow import (
    IterationState,
    SparseTranscript,
    WorkflowConfig,
    WorkflowEngine,
    WorkflowError,
    load_feature_cache,
)
from termspot.corpus import select_lexicon_words

logger = logging.getLogger(__name__)

PHASES = ("searching", "awaiting_confirmations", "between_iterations", "finished")


class NotFound(KeyError):
    pass


class PhaseConflict(RuntimeError):
    pass


class Session:
    """One confirmation session: engine + persistence + phase machine.

    All mutations are serialized behind a lock (single-writer); reads take
    the same lock, clip serving is stateless.
    """

    def __init__(self, directory, engine: WorkflowEngine, paths: dict, phase: str):
        self.dir = Path(directory)
        self.id = self.dir.name
        self.engine = engine
        self.paths = paths
        self.phase = phase
        self.lock = threading.RLock()

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, directory, engine: WorkflowEngine, paths: dict) -> "Session":
        session = cls(directory, engine, paths, phase="searching")
        session._search_next()
        session.persist()
        return session

    @classmethod
    def resume(cls, directory) -> "Session":
        directory = Path(directory)
        meta_path = directory / "session.json"
        if not meta_path.exists():
            raise WorkflowError(f"no session at {directory}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        paths = meta["paths"]
        manifest = load_manifest(paths["manifest"], paths.get("alignments"))
        feature_config = FeatureConfig.from_dict(meta["feature_config"])
        workflow_config = WorkflowConfig.from_dict(meta["workflow_config"])
        corpus_features = load_feature_cache(paths["features_dir"], manifest, feature_config)

        candidates = []
        if manifest.has_transcripts:
            total = workflow_config.initial_words + workflow_config.words_per_iteration * (
                workflow_config.iterations - 1
            )
            if total > 0:
                candidates = select_lexicon_words(manifest, total)

        engine = WorkflowEngine(
            manifest, corpus_features, workflow_config, candidates, feature_config, bootstrap=False
        )
        engine.lexicon = lexicon_store.load(directory / "lexicon")
        engine.threshold = meta["threshold"]
        engine.iterations_done = meta["iterations_done"]
        engine.candidates_used = meta["candidates_used"]
        engine.reports = [IterationReport(**r) for r in meta["reports"]]

        presented_path = directory / "presented.jsonl"
        if presented_path.exists():
            with open(presented_path, encoding="utf-8") as fh:
                engine.presented_log = [Hit.from_dict(json.loads(line)) for line in fh if line.strip()]
        engine.rejected_log = [h for h in engine.presented_log if h.status == "rejected"]
        engine.transcript = SparseTranscript(
            [h for h in engine.presented_log if h.status == "confirmed"]
        )

        current = [h for h in engine.presented_log if h.iteration == engine.iterations_done + 1]
        if current:
            state = IterationState(engine.iterations_done + 1, engine.threshold, current)
            state.confirmed = [h for h in current if h.status == "confirmed"]
            state.rejected = [h for h in current if h.status == "rejected"]
            engine.state = state
        return cls(directory, engine, paths, phase=meta["phase"])

    def persist(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        engine = self.engine
        meta = {
            "id": self.id,
            "phase": self.phase,
            "iterations_done": engine.iterations_done,
            "threshold": engine.threshold,
            "candidates_used": engine.candidates_used,
            "reports": [r.to_dict() for r in engine.reports],
            "workflow_config": engine.config.to_dict(),
            "feature_config": engine.feature_config.to_dict() if engine.feature_config else None,
            "paths": self.paths,
        }
        _write_atomic(self.dir / "session.json", json.dumps(meta, indent=2, sort_keys=True))
        _write_atomic(
            self.dir / "presented.jsonl",
            "".join(json.dumps(h.to_dict(), sort_keys=True) + "\n" for h in engine.presented_log),
        )
        write_transcript_files(engine, self.dir)
        lexicon_store.persist(engine.lexicon, self.dir / "lexicon")

    # -- phase machine -------------------------------------------------------

    def _search_next(self) -> None:
        """Run the next iteration's search; lands in awaiting_confirmations,
        or straight in between_iterations when nothing was found."""
        self.phase = "searching"
        state = self.engine.begin_iteration()
        self.phase = "awaiting_confirmations" if state.pending else "between_iterations"

    def session_info(self) -> dict:
        with self.lock:
            engine = self.engine
            if engine.state is not None:
                iteration = engine.state.iteration
                presented = engine.state.presented
                pending = len(engine.state.pending)
                decided = len(presented) - pending
            else:
                iteration = engine.iterations_done
                pending = 0
                decided = engine.reports[-1].checked if engine.reports else 0
            return {
                "id": self.id,
                "phase": self.phase,
                "iteration": iteration,
                "lexicon_size": len(engine.lexicon),
                "pending_count": pending,
                "decided_count": decided,
            }

    def pending_hits(self, limit: int | None = None, group_by_form: bool = False) -> list[Hit]:
        with self.lock:
            if self.phase != "awaiting_confirmations":
                raise PhaseConflict(f"no pending hits in phase '{self.phase}'")
            hits = sorted(
                self.engine.state.pending,
                key=lambda h: (-h.score, h.utterance_id, h.start_frame, h.entry_id),
            )
            if group_by_form:
                best = {}
                for h in hits:
                    best.setdefault(h.entry_id, h.score)
                hits.sort(key=lambda h: (-best[h.entry_id], h.entry_id, -h.score, h.utterance_id, h.start_frame))
            if limit is not None:
                hits = hits[:limit]
            return hits

    def _find_presented(self, hit_id: str) -> Hit:
        for h in self.engine.presented_log:
            if h.hit_id == hit_id:
                return h
        raise NotFound(f"unknown hit '{hit_id}'")

    def decide(self, hit_id: str, decision: str) -> Hit:
        if decision not in ("confirm", "reject"):
            raise ValueError(f"decision must be confirm or reject, got '{decision}'")
        with self.lock:
            hit = self._find_presented(hit_id)
            wanted = "confirmed" if decision == "confirm" else "rejected"
            if hit.status == wanted:
                return hit  # idempotent replay
            if hit.status != "pending":
                raise PhaseConflict(f"hit {hit_id} already decided: {hit.status}")
            if self.phase != "awaiting_confirmations":
                raise PhaseConflict(f"decisions not accepted in phase '{self.phase}'")
            self.engine.apply_decision(hit, decision == "confirm")
            if not self.engine.state.pending:
                self.phase = "between_iterations"
            self.persist()
            return hit

    def advance(self, new_words: list[dict] | None = None) -> dict:
        with self.lock:
            if self.phase == "finished":
                raise PhaseConflict("session is finished")
            if self.engine.state is not None and self.engine.state.pending:
                raise PhaseConflict(f"{len(self.engine.state.pending)} undecided")
            if self.engine.state is not None:
                self.engine.complete_iteration()
            if self.engine.iterations_done >= self.engine.config.iterations:
                self.phase = "finished"
            else:
                self.engine.expand_lexicon(self._build_new_words(new_words))
                self._search_next()
            self.persist()
            return self.session_info()

    def _build_new_words(self, new_words: list[dict] | None):
        if not new_words:
            return None
        built = []
        for rec in new_words:
            form = rec["form"]
            utt_id = rec["utterance_id"]
            if utt_id not in self.engine.manifest.by_id:
                raise NotFound(f"unknown utterance '{utt_id}'")
            feats = extract_span(self.engine.corpus_features[utt_id], rec["start"], rec["end"])
            if feats.frames < 2:
                raise ValueError(f"new word '{form}': span too short for an exemplar")
            built.append(
                (
                    form,
                    Exemplar(
                        id=f"{form}~0",
                        source="seed",
                        speaker=self.engine.manifest.by_id[utt_id].speaker,
                        features=feats,
                        utterance_id=utt_id,
                        span=(rec["start"], rec["end"]),
                    ),
                )
            )
        return built

    # -- clips ---------------------------------------------------------------

    def clip_query(self, exemplar_id: str, context: float = 0.0) -> tuple[bytes, float, float]:
        exemplar = self.engine.lexicon.find_exemplar(exemplar_id)  # LexiconError -> 404
        if exemplar.utterance_id is None:
            samples, rate = _read_isolated(exemplar)
            return _wav_bytes(samples, rate), 0.0, len(samples) / rate
        utt = self.engine.manifest.by_id[exemplar.utterance_id]
        start, end = exemplar.span
        samples, rate = slice_audio(utt, start, end, context)
        clip_start = max(0.0, start - context)
        return _wav_bytes(samples, rate), start - clip_start, end - clip_start

    def clip_hit(self, hit_id: str, context: float = 0.5) -> tuple[bytes, float, float]:
        with self.lock:
            hit = self._find_presented(hit_id)
        utt = self.engine.manifest.by_id[hit.utterance_id]
        samples, rate = slice_audio(utt, hit.start, hit.end, context)
        clip_start = max(0.0, hit.start - context)
        clip_end = min(utt.duration, hit.end + context)
        return _wav_bytes(samples, rate), hit.start - clip_start, min(hit.end, clip_end) - clip_start

    # -- reporting -----------------------------------------------------------

    def report(self, top_fp: int = 6) -> tuple[EvalReport, bool]:
        with self.lock:
            engine = self.engine
            rep = compose_report(
                engine.reports,
                engine.transcript.tokens,
                engine.lexicon,
                engine.manifest,
                engine.rejected_log,
                engine.config.overlap_threshold,
                top_fp,
            )
            return rep, self.phase != "finished"


def _read_isolated(exemplar: Exemplar):
    from termspot.corpus import read_wav

    if not exemplar.audio_path:
        raise NotFound(f"exemplar '{exemplar.id}' has no audio")
    return read_wav(Path(exemplar.audio_path))


def _wav_bytes(samples, rate: int) -> bytes:
    buf = io.BytesIO()
    wavfile.write(buf, rate, samples)
    return buf.getvalue()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_transcript_files(engine: WorkflowEngine, directory) -> None:
    """The external transcript format plus the rejected-hits audit file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def row(h: Hit) -> str:
        return (
            json.dumps(
                {
                    "utterance_id": h.utterance_id,
                    "form": h.entry_id,
                    "start": h.start,
                    "end": h.end,
                    "score": h.score,
                    "iteration": h.iteration,
                },
                sort_keys=True,
            )
            + "\n"
        )

    _write_atomic(directory / "transcript.jsonl", "".join(row(h) for h in engine.transcript.tokens))
    _write_atomic(directory / "rejected.jsonl", "".join(row(h) for h in engine.rejected_log))


# -- HTTP layer ---------------------------------------------------------------


def create_app(session: Session):
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="termspot confirmation service")

    def problem(status: int, code: str, detail: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": code, "detail": detail})

    @app.exception_handler(NotFound)
    async def _nf(request: Request, exc: NotFound):
        return problem(404, "not_found", str(exc.args[0]) if exc.args else str(exc))

    @app.exception_handler(LexiconError)
    async def _lex(request: Request, exc: LexiconError):
        msg = str(exc)
        if msg.startswith("unknown"):
            return problem(404, "not_found", msg)
        return problem(409, "conflict", msg)

    @app.exception_handler(PhaseConflict)
    async def _pc(request: Request, exc: PhaseConflict):
        return problem(409, "conflict", str(exc))

    @app.exception_handler(WorkflowError)
    async def _wf(request: Request, exc: WorkflowError):
        return problem(409, "conflict", str(exc))

    @app.exception_handler(ValueError)
    async def _val(request: Request, exc: ValueError):
        return problem(422, "validation", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _rv(request: Request, exc: RequestValidationError):
        return problem(422, "validation", str(exc))

    def hit_json(h: Hit) -> dict:
        return {
            "hit_id": h.hit_id,
            "form": h.entry_id,
            "utterance_id": h.utterance_id,
            "start": h.start,
            "end": h.end,
            "score": h.score,
            "status": h.status,
            "exemplar_id": h.exemplar_id,
        }

    @app.get("/api/session")
    def get_session():
        return session.session_info()

    @app.get("/api/hits/pending")
    def get_pending(limit: int | None = None, group: bool = False):
        return [hit_json(h) for h in session.pending_hits(limit, group_by_form=group)]

    @app.post("/api/hits/{hit_id}/decision")
    async def post_decision(hit_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            return problem(422, "validation", "body must be JSON")
        if not isinstance(body, dict) or body.get("decision") not in ("confirm", "reject"):
            return problem(422, "validation", 'body must be {"decision": "confirm"|"reject"}')
        hit = session.decide(hit_id, body["decision"])
        return hit_json(hit)

    @app.get("/api/clips/query/{exemplar_id}")
    def get_query_clip(exemplar_id: str, context: float = 0.0):
        blob, h_start, h_end = session.clip_query(exemplar_id, context)
        return Response(
            content=blob,
            media_type="audio/wav",
            headers={"X-Highlight-Start": f"{h_start:.6f}", "X-Highlight-End": f"{h_end:.6f}"},
        )

    @app.get("/api/clips/hit/{hit_id}")
    def get_hit_clip(hit_id: str, context: float = 0.5):
        blob, h_start, h_end = session.clip_hit(hit_id, context)
        return Response(
            content=blob,
            media_type="audio/wav",
            headers={"X-Highlight-Start": f"{h_start:.6f}", "X-Highlight-End": f"{h_end:.6f}"},
        )

    @app.post("/api/iteration/advance")
    async def post_advance(request: Request):
        body = {}
        if await request.body():
            try:
                body = await request.json()
            except Exception:
                return problem(422, "validation", "body must be JSON")
        new_words = body.get("new_words") if isinstance(body, dict) else None
        return session.advance(new_words)

    @app.get("/api/report")
    def get_report(top_fp: int = 6):
        rep, in_progress = session.report(top_fp)
        payload = rep.to_dict()
        if not session.engine.manifest.has_alignments:
            payload.pop("final_recall", None)
            payload.pop("false_positives", None)
        payload["in_progress"] = in_progress
        return payload

    ui_dir = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
    if ui_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
