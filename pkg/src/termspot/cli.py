"""Command-line entry points: featurize, prepare, simulate, serve, report.

All commands are deterministic: identical inputs and flags produce
byte-identical artifacts (no timestamps, no random seeds anywhere).
Exit codes: 0 success, 1 user error, 2 internal error.
"""

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from termspot import lexicon as lexicon_store
from termspot.corpus import (
    CorpusError,
    DEFAULT_VOWELS,
    load_manifest,
    select_lexicon_words,
)
from termspot.features import FeatureConfig, FeatureError, load_external_features
from termspot.lexicon import Exemplar, LexiconError
from termspot.match import Hit, MatchError
from termspot.metrics import IterationReport, compose_report, render_report
from termspot.workflow import (
    OracleConfirmer,
    WorkflowConfig,
    WorkflowError,
    build_engine,
    featurize_corpus,
    load_feature_cache,
)

logger = logging.getLogger(__name__)

USER_ERRORS = (CorpusError, FeatureError, LexiconError, MatchError, WorkflowError, FileNotFoundError, ValueError, KeyError)


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", default="mfcc", choices=["mfcc", "plp", "external"])
    p.add_argument("--mvn", action="store_true", help="apply per-utterance mean-variance normalization")
    p.add_argument("--deltas", action="store_true", help="append first/second order deltas")
    p.add_argument("--frame-length", type=float, default=0.025)
    p.add_argument("--frame-shift", type=float, default=0.010)
    p.add_argument("--num-coefficients", type=int, default=13)
    p.add_argument("--num-filters", type=int, default=None)
    p.add_argument("--pre-emphasis", type=float, default=0.97)


def _feature_config(args) -> FeatureConfig:
    return FeatureConfig(
        kind=args.features,
        frame_length=args.frame_length,
        frame_shift=args.frame_shift,
        num_coefficients=args.num_coefficients,
        num_filters=args.num_filters,
        pre_emphasis=args.pre_emphasis,
        add_deltas=args.deltas,
        mvn=args.mvn,
    )


def _workflow_config(args) -> WorkflowConfig:
    raw = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = WorkflowConfig.from_dict(raw)
    overrides = {
        "initial_words": "initial_words",
        "words_per_iteration": "words_per_iteration",
        "iterations": "iterations",
        "hits_per_word": "hits_checked_per_word",
        "max_extra_exemplars": "max_extra_exemplars",
        "overlap_threshold": "overlap_threshold",
    }
    values = config.to_dict()
    for flag, field in overrides.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[field] = v
    if getattr(args, "min_score", None) is not None:
        values["search"]["min_score"] = args.min_score
    if getattr(args, "max_hits_per_utterance", None) is not None:
        values["search"]["max_hits_per_utterance"] = args.max_hits_per_utterance
    return WorkflowConfig.from_dict(values)


def cmd_featurize(args) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    config = _feature_config(args)
    if args.features == "external":
        # validate pre-supplied SPTF1 files instead of computing
        for utt in manifest.utterances:
            path = out / f"{utt.id}.sptf"
            if not path.exists():
                raise FeatureError(f"utterance '{utt.id}': missing external feature file {path}")
            load_external_features(path)
        print(f"validated {len(manifest.utterances)} external feature files in {out}")
        return 0
    featurize_corpus(manifest, config, workers=args.workers, cache_dir=out)
    print(f"wrote {len(manifest.utterances)} feature files to {out}")
    return 0


def cmd_prepare(args) -> int:
    manifest = load_manifest(args.manifest, args.alignments)
    if not manifest.has_alignments:
        raise CorpusError("prepare needs gold word alignments for seed exemplars")
    candidates = select_lexicon_words(
        manifest, args.top_k, min_syllables=args.min_syllables, vowels=args.vowels
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "candidates": [
            {
                "form": c.form,
                "frequency": c.frequency,
                "seed": {
                    "utterance_id": c.seed.utterance_id,
                    "word": c.seed.word,
                    "start": c.seed.start,
                    "end": c.seed.end,
                },
            }
            for c in candidates
        ]
    }
    (out / "candidates.json").write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
    )
    print(f"wrote {len(candidates)} candidates to {out / 'candidates.json'}")

    if args.initial_words > 0:
        if not args.features_dir:
            raise WorkflowError("--initial-words needs --features-dir")
        feature_config = FeatureConfig(kind=args.cache_kind, mvn=args.cache_mvn)
        feats = load_feature_cache(args.features_dir, manifest, feature_config)
        from termspot.features import extract_span
        from termspot.lexicon import Lexicon

        lex = Lexicon()
        for cand in candidates[: args.initial_words]:
            span_feats = extract_span(feats[cand.seed.utterance_id], cand.seed.start, cand.seed.end)
            if span_feats.frames < 2:
                logger.warning("seed for '%s' too short, skipped", cand.form)
                continue
            lex.add_entry(
                cand.form,
                Exemplar(
                    id=f"{cand.form}~0",
                    source="seed",
                    speaker=manifest.by_id[cand.seed.utterance_id].speaker,
                    features=span_feats,
                    utterance_id=cand.seed.utterance_id,
                    span=(cand.seed.start, cand.seed.end),
                ),
            )
        lexicon_store.persist(lex, out / "lexicon")
        print(f"wrote {len(lex)}-entry initial lexicon to {out / 'lexicon'}")
    return 0


def _persist_run(engine, out: Path, paths: dict, phase: str) -> None:
    from termspot.service import Session

    session = Session(out, engine, paths, phase=phase)
    session.persist()


def cmd_simulate(args) -> int:
    manifest = load_manifest(args.manifest, args.alignments)
    feature_config = _feature_config(args)
    workflow_config = _workflow_config(args)
    print(
        "protocol: s=%d +%d/iteration n=%d m=%d i=%d overlap_threshold=%.2f features=%s mvn=%s"
        % (
            workflow_config.initial_words,
            workflow_config.words_per_iteration,
            workflow_config.hits_checked_per_word,
            workflow_config.max_extra_exemplars,
            workflow_config.iterations,
            workflow_config.overlap_threshold,
            feature_config.kind,
            "yes" if feature_config.mvn else "no",
        )
    )
    if args.features_dir:
        corpus_features = load_feature_cache(args.features_dir, manifest, feature_config)
    else:
        corpus_features = featurize_corpus(manifest, feature_config, workers=args.workers)
    engine = build_engine(
        manifest, feature_config, workflow_config, workers=args.workers, corpus_features=corpus_features
    )
    confirmer = OracleConfirmer(manifest, workflow_config.overlap_threshold)
    engine.run_all(confirmer, workers=args.workers)

    out = Path(args.out)
    paths = {
        "manifest": str(Path(args.manifest).resolve()),
        "alignments": str(Path(args.alignments).resolve()) if args.alignments else None,
        "features_dir": str(Path(args.features_dir).resolve()) if args.features_dir else None,
    }
    _persist_run(engine, out, paths, phase="finished")
    report = compose_report(
        engine.reports,
        engine.transcript.tokens,
        engine.lexicon,
        manifest,
        engine.rejected_log,
        workflow_config.overlap_threshold,
        args.top_fp,
    )
    _write_report(report, out, feature_config.kind, feature_config.mvn, in_progress=False)
    text = render_report(report, feature_config.kind, feature_config.mvn)
    print(text, end="")
    print(f"artifacts in {out}")
    return 0


def _write_report(report, out: Path, feature_label: str, mvn: bool, in_progress: bool) -> None:
    payload = report.to_dict()
    payload["in_progress"] = in_progress
    (out / "report.json").write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
    )
    text = render_report(report, feature_label, mvn)
    if in_progress:
        text = "(in progress)\n" + text
    (out / "report.txt").write_text(text, encoding="utf-8")


def cmd_serve(args) -> int:
    from termspot.service import Session, create_app

    session_dir = Path(args.session)
    if (session_dir / "session.json").exists():
        session = Session.resume(session_dir)
        print(f"resumed session {session.id} in phase {session.phase}")
    else:
        if not args.manifest or not args.features_dir:
            raise WorkflowError("new session needs --manifest and --features-dir")
        manifest = load_manifest(args.manifest, args.alignments)
        feature_config = _feature_config(args)
        workflow_config = _workflow_config(args)
        corpus_features = load_feature_cache(args.features_dir, manifest, feature_config)
        engine = build_engine(
            manifest, feature_config, workflow_config, corpus_features=corpus_features
        )
        if args.lexicon:
            engine.lexicon = lexicon_store.load(args.lexicon)
        paths = {
            "manifest": str(Path(args.manifest).resolve()),
            "alignments": str(Path(args.alignments).resolve()) if args.alignments else None,
            "features_dir": str(Path(args.features_dir).resolve()),
        }
        session = Session.create(session_dir, engine, paths)
        print(f"created session {session.id}")

    import uvicorn

    app = create_app(session)
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except SystemExit as exc:
        raise WorkflowError(f"server failed to start (port {args.port} in use?)") from exc
    return 0


def cmd_report(args) -> int:
    session_dir = Path(args.session)
    meta_path = session_dir / "session.json"
    if not meta_path.exists():
        raise WorkflowError(f"no session at {session_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    manifest = load_manifest(meta["paths"]["manifest"], meta["paths"].get("alignments"))
    lexicon = lexicon_store.load(session_dir / "lexicon")

    presented: list[Hit] = []
    presented_path = session_dir / "presented.jsonl"
    if presented_path.exists():
        with open(presented_path, encoding="utf-8") as fh:
            presented = [Hit.from_dict(json.loads(line)) for line in fh if line.strip()]

    # recompute per-iteration precision from the presentation log; thresholds
    # and lexicon sizes are run-time facts carried in session.json
    stored = {r["iteration"]: r for r in meta["reports"]}
    by_iter: dict[int, list[Hit]] = {}
    for h in presented:
        by_iter.setdefault(h.iteration, []).append(h)
    reports = []
    for it in sorted(stored):
        hits = by_iter.get(it, [])
        reports.append(
            IterationReport.from_counts(
                iteration=it,
                checked=len(hits),
                correct=sum(1 for h in hits if h.status == "confirmed"),
                threshold=stored[it]["threshold"],
                lexicon_size=stored[it]["lexicon_size"],
            )
        )
    confirmed = [h for h in presented if h.status == "confirmed"]
    rejected = [h for h in presented if h.status == "rejected"]
    overlap = meta["workflow_config"].get("overlap_threshold", 0.3)
    report = compose_report(reports, confirmed, lexicon, manifest, rejected, overlap, args.top_fp)

    feature_kind = (meta.get("feature_config") or {}).get("kind", "external")
    feature_mvn = bool((meta.get("feature_config") or {}).get("mvn", False))
    in_progress = meta.get("phase") != "finished"
    out = Path(args.out) if args.out else session_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_report(report, out, feature_kind, feature_mvn, in_progress)
    text = render_report(report, feature_kind, feature_mvn)
    if in_progress:
        text = "(in progress)\n" + text
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="termspot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="extract features for every utterance into a cache dir")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_feature_flags(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("prepare", help="select lexicon candidate words and build the initial lexicon")
    p.add_argument("--manifest", required=True)
    p.add_argument("--alignments", required=True)
    p.add_argument("--features-dir", help="feature cache (needed with --initial-words)")
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, required=True)
    p.add_argument("--min-syllables", type=int, default=3)
    p.add_argument("--vowels", default=DEFAULT_VOWELS)
    p.add_argument("--initial-words", type=int, default=0)
    p.add_argument("--cache-kind", default="mfcc", choices=["mfcc", "plp", "external"])
    p.add_argument("--cache-mvn", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("simulate", help="run the full oracle-confirmed workflow")
    p.add_argument("--manifest", required=True)
    p.add_argument("--alignments", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="workflow config JSON")
    p.add_argument("--features-dir", help="reuse a feature cache instead of extracting")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--top-fp", type=int, default=6)
    p.add_argument("--initial-words", type=int)
    p.add_argument("--words-per-iteration", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--hits-per-word", type=int)
    p.add_argument("--max-extra-exemplars", type=int)
    p.add_argument("--overlap-threshold", type=float)
    p.add_argument("--min-score", type=float)
    p.add_argument("--max-hits-per-utterance", type=int)
    _add_feature_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the interactive confirmation service")
    p.add_argument("--session", required=True)
    p.add_argument("--manifest")
    p.add_argument("--alignments")
    p.add_argument("--features-dir")
    p.add_argument("--lexicon", help="initial lexicon dir from prepare")
    p.add_argument("--config", help="workflow config JSON")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8630)
    p.add_argument("--initial-words", type=int)
    p.add_argument("--words-per-iteration", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--hits-per-word", type=int)
    p.add_argument("--max-extra-exemplars", type=int)
    p.add_argument("--overlap-threshold", type=float)
    _add_feature_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="recompute and render metrics from a session directory")
    p.add_argument("--session", required=True)
    p.add_argument("--out")
    p.add_argument("--top-fp", type=int, default=6)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
