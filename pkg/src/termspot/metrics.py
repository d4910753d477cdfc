"""Run metrics: per-iteration precision, average precision, final recall,
same/different-speaker retrieval counts, and the top false-positive table.

All functions are pure over the run artifacts, so a report recomputed from a
persisted session directory equals the one produced live.
"""

import logging
from dataclasses import dataclass, field

from termspot.corpus import CorpusManifest
from termspot.lexicon import Lexicon, LexiconError
from termspot.match import Hit

logger = logging.getLogger(__name__)

NO_GOLD_WORD = "∅"  # rejected hit over silence or untranscribed audio


@dataclass
class IterationReport:
    """Precision bookkeeping for one workflow iteration."""

    iteration: int
    checked: int
    correct: int
    precision: float
    threshold: float | None
    lexicon_size: int

    def __post_init__(self):
        if not 0 <= self.correct <= self.checked:
            raise ValueError(f"correct={self.correct} outside [0, checked={self.checked}]")

    @classmethod
    def from_counts(cls, iteration, checked, correct, threshold, lexicon_size):
        precision = correct / checked if checked else 0.0
        return cls(iteration, checked, correct, precision, threshold, lexicon_size)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "checked": self.checked,
            "correct": self.correct,
            "precision": self.precision,
            "threshold": self.threshold,
            "lexicon_size": self.lexicon_size,
        }


@dataclass
class EvalReport:
    """Everything the run reports at the end."""

    average_precision: float
    final_recall: float | None
    same_speaker_retrieved: int
    different_speaker_retrieved: int
    false_positives: list[tuple[str, str, float]]
    iterations: list[IterationReport] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "average_precision": self.average_precision,
            "final_recall": self.final_recall,
            "iterations": [r.to_dict() for r in self.iterations],
            "speaker_breakdown": {
                "same": self.same_speaker_retrieved,
                "different": self.different_speaker_retrieved,
            },
            "false_positives": [
                {"query": q, "gold": g, "score": s} for q, g, s in self.false_positives
            ],
        }


def interval_iou(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    inter = min(a_end, b_end) - max(a_start, b_start)
    if inter <= 0:
        return 0.0
    union = max(a_end, b_end) - min(a_start, b_start)
    return inter / union


def average_precision(reports: list[IterationReport]) -> float:
    """Mean of the per-iteration precisions, as a percentage."""
    if not reports:
        raise ValueError("no iteration reports")
    return 100.0 * sum(r.precision for r in reports) / len(reports)


def final_recall(
    transcript_tokens: list[Hit],
    lexicon: Lexicon,
    manifest: CorpusManifest,
    overlap_threshold: float = 0.3,
) -> float | None:
    """Retrieved tokens over all retrievable tokens, as a percentage.

    Retrievable = gold tokens whose word form is an entry of the final
    lexicon. A gold token counts as retrieved when a confirmed transcript
    token of the same form overlaps it at IoU >= overlap_threshold; the
    matching is one-to-one, greedy by transcript score. Returns None
    (undefined, not 0) when nothing is retrievable.
    """
    forms = lexicon.forms
    gold: list[tuple[str, int, str, float, float]] = []  # (utt, idx, word, start, end)
    for utt in manifest.utterances:
        alis = manifest.alignments_for(utt.id)
        if not alis and utt.transcript and any(w in forms for w in utt.transcript):
            logger.warning(
                "utterance '%s' mentions lexicon words but has no alignments; "
                "its tokens are excluded from the recall denominator",
                utt.id,
            )
            continue
        for idx, ali in enumerate(alis):
            if ali.word in forms:
                gold.append((utt.id, idx, ali.word, ali.start, ali.end))
    if not gold:
        logger.warning("no retrievable tokens: recall undefined")
        return None

    by_utt_form: dict[tuple[str, str], list[tuple[int, float, float]]] = {}
    for utt_id, idx, word, start, end in gold:
        by_utt_form.setdefault((utt_id, word), []).append((idx, start, end))

    used: set[tuple[str, int]] = set()
    matched = 0
    ordered = sorted(transcript_tokens, key=lambda h: (-h.score, h.utterance_id, h.start_frame))
    for tok in ordered:
        candidates = by_utt_form.get((tok.utterance_id, tok.entry_id), [])
        best = None
        for idx, g_start, g_end in candidates:
            if (tok.utterance_id, idx) in used:
                continue
            iou = interval_iou(tok.start, tok.end, g_start, g_end)
            if iou >= overlap_threshold and (best is None or iou > best[0]):
                best = (iou, idx)
        if best is not None:
            used.add((tok.utterance_id, best[1]))
            matched += 1
    return 100.0 * matched / len(gold)


def speaker_breakdown(
    transcript_tokens: list[Hit], lexicon: Lexicon, manifest: CorpusManifest
) -> tuple[int, int]:
    """(same, different) speaker counts between each retrieved token's
    utterance and the exemplar that produced its winning score."""
    same = different = 0
    for tok in transcript_tokens:
        exemplar = lexicon.find_exemplar(tok.exemplar_id)  # raises on dangling id
        utt = manifest.by_id.get(tok.utterance_id)
        if utt is None:
            raise LexiconError(f"token references unknown utterance '{tok.utterance_id}'")
        if utt.speaker == exemplar.speaker:
            same += 1
        else:
            different += 1
    return same, different


def false_positive_table(
    rejected: list[Hit], manifest: CorpusManifest, top_k: int = 6
) -> list[tuple[str, str, float]]:
    """(query form, most-overlapped gold word, score) for the top rejected hits.

    The gold word is the one with maximal temporal overlap in the hit's
    utterance, or the empty-set mark for silence/untranscribed regions.
    """
    rows = []
    for hit in sorted(rejected, key=lambda h: (-h.score, h.entry_id, h.utterance_id, h.start_frame)):
        best_word = NO_GOLD_WORD
        best_overlap = 0.0
        for ali in manifest.alignments_for(hit.utterance_id):
            overlap = min(hit.end, ali.end) - max(hit.start, ali.start)
            if overlap > best_overlap:
                best_overlap = overlap
                best_word = ali.word
        rows.append((hit.entry_id, best_word, hit.score))
    return rows[:top_k]


def compose_report(
    reports: list[IterationReport],
    transcript_tokens: list[Hit],
    lexicon: Lexicon,
    manifest: CorpusManifest,
    rejected: list[Hit],
    overlap_threshold: float = 0.3,
    top_fp: int = 6,
) -> EvalReport:
    """Assemble the full report from run artifacts; recall and the
    false-positive table are only meaningful with gold alignments."""
    ap = average_precision(reports) if reports else 0.0
    recall = (
        final_recall(transcript_tokens, lexicon, manifest, overlap_threshold)
        if manifest.has_alignments
        else None
    )
    same, different = speaker_breakdown(transcript_tokens, lexicon, manifest)
    fps = false_positive_table(rejected, manifest, top_fp) if manifest.has_alignments else []
    return EvalReport(
        average_precision=ap,
        final_recall=recall,
        same_speaker_retrieved=same,
        different_speaker_retrieved=different,
        false_positives=fps,
        iterations=list(reports),
    )


def render_report(report: EvalReport, feature_label: str, mvn: bool) -> str:
    """Plain-text rendering: one results row plus the false-positive table."""
    lines = []
    lines.append("Features    | MVN | AP    | final recall")
    lines.append("------------+-----+-------+-------------")
    recall = "n/a" if report.final_recall is None else f"{report.final_recall:.2f}"
    lines.append(f"{feature_label:<11} | {'yes' if mvn else 'no':<3} | {report.average_precision:.2f} | {recall}")
    lines.append("")
    lines.append("Same-speaker retrieved:      %d" % report.same_speaker_retrieved)
    lines.append("Different-speaker retrieved: %d" % report.different_speaker_retrieved)
    lines.append("")
    lines.append("Query        | False Positive | score")
    lines.append("-------------+----------------+------")
    for query, gold, score in report.false_positives:
        lines.append(f"{query:<12} | {gold:<14} | {score:.3f}")
    lines.append("")
    lines.append("Per-iteration precision:")
    for r in report.iterations:
        thr = "-" if r.threshold is None else f"{r.threshold:.3f}"
        lines.append(
            f"  iteration {r.iteration}: checked={r.checked} correct={r.correct} "
            f"precision={r.precision:.3f} threshold={thr} lexicon={r.lexicon_size}"
        )
    return "\n".join(lines) + "\n"
