"""Speech collection ingestion: manifest + alignment files, word lists, audio slicing.

The collection is described by a UTF-8 JSON manifest
(``{"utterances": [{"id", "audio", "speaker", "transcript"}]}``) and an
optional tab-separated alignment file with one gold token per row:
``utterance_id<TAB>word<TAB>start_seconds<TAB>end_seconds``.
Audio must be mono PCM WAV, 16-bit integer or 32-bit float.
"""

import json
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

logger = logging.getLogger(__name__)

# Vowel runs approximate syllables; accented forms cover the orthographies we
# expect to meet in fieldwork data.
DEFAULT_VOWELS = "aeiouáàâéèêíìîóòôúùû"

# Guard against float slop when converting seconds to sample indices
# (e.g. 0.1 * 16000 -> 1600.0000000000002 must not become sample 1601).
_SAMPLE_EPS = 1e-3


class CorpusError(ValueError):
    """Raised for malformed manifests, alignments, or unusable audio."""


@dataclass
class Utterance:
    """One audio file of the collection."""

    id: str
    audio_path: Path
    speaker: str
    transcript: list[str] | None
    sample_rate: int
    duration: float


@dataclass
class WordAlignment:
    """A gold word token with its time span inside an utterance."""

    utterance_id: str
    word: str
    start: float
    end: float


@dataclass
class LexiconCandidate:
    """A word selected for the lexicon plus the gold token seeding its first exemplar."""

    form: str
    frequency: int
    seed: WordAlignment


@dataclass
class CorpusManifest:
    """Validated collection: utterances plus optional gold word alignments."""

    utterances: list[Utterance]
    alignments: list[WordAlignment] = field(default_factory=list)

    def __post_init__(self):
        self.by_id = {u.id: u for u in self.utterances}
        self._alignments_by_utterance: dict[str, list[WordAlignment]] = {}
        for ali in self.alignments:
            self._alignments_by_utterance.setdefault(ali.utterance_id, []).append(ali)

    @property
    def has_transcripts(self) -> bool:
        return any(u.transcript is not None for u in self.utterances)

    @property
    def has_alignments(self) -> bool:
        return bool(self.alignments)

    def alignments_for(self, utterance_id: str) -> list[WordAlignment]:
        return self._alignments_by_utterance.get(utterance_id, [])


def probe_wav(path: Path) -> tuple[int, int]:
    """Read WAV header only; return (sample_rate, n_samples).

    Accepts mono 16-bit integer PCM (format 1) or 32-bit float PCM
    (format 3). Anything else, including multi-channel files, is rejected.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            riff = fh.read(12)
            if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
                raise CorpusError(f"{path}: not a RIFF/WAVE file")
            fmt = None
            data_size = None
            while True:
                head = fh.read(8)
                if len(head) < 8:
                    break
                chunk_id, size = head[:4], struct.unpack("<I", head[4:])[0]
                if chunk_id == b"fmt ":
                    fmt = struct.unpack("<HHIIHH", fh.read(16))
                    fh.seek(size - 16, 1)
                elif chunk_id == b"data":
                    data_size = size
                    fh.seek(size + (size & 1), 1)
                else:
                    fh.seek(size + (size & 1), 1)
    except OSError as exc:
        raise CorpusError(f"{path}: unreadable audio ({exc})") from exc
    if fmt is None or data_size is None:
        raise CorpusError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, block_align, bits = fmt
    if channels != 1:
        raise CorpusError(f"{path}: {channels} channels, expected mono")
    if (audio_format, bits) not in ((1, 16), (3, 32)):
        raise CorpusError(
            f"{path}: unsupported sample format (format={audio_format}, bits={bits}); "
            "need 16-bit integer or 32-bit float PCM"
        )
    n_samples = data_size // block_align
    if n_samples == 0:
        raise CorpusError(f"{path}: empty audio")
    return sample_rate, n_samples


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    """Load a mono PCM WAV; returns (samples, sample_rate) with dtype preserved."""
    probe_wav(path)  # consistent errors for bad headers / multi-channel
    rate, samples = wavfile.read(path)
    return samples, rate


def load_manifest(path, alignments_path=None) -> CorpusManifest:
    """Load and validate a corpus manifest, probing every referenced audio file.

    Args:
        path: JSON manifest file.
        alignments_path: optional TSV alignment file (see module docstring).

    Raises:
        CorpusError: missing file, malformed record, dangling utterance_id,
            empty alignment span, or unreadable audio. Messages name the
            offending record or line.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(raw, dict) or "utterances" not in raw:
        raise CorpusError(f"malformed manifest {path}: missing 'utterances' key")

    utterances = []
    seen = set()
    for i, rec in enumerate(raw["utterances"]):
        try:
            utt_id = rec["id"]
            audio = rec["audio"]
            speaker = rec["speaker"]
            transcript = rec.get("transcript")
        except (TypeError, KeyError) as exc:
            raise CorpusError(f"{path}: malformed record at utterances[{i}]: {exc}") from exc
        if utt_id in seen:
            raise CorpusError(f"{path}: duplicate utterance id '{utt_id}' at utterances[{i}]")
        seen.add(utt_id)
        audio_path = Path(audio)
        if not audio_path.is_absolute():
            audio_path = path.parent / audio_path
        if not audio_path.exists():
            raise CorpusError(f"utterance '{utt_id}': unreadable audio, file missing: {audio_path}")
        sample_rate, n_samples = probe_wav(audio_path)
        words = transcript.split() if isinstance(transcript, str) else None
        utterances.append(
            Utterance(
                id=utt_id,
                audio_path=audio_path,
                speaker=speaker,
                transcript=words,
                sample_rate=sample_rate,
                duration=n_samples / sample_rate,
            )
        )

    manifest = CorpusManifest(utterances)
    if alignments_path is not None:
        manifest = CorpusManifest(utterances, _load_alignments(Path(alignments_path), manifest))
    logger.info(
        "loaded corpus: %d utterances, %d alignments", len(manifest.utterances), len(manifest.alignments)
    )
    return manifest


def _load_alignments(path: Path, manifest: CorpusManifest) -> list[WordAlignment]:
    if not path.exists():
        raise CorpusError(f"alignment file not found: {path}")
    alignments = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: malformed record, expected 4 tab-separated fields")
            utt_id, word, start_s, end_s = parts
            if utt_id not in manifest.by_id:
                raise CorpusError(f"{path}:{lineno}: dangling utterance_id '{utt_id}'")
            if not word:
                raise CorpusError(f"{path}:{lineno}: empty word")
            try:
                start, end = float(start_s), float(end_s)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record, bad number: {exc}") from exc
            if not 0.0 <= start < end:
                raise CorpusError(f"{path}:{lineno}: empty span (start={start}, end={end})")
            if end > manifest.by_id[utt_id].duration + 1e-6:
                raise CorpusError(
                    f"{path}:{lineno}: span ends at {end}s, beyond utterance "
                    f"duration {manifest.by_id[utt_id].duration:.3f}s"
                )
            alignments.append(WordAlignment(utt_id, word, start, end))
    # establish the per-utterance ordering invariant
    order = {u.id: i for i, u in enumerate(manifest.utterances)}
    alignments.sort(key=lambda a: (order[a.utterance_id], a.start, a.end))
    return alignments


def count_syllables(word: str, vowels: str = DEFAULT_VOWELS) -> int:
    """Number of maximal vowel runs in the word (case-insensitive)."""
    vowel_set = set(vowels.lower())
    runs = 0
    in_run = False
    for ch in word.lower():
        if ch in vowel_set:
            if not in_run:
                runs += 1
            in_run = True
        else:
            in_run = False
    return runs


def select_lexicon_words(
    manifest: CorpusManifest,
    top_k: int,
    min_syllables: int = 3,
    vowels: str = DEFAULT_VOWELS,
) -> list[LexiconCandidate]:
    """Pick up to top_k most frequent words with enough syllables.

    Token frequencies come from the transcripts; ties break
    lexicographically. Each candidate carries the temporally first aligned
    token in corpus order as its seed exemplar span, so only words with at
    least one gold alignment qualify.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if not manifest.has_transcripts:
        raise CorpusError("manifest has no transcripts; cannot build a word list")

    counts = Counter()
    for utt in manifest.utterances:
        if utt.transcript:
            counts.update(utt.transcript)

    first_token: dict[str, WordAlignment] = {}
    for utt in manifest.utterances:
        for ali in manifest.alignments_for(utt.id):
            if ali.word not in first_token:
                first_token[ali.word] = ali

    qualifying = []
    for word, freq in counts.items():
        if count_syllables(word, vowels) < min_syllables:
            continue
        if word not in first_token:
            logger.warning("word '%s' has no gold alignment, skipping as lexicon candidate", word)
            continue
        qualifying.append((word, freq))
    qualifying.sort(key=lambda wf: (-wf[1], wf[0]))

    if len(qualifying) < top_k:
        logger.warning("only %d qualifying words for top_k=%d", len(qualifying), top_k)
    return [LexiconCandidate(w, f, first_token[w]) for w, f in qualifying[:top_k]]


def slice_audio(
    utterance: Utterance, start: float, end: float, context: float = 0.0
) -> tuple[np.ndarray, int]:
    """Cut [max(0, start-context), min(duration, end+context)] out of the audio.

    Boundaries are sample-exact: floor for the start index, ceil for the end
    index. Returns (samples, sample_rate).
    """
    if not (0.0 <= start < end <= utterance.duration + 1e-9):
        raise ValueError(
            f"span [{start}, {end}] outside utterance '{utterance.id}' "
            f"(duration {utterance.duration:.3f}s)"
        )
    if context < 0:
        raise ValueError("context must be >= 0")
    samples, rate = read_wav(utterance.audio_path)
    lo = max(0.0, start - context)
    hi = min(utterance.duration, end + context)
    i0 = max(0, int(np.floor(lo * rate + _SAMPLE_EPS)))
    i1 = min(len(samples), int(np.ceil(hi * rate - _SAMPLE_EPS)))
    return samples[i0:i1].copy(), rate
