"""The growing lexicon: orthographic entries, each with one seed exemplar and
a capped number of extras confirmed during the workflow.

Persisted as a directory holding lexicon.json (the index) plus one SPTF1
feature file per exemplar.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from termspot.features import FeatureMatrix, load_external_features, save_features

logger = logging.getLogger(__name__)

SOURCES = ("seed", "confirmed_hit", "isolated_recording")


class LexiconError(ValueError):
    """Raised for duplicate forms, unknown entries, or a corrupt lexicon dir."""


@dataclass
class Exemplar:
    """One audio instance of an entry, with its feature matrix."""

    id: str
    source: str
    speaker: str
    features: FeatureMatrix
    utterance_id: str | None = None
    span: tuple[float, float] | None = None
    audio_path: str | None = None  # only for isolated recordings

    def __post_init__(self):
        if self.source not in SOURCES:
            raise LexiconError(f"unknown exemplar source '{self.source}'")
        if self.source in ("seed", "confirmed_hit") and (self.utterance_id is None or self.span is None):
            raise LexiconError(f"exemplar '{self.id}': {self.source} exemplars need utterance_id and span")
        if self.features.frames < 2:
            raise LexiconError(f"exemplar '{self.id}': features need >= 2 frames")


@dataclass
class LexiconEntry:
    """An orthographic form with its ordered exemplars.

    Entry identity is the form itself (spelling variants are distinct
    entries on purpose).
    """

    id: str
    form: str
    exemplars: list[Exemplar]
    added_at_iteration: int = 0


@dataclass
class Lexicon:
    entries: list[LexiconEntry] = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {e.id: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, entry_id: str) -> LexiconEntry:
        if entry_id not in self._by_id:
            raise LexiconError(f"unknown entry '{entry_id}'")
        return self._by_id[entry_id]

    @property
    def forms(self) -> set[str]:
        return set(self._by_id.keys())

    def add_entry(self, form: str, seed: Exemplar, iteration: int = 0) -> str:
        """Append a new entry seeded with one exemplar; returns the entry id."""
        if not form:
            raise LexiconError("empty form")
        if form in self._by_id:
            raise LexiconError(f"duplicate form '{form}'")
        entry = LexiconEntry(id=form, form=form, exemplars=[seed], added_at_iteration=iteration)
        self.entries.append(entry)
        self._by_id[form] = entry
        return form

    def add_exemplar(self, entry_id: str, exemplar: Exemplar, m: int) -> bool:
        """Append an extra exemplar unless the entry already holds m extras.

        Returns True when accepted; the lexicon is unchanged on rejection.
        """
        entry = self.get(entry_id)
        if len(entry.exemplars) - 1 >= m:
            return False
        entry.exemplars.append(exemplar)
        return True

    def find_exemplar(self, exemplar_id: str) -> Exemplar:
        for entry in self.entries:
            for ex in entry.exemplars:
                if ex.id == exemplar_id:
                    return ex
        raise LexiconError(f"unknown exemplar '{exemplar_id}'")


def persist(lexicon: Lexicon, directory) -> None:
    """Write lexicon.json plus one SPTF1 file per exemplar; load() inverts it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"entries": []}
    for ei, entry in enumerate(lexicon.entries):
        exemplars = []
        for xi, ex in enumerate(entry.exemplars):
            fname = f"{ei:04d}.{xi:02d}.sptf"
            save_features(ex.features, directory / fname)
            exemplars.append(
                {
                    "id": ex.id,
                    "source": ex.source,
                    "utterance_id": ex.utterance_id,
                    "start": None if ex.span is None else ex.span[0],
                    "end": None if ex.span is None else ex.span[1],
                    "speaker": ex.speaker,
                    "features_file": fname,
                    "features_kind": ex.features.kind,
                    "features_normalized": ex.features.normalized,
                    "audio": ex.audio_path,
                }
            )
        index["entries"].append(
            {
                "id": entry.id,
                "form": entry.form,
                "added_at_iteration": entry.added_at_iteration,
                "exemplars": exemplars,
            }
        )
    (directory / "lexicon.json").write_text(
        json.dumps(index, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
    )


def load(directory) -> Lexicon:
    """Read a lexicon directory written by persist()."""
    directory = Path(directory)
    index_path = directory / "lexicon.json"
    if not index_path.exists():
        raise LexiconError(f"missing index: {index_path}")
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
        records = index["entries"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise LexiconError(f"corrupt index {index_path}: {exc}") from exc

    lexicon = Lexicon()
    for rec in records:
        exemplars = []
        for xrec in rec["exemplars"]:
            fpath = directory / xrec["features_file"]
            if not fpath.exists():
                raise LexiconError(f"exemplar '{xrec['id']}': missing feature file {fpath}")
            features = load_external_features(fpath)
            features.kind = xrec.get("features_kind", "external")
            features.normalized = bool(xrec.get("features_normalized", False))
            span = None
            if xrec.get("start") is not None and xrec.get("end") is not None:
                span = (xrec["start"], xrec["end"])
            exemplars.append(
                Exemplar(
                    id=xrec["id"],
                    source=xrec["source"],
                    speaker=xrec["speaker"],
                    features=features,
                    utterance_id=xrec.get("utterance_id"),
                    span=span,
                    audio_path=xrec.get("audio"),
                )
            )
        entry = LexiconEntry(
            id=rec["id"],
            form=rec["form"],
            exemplars=exemplars,
            added_at_iteration=rec.get("added_at_iteration", 0),
        )
        lexicon.entries.append(entry)
        lexicon._by_id[entry.id] = entry
    return lexicon
