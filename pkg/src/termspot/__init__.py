"""termspot: bootstrap sparse transcription of a speech collection from a
small spoken-term lexicon, using exemplar-based spoken term detection and
iterative (human or oracle) confirmation."""

__version__ = "0.1.0"
