"""Spoken term detection core: subsequence DTW of an exemplar query against
utterance features, producing scored and located hits.

The normalized cost of a match is the minimum over every start column, end
column, and monotone warping path of (accumulated cosine distance / path
length). The length-normalized objective has no single-pass optimal
substructure, so it is solved exactly by iterated relaxation (Dinkelbach's
fractional-programming scheme): each pass runs the plain min-cost
subsequence-DTW recurrence on shifted local costs c - lam, and lam descends
through true path ratios until no path beats it. The first pass (lam = 0)
is the classic path-length-normalized candidate scan.

Passes run in a compiled kernel when the extension built from _dtw_cy.pyx
is importable, otherwise in the pure-numpy fallback; set TERMSPOT_PURE_DTW=1
to force the fallback. Both kernels are bit-identical (see
benchmarks/bench_dtw.py for the speed gap).
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from termspot.features import FeatureMatrix

from . import _dtw_py

if os.environ.get("TERMSPOT_PURE_DTW"):
    _kernel = _dtw_py
    USING_COMPILED = False
else:
    try:
        from . import _dtw_cy as _kernel

        USING_COMPILED = True
    except ImportError:
        _kernel = _dtw_py
        USING_COMPILED = False

# Cosine distances within SNAP of the interval ends are snapped to exactly
# 0 or 2, so that bit-identical frames give exactly zero local cost and a
# verbatim planted query scores exactly 1.0.
_SNAP = 1e-11

# A relaxation pass whose best shifted cost is above -_CONVERGED cannot
# improve the current ratio by more than _CONVERGED per path step.
_CONVERGED = 1e-12
_MAX_PASSES = 64
# With a band, out-of-band candidates are suppressed and the search retried;
# cap the retries so a hostile matrix cannot make one call quadratic.
_MAX_BAND_REJECTS = 64


class MatchError(ValueError):
    """Raised for inconsistent query/corpus inputs or an over-constrained search."""


@dataclass
class Query:
    """An exemplar acting as the search query for one lexicon entry."""

    entry_id: str
    exemplar_id: str
    features: FeatureMatrix
    speaker: str

    def __post_init__(self):
        if self.features.frames < 2:
            raise MatchError(f"query '{self.exemplar_id}' needs >= 2 frames")


@dataclass
class Hit:
    """A candidate occurrence of an entry inside an utterance."""

    utterance_id: str
    start_frame: int
    end_frame: int
    start: float
    end: float
    score: float
    entry_id: str
    exemplar_id: str
    status: str = "pending"
    iteration: int = 0

    @property
    def hit_id(self) -> str:
        return f"{self.iteration}:{self.entry_id}:{self.utterance_id}:{self.start_frame}:{self.end_frame}"

    def overlaps_span(self, start: float, end: float) -> bool:
        return self.start < end and start < self.end

    def to_dict(self) -> dict:
        return {
            "hit_id": self.hit_id,
            "utterance_id": self.utterance_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "start": self.start,
            "end": self.end,
            "score": self.score,
            "entry_id": self.entry_id,
            "exemplar_id": self.exemplar_id,
            "status": self.status,
            "iteration": self.iteration,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Hit":
        raw = {k: v for k, v in raw.items() if k != "hit_id"}
        return cls(**raw)


@dataclass
class SearchConfig:
    """Knobs for the sliding search.

    band_width, when set, caps how many frames the matched span may stretch
    or shrink relative to the query length.
    """

    max_hits_per_utterance: int = 2
    band_width: int | None = None
    min_score: float = 0.0

    def __post_init__(self):
        if self.max_hits_per_utterance < 1:
            raise MatchError("max_hits_per_utterance must be >= 1")


def frame_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine distance 1 - cos(x, y) in [0, 2]; zero vectors are at distance
    1 to anything (neutral)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MatchError(f"dim mismatch: {x.shape} vs {y.shape}")
    nx = np.sqrt(x @ x)
    ny = np.sqrt(y @ y)
    if nx == 0.0 or ny == 0.0:
        return 1.0
    return _snap(1.0 - (x @ y) / (nx * ny))


def _snap(d: float) -> float:
    if d < _SNAP:
        return 0.0
    if d > 2.0 - _SNAP:
        return 2.0
    return d


def frame_distance_matrix(query: np.ndarray, utterance: np.ndarray) -> np.ndarray:
    """All-pairs cosine distances, float64, same snapping as frame_distance."""
    q = np.asarray(query, dtype=np.float64)
    u = np.asarray(utterance, dtype=np.float64)
    if q.shape[1] != u.shape[1]:
        raise MatchError(f"dim mismatch: query has {q.shape[1]} dims, utterance {u.shape[1]}")
    qn = np.sqrt(np.einsum("ij,ij->i", q, q))
    un = np.sqrt(np.einsum("ij,ij->i", u, u))
    qh = q / np.where(qn == 0.0, 1.0, qn)[:, None]
    uh = u / np.where(un == 0.0, 1.0, un)[:, None]
    dist = 1.0 - qh @ uh.T
    dist[dist < _SNAP] = 0.0
    dist[dist > 2.0 - _SNAP] = 2.0
    return dist


def _best_path(cost: np.ndarray) -> tuple[float, int, int] | None:
    """Exact minimum of cost/length over all paths in one (masked) matrix.

    Returns (ratio, start column, inclusive end column), or None when no
    finite path remains (everything masked). Candidate-end ties break
    toward the smaller end column at every pass.
    """
    d, c, l, s = _kernel.dtw_scan(cost, 0.0)
    with np.errstate(invalid="ignore"):
        ratios = d / l
    j = int(np.argmin(ratios))
    if not np.isfinite(ratios[j]):
        return None
    lam = float(ratios[j])
    best = (lam, int(s[j]), j)
    for _ in range(_MAX_PASSES):
        d, c, l, s = _kernel.dtw_scan(cost, lam)
        j = int(np.argmin(d))
        if not np.isfinite(d[j]) or d[j] >= -_CONVERGED:
            break
        new_ratio = float(c[j] / l[j])
        if new_ratio >= lam:
            break
        lam = new_ratio
        best = (lam, int(s[j]), j)
    return best


def subsequence_dtw(
    query: Query,
    utterance_features: FeatureMatrix,
    config: SearchConfig,
    utterance_id: str = "",
) -> list[Hit]:
    """Find the best non-overlapping matches of the query in one utterance.

    Each hit is a minimum-normalized-cost warping path (free start and end
    on the utterance axis), scored as 1 - cost/2 in [0, 1]. Hits are
    extracted greedily: best path first, then the accepted span's columns
    are masked out, suppressing every candidate overlapping it, and the
    search repeats.
    """
    cost = frame_distance_matrix(query.features.data, utterance_features.data)
    m = query.features.frames
    shift = utterance_features.frame_shift

    hits: list[Hit] = []
    work = cost
    out_of_band = 0
    while len(hits) < config.max_hits_per_utterance:
        found = _best_path(work)
        if found is None:
            break
        ratio, s_col, e_col = found
        span_len = e_col + 1 - s_col
        if config.band_width is not None and abs(span_len - m) > config.band_width:
            # candidate warps too far; suppress its span and keep searching
            out_of_band += 1
            if out_of_band > _MAX_BAND_REJECTS:
                break
            if work is cost:
                work = cost.copy()
            work[:, s_col : e_col + 1] = np.inf
            continue
        score = 1.0 - ratio / 2.0
        if score < config.min_score:
            break
        hits.append(
            Hit(
                utterance_id=utterance_id,
                start_frame=s_col,
                end_frame=e_col + 1,
                start=s_col * shift,
                end=(e_col + 1) * shift,
                score=float(score),
                entry_id=query.entry_id,
                exemplar_id=query.exemplar_id,
            )
        )
        if len(hits) == config.max_hits_per_utterance:
            break
        if work is cost:
            work = cost.copy()
        work[:, s_col : e_col + 1] = np.inf
    if config.band_width is not None and not hits and out_of_band:
        raise MatchError(
            f"band_width={config.band_width} excludes all paths for a "
            f"{m}-frame query in a {utterance_features.frames}-frame utterance"
        )
    return hits


def brute_force_best_match(query_features, utterance_features) -> float:
    """Exhaustive oracle: minimum over every start column, end column, and
    monotone warping path of (path cost / path length).

    Enumerates the same path family the kernel optimizes over: a path
    enters the first query row at exactly one column (the free start), then
    moves by diagonal, vertical, or horizontal steps. Guarded to tiny
    inputs; this exists to test subsequence_dtw, not to be fast.
    """
    q = np.asarray(getattr(query_features, "data", query_features), dtype=np.float64)
    u = np.asarray(getattr(utterance_features, "data", utterance_features), dtype=np.float64)
    m, n = q.shape[0], u.shape[0]
    if m > 6 or n > 10:
        raise MatchError(f"oracle size guard: {m}x{n} exceeds 6x10")

    cost = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            cost[i, j] = frame_distance(q[i], u[j])

    best = np.inf

    def walk(i: int, j: int, acc: float, length: int) -> None:
        nonlocal best
        if i == m - 1:
            ratio = acc / length
            if ratio < best:
                best = ratio
        if i + 1 < m and j + 1 < n:
            walk(i + 1, j + 1, acc + cost[i + 1, j + 1], length + 1)
        if i + 1 < m:
            walk(i + 1, j, acc + cost[i + 1, j], length + 1)
        if i >= 1 and j + 1 < n:
            walk(i, j + 1, acc + cost[i, j + 1], length + 1)

    for s in range(n):
        walk(0, s, cost[0, s], 1)
    return float(best)


def search_entry(
    entry,
    corpus_features: dict[str, FeatureMatrix],
    config: SearchConfig,
    mask: dict[str, list[tuple[float, float]]] | None = None,
    workers: int = 1,
) -> list[Hit]:
    """Search every exemplar of a lexicon entry over the whole corpus.

    Overlapping candidate spans from different exemplars merge into one hit
    that keeps the higher-scoring exemplar's span and exemplar_id. Hits
    overlapping a masked span for this entry are discarded. The result is
    ordered by descending score, ties by (utterance_id, start_frame), and
    is identical for any worker count.
    """
    if not corpus_features:
        raise MatchError("empty corpus")
    if not entry.exemplars:
        raise MatchError(f"entry '{entry.id}' has no exemplars")
    mask = mask or {}

    queries = [
        Query(entry_id=entry.id, exemplar_id=ex.id, features=ex.features, speaker=ex.speaker)
        for ex in entry.exemplars
    ]
    utt_ids = list(corpus_features.keys())
    tasks = [(qi, uid) for qi in range(len(queries)) for uid in utt_ids]

    def run(task: tuple[int, str]) -> list[Hit]:
        qi, uid = task
        return subsequence_dtw(queries[qi], corpus_features[uid], config, utterance_id=uid)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    by_utt: dict[str, list[tuple[int, Hit]]] = {uid: [] for uid in utt_ids}
    for (qi, uid), found in zip(tasks, results):
        by_utt[uid].extend((qi, h) for h in found)

    merged: list[Hit] = []
    for uid in utt_ids:
        cands = by_utt[uid]
        cands.sort(key=lambda qh: (-qh[1].score, qh[1].start_frame, qh[1].end_frame, qh[0]))
        taken: list[Hit] = []
        for _, hit in cands:
            if any(hit.start_frame < t.end_frame and t.start_frame < hit.end_frame for t in taken):
                continue
            taken.append(hit)
        entry_mask = mask.get(uid, [])
        merged.extend(h for h in taken if not any(h.overlaps_span(s, e) for s, e in entry_mask))

    merged.sort(key=lambda h: (-h.score, h.utterance_id, h.start_frame))
    return merged
