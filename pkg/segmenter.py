"""
segmenter.py - C99 Linear Text Segmentation

Pipeline for one document:

  sentences ──embed──► vectors ──cosine──► similarity matrix
            ──rank transform──► rank matrix ──divisive clustering──► boundaries

Rank transform
──────────────
  Each cell is replaced by the fraction of its neighbours, inside a
  mask×mask window centred on the cell and clipped at the matrix border, whose
  similarity is strictly lower. The cell itself is not a neighbour; a cell with
  no neighbours (1×1 matrix) gets 0.

Divisive clustering
───────────────────
  Start from one segment [0, n). Each step inserts the boundary that maximises
  the inside density

      D = Σ rank mass inside segments / Σ segment areas

  Ties (within 1e-12) go to the smaller sentence index. With no target count,
  splitting runs to min(n, max_splits) segments and the number kept is the
  largest k whose gain D(k) − D(k−1) exceeds mean + c·std of all gains
  (c = 1.2), or 1 when no gain does.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import C99_THRESHOLD_C, MAX_IN_FLIGHT, RANK_MASK_SIZE
from corpus import CaseDocument
from embeddings import EmbeddingProvider
from errors import (
    ArgpipeError,
    ConfigError,
    DimensionMismatch,
    InvalidTargetCount,
    MalformedRecord,
    NonSquareMatrix,
    ProviderFailure,
)

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Segmentation:
    doc_id: str
    n_sentences: int
    boundaries: Tuple[int, ...] = ()
    densities: Tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        previous = 0
        for b in self.boundaries:
            if not previous < b < self.n_sentences:
                raise ValueError(
                    f"boundaries must be strictly increasing inside (0, {self.n_sentences}): "
                    f"{self.boundaries}"
                )
            previous = b

    @property
    def spans(self) -> List[Tuple[int, int]]:
        """Half-open [start, end) spans partitioning [0, n)."""
        cuts = (0, *self.boundaries, self.n_sentences)
        return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]

    def __len__(self) -> int:
        return len(self.boundaries) + 1

    def to_record(self) -> Dict[str, object]:
        return {"case_id": self.doc_id, "n_sentences": self.n_sentences, "boundaries": list(self.boundaries)}


@dataclass(frozen=True)
class SegmenterParams:
    mask_size: int = RANK_MASK_SIZE
    target_segments: Optional[int] = None
    max_splits: Optional[int] = None
    threshold_c: float = C99_THRESHOLD_C


# ── Embedding & similarity ────────────────────────────────────────────────────

def embed_sentences(provider: EmbeddingProvider, sentences: Sequence[str]) -> np.ndarray:
    """One row per sentence, in order."""
    if not sentences:
        raise ProviderFailure("no sentences to embed")
    try:
        vectors = np.asarray(provider.embed(list(sentences)), dtype=np.float64)
    except ArgpipeError:
        raise
    except Exception as exc:
        raise ProviderFailure(f"embedding provider {provider.name!r} failed", exc) from exc

    if vectors.ndim != 2 or vectors.shape[0] != len(sentences):
        raise DimensionMismatch(
            f"expected {len(sentences)} vectors, got array of shape {vectors.shape}"
        )
    if provider.dimension and vectors.shape[1] != provider.dimension:
        raise DimensionMismatch(
            f"provider {provider.name!r} declared dimension {provider.dimension}, "
            f"returned {vectors.shape[1]}"
        )
    if not np.all(np.isfinite(vectors)):
        raise ProviderFailure(f"embedding provider {provider.name!r} returned non-finite values")
    return vectors


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """u·v / (‖u‖‖v‖); 0 when either vector is all zeros."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cosine of vectors with shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    nonzero = norms > 0
    if not nonzero.all():
        logger.debug("%d all-zero sentence vectors; their similarities are 0", int((~nonzero).sum()))
    unit = np.zeros_like(vectors)
    unit[nonzero] = vectors[nonzero] / norms[nonzero, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, np.where(nonzero, 1.0, 0.0))
    return sim


# ── Rank transform ────────────────────────────────────────────────────────────

def _require_square(matrix: np.ndarray, what: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NonSquareMatrix(f"{what} must be square, got shape {matrix.shape}")
    return matrix


def rank_matrix(sim: np.ndarray, mask_size: int = RANK_MASK_SIZE) -> np.ndarray:
    sim = _require_square(sim, "similarity matrix")
    if mask_size < 3 or mask_size % 2 == 0:
        raise ConfigError(f"mask size must be an odd integer >= 3, got {mask_size}")

    n = sim.shape[0]
    r = mask_size // 2
    padded = np.full((n + 2 * r, n + 2 * r), np.nan)
    padded[r:r + n, r:r + n] = sim

    lower = np.zeros((n, n))
    valid = np.zeros((n, n))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neighbour = padded[r + dy:r + dy + n, r + dx:r + dx + n]
            present = ~np.isnan(neighbour)
            valid += present
            lower += present & (neighbour < sim)

    return np.divide(lower, valid, out=np.zeros((n, n)), where=valid > 0)


# ── Divisive clustering ───────────────────────────────────────────────────────

def _split_trajectory(rank: np.ndarray, limit: int) -> Tuple[List[int], List[float]]:
    """Greedy boundary insertions (in insertion order) and D after each step."""
    n = rank.shape[0]
    prefix = np.zeros((n + 1, n + 1))
    prefix[1:, 1:] = rank.cumsum(axis=0).cumsum(axis=1)

    def inner(s, e):
        return prefix[e, e] - prefix[s, e] - prefix[e, s] + prefix[s, s]

    cuts = [0, n]
    mass, area = float(inner(0, n)), float(n * n)
    densities = [mass / area]
    order: List[int] = []

    while len(cuts) - 1 < limit:
        cut_arr = np.asarray(cuts)
        candidates = np.setdiff1d(np.arange(1, n), cut_arr, assume_unique=True)
        if candidates.size == 0:
            break
        pos = np.searchsorted(cut_arr, candidates, side="right")
        s, e, b = cut_arr[pos - 1], cut_arr[pos], candidates

        new_mass = mass - inner(s, e) + inner(s, b) + inner(b, e)
        new_area = area - (e - s) ** 2 + (b - s) ** 2 + (e - b) ** 2
        density = new_mass / new_area

        best = int(np.flatnonzero(density >= density.max() - TIE_TOLERANCE)[0])
        boundary = int(candidates[best])
        mass, area = float(new_mass[best]), float(new_area[best])

        cuts.insert(int(np.searchsorted(cut_arr, boundary)), boundary)
        order.append(boundary)
        densities.append(mass / area)

    return order, densities


def choose_segment_count(densities: Sequence[float], threshold_c: float = C99_THRESHOLD_C) -> int:
    gains = np.diff(np.asarray(densities, dtype=np.float64))
    if gains.size == 0:
        return 1
    threshold = gains.mean() + threshold_c * gains.std()
    above = np.flatnonzero(gains > threshold)
    # gains[i] is the gain of going to i + 2 segments
    return int(above[-1]) + 2 if above.size else 1


def c99_segment(
    rank: np.ndarray,
    target_segments: Optional[int] = None,
    doc_id: str = "",
    max_splits: Optional[int] = None,
    threshold_c: float = C99_THRESHOLD_C,
) -> Segmentation:
    rank = _require_square(rank, "rank matrix")
    n = rank.shape[0]
    if n == 0:
        raise NonSquareMatrix("rank matrix is empty")
    if target_segments is not None and not 1 <= target_segments <= n:
        raise InvalidTargetCount(f"target segment count must be in [1, {n}], got {target_segments}")

    if target_segments is not None:
        limit = target_segments
    else:
        limit = min(n, max_splits) if max_splits else n

    order, densities = _split_trajectory(rank, limit)
    k = target_segments if target_segments is not None else choose_segment_count(densities, threshold_c)

    return Segmentation(
        doc_id=doc_id,
        n_sentences=n,
        boundaries=tuple(sorted(order[:k - 1])),
        densities=tuple(densities),
    )


def segment_document(
    doc: CaseDocument,
    provider: EmbeddingProvider,
    params: SegmenterParams = SegmenterParams(),
) -> Segmentation:
    n = len(doc.sentences)
    if n == 1:
        return Segmentation(doc.case_id, 1)
    target = params.target_segments
    if target is not None and target > n:
        logger.debug("%s: target %d capped at %d sentences", doc.case_id, target, n)
        target = n
    vectors = embed_sentences(provider, [s.text for s in doc.sentences])
    rank = rank_matrix(similarity_matrix(vectors), params.mask_size)
    seg = c99_segment(rank, target, doc.case_id, params.max_splits, params.threshold_c)
    logger.debug("%s: %d sentences → %d segments", doc.case_id, n, len(seg))
    return seg


def segment_corpus(
    corpus: Sequence[CaseDocument],
    provider: EmbeddingProvider,
    params: SegmenterParams = SegmenterParams(),
    max_workers: int = MAX_IN_FLIGHT,
) -> List[Segmentation]:
    """Segment every document; output order follows the corpus."""
    if max_workers <= 1:
        results = [segment_document(doc, provider, params) for doc in corpus]
    else:
        with ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="segment") as pool:
            results = list(pool.map(lambda d: segment_document(d, provider, params), corpus))
    logger.info("Segmented %d documents into %d segments", len(results), sum(len(s) for s in results))
    return results


def load_segmentations(path: str) -> List[Segmentation]:
    """Read segmentations written one ``to_record()`` JSON object per line."""
    out: List[Segmentation] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                out.append(Segmentation(
                    str(record["case_id"]),
                    int(record["n_sentences"]),
                    tuple(int(b) for b in record["boundaries"]),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedRecord(line_number, f"bad segmentation record: {exc}") from exc
    return out


# ── Segment-count statistics ──────────────────────────────────────────────────

def segment_count_stats(label_lists: Sequence[Sequence[int]]) -> Dict[str, Dict[str, float]]:
    """Per-document counts of argumentative (1), non-argumentative (0) and all segments."""
    if not label_lists:
        raise ValueError("no documents")
    arg = np.array([sum(1 for v in labels if v == 1) for labels in label_lists])
    total = np.array([len(labels) for labels in label_lists])
    rows = {}
    for name, counts in (("argumentative", arg), ("non_argumentative", total - arg), ("total", total)):
        rows[name] = {
            "average": float(counts.mean()),
            "maximum": int(counts.max()),
            "minimum": int(counts.min()),
        }
    return rows


def render_segment_stats(rows: Dict[str, Dict[str, float]]) -> str:
    names = {
        "argumentative": "Argumentative segmentation",
        "non_argumentative": "Non-argumentative segmentation",
        "total": "Total",
    }
    lines = [
        "| Type | Avg. # of segments | Max. # of segments | Min. # of segments |",
        "|---|---|---|---|",
    ]
    for key, label in names.items():
        row = rows[key]
        lines.append(f"| {label} | {row['average']:.2f} | {row['maximum']} | {row['minimum']} |")
    return "\n".join(lines)
