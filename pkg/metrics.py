"""
metrics.py - Automatic Summary Evaluation

All metrics work on normalized token sequences (tokenizer.normalize: lowercase,
punctuation as separate tokens).

  ROUGE-N    clipped n-gram overlap; P = overlap/|cand n-grams|,
             R = overlap/|ref n-grams|, F1 harmonic mean.
  ROUGE-L    longest common subsequence; balanced F (β = 1).
  BLEU       clipped n-gram precisions p1..pN (N = 4), geometric mean, brevity
             penalty min(1, e^(1 − r/c)) with r the closest reference length.
             No smoothing: any zero precision gives 0. Orders for which the
             candidate has no n-grams at all (candidate shorter than n) are
             left out of the mean.
  METEOR     exact-match unigram alignment (maximum matches, then fewest
             chunks), Fmean = 10PR/(R + 9P),
             penalty = 0.5·(chunks/m)^3, score = Fmean·(1 − penalty).
  BERTScore  greedy matching of token embeddings by cosine; raw scores, no
             baseline rescaling.
"""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from embeddings import EmbeddingProvider
from errors import ArgpipeError, EmptyReference, ProviderFailure
from tokenizer import normalize

logger = logging.getLogger(__name__)

Tokens = Sequence[str]


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "PRF":
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(precision, recall, f1)


ZERO = PRF(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EvalReport:
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF
    bleu: float
    meteor: float
    bertscore: Optional[PRF]
    candidate_length: int

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)

    def flat(self) -> Dict[str, float]:
        out = {}
        for name in ("rouge1", "rouge2", "rougeL", "bertscore"):
            prf = getattr(self, name)
            if prf is None:
                continue
            out[f"{name}_p"], out[f"{name}_r"], out[f"{name}_f"] = prf.precision, prf.recall, prf.f1
        out["bleu"] = self.bleu
        out["meteor"] = self.meteor
        out["candidate_length"] = float(self.candidate_length)
        return out


@dataclass(frozen=True)
class MetricOptions:
    max_n: int = 4
    bertscore_provider: Optional[EmbeddingProvider] = None


# ── ROUGE ─────────────────────────────────────────────────────────────────────

def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Tokens, reference: Tokens, n: int = 1) -> PRF:
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    cand_total, ref_total = sum(cand.values()), sum(ref.values())
    if cand_total == 0 or ref_total == 0:
        return ZERO
    overlap = sum((cand & ref).values())
    return PRF.from_pr(overlap / cand_total, overlap / ref_total)


def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens) -> PRF:
    if not candidate or not reference:
        return ZERO
    lcs = lcs_length(candidate, reference)
    return PRF.from_pr(lcs / len(candidate), lcs / len(reference))


# ── BLEU ──────────────────────────────────────────────────────────────────────

def _closest_length(c: int, references: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c), len(r)) for r in references)[1]


def _bleu_counts(candidate: Tokens, references: Sequence[Tokens], max_n: int):
    clipped, totals = [0] * max_n, [0] * max_n
    for n in range(1, max_n + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            max_ref |= ngrams(ref, n)
        clipped[n - 1] = sum((cand & max_ref).values())
        totals[n - 1] = sum(cand.values())
    return clipped, totals, len(candidate), _closest_length(len(candidate), references)


def _bleu_combine(clipped, totals, c: int, r: int) -> float:
    orders = [i for i, t in enumerate(totals) if t > 0]
    if c == 0 or not orders:
        return 0.0
    if any(clipped[i] == 0 for i in orders):
        return 0.0
    log_mean = sum(math.log(clipped[i] / totals[i]) for i in orders) / len(orders)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return min(1.0, bp * math.exp(log_mean))


def bleu(candidate: Tokens, references: Sequence[Tokens], max_n: int = 4) -> float:
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not references:
        raise EmptyReference("BLEU needs at least one reference")
    return _bleu_combine(*_bleu_counts(candidate, references, max_n))


def corpus_bleu(pairs: Sequence[Tuple[Tokens, Sequence[Tokens]]], max_n: int = 4) -> float:
    """Counts summed over all pairs before combining."""
    clipped, totals, c, r = [0] * max_n, [0] * max_n, 0, 0
    for candidate, references in pairs:
        pc, pt, pl, pr = _bleu_counts(candidate, references, max_n)
        clipped = [a + b for a, b in zip(clipped, pc)]
        totals = [a + b for a, b in zip(totals, pt)]
        c, r = c + pl, r + pr
    return _bleu_combine(clipped, totals, c, r)


# ── METEOR ────────────────────────────────────────────────────────────────────

ALIGN_STATE_LIMIT = 50_000


def _longest_run_align(candidate: Tokens, reference: Tokens) -> List[Tuple[int, int]]:
    """
    Repeatedly aligns the longest run of consecutive matching tokens among
    the still unaligned positions (earliest candidate position, then earliest
    reference position on ties). Matches are maximal; chunks are low but not
    always minimal.
    """
    n, m = len(candidate), len(reference)
    vocab: Dict[str, int] = {}
    cand_ids = np.array([vocab.setdefault(t, len(vocab)) for t in candidate])
    ref_ids = np.array([vocab.get(t, -1) for t in reference])
    equal = cand_ids[:, None] == ref_ids[None, :]
    free_c = np.ones(n, dtype=bool)
    free_r = np.ones(m, dtype=bool)
    pairs: List[Tuple[int, int]] = []

    while True:
        match = equal & free_c[:, None] & free_r[None, :]
        if not match.any():
            break
        run = np.zeros((n + 1, m + 1), dtype=np.int64)
        for i in range(n - 1, -1, -1):
            run[i, :m] = match[i] * (1 + run[i + 1, 1:])
        i, j = np.unravel_index(int(np.argmax(run)), run.shape)
        length = int(run[i, j])
        for k in range(length):
            pairs.append((int(i) + k, int(j) + k))
        free_c[i:i + length] = False
        free_r[j:j + length] = False

    return sorted(pairs)


def align(candidate: Tokens, reference: Tokens, state_limit: int = ALIGN_STATE_LIMIT) -> List[Tuple[int, int]]:
    """
    Exact-match alignment as (candidate index, reference index) pairs with
    the maximum number of matches and, among those, the fewest chunks.

    Layered search over candidate positions whose token occurs in the
    reference. A state is (used reference positions, reference position
    matched at the previous candidate position if that match can still be
    extended, else -1). Every type ends with min(count_cand, count_ref)
    matches. Once more than ``state_limit`` states
    have been visited the longest-run-first alignment is returned instead.
    """
    if not candidate or not reference:
        return []
    ref_positions: Dict[str, List[int]] = {}
    for j, tok in enumerate(reference):
        ref_positions.setdefault(tok, []).append(j)
    cand_count = Counter(candidate)
    target = {t: min(cand_count[t], len(ps)) for t, ps in ref_positions.items() if t in cand_count}
    positions = [i for i, tok in enumerate(candidate) if tok in target]
    if not positions:
        return []
    type_mask = {t: sum(1 << j for j in ps) for t, ps in ref_positions.items()}
    seen: Counter = Counter()
    after = [0] * len(candidate)
    for i in range(len(candidate) - 1, -1, -1):
        after[i] = seen[candidate[i]]
        seen[candidate[i]] += 1

    # state -> (chunks, parent state, pair or None)
    layer: Dict[Tuple[int, int], Tuple[int, Optional[Tuple[int, int]], Optional[Tuple[int, int]]]] = {
        (0, -1): (0, None, None)
    }
    history = []
    visited = 0
    for k, i in enumerate(positions):
        tok = candidate[i]
        follower = candidate[i + 1] if k + 1 < len(positions) and positions[k + 1] == i + 1 else None
        nxt: Dict = {}

        def relax(state, chunks, parent, pair):
            if state not in nxt or chunks < nxt[state][0]:
                nxt[state] = (chunks, parent, pair)

        for state, (chunks, _, _) in layer.items():
            used, prev_j = state
            need = target[tok] - bin(used & type_mask[tok]).count("1")
            if need <= after[i]:
                relax((used, -1), chunks, state, None)
            if need <= 0:
                continue
            for j in ref_positions[tok]:
                if used >> j & 1:
                    continue
                keep_j = j if follower is not None and j + 1 < len(reference) and reference[j + 1] == follower else -1
                extends = prev_j >= 0 and prev_j == j - 1
                relax((used | 1 << j, keep_j), chunks + (0 if extends else 1), state, (i, j))

        history.append(nxt)
        layer = nxt
        visited += len(nxt)
        if visited > state_limit:
            logger.debug("alignment search passed %d states; using longest-run alignment", state_limit)
            return _longest_run_align(candidate, reference)

    state = min(layer, key=lambda s: layer[s][0])
    pairs: List[Tuple[int, int]] = []
    for step in reversed(history):
        _, parent, pair = step[state]
        if pair is not None:
            pairs.append(pair)
        state = parent
    return sorted(pairs)


def count_chunks(pairs: Sequence[Tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for ci, ri in sorted(pairs):
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            chunks += 1
        prev = (ci, ri)
    return chunks


def meteor_from_counts(matches: int, chunks: int, cand_len: int, ref_len: int) -> float:
    if matches == 0:
        return 0.0
    precision = matches / cand_len
    recall = matches / ref_len
    fmean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (chunks / matches) ** 3
    return fmean * (1.0 - penalty)


def meteor(candidate: Tokens, reference: Tokens) -> float:
    pairs = align(candidate, reference)
    return meteor_from_counts(len(pairs), count_chunks(pairs), len(candidate), len(reference))


# ── BERTScore ─────────────────────────────────────────────────────────────────

def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)


def bert_score(candidate: Tokens, reference: Tokens, provider: EmbeddingProvider) -> PRF:
    """P and R are clipped at 0 so the result stays in [0, 1] for any provider."""
    if not candidate or not reference:
        return ZERO
    try:
        cand = np.asarray(provider.embed_tokens(list(candidate)), dtype=np.float64)
        ref = np.asarray(provider.embed_tokens(list(reference)), dtype=np.float64)
    except ArgpipeError:
        raise
    except Exception as exc:
        raise ProviderFailure(f"token embedding with {provider.name!r} failed", exc) from exc

    sim = np.clip(_unit_rows(cand) @ _unit_rows(ref).T, -1.0, 1.0)
    precision = max(0.0, float(sim.max(axis=1).mean()))
    recall = max(0.0, float(sim.max(axis=0).mean()))
    return PRF.from_pr(min(precision, 1.0), min(recall, 1.0))


# ── Pairs & aggregates ────────────────────────────────────────────────────────

def evaluate_pair(candidate: str, reference: str, options: MetricOptions = MetricOptions()) -> EvalReport:
    ref = normalize(reference)
    if not ref:
        raise EmptyReference("reference summary has no tokens")
    cand = normalize(candidate)
    provider = options.bertscore_provider
    return EvalReport(
        rouge1=rouge_n(cand, ref, 1),
        rouge2=rouge_n(cand, ref, 2),
        rougeL=rouge_l(cand, ref),
        bleu=bleu(cand, [ref], options.max_n),
        meteor=meteor(cand, ref),
        bertscore=bert_score(cand, ref, provider) if provider is not None else None,
        candidate_length=len(cand),
    )


def aggregate_reports(reports: Sequence[EvalReport]) -> Dict[str, float]:
    """Mean of every metric over the reports."""
    if not reports:
        return {}
    flats = [r.flat() for r in reports]
    keys = [k for k in flats[0] if all(k in f for f in flats)]
    out = {k: float(np.mean([f[k] for f in flats])) for k in keys}
    out["count"] = float(len(reports))
    return out
