"""
synthetic.py - Seeded Synthetic Corpora

Generators for the corpora the test-suite and demos run on:

  two-topic     first half of the sentences drawn from one vocabulary, second
                half from a disjoint one; the true boundary sits in the middle
  argument      a two-topic document whose second block is IRC-annotated and
                doubles as the reference summary
  annotated     random sentence counts and random IRC annotations
  budget        sentences of widely varying length, some far longer than any
                budget, with punctuation mixed in

Every generator takes a numpy Generator, so one seed reproduces a corpus.

Usage:
  python synthetic.py --kind two-topic --docs 50 --out two_topic.jsonl
  python synthetic.py --kind argument  --docs 10 --out arguments.jsonl --seed 3
"""

import argparse
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_SEED, LOG_FORMAT
from corpus import CaseDocument, IrcLabel, SentenceRecord, serialize
from segmenter import Segmentation

logger = logging.getLogger(__name__)

# ── Vocabularies (disjoint, no stopwords) ─────────────────────────────────────
TAX_TERMS = (
    "taxpayer assessment income deduction minister reassessment penalty audit "
    "invoice expense revenue ledger receipt business vehicle salary bonus "
    "dividend shareholder corporation payroll remittance withholding auditor "
    "depreciation"
).split()

IMMIGRATION_TERMS = (
    "refugee claimant persecution asylum border visa passport deportation "
    "removal citizenship residence sponsorship detention inadmissibility "
    "humanitarian protection fear homeland militia embassy interpreter "
    "credibility identity sponsor"
).split()

FILLER_PUNCTUATION = (",", ";", "(", ")", ":")


def _sentence(rng: np.random.Generator, vocabulary: Sequence[str], n_words: int) -> str:
    words = [vocabulary[i] for i in rng.integers(0, len(vocabulary), n_words)]
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


# ── Two-topic documents ───────────────────────────────────────────────────────

def two_topic_document(
    rng: np.random.Generator,
    case_id: str,
    per_topic: int = 10,
    words_per_sentence: int = 12,
    irc_second_block: bool = False,
) -> CaseDocument:
    """``per_topic`` tax sentences followed by ``per_topic`` immigration sentences."""
    texts = [_sentence(rng, TAX_TERMS, words_per_sentence) for _ in range(per_topic)]
    texts += [_sentence(rng, IMMIGRATION_TERMS, words_per_sentence) for _ in range(per_topic)]
    irc_cycle = (IrcLabel.ISSUE, IrcLabel.REASON, IrcLabel.CONCLUSION)
    sentences = tuple(
        SentenceRecord(
            i, text,
            irc_cycle[i % 3] if irc_second_block and i >= per_topic else None,
        )
        for i, text in enumerate(texts)
    )
    reference = " ".join(texts[per_topic:]) if irc_second_block else None
    return CaseDocument(case_id, sentences, reference)


def two_topic_corpus(n_docs: int, seed: int = DEFAULT_SEED, **kwargs) -> List[CaseDocument]:
    rng = np.random.default_rng(seed)
    return [two_topic_document(rng, f"topic-{i:03d}", **kwargs) for i in range(n_docs)]


def argument_corpus(n_docs: int, seed: int = DEFAULT_SEED, per_topic: int = 10) -> List[CaseDocument]:
    """
    Documents whose annotated (argumentative) block is also the reference
    summary, placed after an unannotated block of unrelated text.
    """
    rng = np.random.default_rng(seed)
    return [
        two_topic_document(rng, f"arg-{i:03d}", per_topic=per_topic, irc_second_block=True)
        for i in range(n_docs)
    ]


# ── Random annotations ────────────────────────────────────────────────────────

def annotated_document(
    rng: np.random.Generator,
    case_id: str,
    max_sentences: int = 40,
    irc_rate: float = 0.2,
) -> CaseDocument:
    n = int(rng.integers(1, max_sentences + 1))
    labels = list(IrcLabel)
    sentences = []
    for i in range(n):
        irc = labels[int(rng.integers(0, 3))] if rng.random() < irc_rate else None
        vocabulary = TAX_TERMS if rng.random() < 0.5 else IMMIGRATION_TERMS
        sentences.append(SentenceRecord(i, _sentence(rng, vocabulary, int(rng.integers(3, 15))), irc))
    return CaseDocument(case_id, tuple(sentences))


def random_segmentation(rng: np.random.Generator, doc: CaseDocument) -> Segmentation:
    n = len(doc.sentences)
    if n == 1:
        return Segmentation(doc.case_id, 1)
    k = int(rng.integers(0, n))
    boundaries = sorted(int(b) for b in rng.choice(np.arange(1, n), size=k, replace=False))
    return Segmentation(doc.case_id, n, tuple(boundaries))


# ── Budget stress documents ───────────────────────────────────────────────────

def budget_document(
    rng: np.random.Generator,
    case_id: str,
    max_sentences: int = 30,
    long_rate: float = 0.05,
    long_tokens: int = 3500,
) -> CaseDocument:
    """Sentences of 1–300 words, and now and then one of up to ``long_tokens``."""
    vocabulary = TAX_TERMS + IMMIGRATION_TERMS
    sentences = []
    for i in range(int(rng.integers(1, max_sentences + 1))):
        limit = long_tokens if rng.random() < long_rate else 300
        words = []
        for _ in range(int(rng.integers(1, limit + 1))):
            words.append(vocabulary[int(rng.integers(0, len(vocabulary)))])
            if rng.random() < 0.1:
                words.append(FILLER_PUNCTUATION[int(rng.integers(0, len(FILLER_PUNCTUATION)))])
        sentences.append(SentenceRecord(i, " ".join(words) + "."))
    return CaseDocument(case_id, tuple(sentences))


# ── Separable features ────────────────────────────────────────────────────────

def separable_features(
    rng: np.random.Generator,
    n: int,
    dim: int = 16,
    margin: float = 0.5,
    direction: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gaussian points labelled by the side of a random hyperplane through the
    origin; points closer than ``margin`` to it are redrawn.
    Returns (X, y, direction); pass ``direction`` to draw a matching test set.
    """
    if direction is None:
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
    rows: List[np.ndarray] = []
    while len(rows) < n:
        x = rng.normal(size=dim)
        if abs(float(x @ direction)) >= margin:
            rows.append(x)
    X = np.vstack(rows)
    y = (X @ direction > 0).astype(int)
    return X, y, direction


# ── Entry point ───────────────────────────────────────────────────────────────

def main() -> None:
    parser = argparse.ArgumentParser(description="Write a seeded synthetic corpus")
    parser.add_argument("--kind", choices=("two-topic", "argument", "annotated", "budget"), default="argument")
    parser.add_argument("--docs", type=int, default=10, help="Number of documents")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--out", required=True, help="Output .jsonl path")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, datefmt="%H:%M:%S")
    rng = np.random.default_rng(args.seed)
    if args.kind == "two-topic":
        docs = two_topic_corpus(args.docs, args.seed)
    elif args.kind == "argument":
        docs = argument_corpus(args.docs, args.seed)
    elif args.kind == "annotated":
        docs = [annotated_document(rng, f"ann-{i:03d}") for i in range(args.docs)]
    else:
        docs = [budget_document(rng, f"budget-{i:03d}") for i in range(args.docs)]

    written = serialize(docs, args.out)
    logger.info("Wrote %d %s documents to %s", written, args.kind, args.out)


if __name__ == "__main__":
    main()
