"""
corpus.py - Corpus Loading, Validation, Splitting and Statistics

Corpus file format (UTF-8, one JSON object per line):

    {"case_id": "c1",
     "sentences": [{"text": "The appeal is dismissed.", "irc": "conclusion"},
                   {"text": "Costs to the respondent.",  "irc": null}],
     "reference_summary": "Appeal dismissed."}

  irc                 one of "issue" | "reason" | "conclusion" | null
  reference_summary   optional; required only for scoring

Documents arrive already split into sentences. split_sentences() is a
rule-based fallback for raw text (ingest_raw).
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config import SPLIT_RATIOS
from errors import ConfigError, CorpusTooSmall, DuplicateCaseId, EmptyCorpus, MalformedRecord
from tokenizer import TOKENIZER_NAME, count_tokens

logger = logging.getLogger(__name__)


class IrcLabel(str, Enum):
    ISSUE = "issue"
    REASON = "reason"
    CONCLUSION = "conclusion"


# ── Domain types ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SentenceRecord:
    index: int
    text: str
    irc: Optional[IrcLabel] = None


@dataclass(frozen=True)
class CaseDocument:
    case_id: str
    sentences: Tuple[SentenceRecord, ...]
    reference_summary: Optional[str] = None

    @cached_property
    def token_count(self) -> int:
        return sum(count_tokens(s.text) for s in self.sentences)

    @property
    def text(self) -> str:
        return self.span_text(0, len(self.sentences))

    def span_text(self, start: int, end: int) -> str:
        return " ".join(s.text for s in self.sentences[start:end])


@dataclass(frozen=True)
class CorpusSplit:
    train: Tuple[str, ...]
    validation: Tuple[str, ...]
    test: Tuple[str, ...]
    seed: int

    def as_dict(self) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "train": list(self.train),
            "validation": list(self.validation),
            "test": list(self.test),
        }


@dataclass(frozen=True)
class TokenStats:
    average: float
    maximum: int
    minimum: int
    count: int


@dataclass(frozen=True)
class CorpusStats:
    documents: TokenStats
    summaries: Optional[TokenStats] = None
    tokenizer: str = field(default=TOKENIZER_NAME)


# ── Wire schema ───────────────────────────────────────────────────────────────

class SentenceIn(BaseModel):
    model_config = ConfigDict(extra="ignore")

    text: str
    irc: Optional[Literal["issue", "reason", "conclusion"]] = None

    @field_validator("text")
    @classmethod
    def _has_content(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("sentence text is empty")
        return value


class CaseRecordIn(BaseModel):
    model_config = ConfigDict(extra="ignore")

    case_id: str = Field(min_length=1)
    sentences: List[SentenceIn] = Field(min_length=1)
    reference_summary: Optional[str] = None


def _to_document(record: CaseRecordIn) -> CaseDocument:
    sentences = tuple(
        SentenceRecord(
            index=i,
            text=s.text,
            irc=IrcLabel(s.irc) if s.irc is not None else None,
        )
        for i, s in enumerate(record.sentences)
    )
    return CaseDocument(record.case_id, sentences, record.reference_summary)


def parse_record(line: str, line_number: int = 1) -> CaseDocument:
    """Decode and validate one corpus line."""
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(line_number, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise MalformedRecord(line_number, "record is not a JSON object")
    try:
        record = CaseRecordIn.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise MalformedRecord(line_number, f"{where}: {first['msg']}") from exc
    return _to_document(record)


def dumps_record(doc: CaseDocument) -> str:
    return json.dumps(
        {
            "case_id": doc.case_id,
            "sentences": [
                {"text": s.text, "irc": s.irc.value if s.irc else None}
                for s in doc.sentences
            ],
            "reference_summary": doc.reference_summary,
        },
        ensure_ascii=False,
    )


# ── Ingest / serialize ────────────────────────────────────────────────────────

def ingest(path: str) -> List[CaseDocument]:
    """
    Load a line-delimited corpus file.

    Raises:
        MalformedRecord: a line is not valid JSON or violates a type invariant.
        DuplicateCaseId: two records share a case_id.
        EmptyCorpus:     the file holds no records.
    """
    corpus: List[CaseDocument] = []
    seen: set = set()
    with open(path, "rb") as fh:
        for line_number, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise MalformedRecord(line_number, f"not valid UTF-8 ({exc.reason} at byte {exc.start})") from exc
            if not line.strip():
                continue
            doc = parse_record(line, line_number)
            if doc.case_id in seen:
                raise DuplicateCaseId(doc.case_id)
            seen.add(doc.case_id)
            corpus.append(doc)
    if not corpus:
        raise EmptyCorpus(f"no records in {path}")
    logger.info("Ingested %d documents from %s", len(corpus), path)
    return corpus


def serialize(corpus: Iterable[CaseDocument], path: str) -> int:
    """Write documents in the ingest format; returns the number written."""
    written = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(dumps_record(doc) + "\n")
            written += 1
    return written


# ── Raw-text on-ramp ──────────────────────────────────────────────────────────

_SENTENCE_BREAK = re.compile(r"(?<=[.?!])\s+(?=[A-Z0-9\"'“‘(])")


def split_sentences(text: str) -> List[str]:
    """Split on . ? ! followed by whitespace and an uppercase letter, quote or digit."""
    return [s.strip() for s in _SENTENCE_BREAK.split(text.strip()) if s.strip()]


def ingest_raw(path: str, case_id: Optional[str] = None) -> CaseDocument:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        raw = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line_number = data[:exc.start].count(b"\n") + 1
        raise MalformedRecord(line_number, f"not valid UTF-8 ({exc.reason} at byte {exc.start})") from exc
    sentences = split_sentences(raw)
    if not sentences:
        raise EmptyCorpus(f"no sentences in {path}")
    if case_id is None:
        case_id = os.path.splitext(os.path.basename(path))[0]
    return CaseDocument(
        case_id,
        tuple(SentenceRecord(i, s) for i, s in enumerate(sentences)),
    )


# ── Splitting ─────────────────────────────────────────────────────────────────

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_sizes(n: int, ratios: Sequence[float] = SPLIT_RATIOS) -> Tuple[int, int, int]:
    """Validation and test sizes are rounded; train takes the remainder."""
    n_val = _round_half_up(n * ratios[1])
    n_test = _round_half_up(n * ratios[2])
    return n - n_val - n_test, n_val, n_test


def split_corpus(
    corpus: Sequence[CaseDocument],
    ratios: Sequence[float] = SPLIT_RATIOS,
    seed: int = 7,
) -> CorpusSplit:
    """Seeded permutation of the case ids, then contiguous train/validation/test slices."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    if len(corpus) < 3:
        raise CorpusTooSmall(f"need at least 3 documents to split, got {len(corpus)}")

    ids = [doc.case_id for doc in corpus]
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]

    n_train, n_val, _ = split_sizes(len(ids), ratios)
    return CorpusSplit(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
        seed=seed,
    )


def write_split(split: CorpusSplit, corpus: Sequence[CaseDocument], out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    by_id = {doc.case_id: doc for doc in corpus}
    paths = {}
    for name in ("train", "validation", "test"):
        path = os.path.join(out_dir, f"{name}.jsonl")
        serialize((by_id[cid] for cid in getattr(split, name)), path)
        paths[name] = path
    manifest = os.path.join(out_dir, "split.json")
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump(split.as_dict(), fh, indent=2)
    paths["manifest"] = manifest
    return paths


def select(corpus: Sequence[CaseDocument], case_ids: Iterable[str]) -> List[CaseDocument]:
    """Documents whose id is in ``case_ids``, in corpus order."""
    wanted = set(case_ids)
    return [doc for doc in corpus if doc.case_id in wanted]


# ── Statistics ────────────────────────────────────────────────────────────────

def _token_stats(counts: Sequence[int]) -> TokenStats:
    return TokenStats(
        average=float(np.mean(counts)),
        maximum=int(max(counts)),
        minimum=int(min(counts)),
        count=len(counts),
    )


def corpus_stats(corpus: Sequence[CaseDocument]) -> CorpusStats:
    if not corpus:
        raise EmptyCorpus("cannot compute statistics of an empty corpus")
    summaries = [count_tokens(d.reference_summary) for d in corpus if d.reference_summary]
    return CorpusStats(
        documents=_token_stats([d.token_count for d in corpus]),
        summaries=_token_stats(summaries) if summaries else None,
    )


def render_stats(stats: CorpusStats) -> str:
    """Type / Avg / Max / Min table, one row per record type."""
    lines = [
        "| Type | Avg. # of tokens | Max. # of tokens | Min. # of tokens |",
        "|---|---|---|---|",
    ]
    rows = [("Court decision", stats.documents)]
    if stats.summaries is not None:
        rows.append(("Human-written summary", stats.summaries))
    for name, s in rows:
        lines.append(f"| {name} | {s.average:.2f} | {s.maximum} | {s.minimum} |")
    return "\n".join(lines)
