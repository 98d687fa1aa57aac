"""
summarizer.py - Zero-shot Summarization under Token Budgets

Prompt:   {text}\\nTL;DR

Methods
───────
  BASELINE       the whole document is packed into budget-sized chunks of whole
                 sentences; one completion per chunk.
  ARG_SEGMENTS   one completion per argumentative segment, in document order;
                 a segment is chunked further only when it exceeds the budget.

Part summaries are joined with a single space into the final summary. Calls
for one document run concurrently up to the in-flight limit and are
reassembled by index.

Chunking
────────
  Whole sentences are packed greedily. A sentence longer than the budget on
  its own is cut at token boundaries into budget-sized raw-token pieces
  (the last piece holds the remainder). Concatenating the chunks' token
  sequences gives back the input token sequence.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_PROFILE, MAX_IN_FLIGHT, PART_SEPARATOR, PROFILES, PROMPT_SUFFIX
from corpus import CaseDocument
from errors import (
    EmptyText,
    LabelSegmentMismatch,
    NoArgumentativeSegments,
    RequestTooLarge,
    UnknownProfile,
)
from labeler import SegmentLabel
from llm_client import CompletionProvider, CompletionRequest, Usage, complete_many
from segmenter import Segmentation
from tokenizer import TOKENIZER_NAME, count_tokens, token_spans

logger = logging.getLogger(__name__)

SUFFIX_TOKENS = count_tokens(PROMPT_SUFFIX)


class SummaryMethod(str, Enum):
    BASELINE = "baseline"
    ARG_SEGMENTS = "argseg"


@dataclass(frozen=True)
class TokenBudgetPolicy:
    budget_tokens: int
    tokenizer: str = TOKENIZER_NAME

    def __post_init__(self):
        if self.budget_tokens <= 0:
            raise ValueError(f"token budget must be positive, got {self.budget_tokens}")

    @classmethod
    def for_profile(cls, profile: str) -> "TokenBudgetPolicy":
        return cls(_profile(profile)["budget_tokens"])


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    index: int
    text: str
    token_count: int
    sentence_span: Tuple[int, int]
    token_span: Optional[Tuple[int, int]] = None   # set for raw-token pieces of one sentence


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: int = 128


@dataclass(frozen=True)
class Pricing:
    prompt_price: float       # USD per 1,000 prompt tokens
    completion_price: float   # USD per 1,000 completion tokens

    def __post_init__(self):
        if self.prompt_price < 0 or self.completion_price < 0:
            raise ValueError("prices must be non-negative")


@dataclass(frozen=True)
class SummaryRecord:
    doc_id: str
    method: SummaryMethod
    parts: Tuple[str, ...]
    final_summary: str
    usage: Usage
    cost: float
    temperature: float
    max_tokens: int
    profile: str = DEFAULT_PROFILE
    prompts_tokens: Tuple[int, ...] = field(default=(), compare=False)

    @property
    def n_calls(self) -> int:
        return len(self.parts)

    def to_record(self) -> Dict[str, object]:
        return {
            "case_id": self.doc_id,
            "method": self.method.value,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "profile": self.profile,
            "parts": list(self.parts),
            "summary": self.final_summary,
            "usage": self.usage.model_dump(),
            "cost": self.cost,
        }


def _profile(name: str) -> Dict[str, object]:
    try:
        return PROFILES[name]
    except KeyError:
        raise UnknownProfile(f"unknown provider profile {name!r}; known: {sorted(PROFILES)}") from None


def pricing_table() -> Dict[str, Pricing]:
    return {
        name: Pricing(p["prompt_price"], p["completion_price"])
        for name, p in PROFILES.items()
    }


# ── Prompt & chunks ───────────────────────────────────────────────────────────

def build_prompt(text: str) -> str:
    if not text.strip():
        raise EmptyText("cannot build a prompt from empty text")
    return text + PROMPT_SUFFIX


def _split_long_sentence(sentence: str, budget: int) -> List[Tuple[str, Tuple[int, int]]]:
    spans = token_spans(sentence)
    pieces = []
    for k in range(0, len(spans), budget):
        start = spans[k][0]
        end = spans[k + budget][0] if k + budget < len(spans) else len(sentence)
        pieces.append((sentence[start:end].strip(), (k, min(k + budget, len(spans)))))
    return pieces


def chunk_by_budget(
    sentences: Sequence[str],
    policy: TokenBudgetPolicy,
    doc_id: str = "",
    offset: int = 0,
) -> List[Chunk]:
    """``offset`` is the document index of ``sentences[0]``, used for sentence spans."""
    budget = policy.budget_tokens
    chunks: List[Chunk] = []
    current: List[str] = []
    current_tokens = 0
    current_start = offset

    def flush():
        nonlocal current, current_tokens
        if current:
            chunks.append(Chunk(
                doc_id, len(chunks), " ".join(current), current_tokens,
                (current_start, current_start + len(current)),
            ))
        current, current_tokens = [], 0

    for i, sentence in enumerate(sentences, start=offset):
        tokens = count_tokens(sentence)
        if tokens > budget:
            flush()
            for text, token_span in _split_long_sentence(sentence, budget):
                chunks.append(Chunk(
                    doc_id, len(chunks), text, token_span[1] - token_span[0],
                    (i, i + 1), token_span,
                ))
            current_start = i + 1
            continue
        if current and current_tokens + tokens > budget:
            flush()
        if not current:
            current_start = i
        current.append(sentence)
        current_tokens += tokens
    flush()
    return chunks


def argumentative_spans(
    segmentation: Segmentation, labels: Sequence[SegmentLabel]
) -> List[Tuple[int, int]]:
    if len(labels) != len(segmentation):
        raise LabelSegmentMismatch(
            f"{segmentation.doc_id!r}: {len(labels)} labels for {len(segmentation)} segments"
        )
    return [
        span for span, label in zip(segmentation.spans, labels)
        if label == SegmentLabel.ARGUMENTATIVE
    ]


def select_argumentative_text(
    doc: CaseDocument, segmentation: Segmentation, labels: Sequence[SegmentLabel]
) -> List[str]:
    spans = argumentative_spans(segmentation, labels)
    if not spans:
        logger.warning("NoArgumentativeSegments: %s has no argumentative segment", doc.case_id)
    return [doc.span_text(start, end) for start, end in spans]


# ── Summaries ─────────────────────────────────────────────────────────────────

def estimate_cost(
    usage: Usage,
    pricing: Optional[Mapping[str, Pricing]] = None,
    profile: str = DEFAULT_PROFILE,
) -> float:
    table = pricing if pricing is not None else pricing_table()
    if profile not in table:
        raise UnknownProfile(f"no pricing for profile {profile!r}")
    price = table[profile]
    return (
        usage.prompt_tokens / 1000.0 * price.prompt_price
        + usage.completion_tokens / 1000.0 * price.completion_price
    )


def plan_chunks(
    doc: CaseDocument,
    method: SummaryMethod,
    policy: TokenBudgetPolicy,
    segmentation: Optional[Segmentation] = None,
    labels: Optional[Sequence[SegmentLabel]] = None,
) -> List[Chunk]:
    """The chunks one document is summarized from, in document order."""
    texts = [s.text for s in doc.sentences]
    if method == SummaryMethod.BASELINE:
        return chunk_by_budget(texts, policy, doc.case_id)

    if segmentation is None or labels is None:
        raise LabelSegmentMismatch(f"{doc.case_id!r}: argumentative mode needs a segmentation and labels")
    spans = argumentative_spans(segmentation, labels)
    if not spans:
        raise NoArgumentativeSegments(doc.case_id)
    chunks: List[Chunk] = []
    for start, end in spans:
        for c in chunk_by_budget(texts[start:end], policy, doc.case_id, offset=start):
            chunks.append(Chunk(c.doc_id, len(chunks), c.text, c.token_count, c.sentence_span, c.token_span))
    return chunks


def summarize_document(
    doc: CaseDocument,
    method: SummaryMethod,
    llm: CompletionProvider,
    params: DecodingParams,
    policy: TokenBudgetPolicy,
    segmentation: Optional[Segmentation] = None,
    labels: Optional[Sequence[SegmentLabel]] = None,
    profile: str = DEFAULT_PROFILE,
    pricing: Optional[Mapping[str, Pricing]] = None,
    max_in_flight: int = MAX_IN_FLIGHT,
) -> SummaryRecord:
    """
    Summarize one document and concatenate the part summaries.

    Raises:
        NoArgumentativeSegments: ARG_SEGMENTS mode with nothing to summarize.
        RequestTooLarge:         a prompt plus max_tokens exceeds the provider's
                                 context window (the budget is misconfigured).
        ProviderFailure:         the provider failed after its retries.
    """
    chunks = plan_chunks(doc, method, policy, segmentation, labels)
    prompts = [build_prompt(c.text) for c in chunks]
    prompt_tokens = tuple(count_tokens(p) for p in prompts)

    if llm.context_tokens:
        for c, n in zip(chunks, prompt_tokens):
            if n + params.max_tokens > llm.context_tokens:
                raise RequestTooLarge(
                    f"{doc.case_id!r} chunk {c.index}: {n} prompt tokens + {params.max_tokens} "
                    f"completion tokens exceed the {llm.context_tokens}-token context of "
                    f"{llm.name!r}; lower the budget (now {policy.budget_tokens})"
                )

    requests_ = [
        CompletionRequest(prompt=p, temperature=params.temperature, max_tokens=params.max_tokens)
        for p in prompts
    ]
    responses = complete_many(llm, requests_, max_in_flight)

    parts = tuple(r.text.strip() for r in responses)
    usage = sum((r.usage for r in responses), Usage())
    record = SummaryRecord(
        doc_id=doc.case_id,
        method=method,
        parts=parts,
        final_summary=PART_SEPARATOR.join(parts),
        usage=usage,
        cost=estimate_cost(usage, pricing, profile),
        temperature=params.temperature,
        max_tokens=params.max_tokens,
        profile=profile,
        prompts_tokens=prompt_tokens,
    )
    logger.debug(
        "%s [%s] %d calls, %d prompt / %d completion tokens",
        doc.case_id, method.value, len(parts), usage.prompt_tokens, usage.completion_tokens,
    )
    return record


def average_cost_per_summary(records: Sequence[SummaryRecord]) -> float:
    return float(np.mean([r.cost for r in records])) if records else 0.0
