"""
tokenizer.py - Default token counter

A token is a maximal run of word characters or a single punctuation mark:

    "Tax appeal, dismissed."  →  ["Tax", "appeal", ",", "dismissed", "."]

The same rule drives prompt budgeting, corpus statistics and (lower-cased)
metric normalization, so lengths reported anywhere in the pipeline agree.
"""

import re
from typing import List, Tuple

TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")
TOKENIZER_NAME = "word-punct-v1"


def tokenize(text: str) -> List[str]:
    return TOKEN_PATTERN.findall(text)


def count_tokens(text: str) -> int:
    return sum(1 for _ in TOKEN_PATTERN.finditer(text))


def token_spans(text: str) -> List[Tuple[int, int]]:
    """Character offsets (start, end) of every token in ``text``."""
    return [m.span() for m in TOKEN_PATTERN.finditer(text)]


def normalize(text: str) -> List[str]:
    """Metric tokenization: lowercase, punctuation split into its own tokens."""
    return tokenize(text.lower())


def leading_text(text: str, n_tokens: int) -> str:
    """Return the prefix of ``text`` that ends with its ``n_tokens``-th token."""
    if n_tokens <= 0:
        return ""
    spans = token_spans(text)
    if not spans:
        return ""
    end = spans[min(n_tokens, len(spans)) - 1][1]
    return text[:end].strip()
