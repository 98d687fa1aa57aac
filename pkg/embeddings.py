"""
embeddings.py - Sentence and Token Embedding Providers

  HashedBagOfWordsProvider  offline default. Lowercase, strip punctuation, drop
                            stopwords, hash each term into one of ``dimension``
                            buckets (blake2b, stable across processes), weight
                            buckets by 1 + log(count).
  HttpEmbeddingProvider     POST {base_url}/embeddings  {"texts": [str]}
                            → {"embeddings": [[float, ...], ...]}

Token embeddings (used by BERTScore) embed each token on its own. The hashed
provider keeps stopwords and punctuation there, so identical tokens always
collide onto the same one-hot vector and the score reduces to lexical matching.
"""

import hashlib
import logging
import math
import re
from collections import Counter
from typing import Any, List, Optional, Protocol, Sequence

import numpy as np

from config import EMBEDDING_DIM
from errors import DimensionMismatch, ProviderFailure
from llm_client import HttpClient

logger = logging.getLogger(__name__)

STOPWORDS = frozenset(
    """
    a an and are as at be been but by for from had has have he her his i if in
    into is it its itself of on or our she so than that the their them then there
    these they this those to was we were what when where which while who whom why
    will with would you your not no nor can could did do does shall should may might
    must also such any all each both more most other some same very s t
    """.split()
)

_WORD = re.compile(r"\w+")


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        ...

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        ...


def _bucket(term: str, dimension: int) -> int:
    digest = hashlib.blake2b(term.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


class HashedBagOfWordsProvider:
    name = "hashed-bow"

    def __init__(self, dimension: int = EMBEDDING_DIM, stopwords: frozenset = STOPWORDS):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.stopwords = stopwords

    def terms(self, text: str) -> List[str]:
        return [w for w in _WORD.findall(text.lower()) if w not in self.stopwords]

    def embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for term, count in Counter(self.terms(text)).items():
            vec[_bucket(term, self.dimension)] += 1.0 + math.log(count)
        return vec

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for i, text in enumerate(texts):
            out[i] = self.embed_one(text)
        return out

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(tokens), self.dimension), dtype=np.float64)
        for i, token in enumerate(tokens):
            out[i, _bucket(token.lower(), self.dimension)] = 1.0
        return out


class HttpEmbeddingProvider:
    name = "http"

    def __init__(
        self,
        base_url: str,
        dimension: Optional[int] = None,
        client: Optional[HttpClient] = None,
        **client_kwargs: Any,
    ):
        self.client = client or HttpClient(base_url, **client_kwargs)
        self.dimension = dimension or 0   # learned from the first response when unset

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        data = self.client.post("embeddings", {"texts": list(texts)})
        try:
            matrix = np.asarray(data["embeddings"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderFailure("malformed embedding response", exc) from exc
        if matrix.ndim != 2 or matrix.shape[0] != len(texts):
            raise DimensionMismatch(
                f"expected {len(texts)} vectors, got array of shape {matrix.shape}"
            )
        if self.dimension == 0:
            self.dimension = matrix.shape[1]
        return matrix

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        return self.embed(tokens)


def make_provider(
    kind: str,
    endpoint: Optional[str] = None,
    dimension: int = EMBEDDING_DIM,
    **client_kwargs: Any,
) -> EmbeddingProvider:
    """``client_kwargs`` go to the HttpClient of the http provider (api_key_env, timeout, ...)."""
    if kind == "builtin":
        return HashedBagOfWordsProvider(dimension)
    if kind == "http":
        if not endpoint:
            raise ProviderFailure("the http embedding provider needs an endpoint")
        return HttpEmbeddingProvider(endpoint, **client_kwargs)
    raise ProviderFailure(f"unknown embedding provider {kind!r}")
