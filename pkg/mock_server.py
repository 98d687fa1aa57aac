"""
mock_server.py - Offline HTTP Completion & Embedding Service

Serves the two HTTP provider interfaces from the deterministic in-process
providers, so the HTTP code path can run end to end without a paid API.

Endpoints
─────────
  GET  /health        → {"status": "ok", "completions": int, "embeddings": int}
  POST /completions   {"prompt", "temperature", "max_tokens"}
                      → {"text", "usage": {"prompt_tokens", "completion_tokens"}, "provider"}
  POST /embeddings    {"texts": [str]} → {"embeddings": [[float]]}
  POST /faults        {"count": int, "status": int}
                      → the next ``count`` completion/embedding requests answer
                        with ``status`` (429 / 5xx exercise the client's retries)

Interactive API docs: http://127.0.0.1:8765/docs
"""

import logging
import threading
from typing import List

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from config import EMBEDDING_DIM
from embeddings import HashedBagOfWordsProvider
from llm_client import CompletionRequest, CompletionResponse, MockCompletionProvider

logger = logging.getLogger(__name__)

# ── Application ───────────────────────────────────────────────────────────────
app = FastAPI(
    title="argpipe mock provider",
    description=(
        "Deterministic completion and embedding endpoints for offline runs.\n\n"
        "Completions return the first max_tokens tokens of the prompt body; "
        "embeddings come from the hashed bag-of-words provider."
    ),
    version="1.0.0",
)

app.state.llm = MockCompletionProvider()
app.state.embedder = HashedBagOfWordsProvider(EMBEDDING_DIM)
app.state.faults = []            # pending HTTP status codes, consumed in order
app.state.counts = {"completions": 0, "embeddings": 0}
_lock = threading.Lock()


# ── Request / response models ─────────────────────────────────────────────────
class EmbeddingsRequest(BaseModel):
    texts: List[str] = Field(min_length=1)


class EmbeddingsResponse(BaseModel):
    embeddings: List[List[float]]


class FaultRequest(BaseModel):
    count: int = Field(default=1, ge=0)
    status: int = Field(default=503, ge=400, le=599)


class HealthResponse(BaseModel):
    status: str
    completions: int
    embeddings: int


def _admit(endpoint: str) -> None:
    """Count the request, or fail it when a fault is pending."""
    with _lock:
        app.state.counts[endpoint] += 1
        status = app.state.faults.pop(0) if app.state.faults else None
    if status is not None:
        logger.info("Injected HTTP %d on /%s", status, endpoint)
        raise HTTPException(status_code=status, detail="injected fault")


# ── Endpoints ─────────────────────────────────────────────────────────────────

@app.get("/health", response_model=HealthResponse)
def health():
    with _lock:
        return {"status": "ok", **app.state.counts}


@app.post(
    "/completions",
    response_model=CompletionResponse,
    summary="Complete a prompt",
    description="Returns the leading max_tokens tokens of the prompt body (text before the TL;DR suffix).",
)
def completions(request: CompletionRequest):
    _admit("completions")
    return app.state.llm.complete(request)


@app.post(
    "/embeddings",
    response_model=EmbeddingsResponse,
    summary="Embed texts",
    description="Hashed bag-of-words vectors, one per input text.",
)
def embeddings(request: EmbeddingsRequest):
    _admit("embeddings")
    return {"embeddings": app.state.embedder.embed(request.texts).tolist()}


@app.post("/faults", include_in_schema=False)
def inject_faults(request: FaultRequest):
    with _lock:
        app.state.faults = [request.status] * request.count
    return {"pending": request.count}
