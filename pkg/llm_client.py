"""
llm_client.py - Completion Providers

Two providers share one contract, ``complete(CompletionRequest) -> CompletionResponse``:

  MockCompletionProvider  deterministic, offline: returns the first max_tokens
                          tokens of the prompt body (text before "\\nTL;DR");
                          temperature is ignored. Every call is recorded.
  HttpCompletionProvider  POST {base_url}/completions
                            request  {"prompt": str, "temperature": float, "max_tokens": int}
                            response {"text": str, "usage": {"prompt_tokens": int,
                                                             "completion_tokens": int}}

Retry policy (HttpClient): up to RETRY_ATTEMPTS attempts on connection errors,
timeouts, HTTP 429 and 5xx; exponential backoff from RETRY_INITIAL_S, doubling,
full jitter. Other 4xx responses fail at once.
"""

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Protocol, Sequence

import certifi
import requests
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception,
    stop_after_attempt,
    wait_random_exponential,
)

from config import (
    API_KEY_ENV,
    MAX_IN_FLIGHT,
    PROMPT_SUFFIX,
    REQUEST_TIMEOUT,
    RETRY_ATTEMPTS,
    RETRY_INITIAL_S,
)
from errors import ArgpipeError, ProviderFailure
from tokenizer import count_tokens, leading_text

logger = logging.getLogger(__name__)


# ── Wire models ───────────────────────────────────────────────────────────────

class CompletionRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    prompt: str
    temperature: float = Field(ge=0.0, le=1.0)
    max_tokens: int = Field(gt=0)


class Usage(BaseModel):
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            prompt_tokens=self.prompt_tokens + other.prompt_tokens,
            completion_tokens=self.completion_tokens + other.completion_tokens,
        )


class CompletionResponse(BaseModel):
    model_config = ConfigDict(extra="ignore")

    text: str
    usage: Usage = Field(default_factory=Usage)
    provider: str = ""


class CompletionProvider(Protocol):
    name: str
    context_tokens: Optional[int]

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        ...


# ── Mock provider ─────────────────────────────────────────────────────────────

def prompt_body(prompt: str) -> str:
    """Prompt text without the trailing summarization suffix."""
    if prompt.endswith(PROMPT_SUFFIX):
        return prompt[: -len(PROMPT_SUFFIX)]
    return prompt


class MockCompletionProvider:
    """
    Deterministic stand-in for a completion model.

    ``calls`` keeps every request in arrival order; it is guarded by a lock so
    the provider can be shared by concurrent summarization workers.
    """

    name = "mock"

    def __init__(self, context_tokens: Optional[int] = None):
        self.context_tokens = context_tokens
        self.calls: List[CompletionRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls.append(request)
        text = leading_text(prompt_body(request.prompt), request.max_tokens)
        return CompletionResponse(
            text=text,
            usage=Usage(
                prompt_tokens=count_tokens(request.prompt),
                completion_tokens=count_tokens(text),
            ),
            provider=self.name,
        )


# ── HTTP transport ────────────────────────────────────────────────────────────

class RetryableHTTPError(Exception):
    """HTTP status worth retrying (429 / 5xx)."""

    def __init__(self, status: int, url: str):
        self.status = status
        super().__init__(f"HTTP {status} from {url}")


def _is_retryable(exc: BaseException) -> bool:
    return isinstance(exc, (RetryableHTTPError, requests.ConnectionError, requests.Timeout))


class HttpClient:
    """JSON-over-HTTP transport with the retry policy described above."""

    def __init__(
        self,
        base_url: str,
        api_key_env: str = API_KEY_ENV,
        timeout: float = REQUEST_TIMEOUT,
        attempts: int = RETRY_ATTEMPTS,
        initial_wait: float = RETRY_INITIAL_S,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = os.getenv(api_key_env)
        self.timeout = timeout
        self._retrying = Retrying(
            retry=retry_if_exception(_is_retryable),
            stop=stop_after_attempt(attempts),
            wait=wait_random_exponential(multiplier=initial_wait, max=60),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )

    def _post_once(self, url: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = requests.post(
            url, json=payload, headers=headers,
            timeout=self.timeout, verify=certifi.where(),
        )
        if resp.status_code == 429 or resp.status_code >= 500:
            raise RetryableHTTPError(resp.status_code, url)
        if resp.status_code >= 400:
            raise ProviderFailure(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderFailure(f"non-JSON response from {url}", exc) from exc

    def post(self, path: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        url = f"{self.base_url}/{path.lstrip('/')}"
        try:
            return self._retrying.copy()(self._post_once, url, payload)
        except ArgpipeError:
            raise
        except (RetryableHTTPError, requests.RequestException) as exc:
            raise ProviderFailure(f"request to {url} failed after retries", exc) from exc


class HttpCompletionProvider:
    name = "http"

    def __init__(
        self,
        base_url: str,
        context_tokens: Optional[int] = None,
        client: Optional[HttpClient] = None,
        **client_kwargs: Any,
    ):
        self.context_tokens = context_tokens
        self.client = client or HttpClient(base_url, **client_kwargs)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        data = self.client.post("completions", request.model_dump())
        try:
            response = CompletionResponse.model_validate(data)
        except ValidationError as exc:
            raise ProviderFailure("malformed completion response", exc) from exc
        return response.model_copy(update={"provider": response.provider or self.name})


# ── Bounded fan-out ───────────────────────────────────────────────────────────

def complete_many(
    provider: CompletionProvider,
    requests_: Sequence[CompletionRequest],
    max_in_flight: int = MAX_IN_FLIGHT,
) -> List[CompletionResponse]:
    """Issue requests with at most ``max_in_flight`` concurrent calls; results keep request order."""
    if not requests_:
        return []
    if max_in_flight <= 1 or len(requests_) == 1:
        return [provider.complete(r) for r in requests_]
    with ThreadPoolExecutor(max_workers=max_in_flight, thread_name_prefix="completion") as pool:
        return list(pool.map(provider.complete, requests_))
