"""Chat-completion clients: an OpenAI-compatible HTTP client and a scripted
test double.

The HTTP client retries transport failures and 5xx responses with
exponential backoff; 4xx responses are configuration mistakes and fail
immediately. Response text passes through untouched: all trimming and
normalization belongs to the response parsers.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import requests

from .dialogue import DialogueTurn
from .errors import ConfigError, GatewayError

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 1.4
DEFAULT_TOP_P = 0.9
DEFAULT_MAX_TOKENS = 1024
DEFAULT_TIMEOUT_S = 120.0
DEFAULT_MAX_RETRIES = 3

ENV_API_BASE = "FEATFORGE_API_BASE"
ENV_MODEL = "FEATFORGE_MODEL"
ENV_API_KEY = "FEATFORGE_API_KEY"


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be nonnegative, got {self.temperature}")
        if not (0 < self.top_p <= 1):
            raise ConfigError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency_ms: int
    token_usage: dict | None = None
    retries: int = 0


def build_request_body(turns: Sequence[DialogueTurn], params: SamplingParams, model: str) -> dict:
    """The wire body; a pure function of (turns, params, model)."""
    return {
        "model": model,
        "messages": [{"role": t.speaker, "content": t.text} for t in turns],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    }


class TransportFailure(Exception):
    """A retryable transport-level failure (connection, timeout, ...)."""


# A transport takes (url, body, headers, timeout) and returns (status, payload).
Transport = Callable[[str, dict, dict, float], tuple[int, object]]


def _requests_transport(url: str, body: dict, headers: dict, timeout: float) -> tuple[int, object]:
    try:
        response = requests.post(url, json=body, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportFailure(str(exc)) from exc
    try:
        payload: object = response.json()
    except ValueError:
        payload = response.text
    return response.status_code, payload


class HttpChatClient:
    """Talks to any endpoint speaking the chat-completions JSON shape."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = DEFAULT_TIMEOUT_S,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_base: float = 0.5,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url or not model:
            raise ConfigError("HTTP client needs a base URL and a model name")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.transport = transport or _requests_transport
        self.sleep = sleep

    @classmethod
    def from_env(cls, **overrides) -> "HttpChatClient":
        base_url = overrides.pop("base_url", None) or os.environ.get(ENV_API_BASE)
        model = overrides.pop("model", None) or os.environ.get(ENV_MODEL)
        api_key = overrides.pop("api_key", None) or os.environ.get(ENV_API_KEY)
        if not base_url:
            raise ConfigError(f"no endpoint base URL configured (flag or {ENV_API_BASE})")
        if not model:
            raise ConfigError(f"no model name configured (flag or {ENV_MODEL})")
        return cls(base_url=base_url, model=model, api_key=api_key, **overrides)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, turns: Sequence[DialogueTurn], params: SamplingParams) -> ChatResponse:
        body = build_request_body(turns, params, self.model)
        headers = self._headers()
        last_failure = ""
        start = time.monotonic()
        for attempt in range(self.max_retries + 1):
            try:
                status, payload = self.transport(self.url, body, headers, self.timeout)
            except TransportFailure as exc:
                last_failure = f"transport failure: {exc}"
            else:
                if 200 <= status < 300:
                    latency_ms = int((time.monotonic() - start) * 1000)
                    return self._parse_payload(payload, latency_ms, attempt)
                if 400 <= status < 500:
                    raise ConfigError(f"endpoint rejected the request with HTTP {status}: {payload}")
                last_failure = f"HTTP {status}"
            if attempt < self.max_retries:
                delay = self.backoff_base * (2**attempt)
                logger.warning(
                    "chat call failed (%s); retry %d/%d in %.1fs",
                    last_failure,
                    attempt + 1,
                    self.max_retries,
                    delay,
                )
                self.sleep(delay)
        raise GatewayError(f"chat call failed after {self.max_retries} retries: {last_failure}")

    @staticmethod
    def _parse_payload(payload: object, latency_ms: int, retries: int) -> ChatResponse:
        try:
            text = payload["choices"][0]["message"]["content"]  # type: ignore[index]
        except (TypeError, KeyError, IndexError):
            raise GatewayError(f"malformed chat response payload: {payload!r}") from None
        usage = payload.get("usage") if isinstance(payload, dict) else None
        return ChatResponse(text=text, latency_ms=latency_ms, token_usage=usage, retries=retries)


class ScriptedChatClient:
    """Deterministic client that replays a fixed response list in order."""

    def __init__(self, script: Sequence[str]):
        if not script:
            raise ConfigError("scripted client needs a nonempty script")
        self._script = list(script)
        self._next = 0
        self._lock = threading.Lock()
        self.requests: list[dict] = []

    @property
    def calls_made(self) -> int:
        return self._next

    def complete(self, turns: Sequence[DialogueTurn], params: SamplingParams) -> ChatResponse:
        with self._lock:
            self.requests.append(build_request_body(turns, params, model="scripted"))
            if self._next >= len(self._script):
                raise GatewayError(
                    f"scripted client exhausted after {len(self._script)} responses"
                )
            text = self._script[self._next]
            self._next += 1
        return ChatResponse(text=text, latency_ms=0)
