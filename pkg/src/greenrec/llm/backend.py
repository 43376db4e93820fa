"""Chat-completion contract and the OpenAI-compatible HTTP client."""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx

from ..errors import BackendError, BadStatus, EmptyCompletion, Timeout, TransportError

API_KEY_ENV = "GREENREC_API_KEY"


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: str | None = None
    temperature: float = 0.2
    max_tokens: int = 512
    tag: str = ""
    # Caller metadata (session id, prompt id, candidates, ...). Never sent over
    # the wire; the mock backend and the trace log read it.
    context: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("ChatRequest.user must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        msgs.append({"role": "user", "content": self.user})
        return msgs

    def fingerprint(self) -> str:
        payload = json.dumps(
            [self.tag, self.system, self.user, self.temperature, self.max_tokens],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    retries: int = 0


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "http" | "mock"
    endpoint: str = ""
    model: str = "meta-llama/Meta-Llama-3-8B-Instruct"
    timeout_ms: int = 60_000
    max_retries: int = 3
    retry_backoff_ms: int = 500
    concurrency: int = 8
    mock_script: str = ""
    trace: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("http", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend needs an endpoint")


class Backend(Protocol):
    concurrency: int

    def complete(self, req: ChatRequest) -> ChatResponse: ...


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` client with retries.

    Transport errors, timeouts, 429/5xx responses and empty completions are
    retried with exponential backoff; other 4xx statuses fail immediately.
    """

    def __init__(self, cfg: BackendConfig, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.cfg = cfg
        self.concurrency = cfg.concurrency
        self._client = client or httpx.Client(timeout=cfg.timeout_ms / 1000)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(cfg.concurrency)
        key = os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")
        self._headers = {"Authorization": f"Bearer {key}"} if key else {}

    @property
    def url(self) -> str:
        url = self.cfg.endpoint.rstrip("/")
        return url if url.endswith("/chat/completions") else url + "/chat/completions"

    def complete(self, req: ChatRequest) -> ChatResponse:
        payload = {
            "model": self.cfg.model,
            "messages": req.messages(),
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        last: BackendError | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(self.cfg.retry_backoff_ms * 2 ** (attempt - 1) / 1000)
            try:
                with self._slots:
                    return self._attempt(payload, attempt)
            except (Timeout, TransportError, EmptyCompletion) as exc:
                last = exc
            except BadStatus as exc:
                if exc.code != 429 and exc.code < 500:
                    raise
                last = exc
        assert last is not None
        raise last

    def _attempt(self, payload: dict, attempt: int) -> ChatResponse:
        started = time.perf_counter()
        try:
            resp = self._client.post(self.url, json=payload, headers=self._headers,
                                      timeout=self.cfg.timeout_ms / 1000)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        latency = int((time.perf_counter() - started) * 1000)
        if resp.status_code >= 400:
            raise BadStatus(resp.status_code, resp.text)
        try:
            data = resp.json()
            choices = data.get("choices") or []
            content = (choices[0].get("message") or {}).get("content") if choices else None
        except (ValueError, AttributeError, TypeError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc
        if not content:
            raise EmptyCompletion("completion has no content")
        usage = data.get("usage") or {}
        return ChatResponse(
            text=str(content),
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=latency,
            retries=attempt,
        )


class TracedBackend:
    """Appends one ``llm_trace.jsonl`` line per call (tag, fingerprint, latency, usage)."""

    def __init__(self, inner: Backend, path: str | Path) -> None:
        self.inner = inner
        self.concurrency = inner.concurrency
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest) -> ChatResponse:
        error = None
        resp = None
        try:
            resp = self.inner.complete(req)
            return resp
        except BackendError as exc:
            error = type(exc).__name__
            raise
        finally:
            row = {
                "tag": req.tag,
                "fingerprint": req.fingerprint(),
                "latency_ms": resp.latency_ms if resp else None,
                "prompt_tokens": resp.prompt_tokens if resp else None,
                "completion_tokens": resp.completion_tokens if resp else None,
                "retries": resp.retries if resp else None,
                "error": error,
            }
            with self._lock, open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row) + "\n")


def build_backend(cfg: BackendConfig, trace_path: str | Path | None = None) -> Backend:
    from .mock import MockBackend, MockScript

    if cfg.kind == "http":
        backend: Backend = HttpBackend(cfg)
    else:
        script = MockScript.load(cfg.mock_script) if cfg.mock_script else MockScript()
        backend = MockBackend(script, concurrency=cfg.concurrency)
    if trace_path is not None:
        backend = TracedBackend(backend, trace_path)
    return backend

