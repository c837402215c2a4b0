"""Text generation and embedding behind one interface, with a call log.

Two backends:

* ``HttpBackend`` speaks the OpenAI-compatible REST protocol
  (``/v1/chat/completions`` and ``/v1/embeddings``) with bounded retries.
* ``MockBackend`` answers from a JSON script keyed by ``role:agent_id:round``
  and embeds with the deterministic hashing embedder.

Mock script lookup for a request tagged (role, agent_id, round), first hit wins::

    run<N>/role:agent_id:round   (only when the backend has run_index N)
    run<N>/role:*:round
    run<N>/role:agent_id:*
    run<N>/role:*:*
    run<N>/default
    ... then the same five keys without the run prefix.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

import httpx
import numpy as np

from .errors import BackendError, BackendUnavailable, EmbedderFailure, ScriptExhausted
from .knowledge_base import HashingEmbedder

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_TOKENS = 1024
DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF_S = 0.5
DEFAULT_EMBED_MODEL = "text-embedding"


@dataclass(frozen=True)
class GenerationRequest:
    system_prompt: str
    user_prompt: str
    model_id: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None
    # routing tags: mock-script key and call-log attribution
    role: str = ""
    agent_id: str = ""
    round: int = 0

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def key(self) -> str:
        return f"{self.role}:{self.agent_id}:{self.round}"


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    latency_ms: float
    backend_id: str
    attempts: int = 1


@dataclass(frozen=True)
class CallRecord:
    seq: int
    kind: str  # "generate" | "embed"
    role: str
    agent_id: str
    round: int
    model_id: str
    backend_id: str
    latency_ms: float
    prompt_chars: int
    response_chars: int
    attempts: int
    ok: bool
    error: str = ""
    warning: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class CallLog:
    """Append-only, thread-safe; ``seq`` is assigned in completion order."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[CallRecord] = []

    def append(self, **fields: Any) -> CallRecord:
        with self._lock:
            record = CallRecord(seq=len(self._records), **fields)
            self._records.append(record)
            return record

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def latencies(self, kind: str = "generate") -> list[float]:
        return [r.latency_ms for r in self.records() if r.kind == kind and r.ok]

    def to_list(self) -> list[dict[str, Any]]:
        return [r.to_dict() for r in self.records()]


# -- backends -----------------------------------------------------------------


class MockBackend:
    backend_id = "mock"

    def __init__(
        self,
        script: dict[str, str] | None = None,
        run_index: int | None = None,
        embed_dimension: int = 384,
    ):
        script = script or {}
        bad = [k for k, v in script.items() if not isinstance(v, str)]
        if bad:
            raise ValueError(f"mock script values must be strings: {bad[:3]}")
        self.script = dict(script)
        self.run_index = run_index
        self._embedder = HashingEmbedder(embed_dimension)

    @classmethod
    def from_file(cls, path: str | Path, run_index: int | None = None, **kw: Any) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"{path}: mock script must be a JSON object")
        return cls(data, run_index=run_index, **kw)

    def lookup_keys(self, request: GenerationRequest) -> list[str]:
        role, aid, rnd = request.role, request.agent_id, request.round
        plain = [
            f"{role}:{aid}:{rnd}",
            f"{role}:*:{rnd}",
            f"{role}:{aid}:*",
            f"{role}:*:*",
            "default",
        ]
        if self.run_index is None:
            return plain
        return [f"run{self.run_index}/{k}" for k in plain] + plain

    def complete(self, request: GenerationRequest) -> tuple[str, int]:
        for key in self.lookup_keys(request):
            if key in self.script:
                return self.script[key], 1
        raise ScriptExhausted(request.key)

    def embed_identity(self, model_id: str) -> str:
        return self._embedder.identity

    def embed(self, text: str, model_id: str) -> tuple[np.ndarray, int]:
        return self._embedder.embed(text), 1


class HttpBackend:
    """OpenAI-compatible REST client with exponential-backoff retries.

    Connection errors, timeouts, HTTP 429 and 5xx are retried up to
    ``max_attempts`` total attempts; other 4xx responses fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_attempts: int = DEFAULT_ATTEMPTS,
        backoff_s: float = DEFAULT_BACKOFF_S,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ValueError("base_url is required for the http backend (set LLM_BASE_URL)")
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @property
    def backend_id(self) -> str:
        return f"http:{self.base_url}"

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict[str, Any]) -> tuple[dict[str, Any], int]:
        url = f"{self.base_url}{path}"
        detail = ""
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                detail = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    detail = f"HTTP {resp.status_code}: {resp.text[:200]}"
                elif resp.status_code >= 400:
                    raise BackendError(resp.status_code, resp.text)
                else:
                    try:
                        return resp.json(), attempt
                    except ValueError as exc:
                        raise BackendError(resp.status_code, resp.text) from exc
            log.warning("POST %s attempt %d/%d failed: %s", path, attempt, self.max_attempts, detail)
            if attempt < self.max_attempts:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
        raise BackendUnavailable(detail, attempts=self.max_attempts)

    def complete(self, request: GenerationRequest) -> tuple[str, int]:
        messages = []
        if request.system_prompt:
            messages.append({"role": "system", "content": request.system_prompt})
        messages.append({"role": "user", "content": request.user_prompt})
        payload: dict[str, Any] = {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        body, attempts = self._post("/v1/chat/completions", payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(200, json.dumps(body)[:500]) from exc
        return content or "", attempts

    def embed_identity(self, model_id: str) -> str:
        return f"openai-compatible:{model_id}"

    def embed(self, text: str, model_id: str) -> tuple[np.ndarray, int]:
        body, attempts = self._post("/v1/embeddings", {"model": model_id, "input": text})
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(200, json.dumps(body)[:500]) from exc
        return np.asarray(values, dtype=np.float64), attempts


# -- gateway ------------------------------------------------------------------


class Gateway:
    def __init__(self, backend: MockBackend | HttpBackend, call_log: CallLog | None = None):
        self.backend = backend
        self.call_log = call_log if call_log is not None else CallLog()

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        t0 = time.perf_counter()
        text, attempts, error, warning = "", 1, "", ""
        try:
            text, attempts = self.backend.complete(request)
            if not text:
                warning = "backend returned empty text"
                log.warning("%s: %s", request.key, warning)
            return GenerationResponse(text, _elapsed_ms(t0), self.backend_id, attempts)
        except BackendUnavailable as exc:
            attempts, error = exc.attempts, str(exc)
            raise
        except Exception as exc:
            error = str(exc)
            raise
        finally:
            self.call_log.append(
                kind="generate",
                role=request.role,
                agent_id=request.agent_id,
                round=request.round,
                model_id=request.model_id,
                backend_id=self.backend_id,
                latency_ms=_elapsed_ms(t0),
                prompt_chars=len(request.system_prompt) + len(request.user_prompt),
                response_chars=len(text),
                attempts=attempts,
                ok=not error,
                error=error,
                warning=warning,
            )

    def embed(
        self, text: str, model_id: str = DEFAULT_EMBED_MODEL, *, role: str = "", agent_id: str = "", round: int = 0
    ) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        t0 = time.perf_counter()
        attempts, error = 1, ""
        try:
            raw, attempts = self.backend.embed(text, model_id)
            vec = np.asarray(raw, dtype=np.float64).reshape(-1)
            if vec.size == 0 or not np.all(np.isfinite(vec)):
                raise EmbedderFailure(None, "non-finite or empty embedding from backend")
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise EmbedderFailure(None, "zero embedding from backend")
            return vec / norm
        except BackendUnavailable as exc:
            attempts, error = exc.attempts, str(exc)
            raise
        except Exception as exc:
            error = str(exc)
            raise
        finally:
            self.call_log.append(
                kind="embed",
                role=role,
                agent_id=agent_id,
                round=round,
                model_id=model_id,
                backend_id=self.backend_id,
                latency_ms=_elapsed_ms(t0),
                prompt_chars=len(text),
                response_chars=0,
                attempts=attempts,
                ok=not error,
                error=error,
            )

    def embedder(self, model_id: str = DEFAULT_EMBED_MODEL, **tags: Any) -> "GatewayEmbedder":
        return GatewayEmbedder(self, model_id, tags)


class GatewayEmbedder:
    """Adapts ``Gateway.embed`` to the knowledge-base embedder interface."""

    def __init__(self, gateway: Gateway, model_id: str, tags: dict[str, Any] | None = None):
        self.gateway = gateway
        self.model_id = model_id
        self.tags = tags or {}

    @property
    def identity(self) -> str:
        return self.gateway.backend.embed_identity(self.model_id)

    def embed(self, text: str) -> np.ndarray:
        return self.gateway.embed(text, self.model_id, **self.tags)


def _elapsed_ms(t0: float) -> float:
    return max(0.0, (time.perf_counter() - t0) * 1000.0)


def make_backend(
    kind: str,
    *,
    base_url: str | None = None,
    api_key: str | None = None,
    mock_script: str | Path | None = None,
    run_index: int | None = None,
    **http_kw: Any,
) -> MockBackend | HttpBackend:
    if kind == "mock":
        if mock_script is None:
            return MockBackend({}, run_index=run_index)
        return MockBackend.from_file(mock_script, run_index=run_index)
    if kind == "http":
        base_url = base_url or os.environ.get("LLM_BASE_URL", "")
        api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY") or None
        return HttpBackend(base_url, api_key, **http_kw)
    raise ValueError(f"unknown backend {kind!r} (expected 'http' or 'mock')")
