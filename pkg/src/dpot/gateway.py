"""Chat-completion gateway: HTTP endpoint or scripted responses.

The HTTP backend speaks the common ``/chat/completions`` wire format.
The scripted backend replays canned responses in FIFO order so whole
runs are deterministic without a network.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx

from .prompts import PromptBundle

logger = logging.getLogger(__name__)

API_KEY_ENV = "DPOT_API_KEY"
DEFAULT_MODEL = "gpt-4-vision-preview"


class GatewayError(RuntimeError):
    pass


class AuthenticationError(GatewayError):
    pass


class RetriesExhaustedError(GatewayError):
    pass


class ScriptExhaustedError(GatewayError):
    """A scripted backend was asked for more responses than it holds."""


@dataclass(frozen=True, slots=True)
class DecodingConfig:
    model_name: str = DEFAULT_MODEL
    max_tokens: int = 300
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True, slots=True)
class UsageStats:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    estimated: bool = False

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "UsageStats") -> "UsageStats":
        return UsageStats(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.estimated or other.estimated,
        )


@dataclass(frozen=True, slots=True)
class CompletionResult:
    text: str
    usage: UsageStats
    latency: float


def estimate_tokens(text: str) -> int:
    """Rough token count: ``ceil(utf8_bytes / 4)``."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def estimate_usage(bundle: PromptBundle, completion: str) -> UsageStats:
    return UsageStats(
        sum(estimate_tokens(m.text) for m in bundle.messages),
        estimate_tokens(completion),
        estimated=True,
    )


class Backend(Protocol):
    identity: str

    def complete(self, bundle: PromptBundle, cfg: DecodingConfig) -> CompletionResult: ...


class RateLimiter:
    """Spaces request dispatch to at most ``per_minute`` across threads."""

    def __init__(self, per_minute: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if per_minute <= 0:
            raise ValueError("per_minute must be positive")
        self.interval = 60.0 / per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            self._sleep(wait)


class ScriptedBackend:
    """Replays queued responses. One instance per episode run."""

    identity = "scripted"

    def __init__(self, responses: Iterable[str]):
        self._queue: deque[str] = deque(responses)
        self._lock = threading.Lock()
        self.calls: list[PromptBundle] = []

    def __len__(self) -> int:
        return len(self._queue)

    def complete(self, bundle: PromptBundle, cfg: DecodingConfig) -> CompletionResult:
        start = time.perf_counter()
        with self._lock:
            if not self._queue:
                raise ScriptExhaustedError(
                    f"scripted backend queue empty at call {len(self.calls) + 1}"
                )
            text = self._queue.popleft()
            self.calls.append(bundle)
        return CompletionResult(text, estimate_usage(bundle, text), time.perf_counter() - start)


def load_scripts(path: str | Path) -> dict[str, list[str]]:
    """Read a scripts file: one ``{"episode_id", "responses"}`` per line."""
    scripts: dict[str, list[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if not isinstance(rec.get("episode_id"), str) or not isinstance(rec.get("responses"), list):
            raise ValueError(f"{path}:{lineno}: expected episode_id and responses")
        scripts[rec["episode_id"]] = [str(r) for r in rec["responses"]]
    return scripts


def save_scripts(scripts: dict[str, list[str]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for eid, responses in scripts.items():
            fh.write(json.dumps({"episode_id": eid, "responses": responses}, ensure_ascii=False) + "\n")
    return path


def wire_messages(bundle: PromptBundle) -> list[dict[str, Any]]:
    out = []
    for m in bundle.messages:
        if m.image_ref:
            content: Any = [
                {"type": "text", "text": m.text},
                {"type": "image_url", "image_url": {"url": m.image_ref}},
            ]
        else:
            content = m.text
        out.append({"role": m.role.value, "content": content})
    return out


def request_body(bundle: PromptBundle, cfg: DecodingConfig) -> dict[str, Any]:
    return {
        "model": cfg.model_name,
        "messages": wire_messages(bundle),
        "max_tokens": cfg.max_tokens,
        "temperature": cfg.temperature,
    }


_RETRYABLE = {429, 500, 502, 503, 504}


class HttpBackend:
    """POSTs to ``{base_url}/chat/completions`` with bearer auth.

    Transport errors, 429 and 5xx are retried with exponential backoff;
    a well-formed response is never retried.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        rate_limiter: RateLimiter | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.retries = retries
        self.backoff = backoff
        self.rate_limiter = rate_limiter
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self.identity = f"http:{self.base_url}"

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict[str, str]:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def complete(self, bundle: PromptBundle, cfg: DecodingConfig) -> CompletionResult:
        url = f"{self.base_url}/chat/completions"
        body = request_body(bundle, cfg)
        start = time.perf_counter()
        last_error = "no attempt made"
        for attempt in range(self.retries + 1):
            if attempt:
                delay = self.backoff * 2 ** (attempt - 1)
                logger.warning("retrying %s in %.1fs (%s)", url, delay, last_error)
                self._sleep(delay)
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise AuthenticationError(f"HTTP {resp.status_code} from {url}")
            if resp.status_code in _RETRYABLE:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            return self._result(resp, bundle, time.perf_counter() - start)
        raise RetriesExhaustedError(f"{url}: gave up after {self.retries + 1} attempts ({last_error})")

    @staticmethod
    def _result(resp: httpx.Response, bundle: PromptBundle, latency: float) -> CompletionResult:
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc
        if not isinstance(text, str):
            text = "" if text is None else str(text)
        usage = payload.get("usage") or {}
        pt, ct = usage.get("prompt_tokens"), usage.get("completion_tokens")
        if isinstance(pt, int) and isinstance(ct, int):
            stats = UsageStats(pt, ct, estimated=False)
        else:
            stats = estimate_usage(bundle, text)
        return CompletionResult(text, stats, latency)


def complete(bundle: PromptBundle, cfg: DecodingConfig, backend: Backend) -> CompletionResult:
    """Send ``bundle`` to ``backend``; latency covers retries."""
    start = time.perf_counter()
    result = backend.complete(bundle, cfg)
    return CompletionResult(result.text, result.usage, time.perf_counter() - start)
