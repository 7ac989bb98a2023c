"""Provider abstraction for every chat/vision LLM call in the pipeline.

One shared client funnels all traffic: content-addressed response cache,
global requests-per-second budget, exponential-backoff retries, and an
audit log of every upstream dispatch.  A deterministic mock provider
(ordered or keyed by request hash) makes every stage replayable offline.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import MockScriptError, ProviderError, RateLimitedError, ResponseFormatError
from .jsonlio import dumps_canonical, read_jsonl
from .textutil import sha256_hex


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user" | "assistant"
    text: str


@dataclass
class LlmRequest:
    """A fully specified call; `request_key` hashes every field that can
    influence the reply, so identical content always maps to one cache slot."""

    model: str
    messages: list[Message]
    attachments: list[bytes | str] = field(default_factory=list)
    temperature: float = 0.0
    max_output: int | None = None

    def attachment_hashes(self) -> list[str]:
        # bytes are hashed directly; paths by file content; a path with no
        # file behind it hashes as an opaque reference string
        hashes = []
        for att in self.attachments:
            if isinstance(att, bytes):
                data = att
            elif Path(att).is_file():
                data = Path(att).read_bytes()
            else:
                data = att.encode("utf-8")
            hashes.append(sha256_hex(data))
        return hashes

    @property
    def request_key(self) -> str:
        payload = {
            "model": self.model,
            "messages": [[m.role, m.text] for m in self.messages],
            "attachments": self.attachment_hashes(),
            "temperature": self.temperature,
            "max_output": self.max_output,
        }
        return sha256_hex(dumps_canonical(payload))


@dataclass
class LlmResponse:
    text: str
    provider: str
    cached: bool
    latency: float
    prompt_tokens: int | None = None
    output_tokens: int | None = None


class Provider(Protocol):
    name: str

    def complete(self, request: LlmRequest) -> str: ...


class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class VirtualClock:
    """Deterministic clock for tests: sleep() advances time instantly."""

    def __init__(self, start: float = 0.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self._t += seconds


@dataclass
class AuditEntry:
    request_key: str
    attempts: int
    outcome: str  # "ok" | "cached" | "error"
    provider: str
    dispatched_at: list[float] = field(default_factory=list)


class LlmClient:
    """Shared, thread-safe client.

    Dispatch policy: cache lookup by request_key; on miss, send with
    exponential backoff (base 1s, factor 2, at most 5 attempts) while
    honoring a global requests-per-second budget.  Successful replies are
    persisted to the cache store so reruns are byte-identical.
    """

    def __init__(
        self,
        provider: Provider,
        cache_dir: str | Path | None = None,
        rps: float | None = None,
        clock: Clock | None = None,
        max_attempts: int = 5,
        base_delay: float = 1.0,
        backoff_factor: float = 2.0,
    ):
        self.provider = provider
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.rps = rps
        self.clock = clock or SystemClock()
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.backoff_factor = backoff_factor
        self.audit_log: list[AuditEntry] = []
        self._memory_cache: dict[str, str] = {}
        self._lock = threading.Lock()
        self._next_slot = 0.0

    # -- cache -------------------------------------------------------------

    def _cache_get(self, key: str) -> str | None:
        if key in self._memory_cache:
            return self._memory_cache[key]
        if self.cache_dir:
            path = self.cache_dir / f"{key}.json"
            if path.exists():
                record = json.loads(path.read_text(encoding="utf-8"))
                self._memory_cache[key] = record["text"]
                return record["text"]
        return None

    def _cache_put(self, key: str, text: str) -> None:
        self._memory_cache[key] = text
        if self.cache_dir:
            record = {"provider": self.provider.name, "text": text}
            path = self.cache_dir / f"{key}.json"
            path.write_text(dumps_canonical(record), encoding="utf-8")

    # -- rate limiting -----------------------------------------------------

    def _acquire_slot(self) -> float:
        """Block until a dispatch slot is free; returns the dispatch time."""
        with self._lock:
            if self.rps is None:
                return self.clock.now()
            interval = 1.0 / self.rps
            now = self.clock.now()
            slot = max(now, self._next_slot)
            self._next_slot = slot + interval
        wait = slot - now
        if wait > 0:
            self.clock.sleep(wait)
        return slot

    # -- calls ---------------------------------------------------------------

    def call(self, request: LlmRequest) -> LlmResponse:
        key = request.request_key
        cached = self._cache_get(key)
        if cached is not None:
            self.audit_log.append(
                AuditEntry(request_key=key, attempts=0, outcome="cached",
                           provider=self.provider.name)
            )
            return LlmResponse(text=cached, provider=self.provider.name,
                               cached=True, latency=0.0)

        entry = AuditEntry(request_key=key, attempts=0, outcome="error",
                           provider=self.provider.name)
        self.audit_log.append(entry)
        start = self.clock.now()
        last_error: ProviderError | None = None
        for attempt in range(1, self.max_attempts + 1):
            dispatched = self._acquire_slot()
            entry.attempts = attempt
            entry.dispatched_at.append(dispatched)
            try:
                text = self.provider.complete(request)
            except ProviderError as exc:
                last_error = exc
                if not exc.retryable or attempt == self.max_attempts:
                    raise
                self.clock.sleep(self.base_delay * self.backoff_factor ** (attempt - 1))
                continue
            entry.outcome = "ok"
            self._cache_put(key, text)
            return LlmResponse(text=text, provider=self.provider.name, cached=False,
                               latency=self.clock.now() - start)
        raise last_error or ProviderError("exhausted retries")

    def write_audit(self, path: str | Path) -> None:
        records = [
            {
                "request_key": e.request_key,
                "attempts": e.attempts,
                "outcome": e.outcome,
                "provider": e.provider,
            }
            for e in self.audit_log
        ]
        from .jsonlio import write_jsonl

        write_jsonl(path, records)


DEFAULT_RETRY_SUFFIX = (
    "Your previous reply did not follow the required format. Answer again, "
    "following the format instructions exactly."
)


def request_with_retry(
    client: LlmClient,
    model: str,
    messages: list[Message],
    parse,
    attachments: list[bytes | str] | None = None,
    temperature: float = 0.0,
    retry_suffix: str = DEFAULT_RETRY_SUFFIX,
):
    """Call once; on a ResponseFormatError from `parse`, re-prompt once.

    The re-prompt appends the failed reply plus a correction turn, so it is
    a distinct request (and a distinct cache slot).  Returns (parsed, raw);
    the second parse failure propagates.
    """
    atts = list(attachments or [])
    resp = client.call(LlmRequest(model, list(messages), atts, temperature))
    try:
        return parse(resp.text), resp.text
    except ResponseFormatError:
        retry = list(messages) + [
            Message("assistant", resp.text),
            Message("user", retry_suffix),
        ]
        resp2 = client.call(LlmRequest(model, retry, atts, temperature))
        return parse(resp2.text), resp2.text


# ---------------------------------------------------------------------------
# Mock provider
# ---------------------------------------------------------------------------

FAULT_STATUSES = {"429", "500", "503"}


class MockProvider:
    """Deterministic scripted provider.

    Two modes:
      * ordered -- replies are consumed FIFO regardless of content;
      * keyed   -- replies are looked up by request_key (a key may map to a
        list, consumed in order, for repeated identical requests).

    Script entries may be plain reply strings or fault markers
    ``{"fault": "429"}`` that raise a retryable error instead of replying.
    An unscripted request always raises: the mock never invents output.
    """

    name = "mock"

    def __init__(
        self,
        ordered: list[str | dict] | None = None,
        keyed: dict[str, str | list[str | dict] | dict] | None = None,
    ):
        if (ordered is None) == (keyed is None):
            raise ValueError("exactly one of ordered/keyed script must be given")
        if keyed is not None and not keyed:
            raise ValueError("keyed script must be nonempty")
        self._ordered = list(ordered) if ordered is not None else None
        self._keyed: dict[str, list] | None = None
        if keyed is not None:
            self._keyed = {
                k: list(v) if isinstance(v, list) else [v] for k, v in keyed.items()
            }
        self.calls = 0

    @classmethod
    def from_script_file(cls, path: str | Path) -> "MockProvider":
        """Load a JSONL script: entries {"text": ...} (ordered mode) or
        {"key": ..., "text": ...} (keyed mode); {"fault": "429"} injects errors."""
        ordered: list[str | dict] = []
        keyed: dict[str, list] = {}
        any_key = False
        for _, obj in read_jsonl(path):
            if not isinstance(obj, dict):
                raise MockScriptError(f"bad script entry: {obj!r}")
            entry: str | dict
            if "fault" in obj:
                entry = {"fault": str(obj["fault"])}
            elif "text" in obj:
                entry = obj["text"]
            else:
                raise MockScriptError(f"script entry needs 'text' or 'fault': {obj!r}")
            if "key" in obj:
                any_key = True
                keyed.setdefault(obj["key"], []).append(entry)
            else:
                ordered.append(entry)
        if any_key and ordered:
            raise MockScriptError("script mixes keyed and ordered entries")
        return cls(keyed=keyed) if any_key else cls(ordered=ordered)

    def _take(self, entry: str | dict) -> str:
        if isinstance(entry, dict):
            status = str(entry.get("fault", ""))
            if status == "429":
                raise RateLimitedError("mock fault: 429")
            raise ProviderError(f"mock fault: {status}", retryable=status in FAULT_STATUSES)
        return entry

    def complete(self, request: LlmRequest) -> str:
        self.calls += 1
        if self._ordered is not None:
            if not self._ordered:
                raise MockScriptError("script exhausted")
            return self._take(self._ordered.pop(0))
        assert self._keyed is not None
        key = request.request_key
        entries = self._keyed.get(key)
        if not entries:
            raise MockScriptError(f"unscripted request: {key}")
        return self._take(entries.pop(0))


def mock_provider(
    script: list[str | dict] | dict[str, str | list | dict],
) -> MockProvider:
    """Build a MockProvider from an ordered list or a keyed dict."""
    if isinstance(script, dict):
        return MockProvider(keyed=script)
    return MockProvider(ordered=script)


class HttpChatProvider:
    """Minimal OpenAI-style chat endpoint client.

    Endpoint and credentials come from the environment (LLM_ENDPOINT,
    LLM_API_KEY); attachments are sent as base64 image parts.
    """

    name = "http"

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 timeout: float = 120.0):
        import os

        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT", "")
        self.api_key = api_key or os.environ.get("LLM_API_KEY", "")
        self.timeout = timeout
        if not self.endpoint:
            raise ProviderError("no LLM endpoint configured (LLM_ENDPOINT)")

    def complete(self, request: LlmRequest) -> str:
        import base64

        import requests

        content_messages = []
        for m in request.messages:
            content_messages.append({"role": m.role, "content": m.text})
        if request.attachments:
            parts = [{"type": "text", "text": content_messages[-1]["content"]}]
            for att in request.attachments:
                data = Path(att).read_bytes() if isinstance(att, str) else att
                parts.append({
                    "type": "image_url",
                    "image_url": {"url": "data:image/png;base64,"
                                  + base64.b64encode(data).decode("ascii")},
                })
            content_messages[-1]["content"] = parts
        body = {
            "model": request.model,
            "messages": content_messages,
            "temperature": request.temperature,
        }
        if request.max_output is not None:
            body["max_tokens"] = request.max_output
        try:
            resp = requests.post(
                self.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"transport failure: {exc}", retryable=True) from exc
        if resp.status_code in (401, 403):
            from .errors import AuthError

            raise AuthError(f"authentication failure: {resp.status_code}")
        if resp.status_code == 429:
            raise RateLimitedError()
        if resp.status_code >= 500:
            raise ProviderError(f"server error: {resp.status_code}", retryable=True)
        if resp.status_code != 200:
            raise ProviderError(f"unexpected status: {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed provider reply: {exc}") from exc
