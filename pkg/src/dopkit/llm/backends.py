"""Chat-completion backends and the metered gateway in front of them."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from .ledger import UsageLedger, estimate_tokens

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None


class LlmError(Exception):
    pass


class BackendUnavailable(LlmError):
    """Network failure, timeout or server error."""


class ContentFilterError(LlmError):
    """The backend refused the request on content grounds."""


class ScriptExhausted(RuntimeError):
    """A scripted backend ran out of responses for a call site. Kept apart
    from :class:`LlmError` so a short test script fails loudly instead of
    looking like a backend outage."""


class LlmBackend(Protocol):
    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        call_site: str | None = None,
        images: Sequence[str] | None = None,
    ) -> Completion: ...


class ScriptedBackend:
    """Replays canned responses, one queue per call site.

    A call site such as ``"planner:recovery"`` falls back to ``"planner"``
    when it has no queue of its own. Queue items are plain strings, objects
    ``{"text", "input_tokens", "output_tokens"}`` or ``{"error": kind}`` with
    kind ``content_filter`` or ``unreachable``.
    """

    def __init__(self, script: Mapping[str, Sequence[Any]]):
        self._queues = {site: deque(items) for site, items in script.items()}
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedBackend:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _queue_for(self, call_site: str) -> deque:
        site = call_site
        while True:
            if site in self._queues and self._queues[site]:
                return self._queues[site]
            if ":" not in site:
                raise ScriptExhausted(f"no scripted response left for call site {call_site!r}")
            site = site.rsplit(":", 1)[0]

    def remaining(self, call_site: str) -> int:
        return len(self._queues.get(call_site, ()))

    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        call_site: str | None = None,
        images: Sequence[str] | None = None,
    ) -> Completion:
        site = call_site or "default"
        with self._lock:
            item = self._queue_for(site).popleft()
            self.calls.append((site, prompt))
        if isinstance(item, str):
            return Completion(item)
        if "error" in item:
            if item["error"] == "content_filter":
                raise ContentFilterError(item.get("message", "content filtered"))
            raise BackendUnavailable(item.get("message", "backend unreachable"))
        return Completion(item.get("text", ""), item.get("input_tokens"), item.get("output_tokens"))


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key: str | None = None,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model = model
        key = api_key if api_key is not None else os.environ.get(api_key_env)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        call_site: str | None = None,
        images: Sequence[str] | None = None,
    ) -> Completion:
        content: Any = prompt
        if images:
            content = [{"type": "text", "text": prompt}] + [
                {"type": "image_url", "image_url": {"url": img}} for img in images
            ]
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            response = self._client.post("/chat/completions", json=body)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(str(exc)) from exc
        if response.status_code >= 500 or response.status_code == 429:
            raise BackendUnavailable(f"HTTP {response.status_code}")
        data = _json_body(response)
        if response.status_code >= 400:
            error = data.get("error") or {}
            if error.get("code") == "content_filter" or "content_filter" in str(error.get("message", "")):
                raise ContentFilterError(error.get("message", "content filtered"))
            raise LlmError(f"HTTP {response.status_code}: {error.get('message', response.text[:200])}")
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise LlmError("response has no choices") from exc
        if choice.get("finish_reason") == "content_filter":
            raise ContentFilterError("completion stopped by content filter")
        usage = data.get("usage") or {}
        return Completion(
            (choice.get("message") or {}).get("content") or "",
            usage.get("prompt_tokens"),
            usage.get("completion_tokens"),
        )


def _json_body(response: httpx.Response) -> dict[str, Any]:
    try:
        data = response.json()
    except ValueError:
        return {}
    return data if isinstance(data, dict) else {}


class Gateway:
    """Single entry point for model calls: fixed temperature, and exactly
    one ledger entry per call, failed calls included."""

    def __init__(
        self,
        backend: LlmBackend,
        ledger: UsageLedger | None = None,
        *,
        temperature: float = 0.0,
        max_tokens: int = 2048,
        clock: Callable[[], float] = time.perf_counter,
    ):
        self.backend = backend
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.temperature = temperature
        self.max_tokens = max_tokens
        self._clock = clock

    def complete(self, prompt: str, call_site: str, *, images: Sequence[str] | None = None) -> Completion:
        start = self._clock()
        completion: Completion | None = None
        try:
            completion = self.backend.complete(
                prompt,
                temperature=self.temperature,
                max_tokens=self.max_tokens,
                call_site=call_site,
                images=images,
            )
            return completion
        finally:
            wall_ms = (self._clock() - start) * 1000
            if completion is None:
                self.ledger.record(call_site, estimate_tokens(prompt), 0, wall_ms)
            else:
                self.ledger.record(
                    call_site,
                    completion.input_tokens if completion.input_tokens is not None else estimate_tokens(prompt),
                    completion.output_tokens
                    if completion.output_tokens is not None
                    else estimate_tokens(completion.text),
                    wall_ms,
                )
