"""Chat-completions endpoints: HTTP client, response cache, scripted stand-ins.

Every stage of the pipeline talks to a policy through the same narrow
interface: send a message list to an endpoint, get back ``n`` completions.
The HTTP client retries transport failures with exponential backoff and
can cache responses in content-addressed files so repeated runs are free
and deterministic.  Scripted clients replay canned completions for tests.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence
from urllib.parse import urlparse

import requests

Message = dict[str, str]


@dataclass(frozen=True)
class ChatEndpoint:
    base_url: str
    model_name: str
    credentials_env: str | None = None
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 2048
    n: int = 1

    def __post_init__(self) -> None:
        parts = urlparse(self.base_url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ValueError(f"base_url is not a well-formed http(s) URL: {self.base_url!r}")
        if not self.model_name:
            raise ValueError("model_name must be nonempty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1 or self.n < 1:
            raise ValueError("max_tokens and n must be positive")

    def cache_identity(self) -> dict:
        """The endpoint fields that determine a response, for cache keying."""
        return {"base_url": self.base_url, "model": self.model_name}


class EndpointUnreachable(Exception):
    """Transport kept failing after the retry budget."""


class EndpointError(Exception):
    """The endpoint answered, but not with usable completions."""

    def __init__(self, status: int, body: str):
        super().__init__(f"endpoint error {status}: {body[:200]}")
        self.status = status
        self.body = body


class ChatClient(Protocol):
    def complete(self, endpoint: ChatEndpoint, messages: Sequence[Message], n: int) -> list[str]:
        ...


def request_fingerprint(endpoint: ChatEndpoint, body: dict) -> str:
    payload = json.dumps({"endpoint": endpoint.cache_identity(), "body": body},
                         sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed completion store; one JSON file per request hash.

    Writes go through a temp file and an atomic rename, so concurrent
    readers never observe a partial entry.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> list[str] | None:
        path = self._path(key)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None
        completions = data.get("completions")
        if isinstance(completions, list) and all(isinstance(c, str) for c in completions):
            return completions
        return None

    def put(self, key: str, completions: list[str]) -> None:
        path = self._path(key)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_text(json.dumps({"completions": completions}), encoding="utf-8")
        os.replace(tmp, path)


class HttpChatClient:
    """POSTs to {base_url}/chat/completions with bearer credentials from the
    environment.  Transport errors are retried up to ``max_attempts`` with
    exponential backoff; HTTP-level sampling errors are surfaced immediately.
    """

    def __init__(self, cache_dir: str | Path | None = None, *,
                 max_attempts: int = 3, backoff_base: float = 0.5,
                 timeout: float = 120.0,
                 session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.cache = ResponseCache(cache_dir) if cache_dir is not None else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.session = session or requests.Session()
        self.sleep = sleep
        self.network_calls = 0
        self.cache_hits = 0

    def _headers(self, endpoint: ChatEndpoint) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if endpoint.credentials_env:
            token = os.environ.get(endpoint.credentials_env)
            if token is None:
                raise EndpointUnreachable(
                    f"credentials variable {endpoint.credentials_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, endpoint: ChatEndpoint, messages: Sequence[Message], n: int) -> list[str]:
        if n < 1:
            raise ValueError("n must be >= 1")
        body = {
            "model": endpoint.model_name,
            "messages": list(messages),
            "temperature": endpoint.temperature,
            "top_p": endpoint.top_p,
            "max_tokens": endpoint.max_tokens,
            "n": n,
        }
        key = request_fingerprint(endpoint, body)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                self.cache_hits += 1
                return list(cached)
        completions = self._post(endpoint, body)
        if self.cache is not None:
            self.cache.put(key, completions)
        return completions

    def _post(self, endpoint: ChatEndpoint, body: dict) -> list[str]:
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        headers = self._headers(endpoint)
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                self.network_calls += 1
                response = self.session.post(url, json=body, headers=headers,
                                             timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code != 200:
                raise EndpointError(response.status_code, response.text)
            return self._parse(response)
        raise EndpointUnreachable(f"{url}: {last_error}")

    @staticmethod
    def _parse(response: requests.Response) -> list[str]:
        try:
            data = response.json()
            choices = data["choices"]
            completions = [choice["message"]["content"] for choice in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise EndpointError(200, f"malformed completion payload: {exc}") from exc
        if not completions or not all(isinstance(c, str) for c in completions):
            raise EndpointError(200, "completion payload missing message content")
        return completions


Script = str | Sequence[str] | Callable[[Sequence[Message], int], list[str]]


class ScriptedChatClient:
    """Replays canned completions, keyed by endpoint model name.

    Each endpoint gets a queue of turns.  A turn may be a single string
    (replicated across the n requested samples), a sequence of exactly n
    strings, or a callable for failure injection.  Every call is recorded
    so tests can assert on prompt contents and call counts.
    """

    def __init__(self, scripts: dict[str, list[Script]] | list[Script]):
        if isinstance(scripts, dict):
            self.queues = {name: list(turns) for name, turns in scripts.items()}
            self.default_queue: list[Script] | None = None
        else:
            self.queues = {}
            self.default_queue = list(scripts)
        self.calls: list[tuple[str, list[Message], int]] = []

    def complete(self, endpoint: ChatEndpoint, messages: Sequence[Message], n: int) -> list[str]:
        self.calls.append((endpoint.model_name, [dict(m) for m in messages], n))
        queue = self.queues.get(endpoint.model_name, self.default_queue)
        if queue is None:
            raise AssertionError(f"no script for endpoint {endpoint.model_name!r}")
        if not queue:
            raise AssertionError(f"script for {endpoint.model_name!r} is exhausted")
        turn = queue.pop(0)
        if callable(turn):
            return turn(messages, n)
        if isinstance(turn, str):
            return [turn] * n
        turn = list(turn)
        if len(turn) != n:
            raise AssertionError(f"scripted turn has {len(turn)} completions, call asked for {n}")
        return turn

    def calls_for(self, model_name: str) -> list[tuple[str, list[Message], int]]:
        return [c for c in self.calls if c[0] == model_name]


def parse_endpoint_flag(flag: str) -> ChatEndpoint:
    """CLI shorthand BASE_URL::MODEL_NAME, e.g. http://host:8000/v1::solver-7b."""
    base_url, sep, model_name = flag.rpartition("::")
    if not sep or not base_url or not model_name:
        raise ValueError(f"endpoint flag must look like BASE_URL::MODEL_NAME, got {flag!r}")
    return ChatEndpoint(base_url=base_url, model_name=model_name)
