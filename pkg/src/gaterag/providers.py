"""Chat and embedding backends behind small protocols, with transcript record/replay.

Every pipeline stage receives its providers as arguments, so the test suite
runs entirely on :class:`MockChat`, :class:`ReplayChat` and
:class:`HashEmbedder`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence, TypeVar

import httpx
import numpy as np

from .errors import (
    AuthError,
    EmptyTextError,
    MalformedResponseError,
    NoMatchError,
    ProviderError,
    RateLimitError,
    ReplayMissError,
    TransientProviderError,
)
from .graph import Vector
from .text import tokenize

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_MAX_INFLIGHT = 8
API_KEY_ENV = "GATERAG_API_KEY"


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = 1024

    @property
    def key(self) -> str:
        """SHA-256 over the canonical JSON form, so field order never matters."""
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class ChatProvider(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[Vector]: ...


def bounded_map(fn: Callable[[T], R], items: Iterable[T], max_inflight: int = DEFAULT_MAX_INFLIGHT) -> list[R]:
    """``map`` with at most ``max_inflight`` concurrent calls; results keep input order."""
    items = list(items)
    if max_inflight <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_inflight) as pool:
        return list(pool.map(fn, items))


# -- transcripts -------------------------------------------------------


class Transcript:
    """Append-only JSON-lines log of request-hash / response pairs."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: dict[str, ChatResponse] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        row = json.loads(line)
                        self.entries[row["key"]] = ChatResponse(**row["response"])
                    except (ValueError, KeyError, TypeError) as exc:
                        raise MalformedResponseError(f"{self.path}:{lineno}: bad transcript line") from exc

    def get(self, key: str) -> ChatResponse | None:
        return self.entries.get(key)

    def record(self, request: ChatRequest, response: ChatResponse) -> None:
        with self._lock:
            if request.key in self.entries:
                return
            self.entries[request.key] = response
            if self.path:
                row = {"key": request.key, "request": asdict(request), "response": asdict(response)}
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


class RecordingChat:
    """Pass-through provider that appends every exchange to a transcript."""

    def __init__(self, inner: ChatProvider, transcript: Transcript):
        self.inner = inner
        self.transcript = transcript

    def chat(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.chat(request)
        self.transcript.record(request, response)
        return response


class ReplayChat:
    def __init__(self, transcript: Transcript):
        self.transcript = transcript

    def chat(self, request: ChatRequest) -> ChatResponse:
        response = self.transcript.get(request.key)
        if response is None:
            raise ReplayMissError(f"no transcript entry for request {request.key[:12]}")
        return response


# -- scripted mock -----------------------------------------------------

Responder = str | Callable[[ChatRequest, "re.Match[str]"], str]


class MockChat:
    """Rule-scripted chat provider.

    Rules are ``(pattern, response)`` pairs tried in order against the user
    prompt (``re.search``).  A string response is expanded with the match
    (``\\1`` back-references work); a callable gets the request and match.
    With no matching rule, ``default`` is returned, or :class:`NoMatchError`
    is raised in strict mode.
    """

    def __init__(
        self,
        rules: Sequence[tuple[str, Responder]] = (),
        default: str | None = None,
        strict: bool = True,
    ):
        self.rules = [(re.compile(p, re.DOTALL), r) for p, r in rules]
        self.default = default
        self.strict = strict
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_script(cls, script: dict | str | Path) -> MockChat:
        """Build from ``{"rules": [{"pattern", "response"}], "default", "strict"}``."""
        if not isinstance(script, dict):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        rules = [(r["pattern"], r["response"]) for r in script.get("rules", [])]
        return cls(rules, default=script.get("default"), strict=script.get("strict", True))

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
        for pattern, responder in self.rules:
            match = pattern.search(request.user)
            if match is None:
                continue
            text = responder(request, match) if callable(responder) else match.expand(responder)
            return ChatResponse(text, len(request.user.split()), len(text.split()))
        if self.default is not None:
            return ChatResponse(self.default, len(request.user.split()), len(self.default.split()))
        if self.strict:
            raise NoMatchError(f"no mock rule matches prompt: {request.user[:80]!r}")
        return ChatResponse("")


class EchoChat:
    """Returns the user prompt verbatim."""

    def chat(self, request: ChatRequest) -> ChatResponse:
        return ChatResponse(request.user)


# -- OpenAI-compatible HTTP --------------------------------------------


@dataclass
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    embedding_model: str = "text-embedding-3-small"
    api_key_env: str = API_KEY_ENV
    timeout: float = 60.0
    max_attempts: int = 5
    backoff_base: float = 0.5
    backoff_max: float = 8.0

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return key


class _HttpBase:
    def __init__(
        self,
        config: EndpointConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/") + "/",
            timeout=config.timeout,
            transport=transport,
        )
        self._sleep = sleep
        self._rng = random.Random(0)
        self.attempts_log: list[dict] = []

    def _post(self, path: str, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self.config.api_key()}"}
        attempts = self.config.max_attempts
        for attempt in range(1, attempts + 1):
            try:
                resp = self._client.post(path, json=payload, headers=headers)
            except httpx.TransportError as exc:
                status, detail = None, str(exc)
            else:
                status, detail = resp.status_code, resp.text[:200]
            self.attempts_log.append({"attempt": attempt, "status": status})
            log.debug("POST %s attempt %d -> %s", path, attempt, status)
            if status is not None and status < 400:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise MalformedResponseError(f"response is not JSON: {detail!r}") from exc
            if status in (401, 403):
                raise AuthError(f"authentication failed ({status}): {detail}")
            retryable = status is None or status == 429 or status >= 500
            if not retryable:
                raise ProviderError(f"request rejected ({status}): {detail}")
            if attempt == attempts:
                if status == 429:
                    raise RateLimitError(f"rate limited after {attempts} attempts", attempts)
                raise TransientProviderError(f"gave up after {attempts} attempts: {detail}")
            delay = min(self.config.backoff_max, self.config.backoff_base * 2 ** (attempt - 1))
            self._sleep(delay * (0.5 + self._rng.random() / 2))
        raise AssertionError("unreachable")

    def close(self) -> None:
        self._client.close()


class HttpChat(_HttpBase):
    """Chat-completions client with exponential backoff on 429/5xx/transport errors."""

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        body = self._post("chat/completions", payload)
        try:
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage") or {}
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected chat response shape: {str(body)[:200]}") from exc
        return ChatResponse(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


class HttpEmbedder(_HttpBase):
    def __init__(self, config: EndpointConfig, dimension: int, **kwargs):
        super().__init__(config, **kwargs)
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> list[Vector]:
        body = self._post("embeddings", {"model": self.config.embedding_model, "input": list(texts)})
        try:
            rows = sorted(body["data"], key=lambda d: d["index"])
            vecs = [np.asarray(r["embedding"], dtype=float) for r in rows]
        except (KeyError, TypeError) as exc:
            raise MalformedResponseError("unexpected embedding response shape") from exc
        out = []
        for v in vecs:
            if v.shape != (self.dimension,):
                raise MalformedResponseError(f"embedding has dimension {v.shape}, expected {self.dimension}")
            out.append(tuple(float(x) for x in v / np.linalg.norm(v)))
        return out


# -- deterministic embeddings -------------------------------------------


def token_bucket(token: str, dimension: int) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big") % dimension


@dataclass
class HashEmbedder:
    """Bag-of-words hashing embedder: token counts into fixed buckets, L2-normalized."""

    dimension: int = 64
    _cache: dict[str, Vector] = field(default_factory=dict, repr=False)

    def embed_one(self, text: str) -> Vector:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        tokens = tokenize(text)
        if not tokens:
            raise EmptyTextError(f"no tokens to embed in {text!r}")
        vec = np.zeros(self.dimension)
        for tok in tokens:
            vec[token_bucket(tok, self.dimension)] += 1.0
        out = tuple(float(x) for x in vec / np.linalg.norm(vec))
        self._cache[text] = out
        return out

    def embed(self, texts: Sequence[str]) -> list[Vector]:
        return [self.embed_one(t) for t in texts]


def hash_embed(text: str, dimension: int = 64) -> Vector:
    return HashEmbedder(dimension).embed_one(text)
