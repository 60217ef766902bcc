"""Chat and embedding providers.

Two backends share one interface: an OpenAI-compatible HTTP client and a
deterministic offline mock. The mock resolves a request through, in order, an
exact script table, an optional transform callable, and (unless configured to
error) a digest-derived fallback so whole pipelines can run offline and
reproducibly.

All providers support retry-with-backoff, an optional content-addressed
response cache, and per-call run-ledger events.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import requests

from .errors import ProviderError, TransientProviderError
from .jsonio import canonical_json, sha256_text
from .ledger import RunLedger

logger = logging.getLogger(__name__)

API_BASE_ENV = "CITING_API_BASE"
API_KEY_ENV = "CITING_API_KEY"

_ROLES = ("system", "user", "assistant")
_RETRYABLE_STATUS = (408, 429)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ProviderError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_new_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        if not isinstance(self.messages, tuple):
            object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ProviderError("chat request needs at least one message")
        if self.messages[-1].role != "user":
            raise ProviderError("last chat message must have role 'user'")
        if self.temperature < 0:
            raise ProviderError("temperature must be >= 0")
        if self.max_new_tokens < 1:
            raise ProviderError("max_new_tokens must be >= 1")

    @property
    def user_content(self) -> str:
        return self.messages[-1].content

    def content_dict(self) -> dict:
        return {
            "model": self.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_new_tokens": self.max_new_tokens,
            "seed": self.seed,
        }


def user_request(
    model_name: str,
    content: str,
    *,
    system: str | None = None,
    temperature: float = 0.0,
    max_new_tokens: int = 512,
    seed: int | None = None,
) -> ChatRequest:
    messages: list[ChatMessage] = []
    if system:
        messages.append(ChatMessage("system", system))
    messages.append(ChatMessage("user", content))
    return ChatRequest(
        model_name=model_name,
        messages=tuple(messages),
        temperature=temperature,
        max_new_tokens=max_new_tokens,
        seed=seed,
    )


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dimension: int

    def __post_init__(self):
        if not isinstance(self.values, tuple):
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.dimension < 1:
            raise ProviderError("embedding dimension must be >= 1")
        if len(self.values) != self.dimension:
            raise ProviderError(
                f"embedding has {len(self.values)} values but dimension {self.dimension}"
            )
        if any(not math.isfinite(v) for v in self.values):
            raise ProviderError("embedding contains non-finite values")

    @classmethod
    def of(cls, values: Sequence[float]) -> "EmbeddingVector":
        values = tuple(float(v) for v in values)
        return cls(values=values, dimension=len(values))

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)


class ResponseCache:
    """Content-addressed cache: one file per request digest, atomic writes."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def chat_key(self, backend_id: str, request: ChatRequest) -> str:
        return sha256_text(canonical_json({"backend": backend_id, **request.content_dict()}))

    def embedding_key(self, backend_id: str, model_name: str, texts: Sequence[str]) -> str:
        return sha256_text(
            canonical_json({"backend": backend_id, "model": model_name, "texts": list(texts)})
        )

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Any | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            import json

            payload = json.loads(path.read_text(encoding="utf-8"))
            return payload["response"]
        except (OSError, ValueError, KeyError):
            logger.warning("corrupt cache entry %s; treating as miss", path)
            return None

    def put(self, key: str, request_meta: dict, response: Any) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
        tmp.write_text(
            canonical_json({"key": key, "request": request_meta, "response": response}),
            encoding="utf-8",
        )
        os.replace(tmp, path)


def ordered_parallel_map(fn: Callable, items: Sequence, max_workers: int = 1) -> list:
    """Apply fn to items, optionally in parallel; output order equals input order."""
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


class _RetryMixin:
    max_attempts: int
    backoff_seconds: float

    def _with_retries(self, call: Callable[[], Any]) -> tuple[Any, int]:
        """Run call, retrying transient failures with exponential backoff.

        Returns (result, attempts_used).
        """
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                return call(), attempt
            except TransientProviderError as exc:
                last = exc
                if attempt < self.max_attempts:
                    delay = self.backoff_seconds * (2 ** (attempt - 1))
                    logger.warning(
                        "transient provider failure (attempt %d/%d): %s; retrying in %.2fs",
                        attempt,
                        self.max_attempts,
                        exc,
                        delay,
                    )
                    time.sleep(delay)
        raise ProviderError(f"provider failed after {self.max_attempts} attempts: {last}") from last


class ChatProvider(_RetryMixin):
    """Base chat provider: retry loop, cache, and ledger around a backend call."""

    backend_id = "abstract-chat"

    def __init__(
        self,
        model_name: str,
        *,
        ledger: RunLedger | None = None,
        cache: ResponseCache | None = None,
        max_attempts: int = 3,
        backoff_seconds: float = 0.5,
    ):
        self.model_name = model_name
        self.ledger = ledger
        self.cache = cache
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds

    def chat(self, request: ChatRequest) -> str:
        if self.cache is not None:
            key = self.cache.chat_key(self.backend_id, request)
            cached = self.cache.get(key)
            if cached is not None:
                self._log(request, cached, attempts=0, cache="hit")
                return cached
            text, attempts = self._with_retries(lambda: self._complete(request))
            self.cache.put(key, request.content_dict(), text)
            self._log(request, text, attempts=attempts, cache="miss")
            return text
        text, attempts = self._with_retries(lambda: self._complete(request))
        self._log(request, text, attempts=attempts, cache="off")
        return text

    def _complete(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def _log(self, request: ChatRequest, response: str, *, attempts: int, cache: str) -> None:
        if self.ledger is None:
            return
        self.ledger.append(
            "chat",
            backend=self.backend_id,
            model=request.model_name,
            attempts=attempts,
            cache=cache,
            request=request.content_dict(),
            response=response,
        )


class MockChatProvider(ChatProvider):
    """Offline chat backend.

    Resolution order per request: exact script table keyed on the last user
    message, then the transform callable, then either a deterministic
    digest-derived reply (``fallback='hash'``) or an error
    (``fallback='error'``, the strict scripted mode).
    """

    backend_id = "mock-chat"

    def __init__(
        self,
        model_name: str = "mock-chat",
        *,
        script: dict[str, str] | None = None,
        transform: Callable[[ChatRequest], str | None] | None = None,
        fallback: str = "hash",
        **kwargs,
    ):
        super().__init__(model_name, **kwargs)
        if fallback not in ("hash", "error"):
            raise ProviderError(f"unknown mock fallback {fallback!r}")
        self.script = dict(script) if script else {}
        self.transform = transform
        self.fallback = fallback

    def _complete(self, request: ChatRequest) -> str:
        if request.user_content in self.script:
            return self.script[request.user_content]
        if self.transform is not None:
            out = self.transform(request)
            if out is not None:
                return out
        if self.fallback == "hash":
            return "mock:" + sha256_text(canonical_json(request.content_dict()))[:16]
        raise ProviderError(
            f"mock chat backend has no scripted response for request "
            f"(user content starts with {request.user_content[:60]!r})"
        )


class HttpChatProvider(ChatProvider):
    """OpenAI-compatible ``chat/completions`` client."""

    backend_id = "http-chat"

    def __init__(
        self,
        model_name: str,
        *,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout_seconds: float = 60.0,
        session: requests.Session | None = None,
        **kwargs,
    ):
        super().__init__(model_name, **kwargs)
        self.base_url = (base_url or os.environ.get(API_BASE_ENV, "")).rstrip("/")
        if not self.base_url:
            raise ProviderError(f"no base URL configured (set {API_BASE_ENV} or pass base_url)")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_seconds = timeout_seconds
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, route: str, payload: dict) -> dict:
        url = f"{self.base_url}/{route}"
        try:
            response = self.session.post(
                url, json=payload, headers=self._headers(), timeout=self.timeout_seconds
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientProviderError(f"{url}: {exc}") from exc
        if response.status_code in _RETRYABLE_STATUS or response.status_code >= 500:
            raise TransientProviderError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
        if response.status_code >= 400:
            raise ProviderError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderError(f"{url} returned non-JSON body: {response.text[:200]}") from exc

    def _complete(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        data = self._post("chat/completions", payload)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat completion response: {data!r}") from exc
        if not isinstance(content, str):
            raise ProviderError(f"chat completion content is not text: {content!r}")
        return content


class EmbeddingProvider(_RetryMixin):
    """Base embedding provider; validates alignment, dimension, and zero vectors."""

    backend_id = "abstract-embedding"

    def __init__(
        self,
        model_name: str,
        *,
        ledger: RunLedger | None = None,
        cache: ResponseCache | None = None,
        max_attempts: int = 3,
        backoff_seconds: float = 0.5,
    ):
        self.model_name = model_name
        self.ledger = ledger
        self.cache = cache
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ProviderError("embed requires at least one text")
        if any(not t for t in texts):
            raise ProviderError("embed requires non-empty texts")

        if self.cache is not None:
            key = self.cache.embedding_key(self.backend_id, self.model_name, texts)
            cached = self.cache.get(key)
            if cached is not None:
                vectors = [EmbeddingVector.of(v) for v in cached]
                self._validate(texts, vectors)
                self._log(texts, vectors, attempts=0, cache="hit")
                return vectors
            raw, attempts = self._with_retries(lambda: self._embed(list(texts)))
            vectors = [EmbeddingVector.of(v) for v in raw]
            self._validate(texts, vectors)
            self.cache.put(key, {"model": self.model_name, "count": len(texts)}, [list(v.values) for v in vectors])
            self._log(texts, vectors, attempts=attempts, cache="miss")
            return vectors

        raw, attempts = self._with_retries(lambda: self._embed(list(texts)))
        vectors = [EmbeddingVector.of(v) for v in raw]
        self._validate(texts, vectors)
        self._log(texts, vectors, attempts=attempts, cache="off")
        return vectors

    def _embed(self, texts: list[str]) -> list[Sequence[float]]:
        raise NotImplementedError

    def _validate(self, texts: Sequence[str], vectors: list[EmbeddingVector]) -> None:
        if len(vectors) != len(texts):
            raise ProviderError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        dims = {v.dimension for v in vectors}
        if len(dims) > 1:
            raise ProviderError(f"embedding batch mixes dimensions: {sorted(dims)}")
        if any(v.is_zero() for v in vectors):
            raise ProviderError("provider returned an all-zero embedding")

    def _log(self, texts: Sequence[str], vectors: list[EmbeddingVector], *, attempts: int, cache: str) -> None:
        if self.ledger is None:
            return
        self.ledger.append(
            "embed",
            backend=self.backend_id,
            model=self.model_name,
            attempts=attempts,
            cache=cache,
            texts_digest=sha256_text("\x00".join(texts)),
            count=len(texts),
            dimension=vectors[0].dimension,
        )


class MockEmbeddingProvider(EmbeddingProvider):
    """Deterministic unit-norm vectors derived from a digest of each text."""

    backend_id = "mock-embedding"

    def __init__(self, model_name: str = "mock-embedding", *, dimension: int = 32, **kwargs):
        super().__init__(model_name, **kwargs)
        if dimension < 1:
            raise ProviderError("mock embedding dimension must be >= 1")
        self.dimension = dimension

    def _embed(self, texts: list[str]) -> list[Sequence[float]]:
        return [self._vector_for(text) for text in texts]

    def _vector_for(self, text: str) -> list[float]:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        values = [rng.gauss(0.0, 1.0) for _ in range(self.dimension)]
        norm = math.sqrt(math.fsum(v * v for v in values))
        if norm == 0.0:  # astronomically unlikely; keep the unit-norm contract anyway
            values[0] = 1.0
            norm = 1.0
        return [v / norm for v in values]


class HttpEmbeddingProvider(EmbeddingProvider):
    """OpenAI-compatible ``embeddings`` client."""

    backend_id = "http-embedding"

    def __init__(
        self,
        model_name: str,
        *,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout_seconds: float = 60.0,
        session: requests.Session | None = None,
        **kwargs,
    ):
        super().__init__(model_name, **kwargs)
        self.base_url = (base_url or os.environ.get(API_BASE_ENV, "")).rstrip("/")
        if not self.base_url:
            raise ProviderError(f"no base URL configured (set {API_BASE_ENV} or pass base_url)")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout_seconds = timeout_seconds
        self.session = session or requests.Session()

    def _embed(self, texts: list[str]) -> list[Sequence[float]]:
        url = f"{self.base_url}/embeddings"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self.session.post(
                url,
                json={"model": self.model_name, "input": texts},
                headers=headers,
                timeout=self.timeout_seconds,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientProviderError(f"{url}: {exc}") from exc
        if response.status_code in _RETRYABLE_STATUS or response.status_code >= 500:
            raise TransientProviderError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
        if response.status_code >= 400:
            raise ProviderError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
        try:
            data = response.json()["data"]
            data = sorted(data, key=lambda item: item["index"])
            return [item["embedding"] for item in data]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embeddings response: {response.text[:200]}") from exc
