"""Chat-completion client with retry, rate limiting, record/replay cache and a scripted mock."""

from __future__ import annotations

import enum
import fnmatch
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AuthMissing, NoScriptMatch, ProviderExhausted, ReplayMiss

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {429, 500, 502, 503, 504, 529}


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: str = ""
    model_id: str = "gpt-4"
    temperature: float = 0.2
    max_tokens: int = 512

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def digest(self) -> str:
        payload = json.dumps(
            [self.model_id, repr(float(self.temperature)), self.system_text, self.user_text],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ProviderConfig:
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    auth_token_env_var: str = "OPENAI_API_KEY"
    max_retries: int = 5
    base_backoff_ms: int = 1000
    timeout_ms: int = 60_000
    requests_per_minute: float = 30.0


class CacheMode(str, enum.Enum):
    OFF = "off"
    RECORD = "record"
    REPLAY = "replay"
    REPLAY_THEN_RECORD = "replay_then_record"


class ReplayCache:
    """One JSON file per request digest holding request metadata and the reply."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.directory / digest[:2] / f"{digest}.json"

    def get(self, request: ChatRequest) -> str | None:
        path = self._path(request.digest())
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["reply"]

    def put(self, request: ChatRequest, reply: str) -> None:
        digest = request.digest()
        path = self._path(digest)
        entry = {
            "digest": digest,
            "model_id": request.model_id,
            "temperature": request.temperature,
            "system_text": request.system_text,
            "user_text": request.user_text,
            "reply": reply,
        }
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
            tmp.write_text(json.dumps(entry, ensure_ascii=False, indent=1), encoding="utf-8")
            tmp.replace(path)

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*/*.json")) if self.directory.exists() else 0


class RateLimiter:
    """Blocking token bucket shared across threads."""

    def __init__(self, per_minute: float = 30.0, burst: int | None = None, clock=time.monotonic, sleep=time.sleep):
        self.rate = per_minute / 60.0
        self.capacity = float(burst if burst is not None else max(1, int(per_minute // 6)))
        self.tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)


class _TransientError(Exception):
    pass


class HttpBackend:
    """Chat-completions JSON over HTTP with exponential backoff and full jitter.

    ``transport`` is anything with a requests-style ``post``; the auth token is
    read from the environment per call and never stored or logged.
    """

    def __init__(self, provider: ProviderConfig | None = None, transport=None, rate_limiter: RateLimiter | None = None,
                 sleep=time.sleep, rng: random.Random | None = None):
        self.provider = provider or ProviderConfig()
        if transport is None:
            import requests

            transport = requests.Session()
        self.transport = transport
        self.rate_limiter = rate_limiter or RateLimiter(self.provider.requests_per_minute)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.attempts = 0

    def send(self, request: ChatRequest, meta: dict | None = None) -> str:
        token = os.environ.get(self.provider.auth_token_env_var)
        if not token:
            raise AuthMissing(f"environment variable {self.provider.auth_token_env_var} is not set")
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        body = {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}

        last = "no attempt made"
        for attempt in range(self.provider.max_retries + 1):
            if attempt:
                cap = self.provider.base_backoff_ms * (2 ** (attempt - 1)) / 1000.0
                self._sleep(self._rng.uniform(0.0, cap))
            self.rate_limiter.acquire()
            self.attempts += 1
            try:
                return self._post_once(body, headers)
            except _TransientError as exc:
                last = str(exc)
                logger.warning("chat request attempt %d/%d failed: %s",
                               attempt + 1, self.provider.max_retries + 1, last)
        raise ProviderExhausted(f"gave up after {self.provider.max_retries + 1} attempts: {last}")

    def _post_once(self, body: dict, headers: dict) -> str:
        try:
            resp = self.transport.post(self.provider.endpoint_url, json=body, headers=headers,
                                       timeout=self.provider.timeout_ms / 1000.0)
        except Exception as exc:
            raise _TransientError(f"transport error {type(exc).__name__}") from exc
        if resp.status_code in RETRYABLE_STATUS:
            raise _TransientError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderExhausted(f"non-retryable HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderExhausted("malformed chat-completions response") from exc


@dataclass
class MockScript:
    """Canned replies for offline runs.

    ``rules`` match on request metadata (``country``, ``month``, ``experiment``;
    glob patterns allowed), ``digests`` on the exact request digest. When
    nothing matches and ``default`` is set, a reply is synthesized from a
    generator seeded by ``seed`` and the request digest.
    """

    rules: list[dict] = field(default_factory=list)
    digests: dict[str, str] = field(default_factory=dict)
    default: dict | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "MockScript":
        return cls(
            rules=list(d.get("rules", [])),
            digests=dict(d.get("digests", {})),
            default=d.get("default"),
            seed=int(seed if seed is not None else d.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "MockScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), seed)


def _rule_matches(rule: dict, meta: dict) -> bool:
    for key in ("country", "month", "experiment", "purpose"):
        if key in rule and not fnmatch.fnmatchcase(str(meta.get(key, "")), str(rule[key])):
            return False
    return True


def mock_complete(request: ChatRequest, script: MockScript, meta: dict | None = None) -> str:
    digest = request.digest()
    if digest in script.digests:
        return script.digests[digest]
    meta = meta or {}
    for rule in script.rules:
        if _rule_matches(rule, meta):
            return rule["reply"]
    if script.default is None:
        raise NoScriptMatch(f"no mock rule for request {digest[:12]}")
    rng = random.Random(f"{script.seed}:{digest}")
    if meta.get("purpose") == "summary":
        return script.default.get("summary", "No notable developments reported.")
    labels = script.default.get("labels", ["Escalate", "De-escalate", "Peace/No Conflict", "Stable Conflict"])
    lo, hi = script.default.get("fatalities", [0, 500])
    label = rng.choice(labels)
    a = rng.randint(lo, hi)
    if rng.random() < script.default.get("range_probability", 0.5):
        b = rng.randint(a, hi)
        return f"TREND: {label}\nFATALITIES: {a}-{b}"
    return f"TREND: {label}\nFATALITIES: {a}"


class MockBackend:
    def __init__(self, script: MockScript):
        self.script = script
        self.calls = 0

    def send(self, request: ChatRequest, meta: dict | None = None) -> str:
        self.calls += 1
        return mock_complete(request, self.script, meta)


class ChatClient:
    """Cache-aware front end shared by all tasks of a run."""

    def __init__(self, backend, cache: ReplayCache | None = None, cache_mode: CacheMode | str = CacheMode.OFF):
        self.backend = backend
        self.cache = cache
        self.cache_mode = CacheMode(cache_mode)
        if self.cache_mode is not CacheMode.OFF and cache is None:
            raise ValueError(f"cache mode {self.cache_mode.value} needs a cache directory")

    def complete(self, request: ChatRequest, meta: dict | None = None) -> str:
        mode = self.cache_mode
        if mode in (CacheMode.REPLAY, CacheMode.REPLAY_THEN_RECORD):
            hit = self.cache.get(request)
            if hit is not None:
                return hit
            if mode is CacheMode.REPLAY:
                raise ReplayMiss(f"no cached reply for {request.digest()[:12]}")
        reply = self.backend.send(request, meta)
        if mode in (CacheMode.RECORD, CacheMode.REPLAY_THEN_RECORD):
            self.cache.put(request, reply)
        return reply


def complete(request: ChatRequest, provider: ProviderConfig, cache_mode: CacheMode | str = CacheMode.OFF,
             cache: ReplayCache | None = None, transport=None) -> str:
    """One-shot convenience wrapper around :class:`ChatClient` with an HTTP backend."""
    return ChatClient(HttpBackend(provider, transport), cache, cache_mode).complete(request)
