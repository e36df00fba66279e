"""Completion and embedding providers.

Three pieces:

* ``HttpProvider`` - an OpenAI-compatible client (POST /v1/chat/completions
  and /v1/embeddings) with bounded retries, backoff, and a parallelism cap.
* ``StubProvider`` - a deterministic rule-table fake used for tests and
  offline runs. Output is a pure function of (rule table, seed, user input,
  sample index); the system prompt only selects which rule fires, so two
  prompts that fire the same rule yield byte-identical completions.
* ``ResponseCache`` - a content-addressed directory of one self-describing
  JSON file per entry, written atomically (temp file + rename).

Both providers consult the cache per sample index before generating, so a
warm cache issues zero generation calls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import requests

from .errors import ConfigurationError, ProviderError, TransportError
from .textmodel import words

log = logging.getLogger(__name__)

API_KEY_ENV = "PROMPTLENS_API_KEY"
CACHE_FORMAT = "promptlens-cache/1"
STUB_RULES_FORMAT = "promptlens-stub/1"

DEFAULT_PARALLELISM = 4
DEFAULT_EMBED_DIM = 4096


@dataclass(frozen=True)
class CompletionRequest:
    """One sampling request: n completions for a (system, user) pair."""

    system_prompt: str
    user_input: str
    n: int = 1
    temperature: float = 1.0
    model_id: str = ""

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (self.temperature >= 0 and self.temperature == self.temperature):
            raise ValueError(f"temperature must be finite and >= 0, got {self.temperature}")


@dataclass(frozen=True)
class Completion:
    text: str
    sample_index: int
    model_id: str
    from_cache: bool = False


def _canonical_json(payload: object) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))


@dataclass(frozen=True)
class CacheKey:
    """Content address of one cached payload.

    The digest is sha256 (256 bits) over the canonical JSON serialization of
    the key fields (sorted keys, ASCII, compact separators), so it is stable
    across runs and platforms.
    """

    canonical: str

    @classmethod
    def for_completion(
        cls, provider_kind: str, request: CompletionRequest, sample_index: int
    ) -> "CacheKey":
        return cls(_canonical_json({
            "kind": "completion",
            "provider_kind": provider_kind,
            "model_id": request.model_id,
            "system_prompt": request.system_prompt,
            "user_input": request.user_input,
            "sample_index": sample_index,
            "temperature": request.temperature,
        }))

    @classmethod
    def for_embedding(cls, provider_kind: str, model_id: str, text: str) -> "CacheKey":
        return cls(_canonical_json({
            "kind": "embedding",
            "provider_kind": provider_kind,
            "model_id": model_id,
            "text": text,
        }))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()


@dataclass(frozen=True)
class CacheStats:
    entries: int
    total_bytes: int


class ResponseCache:
    """One JSON file per entry under ``directory``, named by key digest.

    Writes go to a temp file in the same directory and are renamed into
    place, so concurrent readers never observe torn files. A corrupt entry
    is quarantined (renamed to ``*.corrupt``) and treated as a miss.
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: CacheKey) -> Path:
        return self.directory / f"{key.digest}.json"

    def get(self, key: CacheKey) -> object | None:
        path = self._path(key)
        try:
            raw = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        try:
            record = json.loads(raw)
            if record["format"] != CACHE_FORMAT:
                raise ValueError(f"unknown cache format {record['format']!r}")
            return record["payload"]
        except (ValueError, KeyError, TypeError) as exc:
            quarantined = path.with_name(path.name + ".corrupt")
            try:
                os.replace(path, quarantined)
            except OSError:
                pass
            log.warning("quarantined corrupt cache entry %s: %s", path.name, exc)
            return None

    def put(self, key: CacheKey, payload: object) -> None:
        record = {
            "format": CACHE_FORMAT,
            "key": json.loads(key.canonical),
            "payload": payload,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        path = self._path(key)
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)

    def stats(self) -> CacheStats:
        entries = list(self.directory.glob("*.json"))
        return CacheStats(len(entries), sum(p.stat().st_size for p in entries))

    def clear(self) -> int:
        removed = 0
        for pattern in ("*.json", "*.corrupt", "*.tmp"):
            for path in self.directory.glob(pattern):
                path.unlink(missing_ok=True)
                removed += 1
        return removed


class Provider:
    """Base provider: caching complete()/embed() over a generation backend.

    Subclasses implement ``_generate`` (texts for the requested sample
    indices) and ``_embed_uncached``, and set ``kind`` plus a
    ``cache_fingerprint`` that makes cache keys provider-specific.
    """

    kind = "abstract"
    model_id = ""
    parallelism = DEFAULT_PARALLELISM

    def __init__(self, cache: ResponseCache | None = None) -> None:
        self.cache = cache

    @property
    def cache_fingerprint(self) -> str:
        return self.kind

    def complete(self, request: CompletionRequest) -> list[Completion]:
        """Exactly ``request.n`` completions, in sample-index order."""
        found: dict[int, Completion] = {}
        missing: list[int] = []
        keys = {
            i: CacheKey.for_completion(self.cache_fingerprint, request, i)
            for i in range(request.n)
        }
        if self.cache is not None:
            for i, key in keys.items():
                payload = self.cache.get(key)
                if isinstance(payload, str):
                    found[i] = Completion(payload, i, self.model_id, from_cache=True)
        missing = [i for i in range(request.n) if i not in found]
        if missing:
            generated = self._generate(request, missing)
            for i in missing:
                text = generated[i]
                if self.cache is not None:
                    self.cache.put(keys[i], text)
                found[i] = Completion(text, i, self.model_id, from_cache=False)
        return [found[i] for i in range(request.n)]

    def embed(self, text: str) -> list[float]:
        """Fixed-dimension embedding vector for non-empty ``text``."""
        if not text.strip():
            raise ValueError("cannot embed empty text")
        key = CacheKey.for_embedding(self.cache_fingerprint, self.model_id, text)
        if self.cache is not None:
            payload = self.cache.get(key)
            if isinstance(payload, list):
                return [float(x) for x in payload]
        vector = self._embed_uncached(text)
        if self.cache is not None:
            self.cache.put(key, vector)
        return vector

    def _generate(self, request: CompletionRequest, indices: list[int]) -> dict[int, str]:
        raise NotImplementedError

    def _embed_uncached(self, text: str) -> list[float]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Deterministic stub
# ---------------------------------------------------------------------------

# Filler vocabularies: short words are one syllable, long words four or
# more, so templates can steer reading ease far apart.
SHORT_WORDS = (
    "cat", "sun", "road", "tree", "fish", "stone", "bird", "lake", "hill",
    "rock", "sand", "leaf", "rain", "snow", "wind", "cloud", "star", "moon",
    "path", "door", "wall", "roof", "desk", "lamp", "cup", "plate", "fork",
    "bowl", "boat", "fire", "grass", "pond", "barn", "mill", "bridge", "coast",
)
LONG_WORDS = (
    "extraordinary", "considerations", "methodologies", "sophisticated",
    "approximately", "fundamentally", "organizational", "international",
    "experimental", "responsibilities", "infrastructure", "categorically",
    "administrative", "overwhelmingly", "intercontinental", "characterization",
    "multidimensional", "representational", "computationally", "institutional",
)
_SENTENCE_LEN = 8


@dataclass(frozen=True)
class ResponseTemplate:
    """Shape of a stub completion: length, word register, topic injection.

    ``word_count`` is exact (before jitter); ``long_words`` switches the
    filler vocabulary from one-syllable to polysyllabic words;
    ``topic_word``, when set, is injected ``topic_repeats`` times.
    A zero word count renders the empty string.
    """

    word_count: int
    long_words: bool = False
    topic_word: str | None = None
    topic_repeats: int = 3

    def fingerprint(self) -> str:
        return _canonical_json([self.word_count, self.long_words,
                                self.topic_word, self.topic_repeats])


@dataclass(frozen=True)
class StubRule:
    """Fires when every needle is a substring of the system prompt."""

    needles: tuple[str, ...]
    template: ResponseTemplate

    def matches(self, system_prompt: str) -> bool:
        return all(needle in system_prompt for needle in self.needles)


def _derived_seed(*parts: object) -> int:
    blob = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


class StubProvider(Provider):
    """Rule-table-driven fake completions plus a bag-of-hashed-words embedder.

    Rules are checked in order; the first whose needles all occur in the
    system prompt wins, else ``base`` applies. Rendering depends only on the
    selected template, the seed, the user input, and the sample index -
    never on the raw system prompt text. With ``jitter_words`` > 0 and a
    nonzero request temperature, the target word count jitters by a seeded
    offset in [-jitter_words, +jitter_words]; at temperature 0 all samples
    are identical.

    ``transport_calls`` counts per-sample completion generations (cache
    misses); ``embed_calls`` counts embedding generations.
    """

    kind = "stub"

    def __init__(
        self,
        rules: Iterable[StubRule] = (),
        base: ResponseTemplate = ResponseTemplate(word_count=30),
        seed: int = 0,
        jitter_words: int = 0,
        model_id: str = "stub-model",
        embed_dim: int = DEFAULT_EMBED_DIM,
        cache: ResponseCache | None = None,
        parallelism: int = DEFAULT_PARALLELISM,
    ) -> None:
        super().__init__(cache)
        self.rules = tuple(rules)
        self.base = base
        self.seed = seed
        self.jitter_words = jitter_words
        self.model_id = model_id
        self.embed_dim = embed_dim
        self.parallelism = parallelism
        self.transport_calls = 0
        self.embed_calls = 0
        self._counter_lock = threading.Lock()

    @property
    def cache_fingerprint(self) -> str:
        table = [(r.needles, r.template.fingerprint()) for r in self.rules]
        digest = hashlib.sha256(_canonical_json([
            table, self.base.fingerprint(), self.seed, self.jitter_words, self.embed_dim,
        ]).encode()).hexdigest()[:16]
        return f"stub:{digest}"

    @classmethod
    def from_file(cls, path: str | Path, seed: int, **kwargs: object) -> "StubProvider":
        """Load a rule table from its JSON file format (see README)."""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read stub rules file {path}: {exc}") from exc
        if data.get("format") != STUB_RULES_FORMAT:
            raise ConfigurationError(
                f"stub rules file {path} has format {data.get('format')!r}, "
                f"expected {STUB_RULES_FORMAT!r}"
            )

        def template(raw: Mapping[str, object]) -> ResponseTemplate:
            return ResponseTemplate(
                word_count=int(raw["word_count"]),
                long_words=bool(raw.get("long_words", False)),
                topic_word=raw.get("topic_word"),
                topic_repeats=int(raw.get("topic_repeats", 3)),
            )

        try:
            rules = tuple(
                StubRule(tuple(r["needles"]), template(r["template"]))
                for r in data.get("rules", ())
            )
            base = template(data["base"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed stub rules file {path}: {exc}") from exc
        return cls(
            rules=rules,
            base=base,
            seed=seed,
            jitter_words=int(data.get("jitter_words", 0)),
            embed_dim=int(data.get("embed_dim", DEFAULT_EMBED_DIM)),
            **kwargs,
        )

    def select_template(self, system_prompt: str) -> ResponseTemplate:
        for rule in self.rules:
            if rule.matches(system_prompt):
                return rule.template
        return self.base

    def _render(self, template: ResponseTemplate, request: CompletionRequest,
                sample_index: int) -> str:
        rng = random.Random(_derived_seed(
            self.seed, template.fingerprint(), request.user_input, sample_index,
        ))
        jitter = 0
        if self.jitter_words > 0 and request.temperature > 0:
            jitter = rng.randint(-self.jitter_words, self.jitter_words)
        target = max(0, template.word_count + jitter)
        if target == 0:
            return ""

        vocab = LONG_WORDS if template.long_words else SHORT_WORDS
        out: list[str] = []
        injections = min(template.topic_repeats, target) if template.topic_word else 0
        out.extend([template.topic_word] * injections)
        out.extend(rng.choice(vocab) for _ in range(target - injections))

        sentences = [
            " ".join(out[i:i + _SENTENCE_LEN])
            for i in range(0, len(out), _SENTENCE_LEN)
        ]
        return ". ".join(sentences) + "."

    def _generate(self, request: CompletionRequest, indices: list[int]) -> dict[int, str]:
        template = self.select_template(request.system_prompt)
        generated: dict[int, str] = {}
        for i in indices:
            with self._counter_lock:
                self.transport_calls += 1
            generated[i] = self._render(template, request, i)
        return generated

    def _embed_uncached(self, text: str) -> list[float]:
        with self._counter_lock:
            self.embed_calls += 1
        vector = [0.0] * self.embed_dim
        for word in words(text.lower()):
            bucket = int.from_bytes(hashlib.sha256(word.encode()).digest()[:8], "big")
            vector[bucket % self.embed_dim] += 1.0
        return vector


# ---------------------------------------------------------------------------
# OpenAI-compatible HTTP provider
# ---------------------------------------------------------------------------

# transport(url, headers, payload, timeout) -> (status_code, headers, body)
Transport = Callable[[str, Mapping[str, str], Mapping[str, object], float],
                     tuple[int, Mapping[str, str], str]]


def _requests_transport(
    url: str, headers: Mapping[str, str], payload: Mapping[str, object], timeout: float
) -> tuple[int, Mapping[str, str], str]:
    try:
        resp = requests.post(url, headers=dict(headers), json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    return resp.status_code, resp.headers, resp.text


class HttpProvider(Provider):
    """OpenAI-compatible chat completions and embeddings over HTTP.

    Retries transport failures, 429s, and 5xx responses up to
    ``max_attempts`` times with exponential backoff (a Retry-After header
    takes precedence); other 4xx responses raise ConfigurationError
    immediately. In-flight requests are bounded by ``parallelism``.
    A response carrying fewer choices than requested is an error, never a
    partial success.
    """

    kind = "http"

    def __init__(
        self,
        base_url: str,
        model_id: str,
        embedding_model_id: str | None = None,
        api_key: str | None = None,
        parallelism: int = DEFAULT_PARALLELISM,
        cache: ResponseCache | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_start: float = 1.0,
        single_call_n: bool = True,
        transport: Transport = _requests_transport,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        super().__init__(cache)
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise ConfigurationError(
                f"no API key: set the {API_KEY_ENV} environment variable"
            )
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.embedding_model_id = embedding_model_id or model_id
        self.parallelism = parallelism
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_start = backoff_start
        self.single_call_n = single_call_n
        self._transport = transport
        self._sleep = sleep
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._semaphore = threading.BoundedSemaphore(parallelism)

    def _post(self, path: str, payload: Mapping[str, object]) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        delay: float | None = None
        for attempt in range(self.max_attempts):
            if delay is not None:
                self._sleep(delay)
            delay = self.backoff_start * (2 ** attempt)
            try:
                with self._semaphore:
                    status, headers, body = self._transport(url, self._headers, payload,
                                                            self.timeout)
            except TransportError as exc:
                last_error = exc
                continue
            if status == 200:
                try:
                    return json.loads(body)
                except ValueError as exc:
                    raise ProviderError(f"malformed JSON from {url}: {exc}") from exc
            if status == 429 or status >= 500:
                last_error = TransportError(f"HTTP {status} from {url}: {body[:200]}")
                retry_after = self._retry_after(headers)
                if retry_after is not None:
                    delay = retry_after
                continue
            raise ConfigurationError(f"HTTP {status} from {url}: {body[:200]}")
        raise TransportError(
            f"giving up on {url} after {self.max_attempts} attempts: {last_error}"
        )

    @staticmethod
    def _retry_after(headers: Mapping[str, str]) -> float | None:
        value = headers.get("Retry-After") or headers.get("retry-after")
        if value is None:
            return None
        try:
            return max(0.0, float(value))
        except ValueError:
            return None

    def _chat(self, request: CompletionRequest, n: int) -> list[str]:
        payload = {
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_input},
            ],
            "n": n,
            "temperature": request.temperature,
        }
        data = self._post("/v1/chat/completions", payload)
        try:
            choices = data["choices"]
            texts = [c["message"]["content"] for c in choices]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"unexpected chat completion response shape: {exc}") from exc
        if len(texts) < n or any(not isinstance(t, str) for t in texts):
            raise ProviderError(
                f"endpoint returned {len(texts)} choices, requested {n}"
            )
        return texts[:n]

    def _generate(self, request: CompletionRequest, indices: list[int]) -> dict[int, str]:
        if self.single_call_n and len(indices) == request.n and request.n > 1:
            texts = self._chat(request, request.n)
            return {i: texts[pos] for pos, i in enumerate(sorted(indices))}
        return {i: self._chat(request, 1)[0] for i in indices}

    def _embed_uncached(self, text: str) -> list[float]:
        payload = {"model": self.embedding_model_id, "input": text}
        data = self._post("/v1/embeddings", payload)
        try:
            vector = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected embeddings response shape: {exc}") from exc
        if not vector or any(not isinstance(x, (int, float)) for x in vector):
            raise ProviderError("embeddings response carries no numeric vector")
        return [float(x) for x in vector]
