"""Text scores for model completions.

Three scores ship by default, each under a stable id that appears verbatim
in report files:

* ``word_count`` - number of words (same word definition as the tokenizer).
* ``flesch_reading_ease`` - 206.835 - 1.015*(words/sentences)
  - 84.6*(syllables/words), unclamped.
* ``topic_similarity:<topic>`` - cosine similarity between the embeddings of
  the completion and the topic name.

Sentence and syllable counting are deterministic documented heuristics, not
dictionary lookups; the syllable rule is: count vowel groups (a, e, i, o, u,
y) over the word's letters, subtract a silent trailing "e" (kept when the
word ends in "le" after a consonant), minimum 1.
"""

from __future__ import annotations

import math
import re
import threading
import unicodedata
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

from .errors import PromptLensError, ProviderError
from .textmodel import words

VOWELS = "aeiouy"

# Abbreviations whose trailing period does not terminate a sentence.
# Matched case-insensitively as whole words; internal periods included.
ABBREVIATIONS = (
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "capt", "gen", "sgt",
    "vs", "etc", "e.g", "i.e", "cf", "al", "inc", "ltd", "co", "dept",
    "approx", "fig", "vol",
)

_TERMINATOR_RE = re.compile(r"[.!?]+")
_ABBREV_RE = re.compile(
    r"\b(?:" + "|".join(re.escape(a) for a in ABBREVIATIONS) + r")\.",
    re.IGNORECASE,
)


class UndefinedScoreError(PromptLensError):
    """The score is undefined for this text (e.g. Flesch on empty text)."""


class SupportsEmbed(Protocol):
    def embed(self, text: str) -> list[float]: ...


def word_count(text: str) -> int:
    """Number of words in ``text``; hyphenated compounds count once."""
    return len(words(text))


def count_sentences(text: str) -> int:
    """Number of sentences, counting terminator runs (., !, ?).

    Text that does not end with a terminator contributes one final sentence;
    periods after the fixed ABBREVIATIONS list are ignored. Whitespace-only
    text has 0 sentences, anything else at least 1.
    """
    stripped = text.strip()
    if not stripped:
        return 0
    cleaned = _ABBREV_RE.sub(lambda m: m.group().replace(".", ""), stripped)
    runs = len(_TERMINATOR_RE.findall(cleaned))
    if not cleaned.endswith((".", "!", "?")):
        runs += 1
    return max(1, runs)


def count_syllables(word: str) -> int:
    """Heuristic syllable count for a single word token, always >= 1.

    Accents are stripped and non-letters dropped before counting, so
    "don't" counts as one letter run ("dont").
    """
    decomposed = unicodedata.normalize("NFKD", word.lower())
    letters = "".join(c for c in decomposed if "a" <= c <= "z")
    if not letters:
        return 1

    groups = 0
    in_group = False
    for c in letters:
        if c in VOWELS:
            if not in_group:
                groups += 1
            in_group = True
        else:
            in_group = False

    if letters.endswith("e") and not (
        letters.endswith("le") and len(letters) > 2 and letters[-3] not in VOWELS
    ):
        groups -= 1
    return max(1, groups)


def flesch_reading_ease(text: str) -> float:
    """Flesch reading-ease of ``text``; may be negative or exceed 100.

    Raises UndefinedScoreError when the text contains no words.
    """
    ws = words(text)
    if not ws:
        raise UndefinedScoreError("Flesch reading-ease needs at least one word")
    sentences = count_sentences(text)
    syllables = sum(count_syllables(w) for w in ws)
    return 206.835 - 1.015 * (len(ws) / sentences) - 84.6 * (syllables / len(ws))


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two nonzero vectors of equal dimension."""
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    dot = 0.0
    norm_a = 0.0
    norm_b = 0.0
    for x, y in zip(a, b):
        dot += x * y
        norm_a += x * x
        norm_b += y * y
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return dot / math.sqrt(norm_a * norm_b)


@dataclass(frozen=True)
class TopicSpec:
    """A topic name with its cached embedding vector."""

    topic_name: str
    embedding: tuple[float, ...]

    def __post_init__(self) -> None:
        if not any(self.embedding):
            raise ValueError(f"topic {self.topic_name!r} embedded to a zero vector")

    @classmethod
    def from_embedder(cls, topic_name: str, embedder: SupportsEmbed) -> "TopicSpec":
        return cls(topic_name, tuple(embedder.embed(topic_name)))


def topic_similarity(text: str, topic: TopicSpec, embedder: SupportsEmbed) -> float:
    """Cosine similarity between ``text`` and the topic name, in [-1, 1]."""
    if not text.strip():
        raise UndefinedScoreError(
            f"topic similarity ({topic.topic_name!r}) is undefined for empty text"
        )
    try:
        vec = embedder.embed(text)
    except ProviderError as exc:
        raise ProviderError(f"embedding failed for text {text[:80]!r}: {exc}") from exc
    return cosine_similarity(vec, topic.embedding)


@dataclass(frozen=True)
class ScoreVector:
    """Named score values for one completion text; all values finite."""

    entries: dict[str, float]

    def __post_init__(self) -> None:
        for score_id, value in self.entries.items():
            if not math.isfinite(value):
                raise ValueError(f"score {score_id!r} is not finite: {value!r}")


ScoreFn = Callable[[str], float]

BUILTIN_SCORE_IDS = ("word_count", "flesch_reading_ease")


def topic_score_id(topic_name: str) -> str:
    return f"topic_similarity:{topic_name}"


def _make_topic_scorer(topic_name: str, embedder: SupportsEmbed) -> ScoreFn:
    # Topic embedding is constant across thousands of completions: compute it
    # on first use, tolerate a concurrent double-compute.
    lock = threading.Lock()
    cached: list[TopicSpec] = []

    def scorer(text: str) -> float:
        if not cached:
            with lock:
                if not cached:
                    cached.append(TopicSpec.from_embedder(topic_name, embedder))
        return topic_similarity(text, cached[0], embedder)

    return scorer


def build_scorers(
    include: Iterable[str] = BUILTIN_SCORE_IDS,
    topics: Iterable[str] = (),
    embedder: SupportsEmbed | None = None,
) -> dict[str, ScoreFn]:
    """Assemble the configured scoring functions, keyed by stable score id.

    ``topics`` adds one ``topic_similarity:<topic>`` scorer per entry and
    requires an embedder.
    """
    available: dict[str, ScoreFn] = {
        "word_count": lambda t: float(word_count(t)),
        "flesch_reading_ease": flesch_reading_ease,
    }
    scorers: dict[str, ScoreFn] = {}
    for score_id in include:
        if score_id not in available:
            raise ValueError(f"unknown score id {score_id!r}")
        scorers[score_id] = available[score_id]
    topics = tuple(topics)
    if topics and embedder is None:
        raise ValueError("topic similarity scores require an embedder")
    for name in topics:
        scorers[topic_score_id(name)] = _make_topic_scorer(name, embedder)
    return scorers


def score_text(text: str, scorers: dict[str, ScoreFn]) -> ScoreVector:
    """Apply every scorer to ``text``; raises if any score is undefined."""
    return ScoreVector({score_id: float(fn(text)) for score_id, fn in scorers.items()})
