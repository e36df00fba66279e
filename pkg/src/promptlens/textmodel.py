"""Word-level prompt tokenization and masked-variant construction.

A maskable word is a maximal run of letters or digits, optionally joined by
internal apostrophes or hyphens ("don't" and "state-of-the-art" are single
words). Punctuation and whitespace are never maskable, and the default mask
glyph "_" is itself never a word, so masked text re-tokenizes cleanly.

Everything here is pure and deterministic: same input, same output,
byte for byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

DEFAULT_MASK_GLYPH = "_"

# Small bundled English stopword list (154 words). This is the verbatim
# default consulted by ``tokenize``; pass your own set to override.
DEFAULT_STOPWORDS = frozenset("""
i me my myself we our ours ourselves you your yours yourself yourselves
he him his himself she her hers herself it its itself
they them their theirs themselves what which who whom this that these those
am is are was were be been being have has had having do does did doing
a an the and but if or because as until while
of at by for with about against between into through during before after
above below to from up down in out on off over under
again further then once here there when where why how
all any both each few more most other some such
no nor not only own same so than too very can will just should now
you're you've you'll you'd she's it's that'll don't should've
aren't couldn't didn't doesn't hadn't hasn't haven't isn't
mightn't mustn't needn't shan't shouldn't wasn't weren't won't wouldn't
i'm i've we're they're
""".split())

# Letters/digits (no underscore), with internal apostrophes or hyphens.
_WORD_RE = re.compile(r"[^\W_]+(?:['’-][^\W_]+)*")


@dataclass(frozen=True)
class WordToken:
    """One maskable word and where it sits in the source prompt.

    ``index`` is the 0-based ordinal among the prompt's maskable words;
    ``(start, end)`` is the half-open character span in the source text.
    """

    index: int
    text: str
    start: int
    end: int
    is_stopword: bool

    @property
    def char_span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class MaskedVariant:
    """A prompt with one or more words replaced by the mask glyph.

    ``collapsed`` is True for span masks, where the whole run of words plus
    the whitespace between them was replaced by a single glyph occurrence.
    """

    source_prompt: str
    masked_indices: frozenset[int]
    rendered: str
    glyph: str = DEFAULT_MASK_GLYPH
    collapsed: bool = False


def words(text: str) -> list[str]:
    """Word strings of ``text`` under the maskable-word definition."""
    return _WORD_RE.findall(text)


def tokenize(prompt: str, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> list[WordToken]:
    """Split ``prompt`` into maskable word tokens, in order of appearance.

    A token's ``is_stopword`` flag is set iff its lowercased text appears in
    ``stopwords``. An empty prompt yields an empty list.
    """
    return [
        WordToken(
            index=i,
            text=m.group(),
            start=m.start(),
            end=m.end(),
            is_stopword=m.group().lower() in stopwords,
        )
        for i, m in enumerate(_WORD_RE.finditer(prompt))
    ]


def _check_glyph(glyph: str) -> None:
    if not glyph or any(c.isspace() for c in glyph):
        raise ValueError(f"mask glyph must be non-empty and whitespace-free, got {glyph!r}")


def mask(
    prompt: str,
    tokens: list[WordToken],
    indices: set[int] | frozenset[int],
    glyph: str = DEFAULT_MASK_GLYPH,
) -> MaskedVariant:
    """Replace each selected token's span with ``glyph``, word by word.

    All characters outside the selected spans are preserved exactly.
    Raises ValueError for an empty selection, an out-of-range index, or an
    invalid glyph.
    """
    _check_glyph(glyph)
    if not indices:
        raise ValueError("mask requires a non-empty set of token indices")
    selected = sorted(indices)
    if selected[0] < 0 or selected[-1] >= len(tokens):
        raise ValueError(f"token index out of range: {selected} for {len(tokens)} tokens")

    pieces = []
    pos = 0
    for k in selected:
        tok = tokens[k]
        pieces.append(prompt[pos:tok.start])
        pieces.append(glyph)
        pos = tok.end
    pieces.append(prompt[pos:])
    return MaskedVariant(
        source_prompt=prompt,
        masked_indices=frozenset(selected),
        rendered="".join(pieces),
        glyph=glyph,
    )


def mask_span(
    prompt: str,
    tokens: list[WordToken],
    first: int,
    last: int,
    glyph: str = DEFAULT_MASK_GLYPH,
) -> MaskedVariant:
    """Mask the contiguous token range ``first..last`` (inclusive) with a
    single glyph occurrence.

    The selected words and the text between them collapse into one glyph;
    a single-element range renders identically to ``mask`` with that index.
    """
    _check_glyph(glyph)
    if first > last:
        raise ValueError(f"empty token range: {first}..{last}")
    if first < 0 or last >= len(tokens):
        raise ValueError(f"token range out of bounds: {first}..{last} for {len(tokens)} tokens")

    start = tokens[first].start
    end = tokens[last].end
    return MaskedVariant(
        source_prompt=prompt,
        masked_indices=frozenset(range(first, last + 1)),
        rendered=prompt[:start] + glyph + prompt[end:],
        glyph=glyph,
        collapsed=True,
    )


def unmask(variant: MaskedVariant, tokens: list[WordToken]) -> str:
    """Reconstruct the source prompt from ``variant.rendered``.

    Substitutes the original text back at each glyph occurrence, using only
    the rendered text, the token spans, and (for collapsed spans, which also
    swallowed inter-word whitespace) the recorded source region. Raises
    ValueError if the rendering does not line up with the recorded mask.
    """
    selected = sorted(variant.masked_indices)
    if variant.collapsed:
        lo, hi = tokens[selected[0]].start, tokens[selected[-1]].end
        regions = [(lo, hi)]
        originals = [variant.source_prompt[lo:hi]]
    else:
        regions = [(tokens[k].start, tokens[k].end) for k in selected]
        originals = [tokens[k].text for k in selected]

    out = []
    src_pos = 0
    ren_pos = 0
    g = len(variant.glyph)
    for (start, end), original in zip(regions, originals):
        gap = start - src_pos
        out.append(variant.rendered[ren_pos:ren_pos + gap])
        ren_pos += gap
        if variant.rendered[ren_pos:ren_pos + g] != variant.glyph:
            raise ValueError(f"no mask glyph at rendered position {ren_pos}")
        out.append(original)
        ren_pos += g
        src_pos = end
    out.append(variant.rendered[ren_pos:])
    return "".join(out)
