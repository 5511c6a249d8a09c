"""Rule-based tagging and noun-phrase chunking for referring expressions.

A deterministic, lexicon-backed tagger stands in for a full NLP toolchain:
the same expression always yields the same parse, with no model downloads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import InputError

TAGSET = frozenset(
    {"NOUN", "PROPN", "ADJ", "VERB", "NUM", "DET", "ADP", "PRON", "CCONJ", "PART", "OTHER"}
)
EFFECTIVE_TAGS = frozenset({"NOUN", "PROPN", "ADJ", "VERB", "NUM"})
NOUN_TAGS = frozenset({"NOUN", "PROPN"})
MODIFIER_TAGS = frozenset({"ADJ", "NUM"})

SENTINEL_SURFACE = "<cls>"

POSITIONAL_LEMMAS = frozenset(
    {
        "left", "right", "top", "bottom", "front", "back", "behind", "above",
        "below", "under", "over", "near", "next", "middle", "center",
        "closest", "farthest", "between",
    }
)

# Participles without the regular -ing/-ed shape, admitted as NP pre-modifiers.
IRREGULAR_PARTICIPLES = frozenset({"broken", "torn", "worn", "burnt", "cut", "lit", "hidden"})

_NUM_RE = re.compile(r"\d+([.,]\d+)?")
_WORD_RE = re.compile(r"[a-z0-9]+(?:[.,][0-9]+)*")


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    pos: str
    index: int


@dataclass(frozen=True)
class ParsedExpression:
    """Token sequence plus the effective/primary/context index structure."""

    tokens: tuple[Token, ...]
    effective: frozenset[int]
    primary: int
    context: tuple[int, ...]
    positional: bool

    def surfaces(self) -> tuple[str, ...]:
        return tuple(t.surface for t in self.tokens)

    @property
    def context_count(self) -> int:
        return len(self.context)


def _default_lexicon_text() -> str:
    return resources.files("refsal.data").joinpath("lexicon.txt").read_text("utf-8")


def parse_lexicon(text: str) -> dict[str, str]:
    lexicon: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InputError(f"lexicon line {lineno}: expected 'lemma<TAB>TAG', got {line!r}")
        lemma, tag = parts[0].strip().lower(), parts[1].strip().upper()
        if tag not in TAGSET:
            raise InputError(f"lexicon line {lineno}: unknown tag {tag!r}")
        lexicon[lemma] = tag
    return lexicon


def load_lexicon(path=None) -> dict[str, str]:
    """Load the tagging lexicon, from `path` or the bundled default."""
    if path is None:
        return _bundled_lexicon()
    with open(path, encoding="utf-8") as fp:
        return parse_lexicon(fp.read())


@lru_cache(maxsize=1)
def _bundled_lexicon() -> dict[str, str]:
    return parse_lexicon(_default_lexicon_text())


def _noun_lemma(word: str) -> str:
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("es") and len(word) > 3 and word[:-2].endswith(("s", "x", "z", "ch", "sh")):
        return word[:-2]
    if word.endswith("s") and len(word) > 3 and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def _adjective_stem_match(word: str, suffix: str, adjectives: set[str]) -> bool:
    stem = word[: -len(suffix)]
    if not stem:
        return False
    candidates = {stem, stem + "e"}
    if len(stem) > 2 and stem[-1] == stem[-2]:
        candidates.add(stem[:-1])
    return any(c in adjectives for c in candidates)


def _tag_word(word: str, lexicon: dict[str, str], adjectives: set[str]) -> str:
    tag = lexicon.get(word)
    if tag is not None:
        return tag
    if _NUM_RE.fullmatch(word):
        return "NUM"
    if word.endswith("ing") and len(word) > 4:
        return "VERB"
    if word.endswith("ed") and len(word) > 3:
        return "VERB"
    if word.endswith("est") and _adjective_stem_match(word, "est", adjectives):
        return "ADJ"
    if word.endswith("er") and _adjective_stem_match(word, "er", adjectives):
        return "ADJ"
    return "NOUN"


def tokenize_and_tag(expression: str, lexicon: dict[str, str] | None = None) -> list[Token]:
    """Lowercase, split, and tag an expression; a sentinel token leads at index 0."""
    if lexicon is None:
        lexicon = _bundled_lexicon()
    text = expression.strip().lower()
    if not text:
        raise InputError("empty referring expression")
    text = text.replace("'s", " ").replace("'", " ")
    words = _WORD_RE.findall(text)
    if not words:
        raise InputError(f"no tokens found in expression {expression!r}")
    adjectives = {w for w, t in lexicon.items() if t == "ADJ"}
    tokens = [Token(SENTINEL_SURFACE, SENTINEL_SURFACE, "OTHER", 0)]
    for i, word in enumerate(words, start=1):
        tag = _tag_word(word, lexicon, adjectives)
        lemma = _noun_lemma(word) if tag == "NOUN" else word
        tokens.append(Token(word, lemma, tag, i))
    return tokens


def filter_effective(tokens: list[Token]) -> frozenset[int]:
    """Indices of the sentinel plus all content-bearing tokens."""
    return frozenset({0} | {t.index for t in tokens if t.pos in EFFECTIVE_TAGS})


def _is_premodifier(token: Token) -> bool:
    if token.pos in MODIFIER_TAGS:
        return True
    if token.pos == "VERB":
        return (
            token.surface.endswith(("ing", "ed"))
            or token.surface in IRREGULAR_PARTICIPLES
        )
    return False


def _match_np(tokens: list[Token], start: int) -> int:
    """Length of the maximal NP at `start` (DET? mods* nouns+), or 0."""
    i = start
    n = len(tokens)
    if i < n and tokens[i].pos == "DET":
        i += 1
    while i < n and _is_premodifier(tokens[i]):
        i += 1
    j = i
    while j < n and tokens[j].pos in NOUN_TAGS:
        j += 1
    if j == i:
        return 0
    return j - start


def noun_phrase_spans(tokens: list[Token]) -> list[tuple[int, int]]:
    """Maximal NP spans [start, end) over the tagged sequence, left to right."""
    spans: list[tuple[int, int]] = []
    i = 1  # skip the sentinel
    n = len(tokens)
    while i < n:
        length = _match_np(tokens, i)
        if length:
            spans.append((i, i + length))
            i += length
        else:
            i += 1
    return spans


def extract_primary_noun(tokens: list[Token]) -> int:
    """Rightmost noun of the leftmost NP; falls back to the first content token."""
    spans = noun_phrase_spans(tokens)
    if spans:
        start, end = spans[0]
        for k in range(end - 1, start - 1, -1):
            if tokens[k].pos in NOUN_TAGS:
                return tokens[k].index
    effective = filter_effective(tokens)
    content = sorted(i for i in effective if i > 0)
    if content:
        return content[0]
    return 0


def detect_positional(tokens: list[Token]) -> bool:
    """Whether any lemma names a spatial relation."""
    return any(t.lemma in POSITIONAL_LEMMAS for t in tokens[1:])


def parse(expression: str, lexicon: dict[str, str] | None = None) -> ParsedExpression:
    """Full parse: tag, select effective tokens, pick the primary word."""
    tokens = tokenize_and_tag(expression, lexicon)
    effective = filter_effective(tokens)
    primary = extract_primary_noun(tokens)
    context = tuple(sorted(effective - {primary}))
    return ParsedExpression(
        tokens=tuple(tokens),
        effective=effective,
        primary=primary,
        context=context,
        positional=detect_positional(tokens),
    )
