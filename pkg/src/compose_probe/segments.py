"""Caption decomposition into text segments.

Two sources:

* ``segment_structured`` reads phrase annotations that came with the caption
  (e.g. from the scene graph a caption was generated from) and emits segments
  in the configured granularity. Template captions are single relational
  clauses, so the [attribute+object, relation, attribute+object] form is
  realized by the full caption itself; coarse-grained output is therefore
  [attribute phrases..., full caption] and fine-grained prepends the bare
  object heads.

* ``segment_automatic`` approximates noun-chunk extraction with a
  deterministic lexicon-driven shallow parser: maximal token runs matching
  determiner? (number|adjective)* noun+ become chunks, with leading
  determiners stripped. Word classes come from plain-text lexicon files
  (one token per line) plus a couple of suffix rules; unknown tokens default
  to nouns, which keeps open vocabulary captions usable.

The full caption is always the last segment, and duplicate segments keep
their first occurrence only (the aggregate score is a mean over segments,
so silent duplicates would reweight it).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError, ConsistencyError

LEXICON_NAMES = (
    "colors",
    "sizes",
    "materials",
    "shapes",
    "relations",
    "determiners",
    "numbers",
    "conjunctions",
    "function_words",
)

_ADJ_SUFFIXES = ("ish", "ous", "ful", "less", "ive")


class Granularity(enum.Enum):
    FINE = "fine"
    COARSE = "coarse"


@dataclass(frozen=True)
class SegmentAnnotation:
    """Ground-truth phrase material for one caption.

    ``objects`` are bare head nouns, ``phrases`` the attribute+object spans;
    both must occur verbatim in the caption. ``relation`` is the surface
    relation between the first and second phrase, if any.
    """

    objects: tuple[str, ...]
    phrases: tuple[str, ...]
    relation: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentAnnotation":
        return cls(
            objects=tuple(d.get("objects", ())),
            phrases=tuple(d.get("phrases", ())),
            relation=d.get("relation"),
        )

    def to_dict(self) -> dict:
        out = {"objects": list(self.objects), "phrases": list(self.phrases)}
        if self.relation is not None:
            out["relation"] = self.relation
        return out


@dataclass(frozen=True)
class CaptionSegments:
    segments: tuple[str, ...]
    includes_full_caption: bool = True

    def __post_init__(self):
        if not self.segments:
            raise ConsistencyError("segment list may not be empty")


class Lexicon:
    """Word lists backing the shallow parser. Immutable after load."""

    def __init__(self, wordlists: dict[str, set[str]]):
        missing = [n for n in LEXICON_NAMES if n not in wordlists]
        if missing:
            raise ConfigurationError(f"lexicon missing word lists: {missing}")
        self.colors = wordlists["colors"]
        self.sizes = wordlists["sizes"]
        self.materials = wordlists["materials"]
        self.shapes = wordlists["shapes"]
        self.relations = wordlists["relations"]
        self.determiners = wordlists["determiners"]
        self.numbers = wordlists["numbers"]
        self.conjunctions = wordlists["conjunctions"]
        self.function_words = wordlists["function_words"]

    @classmethod
    def bundled(cls) -> "Lexicon":
        wordlists = {}
        for name in LEXICON_NAMES:
            text = resources.files("compose_probe.lexicons").joinpath(f"{name}.txt").read_text()
            wordlists[name] = {w.strip().lower() for w in text.splitlines() if w.strip()}
        return cls(wordlists)

    @classmethod
    def from_dir(cls, path: Path) -> "Lexicon":
        wordlists = {}
        for name in LEXICON_NAMES:
            f = Path(path) / f"{name}.txt"
            if not f.exists():
                raise ConfigurationError(f"lexicon file not found: {f}")
            wordlists[name] = {
                w.strip().lower() for w in f.read_text().splitlines() if w.strip()
            }
        return cls(wordlists)


_DEFAULT_LEXICON: Lexicon | None = None


def default_lexicon() -> Lexicon:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = Lexicon.bundled()
    return _DEFAULT_LEXICON


# token classes used by the chunker
_DET, _NUM, _ADJ, _NOUN, _BREAK = range(5)


def _strip_plural(word: str) -> str:
    if word.endswith("es") and len(word) > 3:
        return word[:-2]
    if word.endswith("s") and len(word) > 2:
        return word[:-1]
    return word


def _classify(token: str, lex: Lexicon) -> int:
    w = token.lower()
    if w in lex.determiners:
        return _DET
    if w in lex.conjunctions or w in lex.relations or w in lex.function_words:
        return _BREAK
    if w.endswith("ly"):
        return _BREAK
    if w in lex.numbers or w.isdigit():
        return _NUM
    if w in lex.colors or w in lex.sizes or w in lex.materials:
        return _ADJ
    if any(w.endswith(s) for s in _ADJ_SUFFIXES):
        return _ADJ
    if w in lex.shapes or _strip_plural(w) in lex.shapes:
        return _NOUN
    return _NOUN  # open-class fallback


def _tokenize(caption: str) -> list[tuple[str, bool]]:
    """(token, hard_boundary_after) pairs; punctuation forces a boundary."""
    out = []
    for raw in caption.split():
        token = raw.strip(".,;:!?\"'()")
        if not token:
            continue
        boundary = raw != token and not raw.startswith(("\"", "'", "("))
        out.append((token, boundary))
    return out


def _dedup(segments: list[str]) -> tuple[str, ...]:
    seen = set()
    out = []
    for s in segments:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return tuple(out)


def segment_automatic(caption: str, lexicon: Lexicon | None = None) -> CaptionSegments:
    """Extract noun chunks from a caption; always appends the full caption."""
    if not caption or not caption.strip():
        raise ConsistencyError("caption may not be empty")
    lex = lexicon or default_lexicon()
    tokens = _tokenize(caption)

    chunks: list[str] = []
    current: list[str] = []
    has_noun = False

    def flush():
        nonlocal current, has_noun
        if has_noun:
            while current and _classify(current[0], lex) == _DET:
                current.pop(0)
            if current:
                chunks.append(" ".join(current))
        current = []
        has_noun = False

    for token, boundary in tokens:
        cls = _classify(token, lex)
        if cls == _BREAK:
            flush()
        elif cls == _DET:
            if has_noun:
                flush()
            current.append(token)
        elif cls in (_NUM, _ADJ):
            if has_noun:  # modifier after a noun starts a new chunk
                flush()
            current.append(token)
        else:  # noun
            current.append(token)
            has_noun = True
        if boundary:
            flush()
    flush()

    return CaptionSegments(segments=_dedup(chunks + [caption]))


def segment_structured(
    annotation: SegmentAnnotation,
    caption: str,
    granularity: Granularity = Granularity.COARSE,
) -> CaptionSegments:
    """Build segments from ground-truth phrase annotations.

    Raises ConsistencyError when an annotated object or phrase does not occur
    verbatim in the caption.
    """
    if not caption or not caption.strip():
        raise ConsistencyError("caption may not be empty")
    for item in (*annotation.objects, *annotation.phrases):
        if item not in caption:
            raise ConsistencyError(f"annotation item {item!r} not found in caption {caption!r}")

    parts: list[str] = []
    if granularity is Granularity.FINE:
        parts.extend(annotation.objects)
    parts.extend(annotation.phrases)
    parts.append(caption)
    return CaptionSegments(segments=_dedup(parts))
