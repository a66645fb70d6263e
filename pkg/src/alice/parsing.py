"""Rule-based parsing of contrastive explanations into semantic segments.

The grammar is realized as longest-match lexicon scanning with skip
tokens: surface forms of 1-3 tokens rewrite to segment ids, everything
else is skipped, so parsing always terminates with either a segment set
or the NoSegmentsFound error. First-mention order is preserved and
duplicates are dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateSurfaceForm, MalformedManifest, NoSegmentsFound

MAX_SURFACE_TOKENS = 3


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation (keeping intra-word hyphens), split."""
    text = text.lower()
    chars = []
    for i, ch in enumerate(text):
        if ch.isalnum() or ch.isspace():
            chars.append(ch)
        elif (ch == "-" and 0 < i < len(text) - 1
              and text[i - 1].isalnum() and text[i + 1].isalnum()):
            chars.append(ch)
    return "".join(chars).split()


@dataclass(frozen=True)
class Lexicon:
    """Map from surface token sequences (1-3 tokens) to segment ids."""

    entries: dict[tuple[str, ...], int]
    canonical: dict[int, str]

    def segment_ids(self) -> set[int]:
        return set(self.entries.values())

    def name_of(self, segment_id: int) -> str:
        return self.canonical[segment_id]


def _add_surface(entries: dict, surface: str, segment_id: int):
    tokens = tuple(tokenize(surface))
    if not tokens or len(tokens) > MAX_SURFACE_TOKENS:
        raise DuplicateSurfaceForm(
            f"surface form '{surface}' must tokenize to 1..{MAX_SURFACE_TOKENS} tokens")
    if tokens in entries and entries[tokens] != segment_id:
        raise DuplicateSurfaceForm(
            f"surface form '{surface}' maps to segments {entries[tokens]} and {segment_id}")
    entries[tokens] = segment_id


def default_lexicon(catalog) -> Lexicon:
    """One entry per canonical name plus one per synonym of the catalog."""
    entries: dict[tuple[str, ...], int] = {}
    canonical: dict[int, str] = {}
    for seg in catalog:
        canonical[seg.segment_id] = seg.canonical_name
        _add_surface(entries, seg.canonical_name, seg.segment_id)
        for syn in seg.synonyms:
            _add_surface(entries, syn, seg.segment_id)
    return Lexicon(entries, canonical)


def load_lexicon(path: str | Path) -> Lexicon:
    """Load a standalone lexicon file: {canonical name: [synonyms...]}.

    Segment ids are assigned by order of appearance, so the file is
    usable without any dataset manifest.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifest(f"cannot read lexicon {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedManifest(f"lexicon {path} must map names to synonym lists")
    entries: dict[tuple[str, ...], int] = {}
    canonical: dict[int, str] = {}
    for segment_id, (name, synonyms) in enumerate(raw.items()):
        canonical[segment_id] = name
        _add_surface(entries, name, segment_id)
        for syn in synonyms:
            _add_surface(entries, str(syn), segment_id)
    return Lexicon(entries, canonical)


@dataclass(frozen=True)
class RuleSet:
    """Rewrite-rule configuration for the parser.

    The default rules rewrite lexicon surface forms to their segment ids
    (longest match first) and skip any unexpected token. A chart parser
    could replace the scan without changing the interface.
    """

    max_window: int = MAX_SURFACE_TOKENS
    skip_unknown: bool = True


@dataclass(frozen=True)
class ParsedExplanation:
    pair: tuple[int, int]
    segments: tuple[int, ...]
    raw_text: str = ""
    segment_names: tuple[str, ...] = field(default=())


def parse(text: str, pair: tuple[int, int], lexicon: Lexicon,
          rules: RuleSet = RuleSet()) -> ParsedExplanation:
    """Extract the discriminating segments mentioned in an explanation.

    Longest-match scan, left to right; unmatched tokens are skipped so
    the parse always completes. Raises NoSegmentsFound when nothing in
    the lexicon is mentioned.
    """
    tokens = tokenize(text)
    found: list[int] = []
    i = 0
    while i < len(tokens):
        for width in range(min(rules.max_window, len(tokens) - i), 0, -1):
            segment_id = lexicon.entries.get(tuple(tokens[i:i + width]))
            if segment_id is not None:
                if segment_id not in found:
                    found.append(segment_id)
                i += width
                break
        else:
            i += 1  # skip token
    if not found:
        raise NoSegmentsFound(
            f"no semantic segment recognized in explanation: {text[:80]!r}")
    return ParsedExplanation(
        pair=pair,
        segments=tuple(found),
        raw_text=text,
        segment_names=tuple(lexicon.name_of(s) for s in found),
    )
