"""Tokenization, fuzzy cue-phrase matching and attribute token maps."""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .errors import InvalidArgument, InvalidExpression

MAX_TOKENS = 128
SIMILARITY_THRESHOLD = 0.8
_PUNCT = string.punctuation + "“”‘’"


class AttributeKind(enum.Enum):
    APPEARANCE = "appearance"
    STATUS = "status"
    RELATION_TO_VIEWER = "relation_to_viewer"
    RELATION_TO_OTHERS = "relation_to_others"

    @property
    def index(self) -> int:
        return ATTRIBUTES.index(self) + 1

    @classmethod
    def parse(cls, name: str) -> "AttributeKind":
        key = name.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"viewer": "relation_to_viewer", "others": "relation_to_others"}
        return cls(aliases.get(key, key))


ATTRIBUTES = tuple(AttributeKind)
PUBLIC = "public"


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[str, ...]
    char_spans: tuple[tuple[int, int], ...]
    text: str = ""

    def __len__(self):
        return len(self.tokens)


def tokenize(expression: str, max_tokens: int = MAX_TOKENS) -> TokenSeq:
    """Lowercase whitespace tokens with surrounding punctuation stripped.

    Character spans index into the original string.
    """
    if not expression or not expression.strip():
        raise InvalidExpression("expression is empty")
    tokens, spans = [], []
    pos = 0
    for raw in expression.split():
        start = expression.index(raw, pos)
        pos = start + len(raw)
        lead = len(raw) - len(raw.lstrip(_PUNCT))
        word = raw.strip(_PUNCT)
        if not word:
            continue
        tokens.append(word.lower())
        spans.append((start + lead, start + lead + len(word)))
    if not tokens:
        raise InvalidExpression("expression has no word tokens")
    if len(tokens) > max_tokens:
        raise InvalidExpression(f"expression has {len(tokens)} tokens, limit is {max_tokens}")
    return TokenSeq(tuple(tokens), tuple(spans), expression)


class SynonymTable:
    """Maps words onto a canonical form; unknown words are their own canonical form."""

    def __init__(self, pairs: Optional[Mapping[str, str]] = None):
        self._canon = {k.lower(): v.lower() for k, v in (pairs or {}).items()}

    @classmethod
    def parse(cls, text: str) -> "SynonymTable":
        pairs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            for arrow in ("→", "->"):
                if arrow in line:
                    word, canon = (s.strip() for s in line.split(arrow, 1))
                    break
            else:
                raise InvalidArgument(f"synonym line {lineno} lacks an arrow: {line!r}")
            if not word or not canon:
                raise InvalidArgument(f"synonym line {lineno} is incomplete")
            pairs[word] = canon
        return cls(pairs)

    @classmethod
    def load(cls, path) -> "SynonymTable":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "SynonymTable":
        return cls.parse(resources.files("eventground").joinpath("data/synonyms.txt").read_text(encoding="utf-8"))

    def canonical(self, word: str) -> str:
        return self._canon.get(word, word)

    def same(self, a: str, b: str) -> bool:
        return self.canonical(a) == self.canonical(b)


def similarity(a: str, b: str) -> float:
    """Normalized Levenshtein similarity ``1 - dist / max(len)``."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - kernels.levenshtein(a, b) / longest


def tokens_match(a: str, b: str, synonyms: Optional[SynonymTable] = None) -> bool:
    if a == b or (synonyms is not None and synonyms.same(a, b)):
        return True
    return similarity(a, b) >= SIMILARITY_THRESHOLD


@dataclass(frozen=True)
class PositiveMap:
    bits: np.ndarray
    kind: object  # AttributeKind or PUBLIC

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or np.any(bits > 1):
            raise InvalidArgument("positive map must be a binary vector")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return len(self.bits)

    @property
    def empty(self) -> bool:
        return not self.bits.any()


@dataclass(frozen=True)
class SoftTokenMap:
    probs: np.ndarray
    empty: bool = False

    def __len__(self):
        return len(self.probs)


@dataclass(frozen=True)
class AttributeMask:
    bits: np.ndarray
    kind: AttributeKind
    visual_len: int


def fuzzy_match_spans(tokens: TokenSeq, spans: Mapping, kind: AttributeKind,
                      synonyms: Optional[SynonymTable] = None) -> PositiveMap:
    """Mark every token window that fuzzily matches one of ``kind``'s cue phrases.

    A window matches when each aligned token pair is a synonym pair or has
    similarity >= 0.8. All occurrences are marked.
    """
    bits = np.zeros(len(tokens), dtype=np.uint8)
    for cue in spans.get(kind, ()) or ():
        cue_tokens = tokenize(cue).tokens
        n = len(cue_tokens)
        for start in range(len(tokens) - n + 1):
            window = tokens.tokens[start:start + n]
            if all(tokens_match(w, c, synonyms) for w, c in zip(window, cue_tokens)):
                bits[start:start + n] = 1
    return PositiveMap(bits, kind)


def build_public_context(maps: Sequence[PositiveMap]) -> PositiveMap:
    """Tokens claimed by no attribute."""
    lengths = {len(m) for m in maps}
    if len(lengths) > 1:
        raise InvalidArgument(f"positive maps differ in length: {sorted(lengths)}")
    claimed = np.zeros(lengths.pop() if lengths else 0, dtype=bool)
    for m in maps:
        claimed |= m.bits.astype(bool)
    return PositiveMap((~claimed).astype(np.uint8), PUBLIC)


def soften(pmap: PositiveMap) -> SoftTokenMap:
    k = int(pmap.bits.sum())
    if k == 0:
        return SoftTokenMap(np.zeros(len(pmap)), empty=True)
    return SoftTokenMap(pmap.bits / k)


def build_attribute_mask(map_i: PositiveMap, public: PositiveMap, visual_len: int) -> AttributeMask:
    """Joint-sequence mask: visual positions pass, text positions are ``map_i OR public``."""
    if visual_len < 0:
        raise InvalidArgument("visual_len must be non-negative")
    if len(map_i) != len(public):
        raise InvalidArgument("attribute map and public context differ in length")
    text = (map_i.bits | public.bits).astype(np.uint8)
    bits = np.concatenate([np.ones(visual_len, dtype=np.uint8), text])
    return AttributeMask(bits, map_i.kind, visual_len)


@dataclass(frozen=True)
class ExpressionMaps:
    """All token maps derived from one annotated expression."""

    tokens: TokenSeq
    positives: tuple[PositiveMap, ...]  # one per attribute, in ATTRIBUTES order
    public: PositiveMap

    def soft_targets(self) -> list[SoftTokenMap]:
        """Softened attribute maps, empty ones replaced by the softened public context."""
        fallback = soften(self.public)
        out = []
        for pm in self.positives:
            soft = soften(pm)
            out.append(fallback if soft.empty else soft)
        return out

    def masks(self, visual_len: int) -> list[AttributeMask]:
        return [build_attribute_mask(pm, self.public, visual_len) for pm in self.positives]


def expression_maps(tokens: TokenSeq, spans: Mapping, synonyms: Optional[SynonymTable] = None,
                    kinds: Sequence[AttributeKind] = ATTRIBUTES) -> ExpressionMaps:
    """Positive maps for every attribute; kinds outside ``kinds`` are left empty."""
    positives = []
    for kind in ATTRIBUTES:
        if kind in kinds:
            positives.append(fuzzy_match_spans(tokens, spans, kind, synonyms))
        else:
            positives.append(PositiveMap(np.zeros(len(tokens), dtype=np.uint8), kind))
    return ExpressionMaps(tokens, tuple(positives), build_public_context(positives))


def class_name_maps(tokens: TokenSeq, class_label: str, synonyms: Optional[SynonymTable] = None) -> ExpressionMaps:
    """Baseline supervision: every attribute slot points at the class-name token(s)."""
    cue = {kind: [class_label] for kind in ATTRIBUTES}
    positives = tuple(fuzzy_match_spans(tokens, cue, kind, synonyms) for kind in ATTRIBUTES)
    return ExpressionMaps(tokens, positives, build_public_context(positives))
