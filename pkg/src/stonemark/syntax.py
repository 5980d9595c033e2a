"""
Language profiles and vocabulary classification.

A LanguageProfile lists the lexemes of five syntax categories for one language
(shipped as `data/profiles/<language>.json`). A VocabularyProfile maps every
token id of a tokenizer vocabulary to exactly one TokenCategory; the ids whose
category is not ETC form the syntax set S that the watermark never biases.
"""
from __future__ import annotations
import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .config import PATHS
from .tokens import TokenSequence, as_sequence


class TokenCategory(str, Enum):
    KEYWORD = "keyword"
    WHITESPACE = "whitespace"
    TYPE = "type"
    DELIMITER = "delimiter"
    OPERATOR = "operator"
    ETC = "etc"


CATEGORY_ORDER: Tuple[TokenCategory, ...] = tuple(TokenCategory)
_CODE = {c: i for i, c in enumerate(CATEGORY_ORDER)}

# BPE space markers (GPT-2 byte level, SentencePiece) and the plain space
SPACE_MARKERS = (" ", "Ġ", "▁")
# byte-level renderings of newline / tab / space
_WS_MARKERS = frozenset({"Ġ", "▁", "Ċ", "ĉ"})


class LanguageProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    language: str
    keywords: FrozenSet[str]
    whitespace: FrozenSet[str]
    types: FrozenSet[str]
    delimiters: FrozenSet[str]
    operators: FrozenSet[str]

    @model_validator(mode="after")
    def _disjoint_and_complete(self) -> "LanguageProfile":
        groups = {
            "keywords": self.keywords, "whitespace": self.whitespace, "types": self.types,
            "delimiters": self.delimiters, "operators": self.operators,
        }
        for name, lex in groups.items():
            if not lex:
                raise ValueError(f"{self.language}: '{name}' list is empty")
        names = list(groups)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                both = groups[a] & groups[b]
                if both:
                    raise ValueError(f"{self.language}: {a} and {b} share {sorted(both)}")
        return self

    @property
    def punctuation(self) -> FrozenSet[str]:
        return self.delimiters | self.operators


def load_language_profile(language: str, profile_dir: Optional[Path] = None) -> LanguageProfile:
    return _load_profile(language, str(profile_dir or PATHS.profiles))


@lru_cache(maxsize=None)
def _load_profile(language: str, profile_dir: str) -> LanguageProfile:
    fp = Path(profile_dir) / f"{language}.json"
    if not fp.exists():
        raise ValueError(f"No language profile for '{language}' (looked in {profile_dir})")
    data = json.loads(fp.read_text(encoding="utf-8"))
    return LanguageProfile(**data)


def available_languages(profile_dir: Optional[Path] = None) -> Tuple[str, ...]:
    return tuple(sorted(p.stem for p in Path(profile_dir or PATHS.profiles).glob("*.json")))


def _strip_marker(text: str) -> str:
    if text and text[0] in SPACE_MARKERS:
        return text[1:]
    return text


def _is_ws(ch: str) -> bool:
    return ch.isspace() or ch in _WS_MARKERS


def _pieces_cover(body: str, pieces: FrozenSet[str], max_len: int) -> bool:
    """True if `body` splits into listed pieces, whitespace allowed between them."""
    ok = [False] * (len(body) + 1)
    ok[0] = True
    for i in range(len(body)):
        if not ok[i]:
            continue
        if _is_ws(body[i]):
            ok[i + 1] = True
        for n in range(1, min(max_len, len(body) - i) + 1):
            if body[i:i + n] in pieces:
                ok[i + n] = True
    return ok[len(body)]


def classify_lexeme(profile: LanguageProfile, text: str) -> TokenCategory:
    """
    Keyword/Type on exact match after dropping one leading space marker,
    Whitespace when every character is whitespace, Delimiter/Operator when the
    text is made only of listed punctuation (Delimiter wins for mixtures),
    ETC otherwise. Case-sensitive.
    """
    if not text:
        raise ValueError("classify_lexeme needs a non-empty string")
    body = _strip_marker(text)
    if body in profile.keywords:
        return TokenCategory.KEYWORD
    if body in profile.types:
        return TokenCategory.TYPE
    if all(_is_ws(ch) for ch in text):
        return TokenCategory.WHITESPACE
    if body in profile.delimiters:
        return TokenCategory.DELIMITER
    if body in profile.operators:
        return TokenCategory.OPERATOR
    longest = max(len(x) for x in profile.punctuation)
    if _pieces_cover(body, profile.delimiters, longest):
        return TokenCategory.DELIMITER
    if _pieces_cover(body, profile.operators, longest):
        return TokenCategory.OPERATOR
    if _pieces_cover(body, profile.punctuation, longest):
        return TokenCategory.DELIMITER
    return TokenCategory.ETC


@dataclass(frozen=True)
class VocabularyProfile:
    language: str
    decode: Tuple[str, ...]
    categories: np.ndarray  # int8 index into CATEGORY_ORDER, one per token id
    syntax_mask: np.ndarray  # bool, True for ids in S

    @property
    def vocab_size(self) -> int:
        return len(self.decode)

    @property
    def syntax_set(self) -> FrozenSet[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.syntax_mask))

    def category_of(self, token: int) -> TokenCategory:
        return CATEGORY_ORDER[int(self.categories[token])]

    def is_syntax(self, token: int) -> bool:
        return bool(self.syntax_mask[token])

    def ids_in(self, category: TokenCategory) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.categories == _CODE[category]))


def build_vocabulary_profile(
    profile: LanguageProfile,
    decode_table: Sequence[str] | Mapping[int, str],
) -> VocabularyProfile:
    if isinstance(decode_table, Mapping):
        size = len(decode_table)
        missing = [i for i in range(size) if i not in decode_table]
        if missing:
            raise ValueError(f"decode table is not total over [0, {size}): missing {missing[:5]}")
        table = tuple(decode_table[i] for i in range(size))
    else:
        table = tuple(decode_table)
    if not table:
        raise ValueError("cannot build a profile for an empty vocabulary")

    cats = np.empty(len(table), dtype=np.int8)
    for i, s in enumerate(table):
        # special tokens decode to "" and carry no syntax
        cat = classify_lexeme(profile, s) if s else TokenCategory.ETC
        cats[i] = _CODE[cat]
    cats.setflags(write=False)
    mask = cats != _CODE[TokenCategory.ETC]
    mask.setflags(write=False)
    return VocabularyProfile(language=profile.language, decode=table, categories=cats, syntax_mask=mask)


def category_histogram(profile: VocabularyProfile, seq: TokenSequence | Sequence[int]) -> Dict[TokenCategory, int]:
    seq = as_sequence(seq).check(profile.vocab_size)
    counts = Counter(profile.category_of(t) for t in seq.tokens)
    return {c: counts.get(c, 0) for c in CATEGORY_ORDER}
