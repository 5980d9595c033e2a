"""
Tokenizer handles: text <-> token ids plus the decode table a VocabularyProfile is built from.

ToyTokenizer is word-level over strings shaped " <word>", " ", "\\n" or "\\t", so
decode(ids) followed by encode() gives back the same ids for every sequence.
HFTokenizer wraps a Hugging Face `tokenizers` model (optional extra).
"""
from __future__ import annotations
import re
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

from .syntax import LanguageProfile


class TokenizerMismatchError(ValueError):
    pass


class Tokenizer(Protocol):
    name: str

    @property
    def vocab_size(self) -> int: ...

    def decode_table(self) -> Tuple[str, ...]: ...

    def encode(self, text: str) -> List[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


_TOY_PIECE = re.compile(r"\n|\t| [^\s]*")

DEFAULT_IDENTIFIERS: Tuple[str, ...] = (
    "x", "y", "i", "j", "n", "k", "a", "b", "s", "add", "result", "value", "values", "items",
    "total", "count", "data", "key", "name", "left", "right", "node", "index", "nums",
    "arr", "text", "word", "words", "out", "acc", "res", "length", "size", "first",
    "last", "cache", "seen", "stack", "queue", "pair", "item", "0", "1", "2", "10",
    "range", "len", "print", "append", "sum", "max", "min", "sorted", "\"\"", "self",
)


def build_toy_vocabulary(profile: LanguageProfile, identifiers: Sequence[str] = DEFAULT_IDENTIFIERS) -> List[str]:
    vocab = [" ", "\n", "\t"]
    for group in (profile.keywords, profile.types, profile.delimiters, profile.operators):
        vocab.extend(" " + lex for lex in sorted(group))
    vocab.extend(" " + w for w in identifiers if (" " + w) not in vocab)
    return vocab


class ToyTokenizer:
    def __init__(self, vocab: Sequence[str], name: str = "toy"):
        self.name = name
        self._vocab: Tuple[str, ...] = tuple(vocab)
        self._index: Dict[str, int] = {}
        for i, piece in enumerate(self._vocab):
            if _TOY_PIECE.fullmatch(piece) is None:
                raise ValueError(f"toy vocabulary entry {piece!r} is not ' word', ' ', '\\n' or '\\t'")
            if piece in self._index:
                raise ValueError(f"duplicate toy vocabulary entry {piece!r}")
            self._index[piece] = i

    @classmethod
    def for_language(cls, profile: LanguageProfile) -> "ToyTokenizer":
        return cls(build_toy_vocabulary(profile), name=f"toy-{profile.language}")

    @property
    def vocab_size(self) -> int:
        return len(self._vocab)

    def decode_table(self) -> Tuple[str, ...]:
        return self._vocab

    def encode(self, text: str) -> List[int]:
        pieces = _TOY_PIECE.findall(text)
        if "".join(pieces) != text:
            raise TokenizerMismatchError("text contains characters outside the toy vocabulary grammar")
        ids: List[int] = []
        for p in pieces:
            if p not in self._index:
                raise TokenizerMismatchError(f"piece {p!r} is not in the toy vocabulary")
            ids.append(self._index[p])
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        try:
            return "".join(self._vocab[i] for i in ids)
        except IndexError:
            raise TokenizerMismatchError(f"token id outside vocabulary of size {self.vocab_size}")


class HFTokenizer:
    """Adapter over `tokenizers.Tokenizer`; install with the `hf` extra."""

    def __init__(self, name: str, tokenizer=None):
        if tokenizer is None:
            try:
                from tokenizers import Tokenizer as _HF
            except ImportError as e:
                raise RuntimeError("HFTokenizer needs the optional 'tokenizers' package (uv sync --extra hf)") from e
            tokenizer = _HF.from_pretrained(name)
        self.name = name
        self._tok = tokenizer
        self._table: Optional[Tuple[str, ...]] = None

    @property
    def vocab_size(self) -> int:
        return int(self._tok.get_vocab_size(with_added_tokens=True))

    def decode_table(self) -> Tuple[str, ...]:
        if self._table is None:
            self._table = tuple(self._tok.decode([i], skip_special_tokens=False) for i in range(self.vocab_size))
        return self._table

    def encode(self, text: str) -> List[int]:
        ids = list(self._tok.encode(text, add_special_tokens=False).ids)
        bad = [i for i in ids if not 0 <= i < self.vocab_size]
        if bad:
            raise TokenizerMismatchError(f"tokenizer produced ids {bad[:5]} outside its vocabulary")
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return self._tok.decode(list(ids), skip_special_tokens=False)


def load_tokenizer(spec: str, profile: LanguageProfile) -> Tokenizer:
    """'toy' or 'hf:<model name>'."""
    if spec == "toy":
        return ToyTokenizer.for_language(profile)
    if spec.startswith("hf:"):
        return HFTokenizer(spec[3:])
    raise ValueError(f"unknown tokenizer '{spec}' (use 'toy' or 'hf:<name>')")
