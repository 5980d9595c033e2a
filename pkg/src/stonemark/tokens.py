"""
Token, vocabulary and probability-vector primitives shared by every other module.

Vectors are plain float64 numpy arrays; the helpers below validate them at the
module boundary. Randomness always comes from an explicit `Rng` handed in by the
caller: a SplitMix64 stream, written out here so any implementation can replay
a run bit-for-bit.
"""
from __future__ import annotations
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

TokenId = int
LogitVector = np.ndarray
ProbVector = np.ndarray

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
PROB_TOL = 1e-9


def mix64(x: int) -> int:
    """SplitMix64 finalizer (multiply-xor-shift). Bijective on 64-bit integers."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Rng:
    """
    SplitMix64 stream: state advances by the golden gamma, output is mix64(state).
    `random()` takes the top 53 bits, `below(n)` reduces modulo n.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        return self.next_u64() % n

    def fork(self, *labels: int) -> "Rng":
        """Independent child stream keyed by integer labels (task index, sample index, ...)."""
        s = self.state
        for lab in labels:
            s = mix64(s ^ (int(lab) & MASK64))
        return Rng(s)


class TokenSequence(BaseModel):
    model_config = ConfigDict(frozen=True)

    tokens: Tuple[int, ...] = ()
    source_text: Optional[str] = None

    @field_validator("tokens")
    @classmethod
    def _non_negative(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(t < 0 for t in v):
            raise ValueError("token ids must be non-negative")
        return v

    def __len__(self) -> int:
        return len(self.tokens)

    def check(self, vocab_size: int) -> "TokenSequence":
        bad = [t for t in self.tokens if t >= vocab_size]
        if bad:
            raise ValueError(f"token ids {bad[:5]} outside vocabulary of size {vocab_size}")
        return self

    def extend(self, more: Iterable[int]) -> "TokenSequence":
        return TokenSequence(tokens=self.tokens + tuple(more))


def as_sequence(tokens: Sequence[int] | TokenSequence) -> TokenSequence:
    if isinstance(tokens, TokenSequence):
        return tokens
    return TokenSequence(tokens=tuple(int(t) for t in tokens))


def as_logits(values: Sequence[float] | np.ndarray) -> LogitVector:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("logits must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits contain non-finite values")
    return arr


def as_probs(values: Sequence[float] | np.ndarray) -> ProbVector:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("probabilities must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    total = float(arr.sum())
    if total == 0.0:
        raise ValueError("degenerate probability vector (all zero)")
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    return arr


def softmax(logits: Sequence[float] | LogitVector) -> ProbVector:
    x = as_logits(logits)
    e = np.exp(x - x.max())
    return e / e.sum()


def top_k_restrict(probs: Sequence[float] | ProbVector, k: int) -> ProbVector:
    """
    Zero everything outside the k most probable entries and renormalize.
    Ties at the k-th rank go to the lower token id.
    """
    p = as_probs(probs)
    if k < 1 or k > p.size:
        raise ValueError(f"top-k needs 1 <= k <= {p.size}, got {k}")
    if k == p.size:
        return p
    # lexsort: last key is primary -> descending prob, then ascending id
    order = np.lexsort((np.arange(p.size), -p))
    keep = order[:k]
    out = np.zeros_like(p)
    out[keep] = p[keep]
    return out / out.sum()


def sample(probs: Sequence[float] | ProbVector, rng: Rng) -> TokenId:
    """Inverse-CDF draw; consumes exactly one `rng.random()`."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise ValueError("sample() needs a non-negative finite 1-D vector")
    cdf = np.cumsum(p)
    total = float(cdf[-1])
    if total <= 0.0:
        raise ValueError("degenerate probability vector (all zero)")
    u = rng.random() * total
    idx = int(np.searchsorted(cdf, u, side="right"))
    # guard against u landing on the float ceiling of cdf[-1]
    idx = min(idx, p.size - 1)
    while p[idx] == 0.0 and idx > 0:
        idx -= 1
    return idx


def next_token_distribution(
    logits: Sequence[float] | LogitVector,
    temperature: float = 1.0,
    top_k: Optional[int] = None,
) -> ProbVector:
    """Temperature first, then softmax and top-k. A top_k wider than |V| means no truncation."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    x = as_logits(logits)
    p = softmax(x / temperature)
    if top_k is None or top_k >= p.size:
        return p
    return top_k_restrict(p, top_k)
