"""
Model-free watermark detection.

Position t is scored against the partition seeded by X_{t-1}. Position 0 is
never scored: its seed came from the prompt, which the detector does not see.
"""
from __future__ import annotations
import math
from typing import Callable, List, Optional, Sequence

from pydantic import BaseModel
from scipy.stats import norm

from .config import SETTINGS
from .gateway import LogitProvider
from .metrics import entropy
from .partition import partition_for
from .syntax import VocabularyProfile
from .tokenizer import Tokenizer, TokenizerMismatchError
from .tokens import TokenSequence, as_sequence, next_token_distribution


class TokenTrace(BaseModel):
    token: int
    counted: bool
    green: bool


class DetectionReport(BaseModel):
    mode: str  # stone | full | entropy
    source: str = "tokens"  # tokens | text
    gamma: float
    z_threshold: float
    sequence_length: int
    counted: int
    green: int
    z: Optional[float]  # None when nothing was counted
    p_value: Optional[float]
    verdict: bool
    undetectable: bool
    first_position_skipped: bool = True
    trace: List[TokenTrace] = []


def z_score(green: int, counted: int, gamma: float) -> float:
    return (green - gamma * counted) / math.sqrt(gamma * (1.0 - gamma) * counted)


def _detect(
    tokens: Sequence[int],
    vocab_size: int,
    gamma: float,
    key: int,
    z_threshold: float,
    counts: Callable[[int, int], bool],
    mode: str,
) -> DetectionReport:
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    trace: List[TokenTrace] = []
    n_counted = n_green = 0
    for t, tok in enumerate(tokens):
        if t == 0 or not counts(t, tok):
            trace.append(TokenTrace(token=tok, counted=False, green=False))
            continue
        g = bool(partition_for(tokens[t - 1], key, vocab_size, gamma).green_mask[tok])
        n_counted += 1
        n_green += g
        trace.append(TokenTrace(token=tok, counted=True, green=g))
    if n_counted == 0:
        return DetectionReport(
            mode=mode, gamma=gamma, z_threshold=z_threshold, sequence_length=len(tokens),
            counted=0, green=0, z=None, p_value=None, verdict=False, undetectable=True, trace=trace,
        )
    z = z_score(n_green, n_counted, gamma)
    return DetectionReport(
        mode=mode, gamma=gamma, z_threshold=z_threshold, sequence_length=len(tokens),
        counted=n_counted, green=n_green, z=z, p_value=float(norm.sf(z)),
        verdict=z > z_threshold, undetectable=False, trace=trace,
    )


def detect_stone(
    seq: TokenSequence | Sequence[int],
    profile: VocabularyProfile,
    gamma: float = SETTINGS.gamma,
    key: int = SETTINGS.seed_key,
    z_threshold: float = SETTINGS.z_threshold,
) -> DetectionReport:
    """Counts only ETC tokens. Sequences shorter than 2 come back undetectable."""
    tokens = as_sequence(seq).check(profile.vocab_size).tokens
    mask = profile.syntax_mask
    return _detect(tokens, profile.vocab_size, gamma, key, z_threshold, lambda t, tok: not mask[tok], "stone")


def detect_full(
    seq: TokenSequence | Sequence[int],
    vocab_size: int,
    gamma: float = SETTINGS.gamma,
    key: int = SETTINGS.seed_key,
    z_threshold: float = SETTINGS.z_threshold,
) -> DetectionReport:
    """KGW baseline: every position from 1 on is counted."""
    tokens = as_sequence(seq).check(vocab_size).tokens
    return _detect(tokens, vocab_size, gamma, key, z_threshold, lambda t, tok: True, "full")


def detect_entropy_gated(
    seq: TokenSequence | Sequence[int],
    provider: LogitProvider,
    gamma: float = SETTINGS.gamma,
    key: int = SETTINGS.seed_key,
    h: float = SETTINGS.entropy_threshold,
    z_threshold: float = SETTINGS.z_threshold,
    prompt: TokenSequence | Sequence[int] = (),
    temperature: float = SETTINGS.temperature,
    top_k: Optional[int] = SETTINGS.top_k,
) -> DetectionReport:
    """SWEET-style: counts positions whose model entropy exceeds h. One provider call per position t >= 1."""
    tokens = as_sequence(seq).check(provider.vocab_size).tokens
    prefix = as_sequence(prompt).tokens

    def counts(t: int, tok: int) -> bool:
        p = next_token_distribution(provider.logits(prefix + tokens[:t]), temperature, top_k)
        return entropy(p) > h

    return _detect(tokens, provider.vocab_size, gamma, key, z_threshold, counts, "entropy")


def detect_from_text(
    code: str,
    tokenizer: Tokenizer,
    profile: VocabularyProfile,
    gamma: float = SETTINGS.gamma,
    key: int = SETTINGS.seed_key,
    z_threshold: float = SETTINGS.z_threshold,
) -> DetectionReport:
    if tokenizer.vocab_size != profile.vocab_size:
        raise TokenizerMismatchError(
            f"tokenizer '{tokenizer.name}' has {tokenizer.vocab_size} ids, profile has {profile.vocab_size}"
        )
    ids = tokenizer.encode(code)
    bad = [i for i in ids if not 0 <= i < profile.vocab_size]
    if bad:
        raise TokenizerMismatchError(f"tokenizer produced ids {bad[:5]} outside the profile vocabulary")
    report = detect_stone(ids, profile, gamma, key, z_threshold)
    return report.model_copy(update={"source": "text"})
