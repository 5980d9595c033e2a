from __future__ import annotations
import math
from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import SETTINGS
from .gateway import LogitProvider, ProviderError
from .metrics import entropy
from .partition import VocabPartition, partition_for
from .syntax import VocabularyProfile
from .tokens import ProbVector, Rng, TokenSequence, as_sequence, next_token_distribution, sample

# -------------------------
# Parameters & records
# -------------------------

class Gate(str, Enum):
    OFF = "off"                # no watermark
    ALWAYS = "always"          # KGW: every step
    NON_SYNTAX = "non_syntax"  # STONE: candidate outside S
    ENTROPY = "entropy"        # SWEET-style: H_t above threshold


_GATE_ALIASES = {"none": Gate.OFF, "kgw": Gate.ALWAYS, "stone": Gate.NON_SYNTAX, "sweet": Gate.ENTROPY}


def parse_gate(name: str) -> Gate:
    key = name.strip().lower().replace("-", "_")
    if key in _GATE_ALIASES:
        return _GATE_ALIASES[key]
    try:
        return Gate(key)
    except ValueError:
        raise ValueError(f"unknown gate '{name}' (off, always|kgw, non_syntax|stone, entropy|sweet)")


class WatermarkParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(SETTINGS.gamma, gt=0.0, lt=1.0)
    delta: float = Field(SETTINGS.delta, ge=0.0)  # 0 only as a test boundary
    key: int = Field(SETTINGS.seed_key, ge=0, lt=1 << 64)
    gate: Gate = Gate.NON_SYNTAX
    entropy_threshold: float = SETTINGS.entropy_threshold
    top_k: int = Field(SETTINGS.top_k, ge=1)
    temperature: float = Field(SETTINGS.temperature, gt=0.0)
    max_tokens: int = Field(SETTINGS.max_tokens, ge=0)
    stop_tokens: FrozenSet[int] = frozenset()


class StepLog(BaseModel):
    candidate: int
    gated: bool
    seed: Optional[int] = None  # partition seed, gated steps only
    token: int
    p_base: float   # p_t of the final token
    p_final: float  # p'_t of the final token
    entropy: float
    final_syntax: bool  # gated step whose final token still landed in S counts as dilution


class GenerationRecord(BaseModel):
    prompt: TokenSequence
    output: TokenSequence
    steps: List[StepLog] = []
    complete: bool = True
    error: Optional[str] = None

    @property
    def gated_steps(self) -> int:
        return sum(1 for s in self.steps if s.gated)

    @property
    def gated_then_syntax(self) -> int:
        return sum(1 for s in self.steps if s.gated and s.final_syntax)


@dataclass(frozen=True)
class Proposal:
    """Everything about one step before the final draw."""
    candidate: int
    gated: bool
    entropy: float
    base: ProbVector
    final: ProbVector
    partition: Optional[VocabPartition]


# -------------------------
# Insertion
# -------------------------

def boost(base: ProbVector, green_mask: np.ndarray, delta: float) -> ProbVector:
    """softmax(l + delta * green) on the support of `base`, written as reweighting of base."""
    w = base * np.where(green_mask, math.exp(delta), 1.0)
    return w / w.sum()


def green_mass_shift(base: ProbVector, partition: VocabPartition, delta: float) -> Tuple[float, float]:
    before = float(base[partition.green_mask].sum())
    after = float(boost(base, partition.green_mask, delta)[partition.green_mask].sum())
    return before, after


def step_partition(context: TokenSequence, params: WatermarkParams, vocab_size: int) -> VocabPartition:
    return partition_for(context.tokens[-1], params.key, vocab_size, params.gamma)


def _gate_fires(params: WatermarkParams, candidate: int, h: float, profile: VocabularyProfile) -> bool:
    if params.gate is Gate.ALWAYS:
        return True
    if params.gate is Gate.NON_SYNTAX:
        return not profile.is_syntax(candidate)
    if params.gate is Gate.ENTROPY:
        return h > params.entropy_threshold
    return False


def propose(
    provider: LogitProvider,
    context: TokenSequence | Sequence[int],
    params: WatermarkParams,
    profile: VocabularyProfile,
    rng: Rng,
) -> Proposal:
    ctx = as_sequence(context)
    if not ctx.tokens:
        raise ValueError("generation needs a non-empty prompt: the first partition is seeded by its last token")
    if provider.vocab_size != profile.vocab_size:
        raise ValueError(f"provider vocab {provider.vocab_size} != profile vocab {profile.vocab_size}")
    base = next_token_distribution(provider.logits(ctx), params.temperature, params.top_k)
    h = entropy(base)
    candidate = sample(base, rng)
    if not _gate_fires(params, candidate, h, profile):
        return Proposal(candidate, False, h, base, base, None)
    part = step_partition(ctx, params, profile.vocab_size)
    return Proposal(candidate, True, h, base, boost(base, part.green_mask, params.delta), part)


def step(
    provider: LogitProvider,
    context: TokenSequence | Sequence[int],
    params: WatermarkParams,
    profile: VocabularyProfile,
    rng: Rng,
) -> Tuple[int, StepLog]:
    prop = propose(provider, context, params, profile, rng)
    token = sample(prop.final, rng)
    log = StepLog(
        candidate=prop.candidate,
        gated=prop.gated,
        seed=prop.partition.seed if prop.partition is not None else None,
        token=token,
        p_base=float(prop.base[token]),
        p_final=float(prop.final[token]),
        entropy=prop.entropy,
        final_syntax=profile.is_syntax(token),
    )
    return token, log


def generate(
    provider: LogitProvider,
    prompt: TokenSequence | Sequence[int],
    params: WatermarkParams,
    profile: VocabularyProfile,
    rng: Rng,
) -> GenerationRecord:
    prompt = as_sequence(prompt).check(profile.vocab_size)
    if not prompt.tokens:
        raise ValueError("prompt must be non-empty")
    out: List[int] = []
    logs: List[StepLog] = []
    ctx = list(prompt.tokens)
    while len(out) < params.max_tokens:
        try:
            token, log = step(provider, ctx, params, profile, rng)
        except ProviderError as e:
            return GenerationRecord(
                prompt=prompt, output=TokenSequence(tokens=tuple(out)), steps=logs,
                complete=False, error=str(e),
            )
        out.append(token)
        logs.append(log)
        ctx.append(token)
        if token in params.stop_tokens:
            break
    return GenerationRecord(prompt=prompt, output=TokenSequence(tokens=tuple(out)), steps=logs)
