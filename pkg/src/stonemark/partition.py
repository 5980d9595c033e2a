"""
Green/red split of the vocabulary, seeded by the previous token.

seed = mix64(prev_id XOR key), then a Fisher-Yates shuffle driven by Rng(seed);
the first round_half_up(gamma * |V|) ids of the permutation are green. Both
steps are spelled out in `tokens.py`, so seeds and partitions are bit-exact
across implementations. They do not interoperate with other green-list
implementations' hashing.
"""
from __future__ import annotations
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import FrozenSet

import numpy as np

from .tokens import MASK64, Rng, mix64

SeedKey = int


@dataclass(frozen=True)
class VocabPartition:
    green_mask: np.ndarray  # bool, length |V|
    seed: int

    @property
    def vocab_size(self) -> int:
        return int(self.green_mask.size)

    @property
    def green(self) -> FrozenSet[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.green_mask))

    @property
    def red(self) -> FrozenSet[int]:
        return frozenset(int(i) for i in np.flatnonzero(~self.green_mask))


def green_size(vocab_size: int, gamma: float) -> int:
    # round half up
    return int(math.floor(gamma * vocab_size + 0.5))


def seed_from_token(prev: int, key: SeedKey) -> int:
    if prev < 0:
        raise ValueError(f"invalid token id {prev}")
    return mix64((int(prev) ^ int(key)) & MASK64)


def permutation(vocab_size: int, seed: int) -> list[int]:
    perm = list(range(vocab_size))
    rng = Rng(seed)
    for i in range(vocab_size - 1, 0, -1):
        j = rng.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def split(vocab_size: int, gamma: float, seed: int) -> VocabPartition:
    if vocab_size < 2:
        raise ValueError("a partition needs |V| >= 2")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    perm = permutation(vocab_size, seed)
    mask = np.zeros(vocab_size, dtype=bool)
    mask[perm[:green_size(vocab_size, gamma)]] = True
    mask.setflags(write=False)
    return VocabPartition(green_mask=mask, seed=seed)


def is_green(partition: VocabPartition, token: int) -> bool:
    if not 0 <= token < partition.vocab_size:
        raise ValueError(f"token {token} outside vocabulary of size {partition.vocab_size}")
    return bool(partition.green_mask[token])


@lru_cache(maxsize=65536)
def partition_for(prev: int, key: SeedKey, vocab_size: int, gamma: float) -> VocabPartition:
    """The partition used at a step whose predecessor token is `prev`; shared by insertion and detection."""
    return split(vocab_size, gamma, seed_from_token(prev, key))
