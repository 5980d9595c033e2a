from __future__ import annotations
import math
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .gateway import LogitProvider
from .syntax import CATEGORY_ORDER, TokenCategory, VocabularyProfile
from .tokens import ProbVector, TokenSequence, as_probs, as_sequence, next_token_distribution

STEP_TOL = 1e-9

# --- Entropy ---
def entropy(probs: Sequence[float] | ProbVector, base: str = "nats") -> float:
    p = as_probs(probs)
    nz = p[p > 0.0]
    h = float(-(nz * np.log(nz)).sum())
    if base == "bits":
        h /= math.log(2.0)
    elif base != "nats":
        raise ValueError(f"unknown entropy base '{base}' (nats or bits)")
    return max(0.0, h)


class StepEntropy(BaseModel):
    token: int
    category: TokenCategory
    entropy: float


def _contexts(corpus: Sequence[TokenSequence], prompts: Optional[Sequence[TokenSequence]]):
    if prompts is not None and len(prompts) != len(corpus):
        raise ValueError("prompts and corpus must have the same length")
    for j, seq in enumerate(corpus):
        seq = as_sequence(seq)
        prefix = as_sequence(prompts[j]).tokens if prompts is not None else ()
        for t, tok in enumerate(seq.tokens):
            yield prefix + seq.tokens[:t], tok, j


def step_entropies(
    provider: LogitProvider,
    corpus: Sequence[TokenSequence],
    profile: VocabularyProfile,
    prompts: Optional[Sequence[TokenSequence]] = None,
    temperature: float = 1.0,
    top_k: Optional[int] = None,
    base: str = "nats",
) -> List[StepEntropy]:
    """One provider call per scored position; the category is that of the realized token."""
    out = []
    for ctx, tok, _ in _contexts(corpus, prompts):
        p = next_token_distribution(provider.logits(ctx), temperature, top_k)
        out.append(StepEntropy(token=tok, category=profile.category_of(tok), entropy=entropy(p, base)))
    return out


def summarize_category_entropy(steps: Iterable[StepEntropy]) -> Dict[TokenCategory, Optional[float]]:
    sums: Dict[TokenCategory, float] = {}
    counts: Dict[TokenCategory, int] = {}
    for s in steps:
        sums[s.category] = sums.get(s.category, 0.0) + s.entropy
        counts[s.category] = counts.get(s.category, 0) + 1
    # a category never realized is absent (None), not zero
    return {c: (sums[c] / counts[c] if counts.get(c) else None) for c in CATEGORY_ORDER}


def category_entropy_means(
    provider: LogitProvider,
    corpus: Sequence[TokenSequence],
    profile: VocabularyProfile,
    prompts: Optional[Sequence[TokenSequence]] = None,
    temperature: float = 1.0,
    top_k: Optional[int] = None,
) -> Dict[TokenCategory, Optional[float]]:
    return summarize_category_entropy(step_entropies(provider, corpus, profile, prompts, temperature, top_k))


class SelectionStats(BaseModel):
    threshold: float
    steps: int
    selected: int
    selected_pct: float
    syntax_selected: int
    syntax_pct: Optional[float]  # among selected; None when nothing is selected
    by_category: Dict[str, int]  # selected steps per category
    syntax_breakdown_pct: Dict[str, float]  # share of each syntax category among selected syntax steps


def selection_stats(steps: Sequence[StepEntropy], h: float) -> SelectionStats:
    chosen = [s for s in steps if s.entropy > h]
    by_cat = {c.value: 0 for c in CATEGORY_ORDER}
    for s in chosen:
        by_cat[s.category.value] += 1
    n_syntax = sum(v for k, v in by_cat.items() if k != TokenCategory.ETC.value)
    breakdown = {
        c.value: (100.0 * by_cat[c.value] / n_syntax if n_syntax else 0.0)
        for c in CATEGORY_ORDER if c is not TokenCategory.ETC
    }
    return SelectionStats(
        threshold=h,
        steps=len(steps),
        selected=len(chosen),
        selected_pct=100.0 * len(chosen) / len(steps) if steps else 0.0,
        syntax_selected=n_syntax,
        syntax_pct=(100.0 * n_syntax / len(chosen)) if chosen else None,
        by_category=by_cat,
        syntax_breakdown_pct=breakdown,
    )


def sweet_selection_stats(
    provider: LogitProvider,
    corpus: Sequence[TokenSequence],
    profile: VocabularyProfile,
    h: float,
    prompts: Optional[Sequence[TokenSequence]] = None,
    temperature: float = 1.0,
    top_k: Optional[int] = None,
) -> SelectionStats:
    return selection_stats(step_entropies(provider, corpus, profile, prompts, temperature, top_k), h)


# --- Correctness ---
def pass_at_k(n: int, c: int, k: int) -> float:
    """1 - C(n-c, k) / C(n, k) as an exact rational product, rounded once at the end."""
    if not 0 <= c <= n:
        raise ValueError(f"pass@k needs 0 <= c <= n, got n={n}, c={c}")
    if not 1 <= k <= n:
        raise ValueError(f"pass@k needs 1 <= k <= n, got n={n}, k={k}")
    if n - c < k:
        return 1.0
    miss = Fraction(1)
    for i in range(k):
        miss *= Fraction(n - c - i, n - i)
    return float(1 - miss)


def pass_at_k_table(correct_counts: Sequence[int], n: int, ks: Sequence[int]) -> Dict[int, float]:
    """Mean pass@k over tasks for each k."""
    if not correct_counts:
        return {k: 0.0 for k in ks}
    return {k: float(np.mean([pass_at_k(n, c, k) for c in correct_counts])) for k in ks}


# --- Detectability ---
class ScorePools(BaseModel):
    wm_scores: List[float] = []
    human_scores: List[float] = []
    wm_excluded: int = 0
    human_excluded: int = 0


def _pool_arrays(pools: ScorePools) -> Tuple[np.ndarray, np.ndarray]:
    w = np.asarray(pools.wm_scores, dtype=np.float64)
    h = np.asarray(pools.human_scores, dtype=np.float64)
    if w.size == 0 or h.size == 0:
        raise ValueError("both score pools must be non-empty")
    return w, h


def roc_points(pools: ScorePools) -> List[Tuple[float, float]]:
    """(FPR, TPR) with a strict `score > tau` test, tau over -inf and every distinct score; ascending."""
    w, h = _pool_arrays(pools)
    taus = np.concatenate(([-np.inf], np.unique(np.concatenate((w, h)))))
    pts = [(float((h > t).mean()), float((w > t).mean())) for t in taus]
    return sorted(set(pts))


def roc_area(points: Sequence[Tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def auroc(pools: ScorePools) -> float:
    """Mann-Whitney statistic: P(wm > human) + 0.5 * P(wm == human)."""
    w, h = _pool_arrays(pools)
    hs = np.sort(h)
    below = np.searchsorted(hs, w, side="left")
    ties = np.searchsorted(hs, w, side="right") - below
    u = float(below.sum()) + 0.5 * float(ties.sum())
    return u / (w.size * h.size)


# --- Imperceptibility ---
class CorpusPpl(BaseModel):
    log_prob_sums: List[float]
    lengths: List[int]
    mean_log_probs: List[float]
    per_sample: List[float]
    mean: float
    infinite: List[int] = []  # sample indices with a zero-probability realized token


def perplexity_from_log_probs(samples: Sequence[Sequence[float]]) -> CorpusPpl:
    sums, lens, means, ppls, flagged = [], [], [], [], []
    for j, lps in enumerate(samples):
        if len(lps) == 0:
            raise ValueError(f"sample {j} has no scored tokens")
        s = float(np.sum(lps))
        a = s / len(lps)
        try:
            ppl = math.exp(-a)
        except OverflowError:
            ppl = math.inf
        if math.isinf(ppl):
            flagged.append(j)
        sums.append(s); lens.append(len(lps)); means.append(a); ppls.append(ppl)
    if not ppls:
        raise ValueError("empty corpus")
    return CorpusPpl(
        log_prob_sums=sums, lengths=lens, mean_log_probs=means, per_sample=ppls,
        mean=float(np.mean(ppls)), infinite=flagged,
    )


def corpus_perplexity(
    provider: LogitProvider,
    corpus: Sequence[TokenSequence],
    prompts: Optional[Sequence[TokenSequence]] = None,
) -> CorpusPpl:
    """Per-sample exp(-mean log P) under the untruncated model distribution, then the arithmetic mean."""
    per: List[List[float]] = [[] for _ in corpus]
    for ctx, tok, j in _contexts(corpus, prompts):
        p = next_token_distribution(provider.logits(ctx))
        per[j].append(math.log(p[tok]) if p[tok] > 0.0 else -math.inf)
    return perplexity_from_log_probs(per)


def imperceptibility(ppl_wm: float, ppl_ref: float) -> float:
    if ppl_ref <= 0.0:
        raise ValueError("reference perplexity must be positive")
    return 1.0 - (ppl_wm - ppl_ref) / ppl_ref


# --- STEM composite ---
class StemWeights(BaseModel):
    alpha: float = Field(ge=0.0, le=1.0)
    beta: float = Field(ge=0.0, le=1.0)
    zeta: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _sums_to_one(self) -> "StemWeights":
        if abs(self.alpha + self.beta + self.zeta - 1.0) > STEP_TOL:
            raise ValueError(f"weights must sum to 1, got {self.alpha + self.beta + self.zeta}")
        return self

    def label(self) -> str:
        return f"({self.alpha:.3g},{self.beta:.3g},{self.zeta:.3g})"


class StemScore(BaseModel):
    correctness: float
    detectability: float
    imperceptibility: float
    composite: float
    weights: StemWeights


EQUAL_WEIGHTS = StemWeights(alpha=1 / 3, beta=1 / 3, zeta=1 / 3)
TABLE_WEIGHTS: Tuple[StemWeights, ...] = (
    EQUAL_WEIGHTS,
    StemWeights(alpha=0.5, beta=0.25, zeta=0.25),
    StemWeights(alpha=0.25, beta=0.5, zeta=0.25),
    StemWeights(alpha=0.25, beta=0.25, zeta=0.5),
)


def stem(components: Tuple[float, float, float], w: StemWeights = EQUAL_WEIGHTS) -> StemScore:
    c, d, i = (float(x) for x in components)
    return StemScore(
        correctness=c, detectability=d, imperceptibility=i,
        composite=w.alpha * c + w.beta * d + w.zeta * i,
        weights=w,
    )


def weight_grid(step: float = 0.1) -> List[StemWeights]:
    """Every (alpha, beta, zeta) on the step lattice summing to 1; alpha-major, then beta."""
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > STEP_TOL:
        raise ValueError(f"step must divide 1 evenly, got {step}")
    return [
        StemWeights(alpha=i / n, beta=j / n, zeta=(n - i - j) / n)
        for i in range(n + 1) for j in range(n + 1 - i)
    ]


class Leaderboard(BaseModel):
    total: int
    wins: Dict[str, int]
    ties: int

    def share(self, method: str) -> float:
        return 100.0 * self.wins.get(method, 0) / self.total if self.total else 0.0


def grid_leaderboard(
    components_by_method: Mapping[str, Tuple[float, float, float]],
    grid: Optional[Sequence[StemWeights]] = None,
) -> Leaderboard:
    """Unique best method per weight setting; settings with a shared best count as ties."""
    grid = list(grid) if grid is not None else weight_grid()
    wins = {m: 0 for m in components_by_method}
    ties = 0
    for w in grid:
        scores = {m: stem(c, w).composite for m, c in components_by_method.items()}
        best = max(scores.values())
        top = [m for m, s in scores.items() if s >= best - 1e-12]
        if len(top) == 1:
            wins[top[0]] += 1
        else:
            ties += 1
    return Leaderboard(total=len(grid), wins=wins, ties=ties)
