"""
Generate -> execute -> detect -> score, over a dataset.

Phases run in this order so their timers never overlap:
  1. per task, in a worker pool: n watermarked and n unwatermarked generations,
     then test execution of both;
  2. detection of every watermarked output and every reference solution
     (provider call count is recorded around this phase and should stay 0);
  3. perplexity of both corpora under the provider.
"""
from __future__ import annotations
import math, time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from tqdm import tqdm

from .config import SETTINGS
from .datasets import TaskRecord
from .detector import DetectionReport, detect_from_text, detect_stone
from .engine import Gate, GenerationRecord, WatermarkParams, generate
from .execution import ExecutionResult, run_tests
from .gateway import LogitProvider
from .metrics import (
    TABLE_WEIGHTS, CorpusPpl, ScorePools, StemScore, StemWeights, auroc, corpus_perplexity, imperceptibility,
    pass_at_k, pass_at_k_table, stem, weight_grid,
)
from .reports import ReportStore
from .syntax import VocabularyProfile
from .tokenizer import Tokenizer, TokenizerMismatchError
from .tokens import Rng, TokenSequence

WATERMARKED, UNWATERMARKED = 1, 0


class SampleResult(BaseModel):
    index: int
    tokens: Tuple[int, ...]
    text: str
    complete: bool
    error: Optional[str] = None
    gated_steps: int
    gated_then_syntax: int
    outcome: str
    detection: Optional[DetectionReport] = None


class Timings(BaseModel):
    insertion_seconds: float = 0.0
    detection_seconds: float = 0.0
    execution_seconds: float = 0.0


class RunResult(BaseModel):
    task_id: str
    prompt_tokens: Tuple[int, ...] = ()
    samples: List[SampleResult] = []      # watermarked
    references: List[SampleResult] = []   # same prompt, gate off
    human_detection: Optional[DetectionReport] = None
    timings: Timings = Timings()
    error: Optional[str] = None

    @property
    def outcomes(self) -> List[str]:
        return [s.outcome for s in self.samples]

    @property
    def correct(self) -> int:
        return sum(1 for s in self.samples if s.outcome == "pass")

    @property
    def reference_correct(self) -> int:
        return sum(1 for s in self.references if s.outcome == "pass")


class PipelineReport(BaseModel):
    language: str
    params: WatermarkParams
    samples_per_task: int
    k_values: List[int]
    seed: int
    tasks: int
    failed_tasks: Dict[str, str] = {}
    pass_at_k: Dict[int, float] = {}
    reference_pass_at_k: Dict[int, float] = {}
    correctness: float = 0.0  # pass@1 of watermarked samples
    detectability: Optional[float] = None  # AUROC, watermarked vs reference solutions
    pools: ScorePools = ScorePools()
    mean_watermarked_z: Optional[float] = None
    mean_human_z: Optional[float] = None
    ppl_watermarked: Optional[float] = None
    ppl_reference: Optional[float] = None
    imperceptibility: Optional[float] = None
    imperceptibility_skipped: Optional[str] = None  # why imperceptibility is None
    ppl_watermarked_infinite: int = 0  # samples with a zero-probability realized token
    ppl_reference_infinite: int = 0
    stem: List[StemScore] = []
    gated_steps: int = 0
    gated_then_syntax: int = 0
    green_fraction: Optional[float] = None
    detection_provider_calls: int = 0

    def components(self) -> Optional[Tuple[float, float, float]]:
        if self.detectability is None or self.imperceptibility is None:
            return None
        return (self.correctness, self.detectability, self.imperceptibility)


class PipelineRun(BaseModel):
    results: List[RunResult]
    report: PipelineReport


# -------------------------
# Phase 1: generation + execution
# -------------------------

def _sample_result(
    index: int, rec: GenerationRecord, task: TaskRecord, tokenizer: Tokenizer, timeout: float,
) -> Tuple[SampleResult, ExecutionResult]:
    text = tokenizer.decode(rec.output.tokens)
    if rec.complete:
        ex = run_tests(task.prompt + text, task, timeout)
    else:
        ex = ExecutionResult(outcome="error", stderr=rec.error or "generation aborted")
    return SampleResult(
        index=index, tokens=rec.output.tokens, text=text, complete=rec.complete, error=rec.error,
        gated_steps=rec.gated_steps, gated_then_syntax=rec.gated_then_syntax, outcome=ex.outcome,
    ), ex


def _run_task(
    i: int,
    task: TaskRecord,
    provider: LogitProvider,
    tokenizer: Tokenizer,
    vocab: VocabularyProfile,
    params: WatermarkParams,
    n: int,
    root: Rng,
    timeout: float,
) -> Tuple[RunResult, List[Tuple[str, ExecutionResult]]]:
    if task.language != vocab.language:
        raise ValueError(f"task language '{task.language}' does not match profile '{vocab.language}'")
    prompt = TokenSequence(tokens=tuple(tokenizer.encode(task.prompt)), source_text=task.prompt)
    if not prompt.tokens:
        raise ValueError("prompt encodes to no tokens")

    t0 = time.perf_counter()
    wm = [generate(provider, prompt, params, vocab, root.fork(i, s, WATERMARKED)) for s in range(n)]
    insertion = time.perf_counter() - t0

    plain = params.model_copy(update={"gate": Gate.OFF})
    ref = [generate(provider, prompt, plain, vocab, root.fork(i, s, UNWATERMARKED)) for s in range(n)]

    t0 = time.perf_counter()
    logs: List[Tuple[str, ExecutionResult]] = []
    samples, references = [], []
    for s, rec in enumerate(wm):
        res, ex = _sample_result(s, rec, task, tokenizer, timeout)
        samples.append(res)
        logs.append((f"{task.task_id} watermarked#{s} {ex.outcome}", ex))
    for s, rec in enumerate(ref):
        res, ex = _sample_result(s, rec, task, tokenizer, timeout)
        references.append(res)
        logs.append((f"{task.task_id} unwatermarked#{s} {ex.outcome}", ex))
    execution = time.perf_counter() - t0

    return RunResult(
        task_id=task.task_id, prompt_tokens=prompt.tokens, samples=samples, references=references,
        timings=Timings(insertion_seconds=insertion, execution_seconds=execution),
    ), logs


# -------------------------
# Phase 2 + 3 helpers
# -------------------------

def _detect_all(
    results: List[RunResult],
    dataset: Sequence[TaskRecord],
    tokenizer: Tokenizer,
    vocab: VocabularyProfile,
    params: WatermarkParams,
    z_threshold: float,
):
    by_id = {t.task_id: t for t in dataset}
    for r in results:
        if r.error:
            continue
        t0 = time.perf_counter()
        for s in r.samples:
            rep = detect_stone(s.tokens, vocab, params.gamma, params.key, z_threshold)
            s.detection = rep.model_copy(update={"trace": []})
        try:
            human = detect_from_text(by_id[r.task_id].reference_solution, tokenizer, vocab, params.gamma, params.key, z_threshold)
            r.human_detection = human.model_copy(update={"trace": []})
        except TokenizerMismatchError as e:
            tqdm.write(f"Reference solution of {r.task_id} not scored: {e}")
        r.timings.detection_seconds = time.perf_counter() - t0


def _score_pools(results: List[RunResult]) -> ScorePools:
    pools = ScorePools()
    for r in results:
        if r.error:
            continue
        for s in r.samples:
            if s.detection is None or s.detection.undetectable:
                pools.wm_excluded += 1
            else:
                pools.wm_scores.append(s.detection.z)
        if r.human_detection is None or r.human_detection.undetectable:
            pools.human_excluded += 1
        else:
            pools.human_scores.append(r.human_detection.z)
    return pools


def _perplexity(provider: LogitProvider, results: List[RunResult], attr: str) -> Optional[CorpusPpl]:
    corpus, prompts = [], []
    for r in results:
        if r.error:
            continue
        for s in getattr(r, attr):
            if s.tokens:
                corpus.append(TokenSequence(tokens=s.tokens))
                prompts.append(TokenSequence(tokens=r.prompt_tokens))
    if not corpus:
        return None
    return corpus_perplexity(provider, corpus, prompts)


def _imperceptibility(wm: Optional[CorpusPpl], ref: Optional[CorpusPpl]) -> Tuple[Optional[float], Optional[str]]:
    if wm is None or ref is None:
        return None, "no generated tokens to score"
    if wm.infinite or ref.infinite:
        return None, (
            f"infinite perplexity: {len(wm.infinite)} watermarked and {len(ref.infinite)} reference "
            "samples contain a zero-probability token"
        )
    if not (math.isfinite(wm.mean) and math.isfinite(ref.mean)) or ref.mean <= 0.0:
        return None, f"unusable perplexity pair ({wm.mean}, {ref.mean})"
    return imperceptibility(wm.mean, ref.mean), None


def _summary_frame(results: List[RunResult]) -> pd.DataFrame:
    rows = []
    for r in results:
        zs = [s.detection.z for s in r.samples if s.detection is not None and s.detection.z is not None]
        rows.append({
            "task_id": r.task_id,
            "samples": len(r.samples),
            "correct": r.correct,
            "reference_correct": r.reference_correct,
            "mean_z": float(np.mean(zs)) if zs else None,
            "human_z": r.human_detection.z if r.human_detection is not None else None,
            "error": r.error or "",
        })
    return pd.DataFrame(rows)


# -------------------------
# Entry points
# -------------------------

def run_pipeline(
    dataset: Sequence[TaskRecord],
    provider: LogitProvider,
    tokenizer: Tokenizer,
    vocab: VocabularyProfile,
    params: WatermarkParams = WatermarkParams(),
    n: int = SETTINGS.samples_per_task,
    ks: Sequence[int] = SETTINGS.k_values,
    seed: int = SETTINGS.seed,
    workers: int = SETTINGS.workers,
    timeout: float = SETTINGS.test_timeout,
    z_threshold: float = SETTINGS.z_threshold,
    store: Optional[ReportStore] = None,
    progress: bool = True,
) -> PipelineRun:
    if not 1 <= min(ks) <= max(ks) <= n:
        raise ValueError(f"k values {list(ks)} must lie in [1, n={n}]")
    if not tokenizer.vocab_size == vocab.vocab_size == provider.vocab_size:
        raise TokenizerMismatchError(
            f"vocabulary sizes disagree: tokenizer {tokenizer.vocab_size}, "
            f"profile {vocab.vocab_size}, provider {provider.vocab_size}"
        )
    root = Rng(seed)
    results: List[Optional[RunResult]] = [None] * len(dataset)
    exec_logs: Dict[int, List[Tuple[str, ExecutionResult]]] = {}

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {
            pool.submit(_run_task, i, task, provider, tokenizer, vocab, params, n, root, timeout): i
            for i, task in enumerate(dataset)
        }
        for fut in tqdm(as_completed(futures), total=len(futures), desc="tasks", unit="task", disable=not progress):
            i = futures[fut]
            try:
                results[i], exec_logs[i] = fut.result()
            except Exception as e:
                tqdm.write(f"Task {dataset[i].task_id} failed: {e}")
                results[i] = RunResult(task_id=dataset[i].task_id, error=f"{type(e).__name__}: {e}")

    done: List[RunResult] = [r for r in results if r is not None]
    calls_before = provider.call_count
    _detect_all(done, dataset, tokenizer, vocab, params, z_threshold)
    detection_calls = provider.call_count - calls_before

    ok = [r for r in done if not r.error]
    report = PipelineReport(
        language=vocab.language, params=params, samples_per_task=n, k_values=list(ks), seed=seed,
        tasks=len(dataset), failed_tasks={r.task_id: r.error for r in done if r.error},
        detection_provider_calls=detection_calls,
    )
    if ok:
        report.pass_at_k = pass_at_k_table([r.correct for r in ok], n, ks)
        report.reference_pass_at_k = pass_at_k_table([r.reference_correct for r in ok], n, ks)
        report.correctness = float(np.mean([pass_at_k(n, r.correct, 1) for r in ok]))
        report.gated_steps = sum(s.gated_steps for r in ok for s in r.samples)
        report.gated_then_syntax = sum(s.gated_then_syntax for r in ok for s in r.samples)
        counted = sum(s.detection.counted for r in ok for s in r.samples if s.detection is not None)
        green = sum(s.detection.green for r in ok for s in r.samples if s.detection is not None)
        report.green_fraction = green / counted if counted else None

    pools = _score_pools(done)
    report.pools = pools
    if pools.wm_scores:
        report.mean_watermarked_z = float(np.mean(pools.wm_scores))
    if pools.human_scores:
        report.mean_human_z = float(np.mean(pools.human_scores))
    if pools.wm_scores and pools.human_scores:
        report.detectability = auroc(pools)

    wm_ppl = _perplexity(provider, ok, "samples")
    ref_ppl = _perplexity(provider, ok, "references")
    if wm_ppl is not None:
        report.ppl_watermarked = wm_ppl.mean
        report.ppl_watermarked_infinite = len(wm_ppl.infinite)
    if ref_ppl is not None:
        report.ppl_reference = ref_ppl.mean
        report.ppl_reference_infinite = len(ref_ppl.infinite)
    report.imperceptibility, report.imperceptibility_skipped = _imperceptibility(wm_ppl, ref_ppl)
    if report.imperceptibility_skipped and ok:
        tqdm.write(f"Imperceptibility not computed: {report.imperceptibility_skipped}")

    comps = report.components()
    if comps is not None:
        report.stem = [stem(comps, w) for w in TABLE_WEIGHTS]

    if store is not None:
        for i, r in enumerate(done):
            store.append_result(r, exclude={"timings"})
            store.append_timing({"task_id": r.task_id, **r.timings.model_dump()})
            for label, ex in exec_logs.get(i, []):
                store.log_execution(label, f"{ex.stdout}\n{ex.stderr}".strip())
        store.write_report(report)
        store.write_frame(_summary_frame(done))
    return PipelineRun(results=done, report=report)


class SweepSpec(BaseModel):
    gammas: List[float]
    deltas: List[float]
    gate: Gate = Gate.NON_SYNTAX
    weights: List[StemWeights] = Field(default_factory=lambda: list(TABLE_WEIGHTS))
    samples: int = Field(SETTINGS.samples_per_task, ge=1)
    k_values: List[int] = Field(default_factory=lambda: list(SETTINGS.k_values))

    @model_validator(mode="after")
    def _check(self) -> "SweepSpec":
        if not self.gammas or not self.deltas:
            raise ValueError("sweep needs at least one gamma and one delta")
        if any(not 0.0 < g < 1.0 for g in self.gammas):
            raise ValueError("every gamma must lie in (0, 1)")
        if any(d < 0.0 for d in self.deltas):
            raise ValueError("every delta must be >= 0")
        if not self.k_values or min(self.k_values) < 1 or max(self.k_values) > self.samples:
            raise ValueError(f"k values {self.k_values} must lie in [1, n={self.samples}]")
        return self


@dataclass
class SweepResult:
    table: pd.DataFrame  # one row per (gamma, delta)
    grid: pd.DataFrame   # one row per (gamma, delta, weight setting) over the full weight grid


def sweep(
    dataset: Sequence[TaskRecord],
    provider: LogitProvider,
    tokenizer: Tokenizer,
    vocab: VocabularyProfile,
    spec: SweepSpec,
    base: WatermarkParams = WatermarkParams(),
    seed: int = SETTINGS.seed,
    workers: int = SETTINGS.workers,
    timeout: float = SETTINGS.test_timeout,
    z_threshold: float = SETTINGS.z_threshold,
    store: Optional[ReportStore] = None,
) -> SweepResult:
    grid = weight_grid()
    rows, grid_rows = [], []
    points = [(g, d) for g in spec.gammas for d in spec.deltas]
    for gamma, delta in tqdm(points, desc="sweep", unit="run"):
        params = base.model_copy(update={"gamma": gamma, "delta": delta, "gate": spec.gate})
        run = run_pipeline(
            dataset, provider, tokenizer, vocab, params, spec.samples, spec.k_values,
            seed=seed, workers=workers, timeout=timeout, z_threshold=z_threshold, progress=False,
        )
        rep = run.report
        row = {"gamma": gamma, "delta": delta}
        row.update({f"pass@{k}": rep.pass_at_k.get(k) for k in spec.k_values})
        row.update({
            "auroc": rep.detectability,
            "mean_z": rep.mean_watermarked_z,
            "ppl_watermarked": rep.ppl_watermarked,
            "ppl_reference": rep.ppl_reference,
            "imperceptibility": rep.imperceptibility,
            "failed_tasks": len(rep.failed_tasks),
        })
        comps = rep.components()
        for w in spec.weights:
            row[f"stem{w.label()}"] = stem(comps, w).composite if comps is not None else None
        rows.append(row)
        for w in grid:
            grid_rows.append({
                "gamma": gamma, "delta": delta, "alpha": w.alpha, "beta": w.beta, "zeta": w.zeta,
                "composite": stem(comps, w).composite if comps is not None else None,
            })
    result = SweepResult(table=pd.DataFrame(rows), grid=pd.DataFrame(grid_rows))
    if store is not None:
        store.write_frame(result.table, "sweep.csv")
        store.write_frame(result.grid, "sweep_grid.csv")
    return result
