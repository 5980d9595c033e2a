from __future__ import annotations
import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator

from .config import PATHS
from .syntax import available_languages
from .tokenizer import Tokenizer


class DatasetError(ValueError):
    pass


class TaskRecord(BaseModel):
    """
    One benchmark problem, one JSON object per line:
      {"task_id", "prompt", "reference_solution", "test_command", "language"[, "test_code"]}
    `test_command` may use {python} (current interpreter) and {file} (the candidate program).
    """
    task_id: str
    prompt: str
    reference_solution: str
    test_command: str
    language: str
    test_code: str = ""

    @field_validator("task_id")
    @classmethod
    def _non_empty_id(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("task_id must be non-empty")
        return v


class DatasetStats(BaseModel):
    problems: int
    max: int
    min: int
    mean: float
    std: float


def load_dataset(path: str | Path, profile_dir: Optional[Path] = None) -> List[TaskRecord]:
    fp = Path(path)
    if not fp.exists():
        raise DatasetError(f"Dataset not found: {fp}")
    languages = set(available_languages(profile_dir))
    records: List[TaskRecord] = []
    seen = {}
    for lineno, line in enumerate(fp.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{fp}:{lineno}: not valid JSON ({e.msg})")
        if not isinstance(raw, dict):
            raise DatasetError(f"{fp}:{lineno}: expected a JSON object")
        try:
            rec = TaskRecord(**raw)
        except ValidationError as e:
            fields = ", ".join(".".join(str(p) for p in err["loc"]) for err in e.errors())
            kinds = {err["type"] for err in e.errors()}
            what = "missing field" if kinds == {"missing"} else "invalid field"
            raise DatasetError(f"{fp}:{lineno}: {what} '{fields}'")
        if rec.language not in languages:
            raise DatasetError(
                f"{fp}:{lineno}: task '{rec.task_id}' uses unknown language '{rec.language}' "
                f"(profiles: {', '.join(sorted(languages))})"
            )
        if rec.task_id in seen:
            raise DatasetError(f"{fp}:{lineno}: duplicate task_id '{rec.task_id}' (first on line {seen[rec.task_id]})")
        seen[rec.task_id] = lineno
        records.append(rec)
    if not records:
        raise DatasetError(f"{fp}: no records")
    return records


def load_demo_dataset() -> List[TaskRecord]:
    return load_dataset(PATHS.demo_tasks)


def length_stats(lengths: Sequence[int]) -> DatasetStats:
    if not lengths:
        raise ValueError("no solutions to summarize")
    arr = np.asarray(lengths, dtype=np.float64)
    return DatasetStats(
        problems=int(arr.size),
        max=int(arr.max()),
        min=int(arr.min()),
        mean=float(arr.mean()),
        # sample std; a single solution has none, reported as 0
        std=float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
    )


def dataset_stats(dataset: Sequence[TaskRecord], tokenizer: Tokenizer) -> DatasetStats:
    """Token-length statistics of the reference solutions."""
    return length_stats([len(tokenizer.encode(t.reference_solution)) for t in dataset])
