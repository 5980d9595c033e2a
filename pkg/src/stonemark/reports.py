from __future__ import annotations
import json, re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel

from .config import PATHS

_RUN_DIR = re.compile(r"run-(\d{3,})$")


def next_run_dir(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    taken = [int(m.group(1)) for p in root.iterdir() if (m := _RUN_DIR.match(p.name))]
    n = max(taken, default=0) + 1
    while True:
        run = root / f"run-{n:03d}"
        try:
            run.mkdir()
            return run
        except FileExistsError:
            n += 1


@dataclass
class ReportStore:
    """
    One run directory under `root`. Everything but timings.jsonl and
    execution.log is a pure function of the run's inputs.
    """
    root: str = str(PATHS.out_dir)
    run_dir: Optional[Path] = None
    written: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.run_dir is None:
            self.run_dir = next_run_dir(Path(self.root))

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def _append(self, name: str, line: str):
        with self.path(name).open("a", encoding="utf-8") as f:
            f.write(line.rstrip("\n") + "\n")
        if name not in self.written:
            self.written.append(name)

    def append_result(self, record: BaseModel, exclude: Optional[set] = None):
        self._append("results.jsonl", record.model_dump_json(exclude=exclude))

    def append_timing(self, row: Dict[str, Any]):
        self._append("timings.jsonl", json.dumps(row, sort_keys=True))

    def log_execution(self, label: str, text: str):
        self._append("execution.log", f"=== {label}\n{text}")

    def write_report(self, report: BaseModel | Dict[str, Any], name: str = "report.json"):
        if isinstance(report, BaseModel):
            body = report.model_dump_json(indent=2)
        else:
            body = json.dumps(report, indent=2, sort_keys=True)
        self.path(name).write_text(body + "\n", encoding="utf-8")
        if name not in self.written:
            self.written.append(name)

    def write_frame(self, df: pd.DataFrame, name: str = "summary.csv"):
        df.to_csv(self.path(name), index=False)
        if name not in self.written:
            self.written.append(name)

    def files(self) -> List[str]:
        return sorted(self.written)
