from __future__ import annotations
import os, json
from pathlib import Path
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field

load_dotenv()

@dataclass
class Paths:
    root: Path = Path(__file__).resolve().parents[2]
    data: Path = root / "data"
    profiles: Path = Path(os.getenv("STONEMARK_PROFILE_DIR", str(root / "data" / "profiles")))
    demo_tasks: Path = root / "data" / "demo_tasks.jsonl"
    out_dir: Path = Path(os.getenv("STONEMARK_OUT_DIR", str(root / "runs")))

@dataclass
class Settings:
    gamma: float = 0.5
    delta: float = 1.0
    top_k: int = 50
    temperature: float = 1.0
    z_threshold: float = 4.0
    max_tokens: int = 256
    samples_per_task: int = 5
    k_values: Tuple[int, ...] = (1, 5)
    entropy_threshold: float = 0.9
    seed: int = 0
    seed_key: int = int(os.getenv("STONEMARK_SEED_KEY", "15485863"))
    workers: int = int(os.getenv("STONEMARK_WORKERS", "4"))
    test_timeout: float = 10.0

@dataclass
class RemoteSettings:
    endpoint: str = os.getenv("STONEMARK_ENDPOINT", "")
    timeout: float = float(os.getenv("STONEMARK_TIMEOUT", "30"))
    retries: int = int(os.getenv("STONEMARK_RETRIES", "2"))

PATHS = Paths()
SETTINGS = Settings()
REMOTE = RemoteSettings()


class RunConfig(BaseModel):
    """Merged view of CLI flags, config file, environment and defaults."""
    model_config = ConfigDict(extra="forbid")

    dataset: Optional[str] = None
    provider: str = "toy"
    tokenizer: str = "toy"
    language: str = "python"
    seed: int = SETTINGS.seed
    workers: int = Field(SETTINGS.workers, ge=1)
    out_dir: str = str(PATHS.out_dir)
    gamma: float = Field(SETTINGS.gamma, gt=0.0, lt=1.0)
    delta: float = Field(SETTINGS.delta, ge=0.0)
    gate: str = "non_syntax"
    entropy_threshold: float = SETTINGS.entropy_threshold
    top_k: int = Field(SETTINGS.top_k, ge=1)
    temperature: float = Field(SETTINGS.temperature, gt=0.0)
    seed_key: int = Field(SETTINGS.seed_key, ge=0)
    max_tokens: int = Field(SETTINGS.max_tokens, ge=0)
    z_threshold: float = SETTINGS.z_threshold
    samples: int = Field(SETTINGS.samples_per_task, ge=1)
    k_values: List[int] = list(SETTINGS.k_values)
    timeout: float = Field(SETTINGS.test_timeout, gt=0.0)
    endpoint_timeout: float = Field(REMOTE.timeout, gt=0.0)
    retries: int = Field(REMOTE.retries, ge=0)
    gammas: List[float] = []
    deltas: List[float] = []


def load_config_file(path: str | Path | None) -> Dict[str, Any]:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"Config file not found: {p}")
    data = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"Config file {p} must hold a JSON object")
    # flags are spelled with dashes on the command line
    return {k.replace("-", "_"): v for k, v in data.items()}


def merge_config(file_values: Dict[str, Any], cli_values: Dict[str, Any]) -> RunConfig:
    """CLI flags win over the config file; unset flags (None) fall through."""
    merged = dict(file_values)
    merged.update({k: v for k, v in cli_values.items() if v is not None})
    return RunConfig(**merged)
