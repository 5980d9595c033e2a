"""
Runs a candidate program against a task's tests in a throwaway directory.

No container or jail: the test command runs as the current user with a
timeout. Only run benchmark tests you trust.
"""
from __future__ import annotations
import os, shlex, subprocess, sys, tempfile
from pathlib import Path
from typing import Optional

from pydantic import BaseModel

from .config import SETTINGS
from .datasets import TaskRecord

OUTCOMES = ("pass", "fail", "timeout", "error")
_SUFFIX = {"python": ".py", "cpp": ".cpp", "java": ".java"}
_TAIL = 2000


class ExecutionResult(BaseModel):
    outcome: str  # pass | fail | timeout | error
    returncode: Optional[int] = None
    stdout: str = ""
    stderr: str = ""


def _tail(s: str | bytes | None) -> str:
    if s is None:
        return ""
    if isinstance(s, bytes):
        s = s.decode("utf-8", errors="replace")
    return s[-_TAIL:]


def build_program(code: str, task: TaskRecord) -> str:
    # space-marker tokenizers decode with one leading space before the first word
    if code.startswith(" "):
        code = code[1:]
    if not task.test_code:
        return code
    return code.rstrip("\n") + "\n\n" + task.test_code.rstrip("\n") + "\n"


def build_command(task: TaskRecord, program: Path) -> list[str]:
    cmd = task.test_command.format(python=shlex.quote(sys.executable), file=shlex.quote(str(program)))
    return shlex.split(cmd)


def run_tests(code: str, task: TaskRecord, timeout: float = SETTINGS.test_timeout) -> ExecutionResult:
    """pass iff the test command exits 0 within `timeout`; a spawn failure is an error, never a pass."""
    with tempfile.TemporaryDirectory(prefix=f"stonemark-{task.language}-") as work:
        program = Path(work) / f"candidate{_SUFFIX.get(task.language, '.txt')}"
        program.write_text(build_program(code, task), encoding="utf-8")
        try:
            argv = build_command(task, program)
        except (KeyError, IndexError, ValueError) as e:
            return ExecutionResult(outcome="error", stderr=f"bad test_command: {e}")
        if not argv:
            return ExecutionResult(outcome="error", stderr="empty test_command")
        env = os.environ.copy()
        env.pop("STONEMARK_ENDPOINT", None)
        try:
            p = subprocess.run(
                argv, cwd=work, capture_output=True, text=True, timeout=timeout, env=env,
                stdin=subprocess.DEVNULL,
            )
        except subprocess.TimeoutExpired as e:
            return ExecutionResult(outcome="timeout", stdout=_tail(e.stdout), stderr=_tail(e.stderr))
        except OSError as e:
            return ExecutionResult(outcome="error", stderr=f"could not start {argv[0]}: {e}")
    return ExecutionResult(
        outcome="pass" if p.returncode == 0 else "fail",
        returncode=p.returncode,
        stdout=_tail(p.stdout),
        stderr=_tail(p.stderr),
    )
