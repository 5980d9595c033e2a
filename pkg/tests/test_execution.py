import pytest

from src.stonemark.datasets import TaskRecord, load_demo_dataset
from src.stonemark.execution import build_command, build_program, run_tests


def _task(test_command="{python} {file}", test_code="", language="python"):
    return TaskRecord(
        task_id="x/0", prompt="", reference_solution="", test_command=test_command,
        language=language, test_code=test_code,
    )


def test_build_program_appends_tests():
    assert build_program("x = 1", _task()) == "x = 1"
    assert build_program("x = 1\n", _task(test_code="assert x == 1")) == "x = 1\n\nassert x == 1\n"


def test_build_command_fills_placeholders(tmp_path):
    argv = build_command(_task(), tmp_path / "candidate.py")
    assert argv[-1] == str(tmp_path / "candidate.py")
    assert len(argv) == 2


def test_passing_program():
    res = run_tests("def add(a, b):\n    return a + b\n", _task(test_code="assert add(2, 3) == 5"))
    assert res.outcome == "pass"
    assert res.returncode == 0


def test_failing_program_keeps_stderr():
    res = run_tests("def add(a, b):\n    return a - b\n", _task(test_code="assert add(2, 3) == 5"))
    assert res.outcome == "fail"
    assert "AssertionError" in res.stderr


def test_syntax_error_is_a_failure():
    assert run_tests("def f(:\n    return 1\n", _task()).outcome == "fail"


def test_leading_space_marker_is_dropped():
    assert build_program(" x = 1", _task()) == "x = 1"
    assert build_program("  x = 1", _task()) == " x = 1"
    assert run_tests(" x = 1\n", _task(test_code="assert x == 1")).outcome == "pass"


@pytest.mark.parametrize("task", load_demo_dataset(), ids=lambda t: t.task_id)
def test_demo_reference_solutions_pass_their_tests(task):
    res = run_tests(task.prompt + task.reference_solution, task)
    assert res.outcome == "pass", res.stderr


def test_stdout_is_captured():
    res = run_tests("print('hello from candidate')", _task())
    assert res.outcome == "pass"
    assert "hello from candidate" in res.stdout


def test_timeout():
    res = run_tests("while True:\n    pass\n", _task(), timeout=2.0)
    assert res.outcome == "timeout"
    assert res.returncode is None


def test_missing_binary_is_an_error():
    res = run_tests("", _task(test_command="/nonexistent/stonemark-runner {file}"))
    assert res.outcome == "error"


@pytest.mark.parametrize("cmd", ["{python} {nope}", "", "{python} 'unterminated"])
def test_bad_command_is_an_error(cmd):
    assert run_tests("", _task(test_command=cmd)).outcome == "error"
