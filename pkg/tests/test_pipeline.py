import json
import math

import pytest

from src.stonemark import pipeline
from src.stonemark.datasets import TaskRecord, load_demo_dataset
from src.stonemark.engine import Gate, WatermarkParams, generate
from src.stonemark.execution import ExecutionResult
from src.stonemark.gateway import ToyProvider, uniform_toy_spec
from src.stonemark.metrics import perplexity_from_log_probs, weight_grid
from src.stonemark.pipeline import SweepSpec, run_pipeline, sweep
from src.stonemark.reports import ReportStore
from src.stonemark.tokenizer import TokenizerMismatchError
from src.stonemark.tokens import Rng, TokenSequence

PROMPT = " def f ( x ) :"


@pytest.fixture
def no_execution(monkeypatch):
    monkeypatch.setattr(pipeline, "run_tests", lambda code, task, timeout: ExecutionResult(outcome="fail", returncode=1))


@pytest.fixture
def synthetic_tasks(toy_provider, toy_tokenizer, vocab):
    """Reference solutions sampled from the unwatermarked model, so the human pool is unmarked text."""
    plain = WatermarkParams(gate=Gate.OFF, max_tokens=60)
    prompt = TokenSequence(tokens=tuple(toy_tokenizer.encode(PROMPT)))
    tasks = []
    for i in range(8):
        rec = generate(toy_provider, prompt, plain, vocab, Rng(1000 + i))
        tasks.append(TaskRecord(
            task_id=f"syn/{i}", prompt=PROMPT, reference_solution=toy_tokenizer.decode(rec.output.tokens),
            test_command="{python} {file}", language="python",
        ))
    return tasks


def _params(**over):
    base = dict(gamma=0.5, delta=2.0, key=12345, gate=Gate.NON_SYNTAX, max_tokens=24)
    base.update(over)
    return WatermarkParams(**base)


def test_rerun_is_byte_identical(tmp_path, toy_provider, toy_tokenizer, vocab):
    tasks = load_demo_dataset()
    stores = []
    for _ in range(2):
        store = ReportStore(root=str(tmp_path))
        run_pipeline(tasks, toy_provider, toy_tokenizer, vocab, _params(), n=2, ks=[1, 2], seed=3,
                     workers=2, store=store, progress=False)
        stores.append(store)
    a, b = stores
    assert a.run_dir != b.run_dir
    for name in ("report.json", "results.jsonl", "summary.csv"):
        assert a.path(name).read_bytes() == b.path(name).read_bytes(), name


def test_timings_are_kept_out_of_results(tmp_path, toy_provider, toy_tokenizer, vocab):
    store = ReportStore(root=str(tmp_path))
    run_pipeline(load_demo_dataset(), toy_provider, toy_tokenizer, vocab, _params(), n=1, ks=[1],
                 workers=1, store=store, progress=False)
    results = [json.loads(l) for l in store.path("results.jsonl").read_text().splitlines()]
    timings = [json.loads(l) for l in store.path("timings.jsonl").read_text().splitlines()]
    assert len(results) == len(timings) == 3
    assert all("timings" not in r for r in results)
    assert all({"task_id", "insertion_seconds", "detection_seconds", "execution_seconds"} <= set(t) for t in timings)
    assert store.path("execution.log").exists()


def test_detection_phase_never_calls_the_model(toy_provider, toy_tokenizer, vocab, synthetic_tasks, no_execution):
    run = run_pipeline(synthetic_tasks, toy_provider, toy_tokenizer, vocab, _params(), n=2, ks=[1],
                       workers=2, progress=False)
    rep = run.report
    assert rep.detection_provider_calls == 0
    assert rep.tasks == 8 and not rep.failed_tasks
    assert len(rep.stem) == 4
    assert rep.correctness == 0.0
    assert rep.detectability is not None and rep.imperceptibility is not None
    assert len(rep.pools.wm_scores) + rep.pools.wm_excluded == 16
    assert rep.ppl_watermarked_infinite == rep.ppl_reference_infinite == 0
    assert rep.imperceptibility_skipped is None


@pytest.mark.parametrize("side", ["watermarked", "reference"])
def test_infinite_perplexity_skips_imperceptibility(side):
    finite = perplexity_from_log_probs([[-0.5, -1.0], [-0.2]])
    broken = perplexity_from_log_probs([[-0.5], [-math.inf, -0.1]])
    assert broken.infinite == [1]
    wm, ref = (broken, finite) if side == "watermarked" else (finite, broken)
    value, reason = pipeline._imperceptibility(wm, ref)
    assert value is None
    assert "infinite perplexity" in reason


def test_imperceptibility_needs_both_corpora():
    finite = perplexity_from_log_probs([[-0.5, -1.0]])
    assert pipeline._imperceptibility(finite, None) == (None, "no generated tokens to score")
    value, reason = pipeline._imperceptibility(finite, finite)
    assert value == pytest.approx(1.0) and reason is None


def test_failures_are_isolated(toy_provider, toy_tokenizer, vocab, synthetic_tasks, no_execution):
    bad_prompt = synthetic_tasks[0].model_copy(update={"task_id": "bad/prompt", "prompt": " zzz_not_a_word"})
    bad_lang = synthetic_tasks[1].model_copy(update={"task_id": "bad/lang", "language": "java"})
    tasks = [bad_prompt, *synthetic_tasks[2:5], bad_lang]
    run = run_pipeline(tasks, toy_provider, toy_tokenizer, vocab, _params(), n=1, ks=[1], progress=False)
    assert set(run.report.failed_tasks) == {"bad/prompt", "bad/lang"}
    assert "TokenizerMismatchError" in run.report.failed_tasks["bad/prompt"]
    assert "does not match profile" in run.report.failed_tasks["bad/lang"]
    assert [r.task_id for r in run.results] == [t.task_id for t in tasks]
    assert all(len(r.samples) == 1 for r in run.results if not r.error)


def test_always_passing_tests(toy_provider, toy_tokenizer, vocab):
    tasks = [t.model_copy(update={"test_command": "{python} -c pass"}) for t in load_demo_dataset()[:2]]
    run = run_pipeline(tasks, toy_provider, toy_tokenizer, vocab, _params(max_tokens=8), n=2, ks=[1, 2],
                       workers=2, progress=False)
    assert run.report.pass_at_k == {1: 1.0, 2: 1.0}
    assert run.report.reference_pass_at_k == {1: 1.0, 2: 1.0}
    assert run.report.correctness == 1.0


def test_argument_checks(toy_provider, toy_tokenizer, vocab):
    tasks = load_demo_dataset()
    with pytest.raises(ValueError):
        run_pipeline(tasks, toy_provider, toy_tokenizer, vocab, _params(), n=2, ks=[3], progress=False)
    with pytest.raises(TokenizerMismatchError):
        run_pipeline(tasks, ToyProvider(uniform_toy_spec(10)), toy_tokenizer, vocab, _params(), n=1, ks=[1], progress=False)


def test_single_point_sweep_matches_pipeline(tmp_path, toy_provider, toy_tokenizer, vocab, synthetic_tasks, no_execution):
    params = _params()
    spec = SweepSpec(gammas=[0.5], deltas=[2.0], samples=2, k_values=[1])
    store = ReportStore(root=str(tmp_path))
    res = sweep(synthetic_tasks, toy_provider, toy_tokenizer, vocab, spec, base=params, seed=5, workers=1, store=store)
    run = run_pipeline(synthetic_tasks, toy_provider, toy_tokenizer, vocab, params, n=2, ks=[1], seed=5,
                       workers=1, progress=False)
    row = res.table.iloc[0]
    assert row["auroc"] == pytest.approx(run.report.detectability)
    assert row["imperceptibility"] == pytest.approx(run.report.imperceptibility)
    assert row["stem(0.333,0.333,0.333)"] == pytest.approx(run.report.stem[0].composite)
    assert len(res.grid) == len(weight_grid())
    assert {"sweep.csv", "sweep_grid.csv"} <= set(store.files())


def test_sweep_shape_and_delta_effect(toy_provider, toy_tokenizer, vocab, synthetic_tasks, no_execution):
    spec = SweepSpec(gammas=[0.25, 0.5], deltas=[0.0, 4.0], samples=4, k_values=[1])
    res = sweep(synthetic_tasks, toy_provider, toy_tokenizer, vocab, spec, base=_params(max_tokens=60), workers=2)
    assert len(res.table) == 4
    assert len(res.grid) == 4 * 66
    for gamma in (0.25, 0.5):
        rows = res.table[res.table["gamma"] == gamma].set_index("delta")
        assert rows.loc[4.0, "auroc"] >= rows.loc[0.0, "auroc"]
        assert rows.loc[4.0, "mean_z"] > rows.loc[0.0, "mean_z"]


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(gammas=[], deltas=[1.0]),
        dict(gammas=[1.0], deltas=[1.0]),
        dict(gammas=[0.5], deltas=[-1.0]),
        dict(gammas=[0.5], deltas=[1.0], samples=2, k_values=[5]),
    ],
)
def test_sweep_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SweepSpec(**kwargs)


def test_execution_outcomes_only_move_correctness(monkeypatch, toy_provider, toy_tokenizer, vocab, synthetic_tasks):
    reports = {}
    for outcome in ("fail", "pass"):
        monkeypatch.setattr(pipeline, "run_tests", lambda code, task, timeout, o=outcome: ExecutionResult(outcome=o))
        reports[outcome] = run_pipeline(synthetic_tasks, toy_provider, toy_tokenizer, vocab, _params(), n=2, ks=[1],
                                        workers=1, progress=False).report
    fail, ok = reports["fail"], reports["pass"]
    assert (fail.correctness, ok.correctness) == (0.0, 1.0)
    assert fail.detectability == ok.detectability
    assert fail.imperceptibility == ok.imperceptibility
