from __future__ import annotations
import argparse, json, sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel
from tqdm import tqdm

from .config import PATHS, RunConfig, load_config_file, merge_config
from .datasets import TaskRecord, dataset_stats, load_dataset
from .detector import detect_entropy_gated, detect_from_text, detect_full, detect_stone
from .engine import WatermarkParams, generate, parse_gate
from .gateway import LogitProvider, ProviderError, make_provider
from .metrics import (
    TABLE_WEIGHTS, StemWeights, grid_leaderboard, stem, step_entropies, summarize_category_entropy,
    selection_stats, weight_grid,
)
from .partition import partition_for
from .pipeline import SweepSpec, run_pipeline, sweep
from .reports import ReportStore
from .syntax import VocabularyProfile, build_vocabulary_profile, category_histogram, classify_lexeme, load_language_profile
from .tokenizer import Tokenizer, load_tokenizer
from .tokens import Rng, TokenSequence

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


# -------------------------
# Setup
# -------------------------

class Workspace:
    """Language profile, tokenizer, vocabulary profile and (lazily) the provider for one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.language = load_language_profile(cfg.language)
        self.tokenizer: Tokenizer = load_tokenizer(cfg.tokenizer, self.language)
        self.vocab: VocabularyProfile = build_vocabulary_profile(self.language, self.tokenizer.decode_table())
        self._provider: Optional[LogitProvider] = None

    @property
    def provider(self) -> LogitProvider:
        if self._provider is None:
            self._provider = make_provider(
                self.cfg.provider, self.vocab.vocab_size, sorted(self.vocab.syntax_set), seed=self.cfg.seed,
                timeout=self.cfg.endpoint_timeout, retries=self.cfg.retries,
            )
        return self._provider

    def params(self) -> WatermarkParams:
        c = self.cfg
        return WatermarkParams(
            gamma=c.gamma, delta=c.delta, key=c.seed_key, gate=parse_gate(c.gate),
            entropy_threshold=c.entropy_threshold, top_k=c.top_k, temperature=c.temperature,
            max_tokens=c.max_tokens,
        )

    def dataset(self) -> List[TaskRecord]:
        return load_dataset(self.cfg.dataset or PATHS.demo_tasks)


def _emit(payload: Any):
    if isinstance(payload, BaseModel):
        print(payload.model_dump_json(indent=2))
    else:
        print(json.dumps(payload, indent=2, default=str))


# -------------------------
# Subcommands
# -------------------------

def cmd_classify(ws: Workspace, args) -> int:
    if args.vocab:
        counts: Dict[str, int] = {}
        for i in range(ws.vocab.vocab_size):
            c = ws.vocab.category_of(i).value
            counts[c] = counts.get(c, 0) + 1
        _emit({"language": ws.vocab.language, "vocab_size": ws.vocab.vocab_size,
               "syntax_size": len(ws.vocab.syntax_set), "categories": counts})
        return EXIT_OK
    if not args.lexemes:
        raise ValueError("give lexemes to classify, or --vocab")
    _emit({lex: classify_lexeme(ws.language, lex).value for lex in args.lexemes})
    return EXIT_OK


def cmd_partition_demo(ws: Workspace, args) -> int:
    size = args.vocab_size or ws.vocab.vocab_size
    part = partition_for(args.prev, ws.cfg.seed_key, size, ws.cfg.gamma)
    green = sorted(part.green)
    _emit({"prev": args.prev, "key": ws.cfg.seed_key, "gamma": ws.cfg.gamma, "vocab_size": size,
           "seed": part.seed, "green_size": len(green), "green": green})
    return EXIT_OK


def cmd_generate(ws: Workspace, args) -> int:
    prompt = TokenSequence(tokens=tuple(ws.tokenizer.encode(args.prompt)), source_text=args.prompt)
    rec = generate(ws.provider, prompt, ws.params(), ws.vocab, Rng(ws.cfg.seed))
    _emit({
        "prompt_tokens": list(prompt.tokens),
        "tokens": list(rec.output.tokens),
        "text": ws.tokenizer.decode(rec.output.tokens),
        "complete": rec.complete,
        "error": rec.error,
        "steps": len(rec.steps),
        "gated_steps": rec.gated_steps,
        "gated_then_syntax": rec.gated_then_syntax,
        "histogram": {c.value: n for c, n in category_histogram(ws.vocab, rec.output).items()},
    })
    return EXIT_OK if rec.complete else EXIT_RUNTIME


def _read_ids(raw: str) -> Optional[List[int]]:
    try:
        data = json.loads(raw)
    except ValueError:
        return None
    if isinstance(data, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in data):
        return data
    return None


def cmd_detect(ws: Workspace, args) -> int:
    raw = Path(args.input).read_text(encoding="utf-8")
    ids = _read_ids(raw)
    c = ws.cfg
    source = "tokens"
    if ids is None:
        if args.mode == "stone":
            _emit(detect_from_text(raw, ws.tokenizer, ws.vocab, c.gamma, c.seed_key, c.z_threshold))
            return EXIT_OK
        ids, source = ws.tokenizer.encode(raw), "text"
    if args.mode == "stone":
        rep = detect_stone(ids, ws.vocab, c.gamma, c.seed_key, c.z_threshold)
    elif args.mode == "full":
        rep = detect_full(ids, ws.vocab.vocab_size, c.gamma, c.seed_key, c.z_threshold)
    else:
        rep = detect_entropy_gated(
            ids, ws.provider, c.gamma, c.seed_key, c.entropy_threshold, c.z_threshold,
            temperature=c.temperature, top_k=c.top_k,
        )
    _emit(rep.model_copy(update={"source": source}))
    return EXIT_OK


def cmd_entropy(ws: Workspace, args) -> int:
    tasks = ws.dataset()
    corpus = [TokenSequence(tokens=tuple(ws.tokenizer.encode(t.reference_solution))) for t in tasks]
    prompts = [TokenSequence(tokens=tuple(ws.tokenizer.encode(t.prompt))) for t in tasks]
    steps = step_entropies(ws.provider, corpus, ws.vocab, prompts, ws.cfg.temperature, ws.cfg.top_k, args.base)
    means = summarize_category_entropy(steps)
    _emit({
        "base": args.base,
        "steps": len(steps),
        "category_means": {c.value: m for c, m in means.items()},
        "selection": selection_stats(steps, ws.cfg.entropy_threshold).model_dump(),
        "provider_calls": ws.provider.call_count,
    })
    return EXIT_OK


def cmd_evaluate(ws: Workspace, args) -> int:
    c = ws.cfg
    store = ReportStore(root=c.out_dir)
    run = run_pipeline(
        ws.dataset(), ws.provider, ws.tokenizer, ws.vocab, ws.params(), c.samples, c.k_values,
        seed=c.seed, workers=c.workers, timeout=c.timeout, z_threshold=c.z_threshold, store=store,
    )
    tqdm.write(f"Wrote {', '.join(store.files())} to {store.run_dir}", file=sys.stderr)
    _emit(run.report)
    return EXIT_OK


def cmd_sweep(ws: Workspace, args) -> int:
    c = ws.cfg
    spec = SweepSpec(
        gammas=c.gammas or [c.gamma], deltas=c.deltas or [c.delta], gate=parse_gate(c.gate),
        samples=c.samples, k_values=c.k_values,
    )
    store = ReportStore(root=c.out_dir)
    res = sweep(
        ws.dataset(), ws.provider, ws.tokenizer, ws.vocab, spec, ws.params(),
        seed=c.seed, workers=c.workers, timeout=c.timeout, z_threshold=c.z_threshold, store=store,
    )
    tqdm.write(f"Wrote {', '.join(store.files())} to {store.run_dir}", file=sys.stderr)
    print(res.table.to_json(orient="records", indent=2))
    return EXIT_OK


def cmd_stats(ws: Workspace, args) -> int:
    _emit(dataset_stats(ws.dataset(), ws.tokenizer))
    return EXIT_OK


def cmd_stem(ws: Workspace, args) -> int:
    comps = tuple(args.components)
    if args.grid:
        scores = [stem(comps, w) for w in weight_grid()]
        best = max(scores, key=lambda s: s.composite)
        _emit({"settings": len(scores), "best": best.model_dump(),
               "composites": {s.weights.label(): s.composite for s in scores}})
        return EXIT_OK
    if args.weights:
        a, b, z = args.weights
        settings = [StemWeights(alpha=a, beta=b, zeta=z)]
    else:
        settings = list(TABLE_WEIGHTS)
    _emit([stem(comps, w).model_dump() for w in settings])
    return EXIT_OK


def cmd_leaderboard(ws: Workspace, args) -> int:
    data = json.loads(Path(args.input).read_text(encoding="utf-8"))
    board = grid_leaderboard({m: tuple(v) for m, v in data.items()})
    _emit({**board.model_dump(), "share": {m: board.share(m) for m in board.wins}})
    return EXIT_OK


# -------------------------
# Parser
# -------------------------

def _common_flags() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(add_help=False)
    g = ap.add_argument_group("run")
    g.add_argument("--config", help="JSON file mirroring these flags (dashes or underscores)")
    g.add_argument("--dataset", help="JSONL task file (default: data/demo_tasks.jsonl)")
    g.add_argument("--provider", help="toy | remote | remote:URL")
    g.add_argument("--tokenizer", help="toy | hf:<model name>")
    g.add_argument("--language", help="python | cpp | java")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--out-dir")
    g.add_argument("--samples", type=int, help="generations per task (n)")
    g.add_argument("--k-values", type=int, nargs="+")
    g.add_argument("--timeout", type=float, help="test execution timeout, seconds")
    g.add_argument("--endpoint-timeout", type=float)
    g.add_argument("--retries", type=int)
    w = ap.add_argument_group("watermark")
    w.add_argument("--gamma", type=float)
    w.add_argument("--delta", type=float)
    w.add_argument("--gate", help="off | always (kgw) | non_syntax (stone) | entropy (sweet)")
    w.add_argument("--entropy-threshold", type=float)
    w.add_argument("--top-k", type=int)
    w.add_argument("--temperature", type=float)
    w.add_argument("--seed-key", type=int)
    w.add_argument("--max-tokens", type=int)
    w.add_argument("--z-threshold", type=float)
    w.add_argument("--gammas", type=float, nargs="+")
    w.add_argument("--deltas", type=float, nargs="+")
    return ap


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    ap = argparse.ArgumentParser(prog="stonemark", description="Syntax-aware code watermarking and STEM evaluation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common], help="category of lexemes, or of the whole vocabulary")
    p.add_argument("lexemes", nargs="*")
    p.add_argument("--vocab", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("partition-demo", parents=[common], help="green list for one predecessor token")
    p.add_argument("--prev", type=int, required=True)
    p.add_argument("--vocab-size", type=int)
    p.set_defaults(func=cmd_partition_demo)

    p = sub.add_parser("generate", parents=[common], help="one watermarked generation")
    p.add_argument("--prompt", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", parents=[common], help="detect a watermark in code or a token-id list")
    p.add_argument("input", help="file with raw code, or a JSON list of token ids")
    p.add_argument("--mode", choices=["stone", "full", "entropy"], default="stone")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("entropy", parents=[common], help="per-category entropy over reference solutions")
    p.add_argument("--base", choices=["nats", "bits"], default="nats")
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("evaluate", parents=[common], help="full pipeline: generate, execute, detect, score")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="pipeline over a gamma x delta grid")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", parents=[common], help="token-length statistics of reference solutions")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("stem", parents=[common], help="STEM composite for a components triple")
    p.add_argument("--components", type=float, nargs=3, required=True, metavar=("CORRECT", "DETECT", "IMPERCEPT"))
    p.add_argument("--weights", type=float, nargs=3, metavar=("ALPHA", "BETA", "ZETA"))
    p.add_argument("--grid", action="store_true", help="every setting of the 0.1 weight lattice")
    p.set_defaults(func=cmd_stem)

    p = sub.add_parser("leaderboard", parents=[common], help="weight-grid wins from a JSON {method: [c, d, i]}")
    p.add_argument("input")
    p.set_defaults(func=cmd_leaderboard)
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cli = {k: v for k, v in vars(args).items() if k in RunConfig.model_fields}
    return merge_config(load_config_file(args.config), cli)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        ws = Workspace(resolve_config(args))
        return args.func(ws, args)
    except ProviderError as e:
        tqdm.write(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FileNotFoundError) as e:
        tqdm.write(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, OSError) as e:
        tqdm.write(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
