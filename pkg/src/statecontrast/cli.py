"""Command-line entry point: synth, gen, train, gradcheck, eval, judge.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 endpoint
error. Status text goes to stderr; stdout carries only machine-readable JSON
(always for eval reports, elsewhere when --json is given), so identical inputs
produce byte-identical primary outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluate, llm, trainer
from .corpus import CorpusError, SynthSpec
from .embed import EmbedError, embed_corpus
from .textgen import TextGenError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ENDPOINT = 3

GRADCHECK_THRESHOLD = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="statecontrast", description=__doc__)
    p.add_argument("--json", action="store_true", help="emit machine JSON on stdout")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic corpus with a latent oracle")
    sp.add_argument("--spec", required=True, help="JSON file with generator parameters")
    sp.add_argument("--out", required=True, help="output corpus directory")

    gp = sub.add_parser("gen", help="annotate a corpus through an endpoint or mock fixtures")
    gp.add_argument("--corpus", required=True)
    gp.add_argument("--out", required=True)
    gp.add_argument("--mock", help="mock fixtures JSONL")
    gp.add_argument("--max-parallel", type=int, default=4)

    tp = sub.add_parser("train", help="run the alternating training loop")
    tp.add_argument("--config", required=True)
    tp.add_argument("--corpus", required=True)
    tp.add_argument("--out", required=True)

    cp = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    cp.add_argument("--config", help="training config JSON (defaults when omitted)")
    cp.add_argument("--seed", type=int, default=0)

    ep = sub.add_parser("eval", help="retrieval, phase, and margin reports for a checkpoint")
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--corpus", required=True)
    ep.add_argument("--level", choices=["clip", "video"], default="clip")
    ep.add_argument("--out", help="write the JSON report here instead of stdout")

    jp = sub.add_parser("judge", help="Likert-score generated annotations")
    jp.add_argument("--corpus", required=True)
    jp.add_argument("--out", required=True)
    jp.add_argument("--mock", help="mock fixtures JSONL")
    return p


def _emit(args, payload: dict) -> None:
    if args is not None and getattr(args, "json", False):
        print(json.dumps(payload))


def _cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = SynthSpec(**json.load(fh))
    corpus, oracle = corpus_mod.synthesize_corpus(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus_dir(corpus, out)
    oracle.save(out / "oracle.jsonl")
    print(f"wrote {len(corpus.clips)} clips, {len(corpus.videos)} videos to {out}", file=sys.stderr)
    _emit(args, {"clips": len(corpus.clips), "videos": len(corpus.videos), "out": str(out)})
    return EXIT_OK


def _cmd_gen(args) -> int:
    corpus = corpus_mod.load_corpus_dir(args.corpus)
    cfg = llm.LlmClientConfig.from_env(mock_fixtures=args.mock, max_parallel=args.max_parallel)
    if not cfg.mock_fixtures and not cfg.api_base:
        raise llm.EndpointUnreachable(
            f"no endpoint configured: set {llm.ENV_API_BASE} or pass --mock"
        )
    annotated, failures = llm.generate_annotations(corpus, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus_dir(annotated, out)
    llm.write_failure_report(failures, out / "failures.jsonl")
    n_annotated = sum(1 for c in annotated.clips.values() if c.annotated)
    print(f"annotated {n_annotated}/{len(annotated.clips)} clips, {len(failures)} failures", file=sys.stderr)
    _emit(args, {"annotated_clips": n_annotated, "clips": len(annotated.clips), "failures": len(failures)})
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = trainer.TrainConfig.load(args.config)
    corpus = corpus_mod.load_corpus_dir(args.corpus, frames_per_clip=cfg.frames_per_clip)
    table = embed_corpus(cfg.embedder(), corpus)
    params, log = trainer.train(corpus, cfg, table=table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(out / "checkpoint.json", params, None, cfg, step=len(log.records))
    log.write_jsonl(out / "metrics.jsonl")
    table.save(out / "embeddings.jsonl")
    final = log.records[-1].loss if log.records else None
    print(f"trained {len(log.records)} steps; final loss {final}", file=sys.stderr)
    _emit(args, {"steps": len(log.records), "final_loss": final, "checkpoint": str(out / "checkpoint.json")})
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    cfg = trainer.TrainConfig.load(args.config) if args.config else trainer.TrainConfig()
    report = trainer.run_gradcheck(cfg, seed=args.seed)
    worst = max(report["child_max_rel_err"], report["parent_max_rel_err"])
    print(
        f"child closure max rel err {report['child_max_rel_err']:.3e}; "
        f"parent closure max rel err {report['parent_max_rel_err']:.3e}",
        file=sys.stderr,
    )
    _emit(args, report)
    if worst < GRADCHECK_THRESHOLD:
        return EXIT_OK
    print(f"gradient check failed: {worst:.3e} >= {GRADCHECK_THRESHOLD}", file=sys.stderr)
    return EXIT_DATA


def _cmd_eval(args) -> int:
    params, _, cfg, _ = trainer.load_checkpoint(args.ckpt)
    corpus = corpus_mod.load_corpus_dir(args.corpus, frames_per_clip=cfg.frames_per_clip)
    table = embed_corpus(cfg.embedder(), corpus)
    report = {
        "retrieval": evaluate.retrieval_eval(params, corpus, table, cfg, level=args.level).to_json(),
        "phase": evaluate.phase_probe(params, corpus, table, cfg).to_json(),
        "margins": evaluate.margin_eval(params, corpus, table, cfg).to_json(),
        "level": args.level,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"report written to {args.out}", file=sys.stderr)
    else:
        print(text)
    return EXIT_OK


def _cmd_judge(args) -> int:
    corpus = corpus_mod.load_corpus_dir(args.corpus)
    cfg = llm.LlmClientConfig.from_env(mock_fixtures=args.mock)
    if not cfg.mock_fixtures and not cfg.api_base:
        raise llm.EndpointUnreachable(
            f"no endpoint configured: set {llm.ENV_API_BASE} or pass --mock"
        )
    items = llm.judge_corpus(corpus, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json()) + "\n")
    summary = llm.aggregate_scores(items)
    print(f"judged {len(items)} items: {summary}", file=sys.stderr)
    _emit(args, summary)
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "gen": _cmd_gen,
    "train": _cmd_train,
    "gradcheck": _cmd_gradcheck,
    "eval": _cmd_eval,
    "judge": _cmd_judge,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    want_json = "--json" in argv
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        if want_json:
            print(json.dumps({"error": str(exc), "code": EXIT_USAGE}))
        return EXIT_USAGE

    try:
        return _COMMANDS[args.command](args)
    except (llm.EndpointUnreachable, llm.AuthFailure) as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        if want_json:
            print(json.dumps({"error": str(exc), "code": EXIT_ENDPOINT}))
        return EXIT_ENDPOINT
    except (
        CorpusError,
        EmbedError,
        TextGenError,
        llm.LlmError,
        trainer.TrainerError,
        FileNotFoundError,
        json.JSONDecodeError,
        ValueError,
        TypeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if want_json:
            print(json.dumps({"error": str(exc), "code": EXIT_DATA}))
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
