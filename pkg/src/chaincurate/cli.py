"""Command-line entry point.

Subcommands: ingest, decontam, probe, stage1, stage2, score, select, topk,
series, strata, emit-config, eval, run, validate. Exit codes: 0 ok, 1 usage,
2 data error, 3 upstream-service error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus, curation, decontam, evalbench, grading, inference, scoring
from .config import PipelineConfig, load_config, validate_config
from .errors import DataError, UpstreamError
from .pipeline import StageError, run_pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_UPSTREAM = 3


class _Parser(argparse.ArgumentParser):
    # argparse defaults to exit code 2 on usage errors; the contract is 1
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _model_spec(args: argparse.Namespace, temperature: float | None = None) -> inference.ModelSpec:
    return inference.ModelSpec(
        model_id=args.model_id,
        endpoint=getattr(args, "endpoint", None) or "replay://local",
        decoding=inference.DecodingParams(
            temperature=args.temperature if temperature is None else temperature,
            max_tokens=getattr(args, "max_tokens", inference.MAX_OUTPUT_TOKENS),
        ),
    )


def _load_lexicon(path: Path | None) -> scoring.Lexicon:
    if path is None:
        return scoring.DEFAULT_LEXICON
    obj = json.loads(path.read_text(encoding="utf-8"))
    return scoring.Lexicon(
        verification=obj.get("verification", scoring.DEFAULT_LEXICON.verification),
        tentative=obj.get("tentative", scoring.DEFAULT_LEXICON.tentative),
        connective=obj.get("connective", scoring.DEFAULT_LEXICON.connective),
    )


def _read_pairs(path: Path) -> list[curation.SelectedPair]:
    return [
        curation.SelectedPair(obj["problem_id"], obj["chain_id"], obj["total"])
        for obj in corpus.read_jsonl(path)
    ]


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args: argparse.Namespace) -> int:
    result = corpus.ingest_problems(Path(args.infile), source=args.source)
    corpus.write_problems(Path(args.out), result.records)
    if args.rejects:
        corpus.write_jsonl(Path(args.rejects), (r.to_json_dict() for r in result.rejects))
    print(f"ingest: accepted={result.accepted} rejected={result.rejected}")
    return EXIT_OK


def cmd_decontam(args: argparse.Namespace) -> int:
    benchmarks = corpus.read_benchmark_dir(Path(args.benchmarks))
    if not benchmarks:
        raise DataError(f"no *.jsonl benchmarks found in {args.benchmarks}")
    index = decontam.build_ngram_index(benchmarks, n=args.n)
    problems = corpus.read_problems(Path(args.infile))
    clean, reports = decontam.decontaminate(problems, index)
    corpus.write_problems(Path(args.out), clean)
    if args.report:
        corpus.write_jsonl(Path(args.report), (r.to_json_dict() for r in reports))
    contaminated = len(problems) - len(clean)
    print(f"decontam: input={len(problems)} clean={len(clean)} contaminated={contaminated}")
    return EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    problems = corpus.read_problems(Path(args.infile))
    model = _model_spec(args)
    client = inference.open_client(
        mode=args.mode,
        cassette_path=Path(args.cassette) if args.cassette else None,
        api_key_env=args.api_key_env,
        requests_per_minute=args.requests_per_minute,
    )
    probe = inference.probe_problems(
        problems,
        model,
        args.attempts,
        client,
        max_workers=1 if args.mode == "replay" else args.max_workers,
        keep_chains=args.chains_out is not None,
    )
    grading.write_pass_records(Path(args.out), probe.records)
    if args.chains_out:
        corpus.write_chains(Path(args.chains_out), probe.chains)
    if args.mode == "record" and args.cassette:
        client.cassette.save(Path(args.cassette))  # type: ignore[union-attr]
    solved = sum(1 for r in probe.records if r.c > 0)
    print(f"probe: problems={len(problems)} attempts={args.attempts} solved_any={solved}")
    return EXIT_OK


def _run_stage_filter(args: argparse.Namespace, stage: str) -> int:
    problems = corpus.read_problems(Path(args.infile))
    records = grading.read_pass_records(Path(args.records))
    if stage == "stage1":
        rule = curation.default_stage1_rule(args.model_id)
        if args.attempts:
            rule = curation.StageRule(args.model_id, args.attempts, 0, 0)
        outcome = curation.stage1_filter(problems, records, rule)
    else:
        rule = curation.default_stage2_rule(args.model_id)
        if args.attempts:
            rule = curation.StageRule(args.model_id, args.attempts, args.retain_lo, args.retain_hi)
        outcome = curation.stage2_filter(problems, records, rule)
    corpus.write_problems(Path(args.out), outcome.survivors)
    counts = outcome.counts
    print(
        f"{stage}: input={len(problems)} survivors={counts['survivors']} "
        f"excluded={counts['excluded']} pending={counts['pending']} errors={len(outcome.errors)}"
    )
    return EXIT_OK


def cmd_stage1(args: argparse.Namespace) -> int:
    return _run_stage_filter(args, "stage1")


def cmd_stage2(args: argparse.Namespace) -> int:
    return _run_stage_filter(args, "stage2")


def cmd_score(args: argparse.Namespace) -> int:
    chains = corpus.read_chains(Path(args.infile))
    if not chains:
        raise DataError("no chains to score")
    lexicon = _load_lexicon(Path(args.lexicon) if args.lexicon else None)
    scores = scoring.score_pool(chains, lexicon=lexicon, pool_id=args.pool_id)
    scoring.write_scores(Path(args.out), scores)
    print(f"score: chains={len(chains)} pool={args.pool_id}")
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    scores = scoring.read_scores(Path(args.scores))
    expected = None
    if args.problems:
        expected = [p.id for p in corpus.read_problems(Path(args.problems))]
    selection = curation.select_best_chain_per_problem(scores, expected)
    corpus.write_jsonl(Path(args.out), (p.to_json_dict() for p in selection.pairs))
    print(f"select: pairs={len(selection.pairs)} gaps={len(selection.gaps)}")
    return EXIT_OK


def cmd_topk(args: argparse.Namespace) -> int:
    pairs = _read_pairs(Path(args.pairs))
    manifest = curation.assemble_topk(pairs, args.k)
    corpus.write_manifest(manifest, Path(args.out))
    print(f"topk: pool={len(pairs)} k={args.k} content_hash={manifest.content_hash}")
    return EXIT_OK


def cmd_series(args: argparse.Namespace) -> int:
    pairs = _read_pairs(Path(args.pairs))
    sizes = tuple(int(s) for s in args.sizes.split(","))
    manifests = curation.build_size_series(pairs, sizes)
    out_dir = Path(args.out_dir)
    for manifest in manifests:
        corpus.write_manifest(manifest, out_dir / f"{manifest.name}.manifest.jsonl")
    print(f"series: pool={len(pairs)} sizes={list(sizes)}")
    return EXIT_OK


def cmd_strata(args: argparse.Namespace) -> int:
    pairs = _read_pairs(Path(args.pairs))
    problems = corpus.read_problems(Path(args.problems))
    spec = curation.StrataSpec(size_per_stratum=args.size)
    manifests = curation.build_difficulty_strata(problems, pairs, spec)
    out_dir = Path(args.out_dir)
    for manifest in manifests.values():
        corpus.write_manifest(manifest, out_dir / f"{manifest.name}.manifest.jsonl")
    print(f"strata: {', '.join(f'{k}={len(v.members)}' for k, v in sorted(manifests.items()))}")
    return EXIT_OK


def cmd_emit_config(args: argparse.Namespace) -> int:
    manifest = corpus.read_manifest(Path(args.manifest))
    doc = curation.emit_training_config(manifest, args.base_model, dataset_path=args.manifest)
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"emit-config: dataset={manifest.name} base_model={args.base_model}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    benchmark = corpus.ingest_benchmark(Path(args.benchmark), name=args.name or Path(args.benchmark).stem)
    model = _model_spec(args, temperature=0.0)
    client = inference.open_client(
        mode=args.mode,
        cassette_path=Path(args.cassette) if args.cassette else None,
        api_key_env=args.api_key_env,
        requests_per_minute=args.requests_per_minute,
    )
    result = evalbench.evaluate_benchmark(client, model, benchmark)
    report, table = evalbench.render_report([evalbench.BenchmarkScore.from_result(result)])
    evalbench.write_report(report, table, Path(args.out))
    if args.mode == "record" and args.cassette:
        client.cassette.save(Path(args.cassette))  # type: ignore[union-attr]
    print(table)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(Path(args.config))
    result = run_pipeline(config)
    print(result.funnel.render())
    print(f"manifest: {result.manifest_path} content_hash={result.manifest.content_hash}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(Path(args.config))
    violations = validate_config(config, strict_paths=args.strict_paths)
    if violations:
        for violation in violations:
            print(f"violation: {violation}")
        return EXIT_DATA
    print("ok")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chaincurate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate a problems jsonl file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--source", default="unknown")
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("decontam", help="drop problems overlapping benchmarks")
    p.add_argument("--benchmarks", required=True, help="directory of benchmark *.jsonl files")
    p.add_argument("--n", type=int, default=decontam.DEFAULT_NGRAM_ORDER)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(fn=cmd_decontam)

    p = sub.add_parser("probe", help="sample and grade solution attempts")
    p.add_argument("--model-id", required=True)
    p.add_argument("--endpoint")
    p.add_argument("--temperature", type=float, default=inference.DEFAULT_STAGE2_TEMPERATURE)
    p.add_argument("--attempts", type=int, default=32)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--cassette")
    p.add_argument("--out", required=True)
    p.add_argument("--chains-out")
    p.add_argument("--mode", choices=["replay", "record", "live"], default="replay")
    p.add_argument("--api-key-env")
    p.add_argument("--requests-per-minute", type=int)
    p.add_argument("--max-workers", type=int, default=4)
    p.set_defaults(fn=cmd_probe)

    for stage in ("stage1", "stage2"):
        p = sub.add_parser(stage, help=f"apply the {stage} difficulty filter")
        p.add_argument("--in", dest="infile", required=True)
        p.add_argument("--records", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--model-id", default="weak-filter" if stage == "stage1" else "strong-reasoner")
        p.add_argument("--attempts", type=int)
        if stage == "stage2":
            p.add_argument("--retain-lo", type=int, default=1)
            p.add_argument("--retain-hi", type=int, default=3)
        p.set_defaults(fn=cmd_stage1 if stage == "stage1" else cmd_stage2)

    p = sub.add_parser("score", help="score reasoning chains in one pool")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--pool-id", default="pool")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("select", help="keep the best-scoring chain per problem")
    p.add_argument("--scores", required=True)
    p.add_argument("--problems")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("topk", help="assemble the top-k manifest")
    p.add_argument("--pairs", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_topk)

    p = sub.add_parser("series", help="nested manifests at several sizes")
    p.add_argument("--pairs", required=True)
    p.add_argument("--sizes", default=",".join(str(s) for s in curation.DEFAULT_SIZE_SERIES))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_series)

    p = sub.add_parser("strata", help="simple/complex/advanced difficulty manifests")
    p.add_argument("--pairs", required=True)
    p.add_argument("--problems", required=True)
    p.add_argument("--size", type=int, default=500)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_strata)

    p = sub.add_parser("emit-config", help="write the fine-tuning config for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--base-model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_emit_config)

    p = sub.add_parser("eval", help="evaluate a model on one benchmark")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--name")
    p.add_argument("--model-id", required=True)
    p.add_argument("--endpoint")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--cassette")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["replay", "record", "live"], default="replay")
    p.add_argument("--api-key-env")
    p.add_argument("--requests-per-minute", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("validate", help="check a config file for violations")
    p.add_argument("--config", required=True)
    p.add_argument("--strict-paths", action="store_true")
    p.set_defaults(fn=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM if isinstance(exc.cause, UpstreamError) else EXIT_DATA
    except UpstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
