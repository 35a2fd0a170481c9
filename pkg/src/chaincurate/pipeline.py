"""End-to-end pipeline: decontam -> stage 1 -> stage 2 -> scoring ->
selection -> top-k (+ optional series/strata), with stage-boundary
checkpoints and a funnel report of per-stage counts.

Every stage writes its outputs under the configured output directory and
records an input digest in pipeline_state.json; re-running skips stages
whose inputs are unchanged. In replay mode the whole run is a pure function
of (inputs, cassettes), so two runs produce identical manifest hashes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import corpus, curation, decontam, grading, inference, scoring
from .config import PipelineConfig, validate_config
from .errors import DataError


class StageError(Exception):
    """A pipeline stage failed; completed stages remain checkpointed."""

    def __init__(self, stage: str, cause: Exception, checkpoint_dir: Path):
        self.stage = stage
        self.cause = cause
        self.checkpoint_dir = checkpoint_dir
        super().__init__(
            f"stage {stage!r} failed: {cause} (completed stages checkpointed in {checkpoint_dir})"
        )


@dataclass
class FunnelReport:
    """Per-stage input/survivor counts from raw corpus to final dataset."""

    counts: dict[str, Any] = field(default_factory=dict)

    def record(self, stage: str, **values: Any) -> None:
        self.counts[stage] = values

    def render(self) -> str:
        lines = ["funnel:"]
        for stage, values in self.counts.items():
            parts = ", ".join(f"{k}={v}" for k, v in values.items())
            lines.append(f"  {stage}: {parts}")
        return "\n".join(lines)


@dataclass
class PipelineResult:
    funnel: FunnelReport
    manifest: corpus.DatasetManifest
    manifest_path: Path
    series: list[corpus.DatasetManifest] = field(default_factory=list)
    strata: dict[str, corpus.DatasetManifest] = field(default_factory=dict)
    output_dir: Path = Path(".")


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


class StageRunner:
    """Runs stages, skipping any whose input digest matches the saved state."""

    def __init__(self, state_path: Path, config_digest: str):
        self.state_path = state_path
        self.config_digest = config_digest
        self.state: dict[str, str] = {}
        self.skipped: list[str] = []
        if state_path.exists():
            try:
                self.state = json.loads(state_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                self.state = {}

    def _digest(self, inputs: list[Path]) -> str:
        h = hashlib.sha256(self.config_digest.encode("utf-8"))
        for path in inputs:
            h.update(str(path).encode("utf-8"))
            h.update(_file_digest(path).encode("utf-8"))
        return h.hexdigest()

    def run(
        self,
        name: str,
        inputs: list[Path],
        outputs: list[Path],
        fn: Callable[[], None],
        checkpoint_dir: Path,
    ) -> None:
        digest = self._digest(inputs)
        if self.state.get(name) == digest and all(p.exists() for p in outputs):
            self.skipped.append(name)
            return
        try:
            fn()
        except Exception as exc:
            raise StageError(name, exc, checkpoint_dir) from exc
        self.state[name] = digest
        self.state_path.parent.mkdir(parents=True, exist_ok=True)
        self.state_path.write_text(json.dumps(self.state, indent=2), encoding="utf-8")


def _resolve_client(
    config: PipelineConfig, cassette_path: Path | None, credential_key: str
) -> inference.InferenceClient:
    return inference.open_client(
        mode=config.inference_mode,
        cassette_path=cassette_path,
        api_key_env=config.credentials_env.get(credential_key),
        requests_per_minute=config.requests_per_minute,
    )


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Execute the full curation pipeline described by the config."""
    violations = validate_config(config)
    if violations:
        raise DataError("invalid config: " + "; ".join(violations))

    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    config_digest = config.digest()
    runner = StageRunner(out / "pipeline_state.json", config_digest)
    funnel = FunnelReport()

    paths = {
        "problems": out / "problems.valid.jsonl",
        "rejects": out / "rejects.jsonl",
        "clean": out / "clean.jsonl",
        "contamination": out / "contamination.jsonl",
        "stage1_records": out / "stage1.records.jsonl",
        "stage1_survivors": out / "stage1.survivors.jsonl",
        "stage2_records": out / "stage2.records.jsonl",
        "stage2_chains": out / "stage2.chains.jsonl",
        "pool": out / "pool.jsonl",
        "scores": out / "scores.jsonl",
        "pairs": out / "pairs.jsonl",
        "gaps": out / "gaps.jsonl",
        "manifest": out / f"top{config.top_k}.manifest.jsonl",
        "funnel": out / "funnel.json",
    }

    # -- ingest ------------------------------------------------------------
    def do_ingest() -> None:
        result = corpus.ingest_problems(config.problems, source=config.problems_source)
        corpus.write_problems(paths["problems"], result.records)
        corpus.write_jsonl(paths["rejects"], (r.to_json_dict() for r in result.rejects))

    runner.run("ingest", [config.problems], [paths["problems"], paths["rejects"]], do_ingest, out)
    problems = corpus.read_problems(paths["problems"])
    rejects = sum(1 for _ in corpus.read_jsonl(paths["rejects"]))
    funnel.record("ingest", input=len(problems) + rejects, accepted=len(problems), rejected=rejects)

    # -- decontam ----------------------------------------------------------
    benchmark_paths: list[Path] = []
    if config.benchmarks_dir is not None:
        benchmark_paths = sorted(config.benchmarks_dir.glob("*.jsonl"))
    if benchmark_paths:

        def do_decontam() -> None:
            benchmarks = [corpus.ingest_benchmark(p, name=p.stem) for p in benchmark_paths]
            index = decontam.build_ngram_index(benchmarks, n=config.decontam_n)
            clean, reports = decontam.decontaminate(problems, index)
            corpus.write_problems(paths["clean"], clean)
            corpus.write_jsonl(paths["contamination"], (r.to_json_dict() for r in reports))

        runner.run(
            "decontam",
            [paths["problems"], *benchmark_paths],
            [paths["clean"], paths["contamination"]],
            do_decontam,
            out,
        )
        clean_problems = corpus.read_problems(paths["clean"])
    else:
        corpus.write_problems(paths["clean"], problems)
        clean_problems = problems
    funnel.record(
        "decontam",
        input=len(problems),
        clean=len(clean_problems),
        contaminated=len(problems) - len(clean_problems),
    )

    # -- stage 1 probe + filter ---------------------------------------------
    stage1_rule = config.filter_policy.stage1
    stage1_model = config.stage1_model

    def do_stage1() -> None:
        client = _resolve_client(config, config.stage1_cassette, "stage1")
        probe = inference.probe_problems(
            clean_problems,
            stage1_model,
            stage1_rule.attempts,
            client,
            max_workers=1 if config.inference_mode == "replay" else config.max_workers,
            keep_chains=False,
        )
        grading.write_pass_records(paths["stage1_records"], probe.records)
        outcome = curation.stage1_filter(clean_problems, probe.records, stage1_rule)
        corpus.write_problems(paths["stage1_survivors"], outcome.survivors)

    stage1_inputs = [paths["clean"]]
    if config.stage1_cassette is not None and config.stage1_cassette.exists():
        stage1_inputs.append(config.stage1_cassette)
    runner.run(
        "stage1", stage1_inputs, [paths["stage1_records"], paths["stage1_survivors"]], do_stage1, out
    )
    stage1_survivors = corpus.read_problems(paths["stage1_survivors"])
    funnel.record("stage1", input=len(clean_problems), survivors=len(stage1_survivors))

    # -- stage 2 probe + filter ---------------------------------------------
    stage2_rule = config.filter_policy.stage2
    stage2_model = config.stage2_model

    def do_stage2() -> None:
        client = _resolve_client(config, config.stage2_cassette, "stage2")
        probe = inference.probe_problems(
            stage1_survivors,
            stage2_model,
            stage2_rule.attempts,
            client,
            max_workers=1 if config.inference_mode == "replay" else config.max_workers,
            keep_chains=True,
        )
        grading.write_pass_records(paths["stage2_records"], probe.records)
        corpus.write_chains(paths["stage2_chains"], probe.chains)
        outcome = curation.stage2_filter(stage1_survivors, probe.records, stage2_rule)
        corpus.write_problems(paths["pool"], outcome.survivors)

    stage2_inputs = [paths["stage1_survivors"]]
    if config.stage2_cassette is not None and config.stage2_cassette.exists():
        stage2_inputs.append(config.stage2_cassette)
    runner.run(
        "stage2",
        stage2_inputs,
        [paths["stage2_records"], paths["stage2_chains"], paths["pool"]],
        do_stage2,
        out,
    )
    pool = corpus.read_problems(paths["pool"])
    funnel.record("stage2", input=len(stage1_survivors), survivors=len(pool))

    # -- chain scoring -------------------------------------------------------
    pool_ids = {p.id for p in pool}
    answer_by_problem = {p.id: p.answer for p in pool}

    def candidate_chains() -> list[corpus.ReasoningChain]:
        if config.chains is not None:
            chains = corpus.read_chains(config.chains)
            return [c for c in chains if c.problem_id in pool_ids]
        # fall back to the stage-2 probe chains that graded correct
        chains = corpus.read_chains(paths["stage2_chains"])
        return [
            c
            for c in chains
            if c.problem_id in pool_ids
            and grading.grade_chain(c.text, answer_by_problem[c.problem_id])
        ]

    def do_score() -> None:
        chains = candidate_chains()
        if not chains:
            raise DataError("no candidate chains for the surviving pool")
        scores = scoring.score_pool(
            chains, lexicon=config.lexicon, weights=config.weights, pool_id=config_digest
        )
        scoring.write_scores(paths["scores"], scores)

    score_inputs = [paths["pool"]]
    score_inputs.append(config.chains if config.chains is not None else paths["stage2_chains"])
    runner.run("score", score_inputs, [paths["scores"]], do_score, out)
    scores = scoring.read_scores(paths["scores"])
    funnel.record("score", chains=len(scores))

    # -- selection -----------------------------------------------------------
    def do_select() -> None:
        selection = curation.select_best_chain_per_problem(scores, [p.id for p in pool])
        corpus.write_jsonl(paths["pairs"], (p.to_json_dict() for p in selection.pairs))
        corpus.write_jsonl(paths["gaps"], ({"problem_id": pid} for pid in selection.gaps))

    runner.run("select", [paths["scores"]], [paths["pairs"], paths["gaps"]], do_select, out)
    pairs = [
        curation.SelectedPair(obj["problem_id"], obj["chain_id"], obj["total"])
        for obj in corpus.read_jsonl(paths["pairs"])
    ]
    gaps = sum(1 for _ in corpus.read_jsonl(paths["gaps"]))
    funnel.record("select", pairs=len(pairs), gaps=gaps)

    # -- assembly ------------------------------------------------------------
    selection_rule = {
        "config_digest": config_digest,
        "filter_policy": config.filter_policy.as_dict(),
        "weights": config.weights.as_dict(),
        "lexicon_digest": config.lexicon.digest(),
        "decontam_n": config.decontam_n,
        "prompt_template_digest": inference.prompt_digest(inference.PROMPT_TEMPLATE),
        "probe_decoding": {
            "stage1": config.stage1_model.decoding.as_dict(),
            "stage2": config.stage2_model.decoding.as_dict(),
        },
    }

    def do_topk() -> None:
        manifest = curation.assemble_topk(
            pairs, config.top_k, name=f"top{config.top_k}", selection_rule=selection_rule
        )
        corpus.write_manifest(manifest, paths["manifest"])

    runner.run("topk", [paths["pairs"]], [paths["manifest"]], do_topk, out)
    manifest = corpus.read_manifest(paths["manifest"])
    funnel.record("topk", k=config.top_k, content_hash=manifest.content_hash)

    series: list[corpus.DatasetManifest] = []
    if config.size_series:
        try:
            series = curation.build_size_series(
                pairs, config.size_series, name_prefix="subset", selection_rule=selection_rule
            )
        except ValueError as exc:
            raise StageError("series", exc, out) from exc
        for m in series:
            corpus.write_manifest(m, out / f"{m.name}.manifest.jsonl")
        funnel.record("series", sizes=list(config.size_series))

    strata: dict[str, corpus.DatasetManifest] = {}
    if config.build_strata:
        try:
            strata = curation.build_difficulty_strata(pool, pairs, selection_rule=selection_rule)
        except ValueError as exc:
            raise StageError("strata", exc, out) from exc
        for name, m in strata.items():
            corpus.write_manifest(m, out / f"{m.name}.manifest.jsonl")
        funnel.record("strata", strata=sorted(strata))

    paths["funnel"].write_text(
        json.dumps({"config_digest": config_digest, "stages": funnel.counts}, indent=2) + "\n",
        encoding="utf-8",
    )

    return PipelineResult(
        funnel=funnel,
        manifest=manifest,
        manifest_path=paths["manifest"],
        series=series,
        strata=strata,
        output_dir=out,
    )
