"""Benchmark evaluation: protocol selection by size, grading, pass@1
aggregation, and report rendering.

Benchmarks under 50 items are evaluated with 4 samples at temperature 0.6
and the unbiased pass@1 estimate per item; larger benchmarks use greedy
single-sample decoding. The benchmark score is the item mean x 100, and the
report average weights benchmarks equally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .corpus import BenchmarkSet, Problem
from .grading import (
    GRADING_POLICY_VERSION,
    ComplexEvaluator,
    PassRateRecord,
    grade_chain,
    pass_at_k,
)
from .inference import (
    MAX_OUTPUT_TOKENS,
    PROMPT_TEMPLATE,
    DecodingParams,
    InferenceClient,
    ModelSpec,
    sample_solutions,
)

SMALL_BENCHMARK_THRESHOLD = 50

IN_DOMAIN_BENCHMARKS = {"aime24", "math500", "amc23"}


@dataclass(frozen=True)
class EvalProtocol:
    mode: str  # greedy | sampled
    num_samples: int
    temperature: float
    max_tokens: int = MAX_OUTPUT_TOKENS

    def __post_init__(self) -> None:
        if self.mode == "greedy":
            if self.num_samples != 1 or self.temperature != 0.0:
                raise ValueError("greedy protocol requires num_samples=1, temperature=0")
        elif self.mode == "sampled":
            if self.num_samples != 4 or self.temperature != 0.6:
                raise ValueError("sampled protocol requires num_samples=4, temperature=0.6")
        else:
            raise ValueError(f"unknown protocol mode {self.mode!r}")

    @classmethod
    def greedy(cls) -> "EvalProtocol":
        return cls(mode="greedy", num_samples=1, temperature=0.0)

    @classmethod
    def sampled(cls) -> "EvalProtocol":
        return cls(mode="sampled", num_samples=4, temperature=0.6)

    def decoding(self) -> DecodingParams:
        return DecodingParams(
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            num_samples=self.num_samples,
        )


def choose_protocol(benchmark: BenchmarkSet) -> EvalProtocol:
    """Size < 50 -> sampled(4, 0.6); otherwise greedy."""
    if benchmark.size < 1:
        raise ValueError(f"benchmark {benchmark.name!r} is empty")
    if benchmark.size < SMALL_BENCHMARK_THRESHOLD:
        return EvalProtocol.sampled()
    return EvalProtocol.greedy()


@dataclass
class ItemResult:
    item_id: str
    record: PassRateRecord
    pass_at_1: float


@dataclass
class BenchmarkResult:
    name: str
    score: float  # pass@1 as a percentage
    items: int
    protocol: EvalProtocol
    item_results: list[ItemResult]


def evaluate_benchmark(
    client: InferenceClient,
    model: ModelSpec,
    benchmark: BenchmarkSet,
    protocol: EvalProtocol | None = None,
    evaluator: ComplexEvaluator | None = None,
) -> BenchmarkResult:
    """Grade every item under the protocol and average item pass@1 x 100.

    Failed samples inherit the inference module's placeholder behavior and
    grade incorrect.
    """
    if protocol is None:
        protocol = choose_protocol(benchmark)
    eval_model = model.with_decoding(protocol.decoding())
    item_results = []
    for item in benchmark.items:
        problem = Problem(
            id=item.id,
            statement=item.question,
            answer=item.answer,
            source=benchmark.name,
        )
        chains = sample_solutions(problem, eval_model, protocol.num_samples, client)
        flags = [
            grade_chain(chain.text, item.answer, question=item.question, evaluator=evaluator)
            for chain in chains
        ]
        record = PassRateRecord.from_flags(item.id, eval_model.model_id, flags)
        item_results.append(
            ItemResult(
                item_id=item.id,
                record=record,
                pass_at_1=pass_at_k(record.n, record.c, 1),
            )
        )
    score = 100.0 * sum(r.pass_at_1 for r in item_results) / len(item_results)
    return BenchmarkResult(
        name=benchmark.name,
        score=score,
        items=benchmark.size,
        protocol=protocol,
        item_results=item_results,
    )


# ---------------------------------------------------------------------------
# reporting


@dataclass
class BenchmarkScore:
    """One report row; scores may come from evaluation or be supplied directly."""

    name: str
    score: float
    items: int | None = None
    protocol_mode: str | None = None

    @classmethod
    def from_result(cls, result: BenchmarkResult) -> "BenchmarkScore":
        return cls(
            name=result.name,
            score=result.score,
            items=result.items,
            protocol_mode=result.protocol.mode,
        )


@dataclass
class EvalReport:
    per_benchmark: list[BenchmarkScore]
    average: float  # unrounded; formatting happens at render time
    grading_policy_version: str = GRADING_POLICY_VERSION
    prompt_template: str = PROMPT_TEMPLATE

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "per_benchmark": [
                {
                    "name": row.name,
                    "pass_at_1": row.score,
                    "items": row.items,
                    "protocol": row.protocol_mode,
                }
                for row in self.per_benchmark
            ],
            "average": self.average,
            "grading_policy_version": self.grading_policy_version,
            "prompt_template": self.prompt_template,
        }


def render_report(rows: Sequence[BenchmarkScore]) -> tuple[EvalReport, str]:
    """Build the report plus an aligned text table grouped by domain.

    The average weights benchmarks equally (the arithmetic mean of the
    per-benchmark pass@1 values) and is rounded only for display.
    """
    if not rows:
        raise ValueError("report needs at least one benchmark score")
    average = sum(row.score for row in rows) / len(rows)
    report = EvalReport(per_benchmark=list(rows), average=average)

    in_domain = [r for r in rows if r.name.lower() in IN_DOMAIN_BENCHMARKS]
    out_domain = [r for r in rows if r.name.lower() not in IN_DOMAIN_BENCHMARKS]
    name_width = max(len("Benchmark"), *(len(r.name) for r in rows)) + 2

    lines = [f"{'Benchmark':<{name_width}}{'Items':>7}  {'Protocol':<9} {'Pass@1':>7}"]

    def emit(group: list[BenchmarkScore], label: str) -> None:
        if not group:
            return
        lines.append(f"-- {label} --")
        for row in group:
            items = str(row.items) if row.items is not None else "-"
            proto = row.protocol_mode or "-"
            lines.append(
                f"{row.name:<{name_width}}{items:>7}  {proto:<9} {row.score:>7.1f}"
            )

    emit(in_domain, "In Domain")
    emit(out_domain, "Out of Domain")
    lines.append(f"{'AVG.':<{name_width}}{'':>7}  {'':<9} {average:>7.1f}")
    return report, "\n".join(lines)


def write_report(report: EvalReport, table: str, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_json_dict()
    payload["table"] = table
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
