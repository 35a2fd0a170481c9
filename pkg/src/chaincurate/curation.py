"""Filtration and selection: pass-rate difficulty filters, best-chain
selection, top-k assembly, size series, difficulty strata, and training
config emission.

Stage 1 drops anything the weak model solved within 4 sampled attempts;
stage 2 keeps problems the strong model solved in 1-3 of 32 attempts.
Problems without a usable pass record are routed to a pending list, never
silently retained or dropped.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

from .corpus import DatasetManifest, ManifestMember, Problem
from .grading import PassRateRecord
from .scoring import QualityScore

LEARNING_RATE = 5.0e-6
LR_SCHEDULE = "cosine"
EPOCHS = 15
BATCH_SIZE = 64
MAX_SEQUENCE_LENGTH = 16384

DEFAULT_SIZE_SERIES = (400, 800, 1200, 1600, 2000)

# difficulty_meta key stage 2 writes its success count under
SUCCESS_COUNT_KEY = "success_count"


@dataclass(frozen=True)
class StageRule:
    """Retain a problem iff retain_lo <= c <= retain_hi over `attempts` samples.

    Construction does not validate, so config checking can report bad bounds
    as violations; filters validate at the point of use.
    """

    model_id: str
    attempts: int
    retain_lo: int
    retain_hi: int

    def validate(self) -> None:
        if not 0 <= self.retain_lo <= self.retain_hi <= self.attempts:
            raise ValueError(
                f"retain bounds ({self.retain_lo}, {self.retain_hi}) must satisfy "
                f"0 <= lo <= hi <= attempts={self.attempts}"
            )

    def retains(self, c: int) -> bool:
        return self.retain_lo <= c <= self.retain_hi

    def as_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "attempts": self.attempts,
            "retain_lo": self.retain_lo,
            "retain_hi": self.retain_hi,
        }


def default_stage1_rule(model_id: str = "weak-filter") -> StageRule:
    # survive only when none of the 4 attempts was solved
    return StageRule(model_id=model_id, attempts=4, retain_lo=0, retain_hi=0)


def default_stage2_rule(model_id: str = "strong-reasoner") -> StageRule:
    return StageRule(model_id=model_id, attempts=32, retain_lo=1, retain_hi=3)


@dataclass(frozen=True)
class FilterPolicy:
    stage1: StageRule = field(default_factory=default_stage1_rule)
    stage2: StageRule = field(default_factory=default_stage2_rule)

    def as_dict(self) -> dict[str, Any]:
        return {"stage1": self.stage1.as_dict(), "stage2": self.stage2.as_dict()}


@dataclass
class FilterOutcome:
    """Partition of the input: survivors + excluded + pending == input count."""

    survivors: list[Problem]
    excluded: list[Problem]
    pending: list[Problem]
    errors: list[tuple[str, str]]  # (problem_id, message) for invalid records

    @property
    def counts(self) -> dict[str, int]:
        return {
            "survivors": len(self.survivors),
            "excluded": len(self.excluded),
            "pending": len(self.pending),
        }


def _as_record_map(
    records: Mapping[str, PassRateRecord] | Iterable[PassRateRecord],
) -> dict[str, PassRateRecord]:
    if isinstance(records, Mapping):
        return dict(records)
    return {record.problem_id: record for record in records}


def apply_pass_rate_filter(
    problems: Sequence[Problem],
    records: Mapping[str, PassRateRecord] | Iterable[PassRateRecord],
    rule: StageRule,
    annotate_success_count: bool = False,
) -> FilterOutcome:
    """Apply one difficulty-filter stage, preserving input order.

    A problem with no record, or a record whose attempt count does not match
    the rule, goes to pending (with an error entry in the mismatch case).
    """
    rule.validate()
    record_map = _as_record_map(records)
    outcome = FilterOutcome(survivors=[], excluded=[], pending=[], errors=[])
    for problem in problems:
        record = record_map.get(problem.id)
        if record is None:
            outcome.pending.append(problem)
            continue
        if record.n != rule.attempts:
            outcome.errors.append(
                (problem.id, f"record has n={record.n}, rule expects {rule.attempts}")
            )
            outcome.pending.append(problem)
            continue
        if rule.retains(record.c):
            survivor = problem
            if annotate_success_count:
                meta = dict(problem.difficulty_meta)
                meta[SUCCESS_COUNT_KEY] = record.c
                survivor = replace(problem, difficulty_meta=meta)
            outcome.survivors.append(survivor)
        else:
            outcome.excluded.append(problem)
    return outcome


def stage1_filter(
    problems: Sequence[Problem],
    records: Mapping[str, PassRateRecord] | Iterable[PassRateRecord],
    rule: StageRule | None = None,
) -> FilterOutcome:
    """Coarse filter: survive only problems the weak model never solved."""
    return apply_pass_rate_filter(problems, records, rule or default_stage1_rule())


def stage2_filter(
    problems: Sequence[Problem],
    records: Mapping[str, PassRateRecord] | Iterable[PassRateRecord],
    rule: StageRule | None = None,
) -> FilterOutcome:
    """Fine filter: retain problems solved in 1-3 of 32 attempts, annotating
    each survivor's success count as a difficulty indicator."""
    return apply_pass_rate_filter(
        problems, records, rule or default_stage2_rule(), annotate_success_count=True
    )


# ---------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class SelectedPair:
    problem_id: str
    chain_id: str
    total: float

    def to_json_dict(self) -> dict[str, Any]:
        return {"problem_id": self.problem_id, "chain_id": self.chain_id, "total": self.total}


@dataclass
class SelectionResult:
    pairs: list[SelectedPair]
    gaps: list[str]  # problem ids with zero scored chains


def select_best_chain_per_problem(
    scores: Iterable[QualityScore],
    expected_problem_ids: Iterable[str] | None = None,
) -> SelectionResult:
    """Keep the highest-total chain per problem (ties to the smaller chain_id).

    Problems in expected_problem_ids with no scored chain are reported as
    gaps. Pairs come back ranked by (total desc, chain_id asc).
    """
    best: dict[str, QualityScore] = {}
    for score in scores:
        current = best.get(score.problem_id)
        if (
            current is None
            or score.total > current.total
            or (score.total == current.total and score.chain_id < current.chain_id)
        ):
            best[score.problem_id] = score
    pairs = [
        SelectedPair(problem_id=s.problem_id, chain_id=s.chain_id, total=s.total)
        for s in best.values()
    ]
    pairs.sort(key=lambda p: (-p.total, p.chain_id))
    gaps = []
    if expected_problem_ids is not None:
        gaps = [pid for pid in expected_problem_ids if pid not in best]
    return SelectionResult(pairs=pairs, gaps=gaps)


def _rank_pairs(pairs: Sequence[SelectedPair]) -> list[SelectedPair]:
    return sorted(pairs, key=lambda p: (-p.total, p.chain_id))


def _pairs_to_members(pairs: Sequence[SelectedPair]) -> list[ManifestMember]:
    return [
        ManifestMember(problem_id=p.problem_id, chain_id=p.chain_id, total_score=p.total)
        for p in pairs
    ]


def assemble_topk(
    pairs: Sequence[SelectedPair],
    k: int,
    name: str | None = None,
    selection_rule: dict[str, Any] | None = None,
) -> DatasetManifest:
    """Manifest of the k highest-scoring pairs under the deterministic ranking."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k > len(pairs):
        raise ValueError(f"k={k} exceeds available pairs ({len(pairs)})")
    ranked = _rank_pairs(pairs)[:k]
    rule = {
        "rule": "top_k",
        "k": k,
        "tie_break": "chain_id_asc",
        "pool_size": len(pairs),
    }
    if selection_rule:
        rule.update(selection_rule)
    return DatasetManifest.build(
        name=name or f"top{k}",
        selection_rule=rule,
        members=_pairs_to_members(ranked),
    )


def build_size_series(
    pairs: Sequence[SelectedPair],
    sizes: Sequence[int] = DEFAULT_SIZE_SERIES,
    name_prefix: str = "subset",
    selection_rule: dict[str, Any] | None = None,
) -> list[DatasetManifest]:
    """Nested top-k manifests at each size; prefixes of one fixed ranking."""
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if max(sizes) > len(pairs):
        raise ValueError(f"largest size {max(sizes)} exceeds available pairs ({len(pairs)})")
    return [
        assemble_topk(pairs, size, name=f"{name_prefix}-{size}", selection_rule=selection_rule)
        for size in sorted(sizes)
    ]


# ---------------------------------------------------------------------------
# difficulty strata


@dataclass(frozen=True)
class StrataSpec:
    simple_levels: frozenset[int] = frozenset({1, 2})
    complex_levels: frozenset[int] = frozenset({3, 4, 5})
    advanced_source_prefix: str = "aime"
    size_per_stratum: int = 500


def classify_stratum(problem: Problem, spec: StrataSpec) -> str | None:
    """Strata are disjoint by construction: source decides advanced first,
    then the MATH level decides simple vs complex."""
    if problem.source.lower().startswith(spec.advanced_source_prefix):
        return "advanced"
    level = problem.difficulty_meta.get("math_level")
    if isinstance(level, int):
        if level in spec.simple_levels:
            return "simple"
        if level in spec.complex_levels:
            return "complex"
    return None


def build_difficulty_strata(
    problems: Sequence[Problem],
    pairs: Sequence[SelectedPair],
    spec: StrataSpec = StrataSpec(),
    selection_rule: dict[str, Any] | None = None,
) -> dict[str, DatasetManifest]:
    """Simple/Complex/Advanced manifests of size_per_stratum problems each,
    picked by best-chain score within the stratum."""
    pair_by_problem = {p.problem_id: p for p in pairs}
    buckets: dict[str, list[SelectedPair]] = {"simple": [], "complex": [], "advanced": []}
    for problem in problems:
        stratum = classify_stratum(problem, spec)
        if stratum is None:
            continue
        pair = pair_by_problem.get(problem.id)
        if pair is not None:
            buckets[stratum].append(pair)
    manifests = {}
    for stratum, bucket in buckets.items():
        if len(bucket) < spec.size_per_stratum:
            raise ValueError(
                f"stratum {stratum!r} underfilled: need {spec.size_per_stratum}, "
                f"have {len(bucket)}"
            )
        rule = {"rule": f"{stratum}_stratum", "size": spec.size_per_stratum}
        if selection_rule:
            rule.update(selection_rule)
        manifests[stratum] = assemble_topk(
            bucket,
            spec.size_per_stratum,
            name=f"{stratum}-{spec.size_per_stratum}",
            selection_rule=rule,
        )
    return manifests


# ---------------------------------------------------------------------------
# ablation helper: problems with several scored chains (seedable)


def select_multi_chain_problems(
    scores: Iterable[QualityScore],
    count: int,
    min_chains: int = 2,
    seed: int = 0,
) -> list[str]:
    """Seeded sample of problems that have at least min_chains scored chains."""
    per_problem: dict[str, int] = {}
    for score in scores:
        per_problem[score.problem_id] = per_problem.get(score.problem_id, 0) + 1
    eligible = sorted(pid for pid, n in per_problem.items() if n >= min_chains)
    if count > len(eligible):
        raise ValueError(
            f"requested {count} multi-chain problems, only {len(eligible)} eligible"
        )
    rng = random.Random(seed)
    return sorted(rng.sample(eligible, count))


# ---------------------------------------------------------------------------
# training config


def emit_training_config(
    manifest: DatasetManifest,
    base_model_id: str,
    dataset_path: str | None = None,
) -> dict[str, Any]:
    """Fine-tuning recipe document for a selected dataset."""
    return {
        "base_model": base_model_id,
        "dataset_name": manifest.name,
        "dataset_path": dataset_path,
        "dataset_content_hash": manifest.content_hash,
        "dataset_size": len(manifest.members),
        "learning_rate": LEARNING_RATE,
        "lr_schedule": LR_SCHEDULE,
        "warmup": "none",
        "epochs": EPOCHS,
        "batch_size": BATCH_SIZE,
        "max_sequence_length": MAX_SEQUENCE_LENGTH,
    }
