"""N-gram decontamination of candidate problems against evaluation benchmarks.

Word-level token n-grams (default n=10) over normalized text; benchmark
questions shorter than n tokens fall back to whole-sequence exact match so
they stay protectable.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable

from .corpus import BenchmarkSet, Problem
from .textnorm import normalize_text

DEFAULT_NGRAM_ORDER = 10


@dataclass
class NgramMatch:
    benchmark: str
    item_id: str
    ngram: str

    def to_json_dict(self) -> dict[str, str]:
        return {"benchmark": self.benchmark, "item_id": self.item_id, "ngram": self.ngram}


@dataclass
class ContaminationReport:
    problem_id: str
    matches: list[NgramMatch]

    @property
    def verdict(self) -> str:
        return "contaminated" if self.matches else "clean"

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "verdict": self.verdict,
            "matches": [m.to_json_dict() for m in self.matches],
        }


@dataclass
class NgramIndex:
    """Inverted index from n-gram key to the benchmark items containing it.

    entries keys are exactly n tokens (space-joined); short_entries hold the
    whole-sequence keys of questions shorter than n tokens.
    """

    n: int
    entries: dict[str, set[tuple[str, str]]] = field(default_factory=dict)
    short_entries: dict[str, set[tuple[str, str]]] = field(default_factory=dict)
    stats: dict[str, int] = field(default_factory=dict)


def _windows(tokens: list[str], n: int) -> Iterable[str]:
    for i in range(len(tokens) - n + 1):
        yield " ".join(tokens[i : i + n])


def build_ngram_index(benchmarks: list[BenchmarkSet], n: int = DEFAULT_NGRAM_ORDER) -> NgramIndex:
    """Index every length-n token window of every benchmark question."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    if not benchmarks:
        raise ValueError("at least one benchmark is required")
    entries: dict[str, set[tuple[str, str]]] = defaultdict(set)
    short_entries: dict[str, set[tuple[str, str]]] = defaultdict(set)
    stats: dict[str, int] = {}
    for bench in benchmarks:
        stats[bench.name] = len(bench.items)
        for item in bench.items:
            tokens = normalize_text(item.question)
            if not tokens:
                continue
            if len(tokens) < n:
                short_entries[" ".join(tokens)].add((bench.name, item.id))
            else:
                for window in _windows(tokens, n):
                    entries[window].add((bench.name, item.id))
    return NgramIndex(n=n, entries=dict(entries), short_entries=dict(short_entries), stats=stats)


def check_statement(statement: str, index: NgramIndex) -> list[NgramMatch]:
    """All distinct benchmark matches for one problem statement."""
    tokens = normalize_text(statement)
    hits: dict[tuple[str, str, str], NgramMatch] = {}
    for window in _windows(tokens, index.n):
        for bench, item_id in index.entries.get(window, ()):
            hits.setdefault((bench, item_id, window), NgramMatch(bench, item_id, window))
    whole = " ".join(tokens)
    for bench, item_id in index.short_entries.get(whole, ()):
        hits.setdefault((bench, item_id, whole), NgramMatch(bench, item_id, whole))
    return list(hits.values())


def decontaminate(
    problems: list[Problem], index: NgramIndex
) -> tuple[list[Problem], list[ContaminationReport]]:
    """Partition problems into clean survivors and per-problem reports.

    A problem is contaminated iff its normalized statement contains any
    indexed n-gram or equals a short whole-sequence key. Input order is
    preserved on both outputs; one report is emitted per input problem.
    """
    clean: list[Problem] = []
    reports: list[ContaminationReport] = []
    for problem in problems:
        matches = check_statement(problem.statement, index)
        reports.append(ContaminationReport(problem_id=problem.id, matches=matches))
        if not matches:
            clean.append(problem)
    return clean, reports
