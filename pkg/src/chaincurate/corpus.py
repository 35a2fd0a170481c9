"""Canonical data model and JSONL persistence for all pipeline records.

One JSON object per line throughout; ingestion is streaming, order-preserving,
and collects malformed lines into a rejects report instead of dropping them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

from .errors import DataError
from .textnorm import normalize_text

LineSource = Union[str, Path, Iterable[str]]


class ManifestCorruptionError(DataError):
    """Manifest content hash does not match its member list."""


# ---------------------------------------------------------------------------
# domain types


@dataclass
class Problem:
    """One question with its ground-truth answer and provenance metadata."""

    id: str
    statement: str
    answer: str
    source: str
    difficulty_meta: dict[str, Any] = field(default_factory=dict)
    language: str = "en"

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "statement": self.statement,
            "answer": self.answer,
            "source": self.source,
            "language": self.language,
        }
        if self.difficulty_meta:
            out["difficulty_meta"] = self.difficulty_meta
        return out


@dataclass
class ReasoningChain:
    """One candidate solution text for a problem.

    token_count is the shared normalize_text token length; it is computed at
    construction when the source record does not carry one. sample_index tags
    which sampled attempt produced the chain, when known.
    """

    problem_id: str
    generator: str
    text: str
    extracted_answer: str | None = None
    token_count: int | None = None
    id: str | None = None
    sample_index: int | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise DataError("reasoning chain text must be non-empty")
        if self.token_count is None:
            self.token_count = len(normalize_text(self.text))
        if self.id is None:
            self.id = synthesize_chain_id(self.problem_id, self.generator, self.text)

    def to_json_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "problem_id": self.problem_id,
            "generator": self.generator,
            "text": self.text,
            "extracted_answer": self.extracted_answer,
            "token_count": self.token_count,
        }
        if self.sample_index is not None:
            out["sample_index"] = self.sample_index
        return out


@dataclass
class BenchmarkItem:
    id: str
    question: str
    answer: str


@dataclass
class BenchmarkSet:
    """A named evaluation benchmark; size drives the eval protocol choice."""

    name: str
    items: list[BenchmarkItem]

    @property
    def size(self) -> int:
        return len(self.items)


@dataclass
class ManifestMember:
    problem_id: str
    chain_id: str
    total_score: float


@dataclass
class DatasetManifest:
    """Reproducible description of a selected dataset.

    Members are ordered by descending total_score with the tie-break declared
    in selection_rule; content_hash fingerprints the ordered member list.
    """

    name: str
    selection_rule: dict[str, Any]
    members: list[ManifestMember]
    content_hash: str

    @classmethod
    def build(
        cls, name: str, selection_rule: dict[str, Any], members: list[ManifestMember]
    ) -> "DatasetManifest":
        manifest = cls(
            name=name,
            selection_rule=selection_rule,
            members=list(members),
            content_hash=manifest_content_hash(members),
        )
        manifest.validate()
        return manifest

    def validate(self) -> None:
        expected = manifest_content_hash(self.members)
        if expected != self.content_hash:
            raise ManifestCorruptionError(
                f"manifest {self.name!r}: content hash {self.content_hash} "
                f"does not match members ({expected})"
            )
        totals = [m.total_score for m in self.members]
        if any(a < b for a, b in zip(totals, totals[1:])):
            raise DataError(f"manifest {self.name!r}: members not in descending score order")

    @property
    def member_ids(self) -> list[str]:
        return [m.problem_id for m in self.members]


@dataclass
class RejectedLine:
    line_no: int
    reason: str
    raw: str

    def to_json_dict(self) -> dict[str, Any]:
        return {"line_no": self.line_no, "reason": self.reason, "raw": self.raw}


@dataclass
class IngestResult:
    """Accepted records plus the per-line rejects report."""

    records: list
    rejects: list[RejectedLine]

    @property
    def accepted(self) -> int:
        return len(self.records)

    @property
    def rejected(self) -> int:
        return len(self.rejects)


# ---------------------------------------------------------------------------
# id synthesis and hashing


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def synthesize_problem_id(source: str, statement: str) -> str:
    """Stable id for problems whose source data carries none."""
    return _digest(source, statement)[:16]


def synthesize_chain_id(problem_id: str, generator: str, text: str) -> str:
    return _digest(problem_id, generator, text)[:16]


def manifest_content_hash(members: Iterable[ManifestMember]) -> str:
    """Digest over the canonical serialization of the ordered member list."""
    h = hashlib.sha256()
    for m in members:
        line = json.dumps(
            [m.problem_id, m.chain_id, m.total_score], separators=(",", ":")
        )
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# line streaming


def iter_lines(stream: LineSource) -> Iterator[tuple[int, str]]:
    """Yield (line_no, line) pairs; blank lines are skipped, not counted.

    Accepts a path, a multi-line string, or any iterable of lines.
    """
    if isinstance(stream, Path):
        try:
            lines: Iterable[str] = stream.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"unreadable stream {stream}: {exc}") from exc
    elif isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = stream
    line_no = 0
    for raw in lines:
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        line_no += 1
        yield line_no, line


def _parse_json_line(line: str) -> dict[str, Any] | None:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


# ---------------------------------------------------------------------------
# ingestion


def ingest_problems(stream: LineSource, source: str) -> IngestResult:
    """Ingest problems.jsonl records, synthesizing ids when absent.

    Malformed lines (bad JSON, missing statement/answer, duplicate id) become
    rejects citing the line number; accepted + rejected == input line count.
    """
    problems: list[Problem] = []
    rejects: list[RejectedLine] = []
    seen_ids: set[str] = set()
    for line_no, line in iter_lines(stream):
        obj = _parse_json_line(line)
        if obj is None:
            rejects.append(RejectedLine(line_no, "invalid json object", line))
            continue
        missing = [key for key in ("statement", "answer") if not obj.get(key)]
        if missing:
            rejects.append(
                RejectedLine(line_no, f"missing required field: {missing[0]}", line)
            )
            continue
        record_source = obj.get("source") or source
        pid = obj.get("id") or synthesize_problem_id(record_source, obj["statement"])
        if pid in seen_ids:
            rejects.append(RejectedLine(line_no, f"duplicate id: {pid}", line))
            continue
        seen_ids.add(pid)
        problems.append(
            Problem(
                id=str(pid),
                statement=obj["statement"],
                answer=str(obj["answer"]),
                source=record_source,
                difficulty_meta=obj.get("difficulty_meta") or {},
                language=obj.get("language", "en"),
            )
        )
    return IngestResult(records=problems, rejects=rejects)


def ingest_chains(stream: LineSource) -> IngestResult:
    """Ingest chains.jsonl records; token_count and id are filled in when absent."""
    chains: list[ReasoningChain] = []
    rejects: list[RejectedLine] = []
    for line_no, line in iter_lines(stream):
        obj = _parse_json_line(line)
        if obj is None:
            rejects.append(RejectedLine(line_no, "invalid json object", line))
            continue
        missing = [key for key in ("problem_id", "text") if not obj.get(key)]
        if missing:
            rejects.append(
                RejectedLine(line_no, f"missing required field: {missing[0]}", line)
            )
            continue
        chains.append(
            ReasoningChain(
                problem_id=str(obj["problem_id"]),
                generator=str(obj.get("generator", "unknown")),
                text=obj["text"],
                extracted_answer=obj.get("extracted_answer"),
                token_count=obj.get("token_count"),
                id=obj.get("id"),
                sample_index=obj.get("sample_index"),
            )
        )
    return IngestResult(records=chains, rejects=rejects)


def ingest_benchmark(stream: LineSource, name: str) -> BenchmarkSet:
    """Ingest benchmark.jsonl; benchmarks are small and curated, so malformed
    or duplicate items are fatal rather than rejected."""
    items: list[BenchmarkItem] = []
    seen: set[str] = set()
    for line_no, line in iter_lines(stream):
        obj = _parse_json_line(line)
        if obj is None:
            raise DataError(f"benchmark {name!r} line {line_no}: invalid json")
        if not obj.get("question"):
            raise DataError(f"benchmark {name!r} line {line_no}: missing question")
        item_id = str(obj.get("id") or line_no)
        if item_id in seen:
            raise DataError(f"benchmark {name!r} line {line_no}: duplicate id {item_id}")
        seen.add(item_id)
        items.append(
            BenchmarkItem(id=item_id, question=obj["question"], answer=str(obj.get("answer", "")))
        )
    if not items:
        raise DataError(f"benchmark {name!r} is empty; protocol selection needs a size")
    return BenchmarkSet(name=name, items=items)


# ---------------------------------------------------------------------------
# jsonl persistence


def write_jsonl(path: Path, records: Iterable[dict[str, Any]]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_jsonl(path: Path) -> Iterator[dict[str, Any]]:
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_problems(path: Path, problems: Iterable[Problem]) -> int:
    return write_jsonl(path, (p.to_json_dict() for p in problems))


def read_problems(path: Path) -> list[Problem]:
    result = ingest_problems(path, source="unknown")
    if result.rejects:
        first = result.rejects[0]
        raise DataError(f"{path} line {first.line_no}: {first.reason}")
    return result.records


def write_chains(path: Path, chains: Iterable[ReasoningChain]) -> int:
    return write_jsonl(path, (c.to_json_dict() for c in chains))


def read_chains(path: Path) -> list[ReasoningChain]:
    result = ingest_chains(path)
    if result.rejects:
        first = result.rejects[0]
        raise DataError(f"{path} line {first.line_no}: {first.reason}")
    return result.records


def read_benchmark_dir(directory: Path) -> list[BenchmarkSet]:
    """Load every *.jsonl file in a directory as a benchmark named by its stem."""
    benchmarks = []
    for path in sorted(directory.glob("*.jsonl")):
        benchmarks.append(ingest_benchmark(path, name=path.stem))
    return benchmarks


# ---------------------------------------------------------------------------
# manifest persistence


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    manifest.validate()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "name": manifest.name,
            "selection_rule": manifest.selection_rule,
            "content_hash": manifest.content_hash,
        }
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for m in manifest.members:
            fh.write(
                json.dumps(
                    {
                        "problem_id": m.problem_id,
                        "chain_id": m.chain_id,
                        "total_score": m.total_score,
                    }
                )
                + "\n"
            )


def read_manifest(path: Path) -> DatasetManifest:
    """Read a manifest, recomputing and verifying its content hash."""
    lines = list(iter_lines(path))
    if not lines:
        raise DataError(f"manifest file {path} is empty")
    header = _parse_json_line(lines[0][1])
    if header is None or "content_hash" not in header:
        raise DataError(f"manifest file {path}: malformed header")
    members = []
    for line_no, line in lines[1:]:
        obj = _parse_json_line(line)
        if obj is None:
            raise DataError(f"manifest file {path} line {line_no}: malformed member")
        members.append(
            ManifestMember(
                problem_id=obj["problem_id"],
                chain_id=obj["chain_id"],
                total_score=obj["total_score"],
            )
        )
    manifest = DatasetManifest(
        name=header.get("name", path.stem),
        selection_rule=header.get("selection_rule", {}),
        members=members,
        content_hash=header["content_hash"],
    )
    manifest.validate()
    return manifest
