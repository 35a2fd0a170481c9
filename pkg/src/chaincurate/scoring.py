"""Rule-based reasoning-chain quality scoring.

Four dimensions per chain: elaboration (token length), verification,
exploration, and granularity (keyword hits per token for three lexicon
lists). Each raw dimension is min-max normalized over the scoring pool so a
length and three rates become commensurable, then combined with weights
0.30/0.20/0.25/0.25. Also buckets scored chains into five quality levels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .corpus import ReasoningChain
from .textnorm import normalize_phrase, normalize_text

WEIGHT_TOLERANCE = 1e-12

# Norm value assigned to every chain on a dimension with zero spread.
ZERO_SPREAD_NORM = 0.5

QUALITY_LEVEL_COUNT = 5


@dataclass(frozen=True)
class ScoreWeights:
    elaboration: float = 0.30
    verification: float = 0.20
    exploration: float = 0.25
    granularity: float = 0.25

    def validate(self) -> None:
        total = self.elaboration + self.verification + self.exploration + self.granularity
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"score weights must sum to 1, got {total!r}")

    def as_dict(self) -> dict[str, float]:
        return {
            "elaboration": self.elaboration,
            "verification": self.verification,
            "exploration": self.exploration,
            "granularity": self.granularity,
        }


DEFAULT_WEIGHTS = ScoreWeights()


@dataclass
class Lexicon:
    """Keyword phrases for the three rate dimensions, stored pre-normalized."""

    verification: list[str] = field(
        default_factory=lambda: ["check", "verify", "confirm", "validate", "re-check"]
    )
    tentative: list[str] = field(
        default_factory=lambda: [
            "perhaps", "might", "maybe", "possibly", "alternatively", "suppose", "could",
        ]
    )
    connective: list[str] = field(
        default_factory=lambda: [
            "therefore", "since", "thus", "hence", "because", "consequently",
        ]
    )

    def __post_init__(self) -> None:
        for name in ("verification", "tentative", "connective"):
            phrases = getattr(self, name)
            if not phrases:
                raise ValueError(f"lexicon list {name!r} must be non-empty")

    def phrase_tokens(self, name: str) -> list[tuple[str, ...]]:
        return [normalize_phrase(p) for p in getattr(self, name) if normalize_phrase(p)]

    def digest(self) -> str:
        payload = json.dumps(
            {
                "verification": self.verification,
                "tentative": self.tentative,
                "connective": self.connective,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


DEFAULT_LEXICON = Lexicon()


@dataclass(frozen=True)
class Dimensions:
    """One value per scoring dimension; raw or normalized depending on context."""

    elaboration: float
    verification: float
    exploration: float
    granularity: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.elaboration, self.verification, self.exploration, self.granularity)

    def as_dict(self) -> dict[str, float]:
        return {
            "elaboration": self.elaboration,
            "verification": self.verification,
            "exploration": self.exploration,
            "granularity": self.granularity,
        }


@dataclass
class QualityScore:
    chain_id: str
    problem_id: str
    raw: Dimensions
    norm: Dimensions
    total: float
    pool_id: str

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "chain_id": self.chain_id,
            "problem_id": self.problem_id,
            "raw": self.raw.as_dict(),
            "norm": self.norm.as_dict(),
            "total": self.total,
            "pool_id": self.pool_id,
        }


@dataclass
class QualityLevel:
    level: str  # L1 (lowest) .. L5 (highest)
    members: list[str]  # chain ids in rank order


def count_phrase_hits(tokens: Sequence[str], phrases: Iterable[tuple[str, ...]]) -> int:
    """Non-overlapping occurrences of each phrase as a contiguous token run.

    Counts are per phrase and then summed, so hits of different phrases may
    share tokens.
    """
    total = 0
    for phrase in phrases:
        width = len(phrase)
        if width == 0:
            continue
        i = 0
        while i + width <= len(tokens):
            if tuple(tokens[i : i + width]) == phrase:
                total += 1
                i += width
            else:
                i += 1
    return total


def raw_dimensions(chain: ReasoningChain, lexicon: Lexicon) -> Dimensions:
    """Token length plus hits-per-token rates for the three keyword lists."""
    tokens = normalize_text(chain.text)
    length = len(tokens)
    if length == 0:
        raise ValueError(f"chain {chain.id}: no tokens after normalization")
    return Dimensions(
        elaboration=float(length),
        verification=count_phrase_hits(tokens, lexicon.phrase_tokens("verification")) / length,
        exploration=count_phrase_hits(tokens, lexicon.phrase_tokens("tentative")) / length,
        granularity=count_phrase_hits(tokens, lexicon.phrase_tokens("connective")) / length,
    )


def _minmax_scale(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [ZERO_SPREAD_NORM] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def score_pool(
    chains: Sequence[ReasoningChain],
    lexicon: Lexicon = DEFAULT_LEXICON,
    weights: ScoreWeights = DEFAULT_WEIGHTS,
    pool_id: str = "pool",
) -> list[QualityScore]:
    """Score every chain in a normalization pool.

    Raw dimensions are min-max scaled per dimension across the pool; a
    dimension with zero spread contributes the neutral 0.5 to every chain.
    Output order matches input order.
    """
    if not chains:
        raise ValueError("scoring pool must be non-empty")
    weights.validate()
    raws = [raw_dimensions(chain, lexicon) for chain in chains]
    columns = list(zip(*(r.as_tuple() for r in raws)))
    scaled = [_minmax_scale(list(col)) for col in columns]
    scores = []
    for idx, chain in enumerate(chains):
        norm = Dimensions(
            elaboration=scaled[0][idx],
            verification=scaled[1][idx],
            exploration=scaled[2][idx],
            granularity=scaled[3][idx],
        )
        total = (
            weights.elaboration * norm.elaboration
            + weights.verification * norm.verification
            + weights.exploration * norm.exploration
            + weights.granularity * norm.granularity
        )
        scores.append(
            QualityScore(
                chain_id=chain.id,
                problem_id=chain.problem_id,
                raw=raws[idx],
                norm=norm,
                total=total,
                pool_id=pool_id,
            )
        )
    return scores


def bucket_quality_levels(scores: Sequence[QualityScore]) -> list[QualityLevel]:
    """Split scored chains into equal-frequency quality levels L1..L5.

    Chains are ranked by (total desc, chain_id asc); when the pool does not
    divide evenly the extra members go to the highest levels. Returned in
    L1..L5 order with L5 holding the top scorers.
    """
    if len(scores) < QUALITY_LEVEL_COUNT:
        raise ValueError(
            f"need at least {QUALITY_LEVEL_COUNT} scored chains, got {len(scores)}"
        )
    ranked = sorted(scores, key=lambda s: (-s.total, s.chain_id))
    base, remainder = divmod(len(ranked), QUALITY_LEVEL_COUNT)
    levels: list[QualityLevel] = []
    cursor = 0
    # walk from L5 (top of the ranking) down to L1
    for slot in range(QUALITY_LEVEL_COUNT):
        size = base + (1 if slot < remainder else 0)
        chunk = ranked[cursor : cursor + size]
        cursor += size
        levels.append(
            QualityLevel(
                level=f"L{QUALITY_LEVEL_COUNT - slot}",
                members=[s.chain_id for s in chunk],
            )
        )
    levels.reverse()
    return levels


def write_scores(path, scores: Iterable[QualityScore]) -> int:
    from .corpus import write_jsonl

    return write_jsonl(path, (s.to_json_dict() for s in scores))


def read_scores(path) -> list[QualityScore]:
    from .corpus import read_jsonl

    scores = []
    for obj in read_jsonl(path):
        scores.append(
            QualityScore(
                chain_id=obj["chain_id"],
                problem_id=obj["problem_id"],
                raw=Dimensions(**obj["raw"]),
                norm=Dimensions(**obj["norm"]),
                total=obj["total"],
                pool_id=obj["pool_id"],
            )
        )
    return scores
