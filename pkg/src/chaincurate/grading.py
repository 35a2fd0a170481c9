"""Rule-based answer grading and the unbiased pass@k estimator.

Extraction prefers the last boxed expression, then an "answer is" pattern,
then the last standalone number. Normalization parses integers, decimals,
percents, a/b fractions, and \\frac{a}{b} into exact rationals; everything
else falls back to lowercased string comparison. Complex answer formats can
be delegated to a pluggable evaluator; the default stub declines and the
rule-based path decides.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from .corpus import read_jsonl, write_jsonl
from .errors import DataError

GRADING_POLICY_VERSION = "rules-v1"

# Relative tolerance for rational-vs-decimal comparison; rational-vs-rational
# is exact.
DECIMAL_REL_TOL = 1e-6


# ---------------------------------------------------------------------------
# canonical answers


@dataclass(frozen=True)
class CanonicalAnswer:
    """Normalized answer value: exact rational, approximate decimal, or string."""

    kind: str  # rational | decimal | string
    value: Fraction | float | str

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("rational", "decimal")

    def render(self) -> str:
        if self.kind == "rational":
            return str(self.value)
        if self.kind == "decimal":
            return repr(self.value)
        return str(self.value)

    @classmethod
    def rational(cls, value: Fraction) -> "CanonicalAnswer":
        return cls("rational", value)

    @classmethod
    def from_float(cls, value: float) -> "CanonicalAnswer":
        """For values produced by approximate computation, not exact parsing."""
        return cls("decimal", float(value))

    @classmethod
    def string(cls, value: str) -> "CanonicalAnswer":
        return cls("string", value)


_MATH_DELIMS = [("$$", "$$"), ("$", "$"), (r"\(", r"\)"), (r"\[", r"\]")]
_CURRENCY = "$€£¥"
_FRAC_RE = re.compile(r"^([+-])?\\[dt]?frac\{(-?\d+)\}\{(-?\d+)\}$")
_SIMPLE_FRAC_RE = re.compile(r"^[+-]?\d+/\d+$")
_NUMERIC_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_ELLIPSIS_DECIMAL_RE = re.compile(r"^[+-]?\d*\.\d+(\.\.\.|…)$")


def _strip_delimiters(s: str) -> str:
    changed = True
    while changed:
        changed = False
        s = s.strip()
        for open_d, close_d in _MATH_DELIMS:
            if len(s) > len(open_d) + len(close_d) and s.startswith(open_d) and s.endswith(close_d):
                s = s[len(open_d) : -len(close_d)]
                changed = True
        while s and s[0] in _CURRENCY:
            s = s[1:]
            changed = True
        while s.endswith("."):
            # keep decimals like "3." and truncation ellipses like "0.33..."
            if _ELLIPSIS_DECIMAL_RE.match(s):
                break
            if re.search(r"\d\.$", s) and _NUMERIC_RE.match(s):
                break
            s = s[:-1]
            changed = True
    return s.strip()


def normalize_answer(raw: str) -> CanonicalAnswer:
    """Parse a raw answer string into a canonical form.

    Exact parses (integers, decimals, scientific notation, percents, a/b and
    \\frac{a}{b} fractions) become rationals in lowest terms; leading zeros
    are presentation only. A decimal followed by an ellipsis is a truncated
    non-terminating value and becomes an approximate decimal. Anything else
    becomes a lowercased, trimmed string.
    """
    s = _strip_delimiters(raw)

    percent = False
    if s.endswith("%"):
        percent = True
        s = s[:-1].strip()

    numeric = s.replace(",", "") if re.fullmatch(r"[+-]?\d{1,3}(,\d{3})+(\.\d+)?", s) else s

    frac = _FRAC_RE.match(numeric)
    if frac:
        sign = -1 if frac.group(1) == "-" else 1
        num, den = int(frac.group(2)), int(frac.group(3))
        if den != 0:
            value = Fraction(sign * num, den)
            return CanonicalAnswer.rational(value / 100 if percent else value)

    if _SIMPLE_FRAC_RE.match(numeric) and int(numeric.split("/")[1]) != 0:
        value = Fraction(numeric)
        return CanonicalAnswer.rational(value / 100 if percent else value)

    if _NUMERIC_RE.match(numeric):
        value = Fraction(numeric)
        return CanonicalAnswer.rational(value / 100 if percent else value)

    if _ELLIPSIS_DECIMAL_RE.match(numeric):
        digits = numeric.rstrip(".…")
        value = float(digits)
        return CanonicalAnswer.from_float(value / 100 if percent else value)

    text = " ".join(raw.strip().lower().split())
    return CanonicalAnswer.string(text)


def answers_equivalent(a: CanonicalAnswer, b: CanonicalAnswer) -> bool:
    """Exact rational equality; 1e-6 relative tolerance once a decimal is
    involved; exact string equality; numeric never equals string."""
    if a.kind == "rational" and b.kind == "rational":
        return a.value == b.value
    if a.is_numeric and b.is_numeric:
        return math.isclose(float(a.value), float(b.value), rel_tol=DECIMAL_REL_TOL)
    if a.kind == "string" and b.kind == "string":
        return a.value == b.value
    return False


# ---------------------------------------------------------------------------
# final-answer extraction

_BOX_TAGS = ("\\boxed", "\\fbox")
_ANSWER_PATTERN = re.compile(
    r"(?:answer|result)\s*(?:is|equals|:|=)\s*([^\n]+?)(?:\.\s|\.$|$)",
    re.IGNORECASE | re.MULTILINE,
)
_NUMBER_PATTERN = re.compile(
    r"(?<![0-9A-Za-z_.])[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?%?(?![0-9A-Za-z_])"
)


def _extract_boxed(text: str) -> str | None:
    candidates = []
    for tag in _BOX_TAGS:
        candidates.extend((m.start(), m.end()) for m in re.finditer(re.escape(tag), text))
    for _, end in sorted(candidates, reverse=True):
        i = end
        while i < len(text) and text[i].isspace():
            i += 1
        if i >= len(text) or text[i] != "{":
            continue
        depth = 1
        i += 1
        start = i
        while i < len(text):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    content = text[start:i].strip()
                    if content:
                        return content
                    break
            i += 1
    return None


def extract_final_answer(text: str) -> str | None:
    """Pull the model's final answer out of a chain of thought, or None."""
    if not text:
        return None
    boxed = _extract_boxed(text)
    if boxed is not None:
        return boxed
    stated = _ANSWER_PATTERN.findall(text)
    if stated:
        candidate = stated[-1].strip()
        if candidate:
            return candidate
    numbers = _NUMBER_PATTERN.findall(text)
    if numbers:
        return numbers[-1]
    return None


# ---------------------------------------------------------------------------
# pluggable complex-format evaluator

# (question, gold, candidate) -> verdict, or None when the format is unsupported
ComplexEvaluator = Callable[[str, str, str], Optional[bool]]


def unsupported_evaluator(question: str, gold: str, candidate: str) -> Optional[bool]:
    """Default stub: declines every item so the rule-based path decides."""
    return None


_EVALUATORS: dict[str, ComplexEvaluator] = {"unsupported": unsupported_evaluator}


def register_evaluator(key: str, evaluator: ComplexEvaluator) -> None:
    _EVALUATORS[key] = evaluator


def get_evaluator(key: str) -> ComplexEvaluator:
    try:
        return _EVALUATORS[key]
    except KeyError:
        raise ValueError(f"unknown complex-format evaluator {key!r}") from None


def grade_answer(
    candidate: str | None,
    gold: str,
    question: str = "",
    evaluator: ComplexEvaluator | None = None,
) -> bool:
    """Grade an extracted answer against the ground truth.

    Numeric pairs are decided by the rule-based path. Non-numeric pairs are
    offered to the complex-format evaluator first; when it declines (returns
    None) the normalized string comparison decides. A missing candidate
    grades incorrect, never errors.
    """
    if candidate is None:
        return False
    cand = normalize_answer(candidate)
    truth = normalize_answer(gold)
    if cand.is_numeric and truth.is_numeric:
        return answers_equivalent(cand, truth)
    if evaluator is not None:
        verdict = evaluator(question, gold, candidate)
        if verdict is not None:
            return verdict
    return answers_equivalent(cand, truth)


def grade_chain(
    chain_text: str,
    gold: str,
    question: str = "",
    evaluator: ComplexEvaluator | None = None,
) -> bool:
    """Grade a full chain of thought: extract, normalize, compare."""
    return grade_answer(extract_final_answer(chain_text), gold, question, evaluator)


# ---------------------------------------------------------------------------
# pass@k


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k estimate: 1 - C(n-c, k) / C(n, k).

    Evaluated with exact integer binomials, so there is no overflow or
    intermediate rounding; k=1 reduces to exactly c/n.
    """
    if not 0 <= c <= n:
        raise ValueError(f"successes c={c} must satisfy 0 <= c <= n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must satisfy 1 <= k <= n={n}")
    return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))


# ---------------------------------------------------------------------------
# pass-rate records


@dataclass
class PassRateRecord:
    """Per-problem probe outcome: n sampled attempts, c graded correct."""

    problem_id: str
    model_id: str
    n: int
    c: int
    per_sample: list[tuple[int, bool]]

    def __post_init__(self) -> None:
        if self.n != len(self.per_sample):
            raise DataError(
                f"record {self.problem_id}: n={self.n} != {len(self.per_sample)} samples"
            )
        correct = sum(1 for _, ok in self.per_sample if ok)
        if self.c != correct:
            raise DataError(
                f"record {self.problem_id}: c={self.c} != {correct} correct flags"
            )

    @classmethod
    def from_flags(
        cls, problem_id: str, model_id: str, flags: Iterable[bool]
    ) -> "PassRateRecord":
        per_sample = [(i, bool(ok)) for i, ok in enumerate(flags)]
        return cls(
            problem_id=problem_id,
            model_id=model_id,
            n=len(per_sample),
            c=sum(1 for _, ok in per_sample if ok),
            per_sample=per_sample,
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "model_id": self.model_id,
            "n": self.n,
            "c": self.c,
            "per_sample": [[i, ok] for i, ok in self.per_sample],
        }


def write_pass_records(path: Path, records: Iterable[PassRateRecord]) -> int:
    return write_jsonl(path, (r.to_json_dict() for r in records))


def read_pass_records(path: Path) -> list[PassRateRecord]:
    records = []
    for obj in read_jsonl(path):
        records.append(
            PassRateRecord(
                problem_id=obj["problem_id"],
                model_id=obj["model_id"],
                n=obj["n"],
                c=obj["c"],
                per_sample=[(int(i), bool(ok)) for i, ok in obj["per_sample"]],
            )
        )
    return records
