"""Declarative pipeline configuration.

One JSON document drives a whole run; its digest is embedded in every
manifest's selection_rule so outputs are traceable to the exact settings
that produced them. Credential env vars are referenced by name only; values
are never stored.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .curation import DEFAULT_SIZE_SERIES, FilterPolicy, StageRule
from .errors import DataError
from .inference import (
    DEFAULT_STAGE1_TEMPERATURE,
    DEFAULT_STAGE2_TEMPERATURE,
    MAX_OUTPUT_TOKENS,
    DecodingParams,
    ModelSpec,
)
from .scoring import DEFAULT_LEXICON, DEFAULT_WEIGHTS, Lexicon, ScoreWeights


@dataclass
class PipelineConfig:
    # paths
    problems: Path = Path("problems.jsonl")
    problems_source: str = "unknown"
    benchmarks_dir: Path | None = None
    chains: Path | None = None
    output_dir: Path = Path("out")
    stage1_cassette: Path | None = None
    stage2_cassette: Path | None = None
    eval_cassette: Path | None = None

    # models
    stage1_model: ModelSpec = field(
        default_factory=lambda: ModelSpec(
            model_id="weak-filter",
            endpoint="http://localhost:8000",
            decoding=DecodingParams(temperature=DEFAULT_STAGE1_TEMPERATURE),
        )
    )
    stage2_model: ModelSpec = field(
        default_factory=lambda: ModelSpec(
            model_id="strong-reasoner",
            endpoint="http://localhost:8000",
            decoding=DecodingParams(temperature=DEFAULT_STAGE2_TEMPERATURE),
        )
    )
    eval_model: ModelSpec | None = None

    # knobs
    decontam_n: int = 10
    weights: ScoreWeights = field(default_factory=lambda: DEFAULT_WEIGHTS)
    lexicon: Lexicon = field(default_factory=lambda: DEFAULT_LEXICON)
    filter_policy: FilterPolicy = field(default_factory=FilterPolicy)
    top_k: int = 800
    size_series: tuple[int, ...] = ()
    build_strata: bool = False
    inference_mode: str = "replay"  # replay | record | live
    max_workers: int = 4
    requests_per_minute: int | None = None
    credentials_env: dict[str, str] = field(default_factory=dict)
    evaluator_key: str = "unsupported"

    def to_json_dict(self) -> dict[str, Any]:
        def model_dict(model: ModelSpec | None) -> dict[str, Any] | None:
            if model is None:
                return None
            return {
                "model_id": model.model_id,
                "endpoint": model.endpoint,
                "decoding": model.decoding.as_dict(),
            }

        return {
            "problems": str(self.problems),
            "problems_source": self.problems_source,
            "benchmarks_dir": str(self.benchmarks_dir) if self.benchmarks_dir else None,
            "chains": str(self.chains) if self.chains else None,
            "output_dir": str(self.output_dir),
            "stage1_cassette": str(self.stage1_cassette) if self.stage1_cassette else None,
            "stage2_cassette": str(self.stage2_cassette) if self.stage2_cassette else None,
            "eval_cassette": str(self.eval_cassette) if self.eval_cassette else None,
            "stage1_model": model_dict(self.stage1_model),
            "stage2_model": model_dict(self.stage2_model),
            "eval_model": model_dict(self.eval_model),
            "decontam_n": self.decontam_n,
            "weights": self.weights.as_dict(),
            "lexicon": {
                "verification": self.lexicon.verification,
                "tentative": self.lexicon.tentative,
                "connective": self.lexicon.connective,
            },
            "filter_policy": self.filter_policy.as_dict(),
            "top_k": self.top_k,
            "size_series": list(self.size_series),
            "build_strata": self.build_strata,
            "inference_mode": self.inference_mode,
            "max_workers": self.max_workers,
            "requests_per_minute": self.requests_per_minute,
            "credentials_env": self.credentials_env,
            "evaluator_key": self.evaluator_key,
        }

    def digest(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _parse_model(obj: dict[str, Any] | None, fallback: ModelSpec | None) -> ModelSpec | None:
    if obj is None:
        return fallback
    decoding = obj.get("decoding") or {}
    return ModelSpec(
        model_id=obj["model_id"],
        endpoint=obj.get("endpoint", "http://localhost:8000"),
        decoding=DecodingParams(
            temperature=decoding.get("temperature", 0.0),
            max_tokens=decoding.get("max_tokens", MAX_OUTPUT_TOKENS),
            num_samples=decoding.get("num_samples", 1),
        ),
    )


def _parse_stage_rule(obj: dict[str, Any] | None, fallback: StageRule) -> StageRule:
    if obj is None:
        return fallback
    return StageRule(
        model_id=obj.get("model_id", fallback.model_id),
        attempts=obj.get("attempts", fallback.attempts),
        retain_lo=obj.get("retain_lo", fallback.retain_lo),
        retain_hi=obj.get("retain_hi", fallback.retain_hi),
    )


def load_config(path: Path, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Parse a JSON config file; CLI flag overrides win over file values."""
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict[str, Any], base_dir: Path = Path(".")) -> PipelineConfig:
    def path_or_none(key: str) -> Path | None:
        value = raw.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    defaults = PipelineConfig()
    weights_obj = raw.get("weights") or {}
    lexicon_obj = raw.get("lexicon") or {}
    policy_obj = raw.get("filter_policy") or {}
    try:
        config = PipelineConfig(
            problems=path_or_none("problems") or defaults.problems,
            problems_source=raw.get("problems_source", defaults.problems_source),
            benchmarks_dir=path_or_none("benchmarks_dir"),
            chains=path_or_none("chains"),
            output_dir=path_or_none("output_dir") or defaults.output_dir,
            stage1_cassette=path_or_none("stage1_cassette"),
            stage2_cassette=path_or_none("stage2_cassette"),
            eval_cassette=path_or_none("eval_cassette"),
            stage1_model=_parse_model(raw.get("stage1_model"), defaults.stage1_model),
            stage2_model=_parse_model(raw.get("stage2_model"), defaults.stage2_model),
            eval_model=_parse_model(raw.get("eval_model"), None),
            decontam_n=raw.get("decontam_n", defaults.decontam_n),
            weights=ScoreWeights(**weights_obj) if weights_obj else DEFAULT_WEIGHTS,
            lexicon=Lexicon(**lexicon_obj) if lexicon_obj else DEFAULT_LEXICON,
            filter_policy=FilterPolicy(
                stage1=_parse_stage_rule(policy_obj.get("stage1"), defaults.filter_policy.stage1),
                stage2=_parse_stage_rule(policy_obj.get("stage2"), defaults.filter_policy.stage2),
            ),
            top_k=raw.get("top_k", defaults.top_k),
            size_series=tuple(raw.get("size_series", ())),
            build_strata=raw.get("build_strata", False),
            inference_mode=raw.get("inference_mode", defaults.inference_mode),
            max_workers=raw.get("max_workers", defaults.max_workers),
            requests_per_minute=raw.get("requests_per_minute"),
            credentials_env=raw.get("credentials_env", {}),
            evaluator_key=raw.get("evaluator_key", defaults.evaluator_key),
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid config: {exc}") from exc
    return config


def validate_config(config: PipelineConfig, strict_paths: bool = False) -> list[str]:
    """Return a list of violations; empty means the config is usable."""
    violations: list[str] = []

    weight_sum = sum(config.weights.as_dict().values())
    if abs(weight_sum - 1.0) > 1e-12:
        violations.append(f"weights: must sum to 1, got {weight_sum!r}")

    if config.decontam_n < 1:
        violations.append(f"decontam_n: must be >= 1, got {config.decontam_n}")

    for stage_name, rule in (("stage1", config.filter_policy.stage1),
                             ("stage2", config.filter_policy.stage2)):
        if rule.retain_lo > rule.retain_hi:
            violations.append(
                f"filter_policy.{stage_name}: retain_lo {rule.retain_lo} > retain_hi {rule.retain_hi}"
            )
        elif not 0 <= rule.retain_lo <= rule.retain_hi <= rule.attempts:
            violations.append(
                f"filter_policy.{stage_name}: retain bounds "
                f"({rule.retain_lo}, {rule.retain_hi}) outside [0, {rule.attempts}]"
            )
        if rule.attempts < 1:
            violations.append(f"filter_policy.{stage_name}: attempts must be positive")

    if config.top_k < 1:
        violations.append(f"top_k: must be positive, got {config.top_k}")
    if any(size < 1 for size in config.size_series):
        violations.append("size_series: sizes must be positive")
    if config.inference_mode not in ("replay", "record", "live"):
        violations.append(f"inference_mode: unknown mode {config.inference_mode!r}")
    if config.max_workers < 1:
        violations.append("max_workers: must be positive")

    if strict_paths:
        if not config.problems.exists():
            violations.append(f"problems: path {config.problems} does not exist")
        if config.benchmarks_dir is not None and not config.benchmarks_dir.is_dir():
            violations.append(f"benchmarks_dir: {config.benchmarks_dir} is not a directory")
        if config.inference_mode == "replay":
            for label, cassette in (("stage1_cassette", config.stage1_cassette),
                                    ("stage2_cassette", config.stage2_cassette)):
                if cassette is not None and not cassette.exists():
                    violations.append(f"{label}: cassette {cassette} does not exist")
    return violations
