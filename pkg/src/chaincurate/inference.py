"""Model inference with deterministic record/replay cassettes.

Every request is fingerprinted by (model_id, prompt, decoding, sample_index);
a cassette maps fingerprints to completions so the whole pipeline replays
bit-identically offline. The live client speaks a chat-completions-style HTTP
JSON API with bounded retries, exponential backoff, and a per-minute request
budget.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Problem, ReasoningChain, read_jsonl, write_jsonl
from .errors import DataError, UpstreamError
from .grading import PassRateRecord, extract_final_answer, grade_chain

MAX_OUTPUT_TOKENS = 32768

# Fixed probing/eval prompt; changing it changes every request fingerprint.
PROMPT_TEMPLATE = (
    "{statement}\n\n"
    "Please reason step by step, and put your final answer within \\boxed{{}}."
)

# Placeholder text for a sample that exhausted its retries; extraction finds
# no answer in it, so it always grades incorrect downstream.
FAILED_COMPLETION_TEXT = "[no completion: request failed after retries]"

DEFAULT_STAGE1_TEMPERATURE = 0.7
DEFAULT_STAGE2_TEMPERATURE = 0.6


class AuthError(UpstreamError):
    """Endpoint rejected our credentials; never retried."""


class RequestFailedError(UpstreamError):
    """A request failed permanently after bounded retries."""


class ReplayMissError(UpstreamError):
    """Strict replay was asked for a fingerprint the cassette does not hold."""


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: int = MAX_OUTPUT_TOKENS
    num_samples: int = 1

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.max_tokens <= MAX_OUTPUT_TOKENS:
            raise ValueError(f"max_tokens must be in (0, {MAX_OUTPUT_TOKENS}]")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")

    def as_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "num_samples": self.num_samples,
        }


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    endpoint: str
    decoding: DecodingParams = field(default_factory=DecodingParams)

    def with_decoding(self, decoding: DecodingParams) -> "ModelSpec":
        return replace(self, decoding=decoding)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


def request_fingerprint(
    model_id: str, prompt: str, decoding: DecodingParams, sample_index: int
) -> str:
    payload = json.dumps(
        {
            "model_id": model_id,
            "prompt": prompt,
            "decoding": decoding.as_dict(),
            "sample_index": sample_index,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionRequest:
    model: ModelSpec
    prompt: str
    sample_index: int = 0

    @property
    def fingerprint(self) -> str:
        return request_fingerprint(
            self.model.model_id, self.prompt, self.model.decoding, self.sample_index
        )


@dataclass
class CassetteEntry:
    fingerprint: str
    model_id: str
    prompt_digest: str
    sample_index: int
    completion: str

    def to_json_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "model_id": self.model_id,
            "prompt_digest": self.prompt_digest,
            "sample_index": self.sample_index,
            "completion": self.completion,
        }


@dataclass
class Cassette:
    """Recorded completions keyed by request fingerprint."""

    entries: dict[str, CassetteEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self.entries

    def get(self, fingerprint: str) -> CassetteEntry | None:
        return self.entries.get(fingerprint)

    def add(self, request: CompletionRequest, completion: str) -> CassetteEntry:
        entry = CassetteEntry(
            fingerprint=request.fingerprint,
            model_id=request.model.model_id,
            prompt_digest=prompt_digest(request.prompt),
            sample_index=request.sample_index,
            completion=completion,
        )
        self.entries[entry.fingerprint] = entry
        return entry

    def save(self, path: Path) -> None:
        write_jsonl(path, (e.to_json_dict() for e in self.entries.values()))

    @classmethod
    def load(cls, path: Path) -> "Cassette":
        cassette = cls()
        for obj in read_jsonl(path):
            entry = CassetteEntry(
                fingerprint=obj["fingerprint"],
                model_id=obj["model_id"],
                prompt_digest=obj["prompt_digest"],
                sample_index=int(obj["sample_index"]),
                completion=obj["completion"],
            )
            cassette.entries[entry.fingerprint] = entry
        return cassette


class InferenceClient(Protocol):
    def complete(self, request: CompletionRequest) -> str:
        ...


class ReplayClient:
    """Serves completions from a cassette; pure given its inputs."""

    def __init__(self, cassette: Cassette, strict: bool = True):
        self.cassette = cassette
        self.strict = strict
        self.request_count = 0
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self.request_count += 1
        entry = self.cassette.get(request.fingerprint)
        if entry is None:
            if self.strict:
                raise ReplayMissError(
                    f"cassette has no entry for fingerprint {request.fingerprint} "
                    f"(model={request.model.model_id}, sample={request.sample_index})"
                )
            raise RequestFailedError("replay miss in non-strict mode")
        return entry.completion


class RateLimiter:
    """Serializes request starts to respect a per-minute budget."""

    def __init__(self, requests_per_minute: int | None):
        self._interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def acquire(self) -> None:
        if self._interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self._interval
        if wait > 0:
            time.sleep(wait)


class LiveClient:
    """HTTP client for a chat-completions-style endpoint.

    Retries transient failures (HTTP 429/5xx, timeouts, connection errors)
    with exponential backoff; auth failures are fatal immediately.
    """

    RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}

    def __init__(
        self,
        api_key_env: str | None = None,
        api_path: str = "/v1/chat/completions",
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        requests_per_minute: int | None = None,
        sleep=time.sleep,
    ):
        self.api_key_env = api_key_env
        self.api_path = api_path
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.request_count = 0
        self._limiter = RateLimiter(requests_per_minute)
        self._sleep = sleep
        self._lock = threading.Lock()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise AuthError(f"credential env var {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, url: str, body: dict) -> dict:
        import requests

        try:
            response = requests.post(
                url, json=body, headers=self._headers(), timeout=self.timeout
            )
        except requests.Timeout as exc:
            raise TimeoutError(str(exc)) from exc
        except requests.ConnectionError as exc:
            raise ConnectionError(str(exc)) from exc
        if response.status_code in (401, 403):
            raise AuthError(f"endpoint returned {response.status_code}")
        if response.status_code in self.RETRYABLE_STATUS:
            raise ConnectionError(f"retryable status {response.status_code}")
        if response.status_code != 200:
            raise RequestFailedError(
                f"endpoint returned {response.status_code}: {response.text[:200]}"
            )
        return response.json()

    def complete(self, request: CompletionRequest) -> str:
        model = request.model
        url = model.endpoint.rstrip("/") + self.api_path
        body = {
            "model": model.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": model.decoding.temperature,
            "max_tokens": model.decoding.max_tokens,
            "n": 1,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            self._limiter.acquire()
            with self._lock:
                self.request_count += 1
            try:
                payload = self._post(url, body)
                return payload["choices"][0]["message"]["content"]
            except (TimeoutError, ConnectionError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    delay = min(self.backoff_base * (2**attempt), self.backoff_cap)
                    self._sleep(delay)
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise RequestFailedError(f"malformed completion payload: {exc}") from exc
        raise RequestFailedError(
            f"request failed after {self.max_retries + 1} attempts: {last_error}"
        )


class RecordingClient:
    """Passes requests to a live client and captures them into a cassette."""

    def __init__(self, live: InferenceClient, cassette: Cassette | None = None):
        self.live = live
        self.cassette = cassette if cassette is not None else Cassette()
        self.request_count = 0

    def complete(self, request: CompletionRequest) -> str:
        entry = self.cassette.get(request.fingerprint)
        if entry is not None:
            return entry.completion
        self.request_count += 1
        completion = self.live.complete(request)
        self.cassette.add(request, completion)
        return completion


def record_cassette(
    requests: Iterable[CompletionRequest], live: InferenceClient
) -> Cassette:
    """Issue every request through the live client and store the completions."""
    recorder = RecordingClient(live)
    for request in requests:
        recorder.complete(request)
    return recorder.cassette


def build_probe_request(
    problem: Problem, model: ModelSpec, sample_index: int, template: str = PROMPT_TEMPLATE
) -> CompletionRequest:
    return CompletionRequest(
        model=model,
        prompt=template.format(statement=problem.statement),
        sample_index=sample_index,
    )


def sample_solutions(
    problem: Problem,
    model: ModelSpec,
    attempts: int,
    client: InferenceClient,
    template: str = PROMPT_TEMPLATE,
) -> list[ReasoningChain]:
    """Sample exactly `attempts` solution chains for one problem.

    A sample whose request fails permanently yields an explicit failed-chain
    placeholder (graded incorrect downstream), never a silent gap. Replay
    misses in strict mode and auth failures stay fatal.
    """
    if attempts < 1:
        raise ValueError("attempts must be positive")
    chains = []
    for sample_index in range(attempts):
        request = build_probe_request(problem, model, sample_index, template)
        try:
            text = client.complete(request)
        except (AuthError, ReplayMissError):
            raise
        except (RequestFailedError, TimeoutError, ConnectionError):
            text = FAILED_COMPLETION_TEXT
        chains.append(
            ReasoningChain(
                problem_id=problem.id,
                generator=model.model_id,
                text=text,
                extracted_answer=extract_final_answer(text),
                sample_index=sample_index,
            )
        )
    return chains


@dataclass
class ProbeResult:
    records: list[PassRateRecord]
    chains: list[ReasoningChain]


def probe_problems(
    problems: Sequence[Problem],
    model: ModelSpec,
    attempts: int,
    client: InferenceClient,
    max_workers: int = 1,
    keep_chains: bool = True,
) -> ProbeResult:
    """Sample and grade `attempts` solutions per problem.

    Work may run concurrently, but outputs follow input problem order, never
    completion order.
    """

    def probe_one(problem: Problem) -> tuple[PassRateRecord, list[ReasoningChain]]:
        chains = sample_solutions(problem, model, attempts, client)
        flags = [grade_chain(chain.text, problem.answer) for chain in chains]
        record = PassRateRecord.from_flags(problem.id, model.model_id, flags)
        return record, chains

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(probe_one, problems))
    else:
        outcomes = [probe_one(problem) for problem in problems]

    records = [record for record, _ in outcomes]
    chains: list[ReasoningChain] = []
    if keep_chains:
        for _, problem_chains in outcomes:
            chains.extend(problem_chains)
    return ProbeResult(records=records, chains=chains)


def open_client(
    mode: str,
    cassette_path: Path | None,
    api_key_env: str | None = None,
    requests_per_minute: int | None = None,
) -> InferenceClient:
    """Resolve an inference client for replay, record, or live mode."""
    if mode == "replay":
        if cassette_path is None or not cassette_path.exists():
            raise DataError(f"replay mode needs an existing cassette, got {cassette_path}")
        return ReplayClient(Cassette.load(cassette_path))
    live = LiveClient(api_key_env=api_key_env, requests_per_minute=requests_per_minute)
    if mode == "record":
        cassette = (
            Cassette.load(cassette_path)
            if cassette_path is not None and cassette_path.exists()
            else Cassette()
        )
        return RecordingClient(live, cassette)
    if mode == "live":
        return live
    raise ValueError(f"unknown inference mode {mode!r}")
