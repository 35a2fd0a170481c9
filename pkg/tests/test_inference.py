import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from chaincurate.corpus import Problem
from chaincurate.errors import DataError
from chaincurate.inference import (
    FAILED_COMPLETION_TEXT,
    AuthError,
    Cassette,
    CompletionRequest,
    DecodingParams,
    LiveClient,
    ModelSpec,
    RecordingClient,
    ReplayClient,
    ReplayMissError,
    RequestFailedError,
    build_probe_request,
    open_client,
    probe_problems,
    record_cassette,
    request_fingerprint,
    sample_solutions,
)

MODEL = ModelSpec(model_id="probe-model", endpoint="http://localhost:9", decoding=DecodingParams(temperature=0.7))


def make_problem(pid="p1", statement="Compute 2 + 2.", answer="4"):
    return Problem(id=pid, statement=statement, answer=answer, source="synthetic")


def fill_cassette(problem, model, attempts, completion_fn):
    cassette = Cassette()
    for i in range(attempts):
        request = build_probe_request(problem, model, i)
        cassette.add(request, completion_fn(i))
    return cassette


def test_replay_32_attempts_deterministic():
    problem = make_problem()
    cassette = fill_cassette(problem, MODEL, 32, lambda i: f"Attempt {i}: \\boxed{{4}}")
    client = ReplayClient(cassette)
    first = sample_solutions(problem, MODEL, 32, client)
    second = sample_solutions(problem, MODEL, 32, ReplayClient(cassette))
    assert len(first) == 32
    assert [c.text for c in first] == [c.text for c in second]
    assert [c.sample_index for c in first] == list(range(32))
    assert all(c.extracted_answer == "4" for c in first)


def test_replay_miss_fatal_in_strict_mode():
    problem = make_problem()
    cassette = fill_cassette(problem, MODEL, 2, lambda i: "ok")
    client = ReplayClient(cassette, strict=True)
    with pytest.raises(ReplayMissError):
        sample_solutions(problem, MODEL, 4, client)


def test_replay_miss_nonstrict_yields_failed_placeholder():
    problem = make_problem()
    cassette = fill_cassette(problem, MODEL, 3, lambda i: f"fine \\boxed{{4}}")
    client = ReplayClient(cassette, strict=False)
    chains = sample_solutions(problem, MODEL, 4, client)
    assert len(chains) == 4
    assert chains[3].text == FAILED_COMPLETION_TEXT
    assert chains[3].extracted_answer is None


def test_fingerprint_distinguishes_sample_index_and_decoding():
    fp = lambda idx, temp: request_fingerprint("m", "prompt", DecodingParams(temperature=temp), idx)
    assert fp(0, 0.6) != fp(1, 0.6)
    assert fp(0, 0.6) != fp(0, 0.7)
    assert fp(0, 0.6) == fp(0, 0.6)


def test_cassette_roundtrip(tmp_path):
    problem = make_problem()
    cassette = fill_cassette(problem, MODEL, 3, lambda i: f"text {i}")
    path = tmp_path / "run.jsonl"
    cassette.save(path)
    loaded = Cassette.load(path)
    assert len(loaded) == 3
    for fp, entry in cassette.entries.items():
        assert loaded.entries[fp] == entry


class ScriptedClient:
    """Returns canned completions, raising scripted failures first."""

    def __init__(self, script):
        self.script = dict(script)
        self.request_count = 0

    def complete(self, request):
        self.request_count += 1
        action = self.script.get(request.sample_index, "ok")
        if action == "fail":
            raise RequestFailedError("permanent timeout")
        return f"completion {request.sample_index}: \\boxed{{4}}"


def test_permanent_failure_yields_placeholder_not_gap():
    problem = make_problem()
    chains = sample_solutions(problem, MODEL, 4, ScriptedClient({2: "fail"}))
    assert len(chains) == 4
    assert chains[2].text == FAILED_COMPLETION_TEXT
    assert [c.sample_index for c in chains] == [0, 1, 2, 3]


def test_record_then_replay_reproduces_completions():
    problem = make_problem()
    requests = [build_probe_request(problem, MODEL, i) for i in range(3)]
    live = ScriptedClient({})
    cassette = record_cassette(requests, live)
    assert len(cassette) == 3
    replay = ReplayClient(cassette)
    for request in requests:
        assert replay.complete(request) == live.complete(request)


def test_record_num_samples_two_distinct_fingerprints():
    problem = make_problem()
    requests = [build_probe_request(problem, MODEL, i) for i in range(2)]
    cassette = record_cassette(requests, ScriptedClient({}))
    assert len(cassette.entries) == 2


def test_probe_grades_and_counts_requests():
    problems = [make_problem(f"p{i}", f"Compute {i} + 1.", str(i + 1)) for i in range(5)]
    cassette = Cassette()
    for j, problem in enumerate(problems):
        for i in range(4):
            # plant: problem j answers correctly on samples < j
            answer = str(j + 1) if i < j else "wrong"
            cassette.add(build_probe_request(problem, MODEL, i), f"I think \\boxed{{{answer}}}")
    client = ReplayClient(cassette)
    result = probe_problems(problems, MODEL, 4, client)
    assert [r.c for r in result.records] == [0, 1, 2, 3, 4]
    assert client.request_count == 4 * len(problems)
    assert len(result.chains) == 4 * len(problems)
    # concurrent probing aggregates by problem order, not completion order
    threaded = probe_problems(problems, MODEL, 4, ReplayClient(cassette), max_workers=4)
    assert [r.to_json_dict() for r in threaded.records] == [
        r.to_json_dict() for r in result.records
    ]


def test_open_client_replay_requires_cassette(tmp_path):
    with pytest.raises(DataError):
        open_client("replay", tmp_path / "missing.jsonl")
    with pytest.raises(ValueError):
        open_client("bogus", None)


# ---------------------------------------------------------------------------
# live client against a local HTTP stub


class StubHandler(BaseHTTPRequestHandler):
    fail_next = 0
    auth_required = None
    calls = 0

    def do_POST(self):
        StubHandler.calls += 1
        if StubHandler.auth_required:
            if self.headers.get("Authorization") != f"Bearer {StubHandler.auth_required}":
                self.send_response(401)
                self.end_headers()
                return
        if StubHandler.fail_next > 0:
            StubHandler.fail_next -= 1
            self.send_response(503)
            self.end_headers()
            return
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        completion = f"echo:{body['messages'][0]['content'][:20]}"
        payload = json.dumps({"choices": [{"message": {"content": completion}}]})
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(payload.encode())

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    StubHandler.fail_next = 0
    StubHandler.auth_required = None
    StubHandler.calls = 0
    server = HTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def live_model(endpoint):
    return ModelSpec(model_id="live-model", endpoint=endpoint, decoding=DecodingParams(temperature=0.0))


def test_live_client_happy_path(stub_server):
    client = LiveClient(max_retries=1, sleep=lambda s: None)
    request = CompletionRequest(model=live_model(stub_server), prompt="Hello compute")
    assert client.complete(request).startswith("echo:")


def test_live_client_retries_transient_503(stub_server):
    StubHandler.fail_next = 2
    client = LiveClient(max_retries=3, sleep=lambda s: None)
    request = CompletionRequest(model=live_model(stub_server), prompt="retry me")
    assert client.complete(request).startswith("echo:")
    assert StubHandler.calls == 3


def test_live_client_exhausts_retries(stub_server):
    StubHandler.fail_next = 10
    client = LiveClient(max_retries=2, sleep=lambda s: None)
    request = CompletionRequest(model=live_model(stub_server), prompt="always fails")
    with pytest.raises(RequestFailedError):
        client.complete(request)
    assert StubHandler.calls == 3


def test_live_client_auth_failure_fatal(stub_server, monkeypatch):
    StubHandler.auth_required = "secret"
    monkeypatch.setenv("STUB_KEY", "wrong")
    client = LiveClient(api_key_env="STUB_KEY", max_retries=3, sleep=lambda s: None)
    request = CompletionRequest(model=live_model(stub_server), prompt="auth")
    with pytest.raises(AuthError):
        client.complete(request)
    assert StubHandler.calls == 1  # never retried


def test_live_client_missing_credential_env(stub_server, monkeypatch):
    monkeypatch.delenv("STUB_KEY", raising=False)
    client = LiveClient(api_key_env="STUB_KEY")
    request = CompletionRequest(model=live_model(stub_server), prompt="auth")
    with pytest.raises(AuthError):
        client.complete(request)


def test_recording_via_live_stub_then_replay(stub_server, tmp_path):
    model = live_model(stub_server)
    recorder = RecordingClient(LiveClient(sleep=lambda s: None))
    problem = make_problem()
    live_chains = sample_solutions(problem, model, 2, recorder)
    path = tmp_path / "cassette.jsonl"
    recorder.cassette.save(path)
    replayed = sample_solutions(problem, model, 2, ReplayClient(Cassette.load(path)))
    assert [c.text for c in replayed] == [c.text for c in live_chains]


def test_decoding_param_validation():
    with pytest.raises(ValueError):
        DecodingParams(temperature=-0.1)
    with pytest.raises(ValueError):
        DecodingParams(max_tokens=0)
    with pytest.raises(ValueError):
        DecodingParams(max_tokens=40000)
    with pytest.raises(ValueError):
        DecodingParams(num_samples=0)
