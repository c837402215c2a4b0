import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import numpy as np
import pytest

from courtsim.errors import BackendError, BackendUnavailable, ScriptExhausted
from courtsim.llm_gateway import CallLog, Gateway, GenerationRequest, HttpBackend, MockBackend, make_backend


def req(role="adjudicator", agent_id="1", rnd=1, **kw):
    return GenerationRequest("sys", "user", "m", role=role, agent_id=agent_id, round=rnd, **kw)


def chat_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def http_backend(handler, **kw):
    sleeps = []
    backend = HttpBackend(
        "http://llm.test", "secret", transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw
    )
    return backend, sleeps


# -- requests -----------------------------------------------------------------


def test_request_validation():
    with pytest.raises(ValueError):
        GenerationRequest("s", "", "m")
    with pytest.raises(ValueError):
        GenerationRequest("s", "u", "m", temperature=2.5)
    with pytest.raises(ValueError):
        GenerationRequest("s", "u", "m", max_tokens=0)
    assert req().key == "adjudicator:1:1"


# -- mock backend ---------------------------------------------------------------


def test_mock_exact_key_wins_over_wildcards():
    gw = Gateway(MockBackend({"adjudicator:1:1": "exact", "adjudicator:*:1": "round", "default": "d"}))
    assert gw.generate(req()).text == "exact"
    assert gw.generate(req(agent_id="2")).text == "round"
    assert gw.generate(req(role="judge", agent_id="judge", rnd=0)).text == "d"


def test_mock_agent_wildcard_and_run_prefix():
    script = {"adjudicator:3:*": "three", "run2/adjudicator:*:*": "second run", "adjudicator:*:*": "base"}
    assert Gateway(MockBackend(script)).generate(req(agent_id="3", rnd=4)).text == "three"
    assert Gateway(MockBackend(script, run_index=2)).generate(req(agent_id="3")).text == "second run"
    assert Gateway(MockBackend(script, run_index=1)).generate(req(agent_id="1")).text == "base"


def test_mock_missing_key_raises_and_logs():
    gw = Gateway(MockBackend({}))
    with pytest.raises(ScriptExhausted):
        gw.generate(req())
    (record,) = gw.call_log.records()
    assert not record.ok and record.error


def test_mock_rejects_non_string_values():
    with pytest.raises(ValueError):
        MockBackend({"default": 3})


def test_mock_is_deterministic():
    a = Gateway(MockBackend({"default": "same"}))
    b = Gateway(MockBackend({"default": "same"}))
    assert a.generate(req()).text == b.generate(req()).text
    assert np.array_equal(a.embed("knife"), b.embed("knife"))


def test_empty_text_is_logged_as_warning():
    gw = Gateway(MockBackend({"default": ""}))
    assert gw.generate(req()).text == ""
    (record,) = gw.call_log.records()
    assert record.ok and record.warning


# -- http backend ---------------------------------------------------------------


def test_wire_payload_and_auth():
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(200, json=chat_body("hello"))

    backend, _ = http_backend(handler)
    gw = Gateway(backend)
    resp = gw.generate(req(seed=7, temperature=0.3, max_tokens=50))
    assert resp.text == "hello" and resp.attempts == 1
    (r,) = seen
    assert r.url.path == "/v1/chat/completions"
    assert r.headers["Authorization"] == "Bearer secret"
    body = json.loads(r.content)
    assert body["model"] == "m"
    assert body["temperature"] == 0.3 and body["max_tokens"] == 50 and body["seed"] == 7
    assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "user"}]
    assert gw.backend_id == "http:http://llm.test"


def test_seed_omitted_when_none():
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        return httpx.Response(200, json=chat_body("x"))

    Gateway(http_backend(handler)[0]).generate(req())
    assert "seed" not in bodies[0]


def test_three_500s_become_unavailable_with_attempts_logged():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500, text="boom")

    backend, sleeps = http_backend(handler)
    gw = Gateway(backend)
    with pytest.raises(BackendUnavailable) as exc:
        gw.generate(req())
    assert exc.value.attempts == 3 and len(calls) == 3
    assert sleeps == [0.5, 1.0]
    (record,) = gw.call_log.records()
    assert record.attempts == 3 and not record.ok


def test_retry_then_success():
    statuses = iter([503, 429, 200])

    def handler(request):
        status = next(statuses)
        return httpx.Response(status, json=chat_body("finally") if status == 200 else {})

    gw = Gateway(http_backend(handler)[0])
    resp = gw.generate(req())
    assert resp.text == "finally" and resp.attempts == 3
    assert gw.call_log.records()[0].attempts == 3


def test_connection_error_is_retried():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    with pytest.raises(BackendUnavailable):
        Gateway(http_backend(handler)[0]).generate(req())


def test_client_error_fails_immediately():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad request")

    with pytest.raises(BackendError) as exc:
        Gateway(http_backend(handler)[0]).generate(req())
    assert exc.value.status == 400 and len(calls) == 1


def test_malformed_body_is_backend_error():
    gw = Gateway(http_backend(lambda r: httpx.Response(200, json={"nope": 1}))[0])
    with pytest.raises(BackendError):
        gw.generate(req())


def test_embeddings_are_normalized():
    def handler(request):
        assert request.url.path == "/v1/embeddings"
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0]}]})

    gw = Gateway(http_backend(handler)[0])
    vec = gw.embed("knife", "emb-model")
    assert np.allclose(vec, [0.6, 0.8])
    assert gw.embedder("emb-model").identity == "openai-compatible:emb-model"
    assert gw.call_log.records()[0].kind == "embed"


def test_zero_embedding_rejected():
    gw = Gateway(http_backend(lambda r: httpx.Response(200, json={"data": [{"embedding": [0.0, 0.0]}]}))[0])
    with pytest.raises(Exception):
        gw.embed("x")


def test_make_backend_reads_environment(monkeypatch):
    monkeypatch.setenv("LLM_BASE_URL", "http://env.test/")
    backend = make_backend("http")
    assert backend.backend_id == "http:http://env.test"
    monkeypatch.delenv("LLM_BASE_URL")
    with pytest.raises(ValueError):
        make_backend("http")
    with pytest.raises(ValueError):
        make_backend("carrier-pigeon")


# -- call log -------------------------------------------------------------------


def test_call_log_counts_every_call_under_threads():
    gw = Gateway(MockBackend({"default": "ok"}))
    threads = [threading.Thread(target=lambda i=i: gw.generate(req(agent_id=str(i)))) for i in range(40)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    records = gw.call_log.records()
    assert len(records) == 40
    assert sorted(r.seq for r in records) == list(range(40))
    assert len(gw.call_log.latencies()) == 40
    assert all(r.latency_ms >= 0 for r in records)


def test_call_log_shared_between_gateways():
    log = CallLog()
    Gateway(MockBackend({"default": "a"}), log).generate(req())
    Gateway(MockBackend({"default": "b"}), log).embed("text")
    assert [r["kind"] for r in log.to_list()] == ["generate", "embed"]


# -- real socket ----------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    failures_left = 1

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if type(self).failures_left:
            type(self).failures_left -= 1
            self.send_response(502)
            self.end_headers()
            return
        payload = json.dumps(chat_body("echo " + body["messages"][-1]["content"])).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def test_local_http_server_round_trip():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        backend = HttpBackend(f"http://127.0.0.1:{server.server_port}", sleep=lambda s: None, timeout=5)
        resp = Gateway(backend).generate(req())
        assert resp.text == "echo user" and resp.attempts == 2
        backend.close()
    finally:
        server.shutdown()
