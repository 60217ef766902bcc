"""Provider behavior: mocks, retries against a stub server, cache, ledger."""

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from citing.errors import ProviderError
from citing.ledger import RunLedger
from citing.providers import (
    ChatMessage,
    ChatRequest,
    EmbeddingVector,
    HttpChatProvider,
    HttpEmbeddingProvider,
    MockChatProvider,
    MockEmbeddingProvider,
    ResponseCache,
    user_request,
)


def req(content: str, **kw) -> ChatRequest:
    return user_request("test-model", content, **kw)


class TestChatRequest:
    def test_rejects_empty_messages(self):
        with pytest.raises(ProviderError):
            ChatRequest(model_name="m", messages=())

    def test_rejects_non_user_tail(self):
        with pytest.raises(ProviderError):
            ChatRequest(model_name="m", messages=(ChatMessage("assistant", "hi"),))

    def test_rejects_bad_role(self):
        with pytest.raises(ProviderError):
            ChatMessage("robot", "hi")


class TestEmbeddingVector:
    def test_dimension_must_match_length(self):
        with pytest.raises(ProviderError):
            EmbeddingVector(values=(1.0, 2.0), dimension=3)

    def test_rejects_non_finite(self):
        with pytest.raises(ProviderError):
            EmbeddingVector.of([1.0, float("nan")])


class TestMockChat:
    def test_scripted_lookup(self):
        provider = MockChatProvider(script={"ping": "pong"}, fallback="error")
        assert provider.chat(req("ping")) == "pong"

    def test_scripted_missing_is_error(self):
        provider = MockChatProvider(script={"ping": "pong"}, fallback="error")
        with pytest.raises(ProviderError, match="no scripted response"):
            provider.chat(req("other"))

    def test_hash_fallback_is_deterministic(self):
        provider = MockChatProvider()
        first = provider.chat(req("hello"))
        second = provider.chat(req("hello"))
        assert first == second
        assert first.startswith("mock:")

    def test_hash_fallback_varies_with_model(self):
        provider = MockChatProvider()
        a = provider.chat(user_request("model-a", "hello"))
        b = provider.chat(user_request("model-b", "hello"))
        assert a != b

    def test_transform_sees_request(self):
        provider = MockChatProvider(transform=lambda r: r.user_content.upper())
        assert provider.chat(req("shout")) == "SHOUT"


class TestMockEmbeddings:
    def test_same_text_same_vector(self):
        provider = MockEmbeddingProvider(dimension=16)
        a, b = provider.embed(["alpha", "alpha"])
        assert a == b

    def test_batch_alignment_and_dimension(self):
        provider = MockEmbeddingProvider(dimension=8)
        vectors = provider.embed(["one", "two", "three"])
        assert len(vectors) == 3
        assert {v.dimension for v in vectors} == {8}
        assert vectors[0] != vectors[1]

    def test_unit_norm(self):
        provider = MockEmbeddingProvider(dimension=24)
        for vector in provider.embed(["x", "y", "a longer text"]):
            norm = math.sqrt(math.fsum(v * v for v in vector.values))
            assert abs(norm - 1.0) <= 1e-9

    def test_rejects_empty_batch_and_empty_text(self):
        provider = MockEmbeddingProvider()
        with pytest.raises(ProviderError):
            provider.embed([])
        with pytest.raises(ProviderError):
            provider.embed(["ok", ""])


class _ScriptedHandler(BaseHTTPRequestHandler):
    """Fails with 500 for the first N requests, then answers properly."""

    failures_remaining = 0
    chat_reply = "stub reply"

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        cls = type(self)
        if cls.failures_remaining > 0:
            cls.failures_remaining -= 1
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"boom")
            return
        if self.path.endswith("/chat/completions"):
            payload = {"choices": [{"message": {"content": cls.chat_reply}}]}
        elif self.path.endswith("/embeddings"):
            payload = {
                "data": [
                    {"index": i, "embedding": [float(i + 1), 0.5]}
                    for i in range(len(body.get("input", [])))
                ]
            }
        else:
            self.send_response(404)
            self.end_headers()
            return
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _ScriptedHandler.failures_remaining = 0
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpChat:
    def test_two_failures_then_success_shows_three_attempts(self, stub_server, tmp_path):
        _ScriptedHandler.failures_remaining = 2
        ledger = RunLedger(tmp_path / "ledger.jsonl")
        provider = HttpChatProvider(
            "m", base_url=stub_server, ledger=ledger, max_attempts=4, backoff_seconds=0.01
        )
        assert provider.chat(req("hi")) == "stub reply"
        [event] = ledger.events("chat")
        assert event["attempts"] == 3

    def test_retries_exhausted(self, stub_server):
        _ScriptedHandler.failures_remaining = 99
        provider = HttpChatProvider("m", base_url=stub_server, max_attempts=2, backoff_seconds=0.01)
        with pytest.raises(ProviderError, match="after 2 attempts"):
            provider.chat(req("hi"))

    def test_embeddings_are_order_aligned(self, stub_server):
        provider = HttpEmbeddingProvider("m", base_url=stub_server)
        vectors = provider.embed(["a", "b"])
        assert vectors[0].values[0] == 1.0
        assert vectors[1].values[0] == 2.0

    def test_connection_refused_is_retried_then_fails(self):
        provider = HttpChatProvider(
            "m", base_url="http://127.0.0.1:9", max_attempts=2, backoff_seconds=0.01
        )
        with pytest.raises(ProviderError, match="after 2 attempts"):
            provider.chat(req("hi"))


class _CountingMock(MockChatProvider):
    def __init__(self, **kw):
        super().__init__(**kw)
        self.calls = 0

    def _complete(self, request):
        self.calls += 1
        return super()._complete(request)


class TestCache:
    def test_identical_request_hits_cache_once_upstream(self, tmp_path):
        cache = ResponseCache(tmp_path / "cache")
        provider = _CountingMock(cache=cache)
        first = provider.chat(req("hello"))
        second = provider.chat(req("hello"))
        assert first == second
        assert provider.calls == 1

    def test_temperature_is_part_of_the_key(self, tmp_path):
        cache = ResponseCache(tmp_path / "cache")
        provider = _CountingMock(cache=cache)
        provider.chat(req("hello", temperature=0.0))
        provider.chat(req("hello", temperature=0.7))
        assert provider.calls == 2

    def test_corrupt_entry_treated_as_miss_and_overwritten(self, tmp_path):
        cache = ResponseCache(tmp_path / "cache")
        provider = _CountingMock(cache=cache)
        provider.chat(req("hello"))
        key = cache.chat_key(provider.backend_id, req("hello"))
        entry = cache._path(key)
        entry.write_text("{ not json")
        answer = provider.chat(req("hello"))
        assert provider.calls == 2
        assert json.loads(entry.read_text())["response"] == answer

    def test_cache_equals_no_cache_for_deterministic_backend(self, tmp_path):
        bare = MockChatProvider()
        cached = MockChatProvider(cache=ResponseCache(tmp_path / "cache"))
        for content in ("a", "b", "a"):
            assert bare.chat(req(content)) == cached.chat(req(content))

    def test_ledger_records_cache_status(self, tmp_path):
        ledger = RunLedger(tmp_path / "ledger.jsonl")
        provider = MockChatProvider(cache=ResponseCache(tmp_path / "cache"), ledger=ledger)
        provider.chat(req("x"))
        provider.chat(req("x"))
        statuses = [event["cache"] for event in ledger.events("chat")]
        assert statuses == ["miss", "hit"]


class TestLedgerCompleteness:
    def test_every_call_logged_once_with_fields(self, tmp_path):
        ledger = RunLedger(tmp_path / "ledger.jsonl")
        chat = MockChatProvider(ledger=ledger)
        embed = MockEmbeddingProvider(ledger=ledger, dimension=4)
        chat.chat(req("one"))
        chat.chat(req("two"))
        embed.embed(["t1", "t2"])
        events = ledger.events()
        assert [e["kind"] for e in events] == ["chat", "chat", "embed"]
        for event in events:
            assert "ts" in event and "attempts" in event and "cache" in event
        assert events[0]["request"]["messages"][0]["content"] == "one"
        assert events[2]["count"] == 2
