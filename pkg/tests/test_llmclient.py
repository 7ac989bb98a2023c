from __future__ import annotations

import pytest

from medragkit.errors import AuthError, MockScriptError, ProviderError, RateLimitedError
from medragkit.llmclient import (
    LlmClient,
    LlmRequest,
    Message,
    MockProvider,
    VirtualClock,
    mock_provider,
    request_with_retry,
)
from medragkit.errors import ResponseFormatError


def req(text: str, **kwargs) -> LlmRequest:
    return LlmRequest(model="m", messages=[Message("user", text)], **kwargs)


def test_request_key_stable_and_content_sensitive():
    assert req("hello").request_key == req("hello").request_key
    assert req("hello").request_key != req("world").request_key
    assert req("hello").request_key != req("hello", temperature=0.5).request_key
    assert req("hello").request_key != LlmRequest("m2", [Message("user", "hello")]).request_key


def test_attachments_hashed_by_bytes(tmp_path):
    path = tmp_path / "img.bin"
    path.write_bytes(b"\x01\x02")
    by_path = LlmRequest("m", [Message("user", "x")], attachments=[str(path)])
    by_bytes = LlmRequest("m", [Message("user", "x")], attachments=[b"\x01\x02"])
    assert by_path.request_key == by_bytes.request_key


def test_cache_second_call_no_upstream_dispatch():
    provider = MockProvider(ordered=["only reply"])
    client = LlmClient(provider)
    first = client.call(req("same"))
    second = client.call(req("same"))
    assert first.text == second.text == "only reply"
    assert not first.cached and second.cached
    assert provider.calls == 1


def test_disk_cache_round_trip(tmp_path):
    provider = MockProvider(ordered=["persisted"])
    client = LlmClient(provider, cache_dir=tmp_path)
    client.call(req("x"))
    fresh = LlmClient(MockProvider(ordered=[]), cache_dir=tmp_path)
    resp = fresh.call(req("x"))
    assert resp.cached and resp.text == "persisted"


def test_keyed_mock_answers_by_request_key():
    key = req("classify this").request_key
    client = LlmClient(MockProvider(keyed={key: "CT"}))
    assert client.call(req("classify this")).text == "CT"


def test_keyed_mock_unscripted_request_errors():
    client = LlmClient(MockProvider(keyed={"deadbeef": "x"}))
    with pytest.raises(MockScriptError, match="unscripted"):
        client.call(req("not in script"))


def test_ordered_mock_exhaustion():
    client = LlmClient(MockProvider(ordered=["a", "b", "c"]))
    for i, text in enumerate(["a", "b", "c"]):
        assert client.call(req(f"q{i}")).text == text
    with pytest.raises(MockScriptError, match="script exhausted"):
        client.call(req("q3"))


def test_fault_injection_429_then_200():
    clock = VirtualClock()
    client = LlmClient(MockProvider(ordered=[{"fault": "429"}, "ok"]), clock=clock)
    resp = client.call(req("x"))
    assert resp.text == "ok"
    assert client.audit_log[-1].attempts == 2
    assert client.audit_log[-1].outcome == "ok"


def test_fault_script_double_429_two_retries():
    clock = VirtualClock()
    client = LlmClient(MockProvider(ordered=[{"fault": "429"}, {"fault": "429"}, "ok"]),
                       clock=clock)
    resp = client.call(req("x"))
    assert resp.text == "ok"
    assert client.audit_log[-1].attempts == 3
    # exponential backoff: sleeps of 1s then 2s between the three attempts
    times = client.audit_log[-1].dispatched_at
    assert times[1] - times[0] == pytest.approx(1.0)
    assert times[2] - times[1] == pytest.approx(2.0)


def test_exhausted_retries_raises():
    clock = VirtualClock()
    faults = [{"fault": "429"}] * 5
    client = LlmClient(MockProvider(ordered=faults), clock=clock)
    with pytest.raises(RateLimitedError):
        client.call(req("x"))
    assert client.audit_log[-1].attempts == 5
    assert client.audit_log[-1].outcome == "error"


def test_auth_failure_not_retried():
    class AuthFailing:
        name = "auth"
        calls = 0

        def complete(self, request):
            self.calls += 1
            raise AuthError()

    provider = AuthFailing()
    client = LlmClient(provider, clock=VirtualClock())
    with pytest.raises(AuthError):
        client.call(req("x"))
    assert provider.calls == 1


def test_rate_limiter_budget_over_any_window():
    clock = VirtualClock()
    client = LlmClient(MockProvider(ordered=[f"r{i}" for i in range(6)]),
                       rps=2.0, clock=clock)
    for i in range(6):
        client.call(req(f"q{i}"))
    times = [e.dispatched_at[0] for e in client.audit_log]
    assert times == sorted(times)
    for start in times:
        in_window = [t for t in times if start <= t < start + 1.0]
        assert len(in_window) <= 2


def test_cached_calls_bypass_rate_limiter():
    clock = VirtualClock()
    client = LlmClient(MockProvider(ordered=["once"]), rps=1.0, clock=clock)
    client.call(req("same"))
    before = clock.now()
    client.call(req("same"))
    assert clock.now() == before  # no wait for the cached reply


def test_mock_provider_constructor_validation():
    with pytest.raises(ValueError):
        MockProvider()
    with pytest.raises(ValueError):
        MockProvider(ordered=["a"], keyed={"k": "v"})
    with pytest.raises(ValueError):
        MockProvider(keyed={})
    assert isinstance(mock_provider(["a"]), MockProvider)
    assert isinstance(mock_provider({"k": "v"}), MockProvider)


def test_script_file_loading(tmp_path):
    path = tmp_path / "script.jsonl"
    path.write_text(
        '{"text": "first"}\n{"fault": "429"}\n{"text": "second"}\n',
        encoding="utf-8",
    )
    provider = MockProvider.from_script_file(path)
    client = LlmClient(provider, clock=VirtualClock())
    assert client.call(req("a")).text == "first"
    assert client.call(req("b")).text == "second"  # 429 absorbed by backoff
    keyed_path = tmp_path / "keyed.jsonl"
    keyed_path.write_text('{"key": "k1", "text": "v1"}\n', encoding="utf-8")
    assert MockProvider.from_script_file(keyed_path)._keyed is not None


def test_request_with_retry_reprompts_once():
    client = LlmClient(MockProvider(ordered=["bad", "good"]))

    def parse(raw: str) -> str:
        if raw != "good":
            raise ResponseFormatError("not good")
        return raw

    value, raw = request_with_retry(client, "m", [Message("user", "q")], parse)
    assert value == "good"


def test_request_with_retry_second_failure_propagates():
    client = LlmClient(MockProvider(ordered=["bad", "still bad"]))

    def parse(raw: str) -> str:
        raise ResponseFormatError("nope")

    with pytest.raises(ResponseFormatError):
        request_with_retry(client, "m", [Message("user", "q")], parse)


def test_audit_log_records_every_dispatch():
    client = LlmClient(MockProvider(ordered=["a", "b"]))
    client.call(req("1"))
    client.call(req("1"))
    client.call(req("2"))
    outcomes = [e.outcome for e in client.audit_log]
    assert outcomes == ["ok", "cached", "ok"]
    assert all(e.request_key for e in client.audit_log)
