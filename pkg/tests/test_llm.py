import json
import threading
import time

import httpx
import pytest

from tgg.graph import canonicalize
from tgg.llm import (
    API_KEY_ENV,
    REFUSAL_TEXT,
    CacheMiss,
    CompletionError,
    GenerationParams,
    LLMClient,
    MockBackend,
    OpenAIBackend,
    ResponseCache,
    request_key,
)
from tgg.parsing import extract_relations
from tgg.prompts import assign_labels, build_prompt, shuffled_orders

from conftest import synthetic_corpus

PARAMS = GenerationParams("test-model")


def bundle_for(scenario, method="standard", seed=0):
    a = assign_labels(scenario, seed)
    order = shuffled_orders(scenario, seed, 1)[0]
    return build_prompt(method, [], scenario, a, order, 0)


def ok_response(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"total_tokens": 5}})


def test_request_key_covers_params_and_messages():
    msgs = [{"role": "user", "content": "hi"}]
    assert request_key(PARAMS, msgs) == request_key(GenerationParams("test-model"), list(msgs))
    assert request_key(PARAMS, msgs) != request_key(GenerationParams("other"), msgs)
    assert request_key(PARAMS, msgs) != request_key(PARAMS, [{"role": "user", "content": "hi!"}])


def test_retry_on_429_then_cache(tmp_path):
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        if len(seen) == 1:
            return httpx.Response(429, json={"error": {"message": "slow down"}})
        return ok_response('return ["stepA -> stepB"]')

    sleeps = []
    backend = OpenAIBackend("http://stub/v1", api_key="k", transport=httpx.MockTransport(handler), sleep=sleeps.append)
    client = LLMClient(backend, ResponseCache(tmp_path))
    b = bundle_for(synthetic_corpus(1)[0])
    assert client.complete(b, PARAMS) == 'return ["stepA -> stepB"]'
    assert len(seen) == 2 and sleeps == [1.0]
    assert seen[0]["temperature"] == 0.0 and seen[0]["stop"] == ["# END"]
    assert client.complete(b, PARAMS) == 'return ["stepA -> stepB"]'
    assert len(seen) == 2 and client.network_calls == 1
    entry = json.loads(next(tmp_path.glob("*.json")).read_text())
    assert entry["usage"] == {"total_tokens": 5} and entry["model"] == "test-model"


def test_non_transient_error_carries_status_and_key(tmp_path):
    backend = OpenAIBackend("http://stub/v1", api_key="", transport=httpx.MockTransport(lambda r: httpx.Response(401, text="nope")))
    client = LLMClient(backend, ResponseCache(tmp_path))
    b = bundle_for(synthetic_corpus(1)[0])
    with pytest.raises(CompletionError) as err:
        client.complete(b, PARAMS)
    assert err.value.status == 401
    assert err.value.key == request_key(PARAMS, b.chat_messages())
    assert not list(tmp_path.glob("*.json"))


def test_retry_exhaustion_and_transport_errors(tmp_path):
    def handler(request):
        raise httpx.ConnectError("down", request=request)

    sleeps = []
    backend = OpenAIBackend("http://stub/v1", api_key="", max_retries=3, backoff=0.5, transport=httpx.MockTransport(handler), sleep=sleeps.append)
    with pytest.raises(CompletionError, match="4 attempts"):
        backend.send([{"role": "user", "content": "x"}], PARAMS)
    assert sleeps == [0.5, 1.0, 2.0]


def test_content_filter_returns_refusal_text():
    body = {"error": {"code": "content_filter", "message": "The response was filtered."}}
    backend = OpenAIBackend("http://stub/v1", api_key="", transport=httpx.MockTransport(lambda r: httpx.Response(400, json=body)))
    text, _ = backend.send([{"role": "user", "content": "x"}], PARAMS)
    assert text == "The response was filtered."
    assert not extract_relations(text).validity


def test_api_key_from_environment(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret")
    captured = {}

    def handler(request):
        captured["auth"] = request.headers.get("authorization")
        return ok_response("x")

    OpenAIBackend("http://stub/v1", transport=httpx.MockTransport(handler)).send([{"role": "user", "content": "x"}], PARAMS)
    assert captured["auth"] == "Bearer secret"


def test_offline_client_raises_cache_miss(tmp_path):
    client = LLMClient(None, ResponseCache(tmp_path))
    with pytest.raises(CacheMiss):
        client.complete(bundle_for(synthetic_corpus(1)[0]), PARAMS)


def test_divergence_check(tmp_path):
    s = synthetic_corpus(1)[0]
    b = bundle_for(s)
    cache = ResponseCache(tmp_path)
    LLMClient(MockBackend("gold", {s.id: s}), cache).complete(b, PARAMS)
    assert not LLMClient(MockBackend("gold", {s.id: s}), cache).diverges(b, PARAMS)
    assert LLMClient(MockBackend("refusal"), cache).diverges(b, PARAMS)


def test_in_flight_limit(tmp_path):
    active = []
    peak = []
    lock = threading.Lock()

    class Slow:
        def send(self, messages, params, bundle):
            with lock:
                active.append(1)
                peak.append(len(active))
            time.sleep(0.02)
            with lock:
                active.pop()
            return "x", {}

    client = LLMClient(Slow(), ResponseCache(tmp_path), max_in_flight=2)
    bundles = [bundle_for(s) for s in synthetic_corpus(8)]
    threads = [threading.Thread(target=client.complete, args=(b, PARAMS)) for b in bundles]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert max(peak) <= 2 and client.network_calls == 8


@pytest.mark.parametrize("method", ["standard", "cot", "not"])
def test_mock_gold_reproduces_gold(method):
    s = synthetic_corpus(3, seed=1)[2]
    b = bundle_for(s, method, seed=4)
    text, _ = MockBackend("gold", {s.id: s}).send(b.chat_messages(), PARAMS, b)
    out = extract_relations(text)
    g = canonicalize(out.relations, b.assignment, s.event_ids)
    assert g.edges == set(s.gold_edges)
    assert (out.narrative is not None) == (method == "not")


def test_mock_random_chain_and_refusal():
    s = synthetic_corpus(1, seed=6)[0]
    b = bundle_for(s, seed=2)
    text, _ = MockBackend("random_chain", {s.id: s}).send(b.chat_messages(), PARAMS, b)
    g = canonicalize(extract_relations(text).relations, b.assignment, s.event_ids)
    order = list(b.presentation_order)
    assert g.edges == set(zip(order[:-1], order[1:]))
    assert MockBackend("refusal").send([], PARAMS, b)[0] == REFUSAL_TEXT


def test_mock_scripted_fixtures():
    s = synthetic_corpus(1)[0]
    b = bundle_for(s)
    m = MockBackend("scripted", fixtures={s.id: ["first", "second"]})
    assert [m.send([], PARAMS, b)[0] for _ in range(3)] == ["first", "second", "second"]
    with pytest.raises(ValueError):
        MockBackend("psychic")
