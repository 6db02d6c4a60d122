import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from policygate.adapters import (TASK_IDS, Cassette, CassetteCorrupt, CassetteMiss, HashEmbedder, HTTPChatAdapter,
                                 HTTPEmbedder, MissingPlaceholder, MockChatAdapter, SchemaError, TransportError,
                                 TruncationError, UnknownTask, canonical_json, chat_call, default_registry,
                                 mock_adapter, parse_json_lenient, payload_key, record_replay)
from policygate.adapters.live import API_KEY_ENV
from policygate.pipeline import PipelineConfig, bundled, build_policy, default_world, run_scenarios
from policygate.evaluation import load_scenarios


def test_registry_covers_task_ids():
    reg = default_registry()
    for tid in TASK_IDS:
        task = reg[tid]
        assert task.placeholders and task.schema["type"] == "object"
        assert task.temperature == 0.0 and task.max_output_fraction >= 0.8
    with pytest.raises(UnknownTask):
        reg["nope"]


def test_fixture_served_verbatim():
    payload = {"anchor": {"id": "a1"}, "window": {}, "plan": []}
    reply = {"judgments": [{"cu_id": "x", "label": "COMPLIANT", "score": 1.0}]}
    llm = mock_adapter(fixtures=[{"task": "judge", "payload": payload, "response": reply}])
    assert chat_call(llm, "judge", payload) == reply
    # key order of the payload does not matter
    assert chat_call(llm, "judge", dict(reversed(list(payload.items())))) == reply


def test_missing_placeholder():
    with pytest.raises(MissingPlaceholder):
        chat_call(mock_adapter(default_world()), "judge", {"plan": []})


def test_truncated_array_recovers_prefix():
    value, truncated = parse_json_lenient('{"scores": [0.1, 0.2, 0.3')
    assert truncated and value == {"scores": [0.1, 0.2]}
    llm = MockChatAdapter(handlers={"rerank.score": lambda p: '```json\n{"scores": [0.5, 0.25, 0.7'})
    reply = llm.call("rerank.score", {"query": "q", "documents": ["a", "b"]})
    assert reply.truncated and reply.value == {"scores": [0.5, 0.25]}


def test_unparseable_output():
    with pytest.raises(TruncationError):
        parse_json_lenient("no json at all")


def test_schema_failure_retried_once():
    calls = []

    def bad(p):
        calls.append(p)
        return {"scores": "nope"}
    with pytest.raises(SchemaError):
        chat_call(MockChatAdapter(handlers={"rerank.score": bad}), "rerank.score", {"query": "q", "documents": []})
    assert len(calls) == 2


def test_check_hook_triggers_retry():
    replies = iter([{"scores": [1.0]}, {"scores": [1.0, 2.0]}])
    llm = MockChatAdapter(handlers={"rerank.score": lambda p: next(replies)})

    def two(value):
        if len(value["scores"]) != 2:
            raise SchemaError("need two")
    assert chat_call(llm, "rerank.score", {"query": "q", "documents": ["a", "b"]}, check=two) == {"scores": [1.0, 2.0]}


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.text(max_size=5), st.integers() | st.text(max_size=5), max_size=6))
def test_payload_key_ignores_order(payload):
    shuffled = dict(reversed(list(payload.items())))
    assert payload_key("judge", payload) == payload_key("judge", shuffled)
    assert canonical_json(payload) == canonical_json(shuffled)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(max_size=30), min_size=1, max_size=5))
def test_hash_embedding_contract(texts):
    e = HashEmbedder(seed=3)
    a = e.embed(texts)
    b = HashEmbedder(seed=3).embed(texts)
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-9)


def test_hash_embedding_pinned_cosine():
    v = HashEmbedder(seed=0).embed(["a", "a b"])
    # "a" hashes one feature, "a b" three (a, b, a_b) without collisions
    assert float(v[0] @ v[1]) == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert -1 < float(v[0] @ v[1]) < 1


def test_embed_rejects_empty():
    with pytest.raises(ValueError):
        HashEmbedder().embed([])


# -- record / replay -----------------------------------------------------------


def run_pipeline(llm, emb):
    policy = build_policy(bundled("mini_regulation.json"), llm)
    scenarios = load_scenarios(bundled("scenarios.json"))[:2]
    res = run_scenarios(policy, scenarios, llm, emb, PipelineConfig())
    return policy.dumps() + "".join(ctx.dumps() + r.decision_file() for ctx, r in res.values())


def test_record_then_replay_identical(tmp_path):
    store = str(tmp_path / "cassette.json")
    llm, emb = record_replay("record", store, mock_adapter(default_world()), HashEmbedder())
    recorded = run_pipeline(llm, emb)
    inner_calls = len(llm.inner.calls)
    r_llm, r_emb = record_replay("replay", store)
    assert run_pipeline(r_llm, r_emb) == recorded
    assert inner_calls > 0
    data = json.loads((tmp_path / "cassette.json").read_text())
    assert any(k.startswith("embed:") for k in data)


def test_replay_miss_names_key(tmp_path):
    store = tmp_path / "c.json"
    store.write_text("{}")
    llm, _ = record_replay("replay", str(store))
    payload = {"query": "q", "documents": ["d"]}
    with pytest.raises(CassetteMiss, match=payload_key("rerank.score", payload)):
        llm.call("rerank.score", payload)


def test_replay_missing_store(tmp_path):
    with pytest.raises(CassetteMiss):
        record_replay("replay", str(tmp_path / "absent.json"))


def test_corrupt_store(tmp_path):
    store = tmp_path / "c.json"
    store.write_text("[1, 2")
    with pytest.raises(CassetteCorrupt):
        Cassette(str(store))


# -- live adapters against a fake session ----------------------------------------


class FakeResponse:
    def __init__(self, status, body):
        self.status_code, self._body, self.text = status, body, json.dumps(body)

    def json(self):
        return self._body


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.posts = []

    def post(self, url, json=None, timeout=None, headers=None):
        self.posts.append((url, json, headers))
        return self.responses.pop(0)


def test_http_chat_maps_wire_format(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "k")
    session = FakeSession([FakeResponse(200, {"choices": [{"message": {"content": '{"scores": [0.5]}'}}]})])
    llm = HTTPChatAdapter(base_url="http://x/v1", model="m", session=session, max_output_tokens=1000)
    assert chat_call(llm, "rerank.score", {"query": "q", "documents": ["d"]}) == {"scores": [0.5]}
    url, body, headers = session.posts[0]
    assert url == "http://x/v1/chat/completions" and headers["Authorization"] == "Bearer k"
    assert body["model"] == "m" and body["temperature"] == 0.0 and body["max_tokens"] == 800


def test_http_chat_client_error_not_retried(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "k")
    session = FakeSession([FakeResponse(400, {"error": "bad"})])
    with pytest.raises(TransportError, match="400"):
        chat_call(HTTPChatAdapter(session=session), "rerank.score", {"query": "q", "documents": []})
    assert len(session.posts) == 1


def test_http_requires_key(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    with pytest.raises(TransportError, match=API_KEY_ENV):
        chat_call(HTTPChatAdapter(session=FakeSession([])), "rerank.score", {"query": "q", "documents": []})


def test_http_embedder_orders_rows(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "k")
    emb = HTTPEmbedder(base_url="http://x/v1")
    emb.session = FakeSession([FakeResponse(200, {"data": [{"index": 1, "embedding": [0, 2]},
                                                           {"index": 0, "embedding": [3, 0]}]})])
    out = emb.embed(["a", "b"])
    assert np.allclose(out, [[1, 0], [0, 1]])
