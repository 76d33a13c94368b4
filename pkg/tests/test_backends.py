from __future__ import annotations

import json

import httpx
import pytest

from iotlabel.backends import (
    AuditLog,
    BackendQuotaError,
    BackendTransportError,
    ChatClient,
    ClassifierScore,
    ContractViolation,
    FilterParseError,
    KeywordOracle,
    MalformedResponseError,
    StubChatClient,
    ZeroShotClient,
    chat_label,
    chunk_texts,
    classify_text,
    filter_entities,
    ner_extract,
    parse_filter_reply,
)
from iotlabel.catalogs import load_bundled
from iotlabel.features import DeviceFeatures, FeatureType


def test_oracle_examples():
    oracle = KeywordOracle({"plug": ["plug", "energy"], "camera": ["camera", "video"]})
    got = {s.label: s.confidence for s in classify_text("smart plug energy monitoring", {"plug", "camera"}, oracle)}
    assert got["plug"] > got["camera"]
    assert all(s.confidence == 0 for s in classify_text("", {"plug", "camera"}, oracle))
    assert [s.label for s in classify_text("anything", {"x"}, oracle)] == ["x"]


def test_bundled_oracle_covers_function_catalog():
    oracle = KeywordOracle.bundled()
    for f in load_bundled().functions.names:
        assert f in oracle.keywords


class Rogue:
    def __init__(self, scores):
        self.scores = scores

    def classify(self, text, candidates):
        return self.scores


@pytest.mark.parametrize("scores", [
    [ClassifierScore("plug", 0.5), ClassifierScore("dragon", 0.1)],
    [ClassifierScore("plug", 0.5)],
    [ClassifierScore("plug", 0.5), ClassifierScore("plug", 0.5), ClassifierScore("camera", 0.1)],
    [ClassifierScore("plug", 1.5), ClassifierScore("camera", 0.1)],
])
def test_contract_violations(scores):
    with pytest.raises(ContractViolation):
        classify_text("t", ["plug", "camera"], Rogue(scores))


def test_empty_candidates_rejected():
    with pytest.raises(ValueError):
        classify_text("t", [], KeywordOracle())


def mock(handler):
    return httpx.Client(base_url="http://zs.test", transport=httpx.MockTransport(handler))


def test_zero_shot_client_round_trip(tmp_path):
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append((request.url.path, body, request.headers.get("authorization")))
        return httpx.Response(200, json={"scores": [{"label": l, "confidence": 0.5} for l in body["labels"]]})

    audit = AuditLog(tmp_path / "audit.jsonl")
    zs = ZeroShotClient("http://zs.test", client=mock(handler), audit=audit)
    out = classify_text("hello", ["b", "a"], zs)
    assert [s.label for s in out] == ["a", "b"]
    assert seen[0][0] == "/classify" and seen[0][1]["multi_label"] is True
    lines = (tmp_path / "audit.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["kind"] == "classify"


def test_zero_shot_retries_then_fails():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    zs = ZeroShotClient("http://zs.test", client=mock(handler), attempts=3, backoff=0)
    with pytest.raises(BackendTransportError):
        zs.classify("t", ["a"])
    assert len(calls) == 3


def test_zero_shot_quota_and_malformed():
    zs = ZeroShotClient("http://zs.test", client=mock(lambda r: httpx.Response(429)), backoff=0)
    with pytest.raises(BackendQuotaError):
        zs.classify("t", ["a"])
    zs = ZeroShotClient("http://zs.test", client=mock(lambda r: httpx.Response(200, json={"nope": 1})), backoff=0)
    with pytest.raises(MalformedResponseError):
        zs.classify("t", ["a"])


def test_chat_client_contract():
    chat = ChatClient("http://zs.test", client=mock(lambda r: httpx.Response(200, json={"text": "hi"})))
    ex = chat.chat("sys", "user")
    assert ex.raw == "hi" and len(chat.audit.records) == 1


def features():
    return DeviceFeatures.from_raw("d", None, {FeatureType.HOSTNAME: ["wemo-plug"], FeatureType.DOMAINS: ["xbcs.net"]})


def test_chat_label_parses_and_resolves():
    reply = {"vendor": "WeMo", "function": "Plug", "confidence": 0.8, "justification": " ".join(["word"] * 80)}
    stub = StubChatClient({"default": "Sure: " + json.dumps(reply)})
    out = chat_label(features(), stub, load_bundled())
    assert out.vendor.top == "belkin" and out.function.top == "plug"
    assert out.confidence == 0.8
    assert len(out.justification.split()) == 50
    assert "wemo-plug" in stub.calls[0][1]


def test_chat_label_unparseable_reply_abstains():
    out = chat_label(features(), StubChatClient({"default": "no idea"}))
    assert out.vendor.abstained and out.function.abstained and out.parse_error


def test_chunking_respects_limit_and_keeps_text():
    texts = ["a" * 30, "b" * 5, "c" * 12, "d" * 3]
    chunks = chunk_texts(texts, limit=10)
    assert all(len(c) <= 10 for c in chunks)
    assert "".join(c.replace("\n", "") for c in chunks) == "".join(texts)


def test_ner_dedups_across_chunks():
    stub = StubChatClient({"default": '["Belkin Inc.", "belkin", "Samsung"]'})
    got = ner_extract(["x" * 50, "y" * 50], stub, chunk_chars=60)
    assert got == {"belkin", "samsung"}
    assert len(stub.calls) == 2


def test_filter_reply_parsing():
    raw = "- belkin: True\n2. samsung - false\n'google' True\n"
    assert parse_filter_reply(raw, ["belkin", "samsung", "google"]) == {"belkin": True, "samsung": False, "google": True}
    with pytest.raises(FilterParseError) as exc:
        parse_filter_reply("belkin True\nsomething odd\n", ["belkin"])
    assert exc.value.lines == ["something odd"]
    with pytest.raises(FilterParseError):
        parse_filter_reply("amazon: True", ["belkin"])


def test_filter_entities_and_stub_errors():
    stub = StubChatClient({"rules": [{"match": "IoT manufacturer", "reply": "belkin: True\nwalmart: False"}]})
    assert filter_entities({"belkin", "walmart"}, stub) == {"belkin"}
    broken = StubChatClient({"rules": [{"match": "", "error": "transport"}]})
    with pytest.raises(BackendTransportError):
        filter_entities({"belkin"}, broken)
    assert broken.audit.records[0]["error"] == "transport"


def test_filter_reply_accepts_dash_separators():
    raw = "belkin \u2014 True\nacme \u2013 false"
    assert parse_filter_reply(raw, ["belkin", "acme"]) == {"belkin": True, "acme": False}


def test_oracle_counts_folded_duplicates_once():
    oracle = KeywordOracle({"doorbell": ["doorbell", "door bell", "Door-Bell", "chime"]})
    assert oracle.keywords_for("doorbell") == ["doorbell", "chime"]
    (score,) = classify_text("smart door bell", ["doorbell"], oracle)
    assert score.confidence == 0.5
