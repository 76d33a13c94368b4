"""Classifier and chat backends.

* ``KeywordOracle`` - deterministic offline classifier used by tests and the
  default CLI configuration.
* ``ZeroShotClient`` - ``POST /classify {"text", "labels"}`` ->
  ``{"scores": [{"label", "confidence"}]}``.
* ``ChatClient`` - ``POST /chat {"system", "user"}`` -> ``{"text"}``.
* ``StubChatClient`` - rule-driven canned replies (``stub://<file.json>``).

Every remote exchange is appended to an ``AuditLog`` (JSON lines).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence, Union

import httpx

from .catalogs import Catalogs, normalize_name
from .features import FEATURE_TYPES, DeviceFeatures
from .matching import fold_label, match_count
from .scoring import LabelResult, RankedLabel

logger = logging.getLogger(__name__)

DEFAULT_HYPOTHESIS = "This text is about a {label} device."
DEFAULT_CHUNK_CHARS = 8000
JUSTIFICATION_MAX_WORDS = 50

FILTER_PROMPT = (
    "I will provide you a list of elements, extracted by a NER system. For each one of them "
    "check if they represent a name of an IoT manufacturer or another manufacture of Network "
    "devices and output it as a list of the elements and True/False flag"
)

# Authored prompt; the original extraction prompt is not available.
NER_PROMPT = (
    "You are a named-entity recognition system. Extract every organization, company, "
    "manufacturer and brand name mentioned in the text below. Reply with a JSON array of "
    "strings and nothing else."
)

# Authored prompt implementing the label + confidence + justification contract.
LABEL_PROMPT = (
    "You label IoT devices from passively observed network traffic features "
    "(DHCP hostname, DNS domains, TLS certificate issuers, OUI vendor, HTTP user agents). "
    "Identify the device vendor and the device function. Reply with one JSON object with the keys "
    '"vendor", "function", "confidence" (a number between 0 and 1) and "justification" '
    "(at most 50 words explaining which features support the label)."
)


class BackendError(RuntimeError):
    pass


class BackendTransportError(BackendError):
    """Connection or server failure; retryable."""


class BackendTimeout(BackendTransportError):
    pass


class BackendQuotaError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class ContractViolation(BackendError):
    """Backend answered with labels it was not asked about (or missed some)."""


class FilterParseError(BackendError):
    def __init__(self, lines: Sequence[str]):
        super().__init__("unparseable filter response lines: " + "; ".join(repr(x) for x in lines))
        self.lines = list(lines)


@dataclass(frozen=True)
class ClassifierScore:
    label: str
    confidence: float


class Classifier(Protocol):
    def classify(self, text: str, candidates: Sequence[str]) -> list[ClassifierScore]: ...


class ChatBackend(Protocol):
    def chat(self, system: str, user: str, kind: str = "chat") -> "ChatExchange": ...


@dataclass
class ChatExchange:
    id: str
    system: str
    user: str
    raw: str
    parsed: Any = None


def exchange_id(kind: str, *parts: str) -> str:
    h = hashlib.sha256(kind.encode())
    for p in parts:
        h.update(b"\0" + p.encode("utf-8"))
    return h.hexdigest()[:16]


class AuditLog:
    """Append-only JSON-lines log of remote exchanges (thread-safe)."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def record(self, kind: str, endpoint: str, request: Any, response: Any = None, error: Optional[str] = None, id: Optional[str] = None) -> str:
        rid = id or exchange_id(kind, json.dumps(request, sort_keys=True))
        rec = {
            "id": rid,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "kind": kind,
            "endpoint": endpoint,
            "request": request,
            "response": response,
            "error": error,
        }
        with self._lock:
            self.records.append(rec)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return rid


# ---------------------------------------------------------------------------
# keyword oracle


class KeywordOracle:
    """confidence(label) = distinct keywords present in the text / number of keywords, capped at 1.

    A label without configured keywords uses its own name as the only keyword.
    """

    def __init__(self, keywords: Optional[Mapping[str, Sequence[str]]] = None):
        self.keywords = {k.strip().lower(): list(v) for k, v in (keywords or {}).items()}

    def keywords_for(self, label: str) -> list[str]:
        """Configured keywords, one per folded form ("door bell" and "doorbell" count once)."""
        kws = self.keywords.get(label.strip().lower()) or [label]
        seen: dict[str, str] = {}
        for kw in kws:
            seen.setdefault(fold_label(kw), kw)
        seen.pop("", None)
        return list(seen.values()) or [label]

    def classify(self, text: str, candidates: Sequence[str]) -> list[ClassifierScore]:
        out = []
        for label in candidates:
            kws = self.keywords_for(label)
            hits = sum(1 for kw in kws if match_count((kw,), text))
            out.append(ClassifierScore(label, min(1.0, hits / len(kws))))
        return out

    @classmethod
    def load(cls, path: Union[str, Path]) -> "KeywordOracle":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def bundled(cls) -> "KeywordOracle":
        text = resources.files("iotlabel.data").joinpath("oracle_keywords.json").read_text(encoding="utf-8")
        return cls(json.loads(text))


# ---------------------------------------------------------------------------
# HTTP plumbing


class _Endpoint:
    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        timeout: float = 30.0,
        attempts: int = 3,
        backoff: float = 0.5,
        max_concurrency: int = 4,
        min_interval: float = 0.0,
        audit: Optional[AuditLog] = None,
        client: Optional[httpx.Client] = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.base_url = base_url
        self._client = client or httpx.Client(base_url=base_url, timeout=timeout, headers=headers)
        self.attempts = attempts
        self.backoff = backoff
        self.audit = audit or AuditLog()
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._min_interval = min_interval
        self._last = 0.0
        self._rate_lock = threading.Lock()

    def _throttle(self) -> None:
        if self._min_interval <= 0:
            return
        with self._rate_lock:
            wait = self._last + self._min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last = time.monotonic()

    def post(self, path: str, payload: dict, kind: str) -> Any:
        delay = self.backoff
        last_exc: Optional[Exception] = None
        for attempt in range(1, self.attempts + 1):
            try:
                with self._slots:
                    self._throttle()
                    resp = self._client.post(path, json=payload)
            except httpx.TimeoutException as exc:
                last_exc = BackendTimeout(f"{kind} request timed out: {exc}")
            except httpx.HTTPError as exc:
                last_exc = BackendTransportError(f"{kind} request failed: {exc}")
            else:
                if resp.status_code in (402, 429):
                    self.audit.record(kind, self.base_url + path, payload, error=f"HTTP {resp.status_code}")
                    raise BackendQuotaError(f"{kind} quota exceeded (HTTP {resp.status_code})")
                if resp.status_code >= 500:
                    last_exc = BackendTransportError(f"{kind} endpoint returned HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    self.audit.record(kind, self.base_url + path, payload, error=f"HTTP {resp.status_code}")
                    raise BackendError(f"{kind} endpoint rejected request (HTTP {resp.status_code})")
                else:
                    try:
                        body = resp.json()
                    except ValueError as exc:
                        self.audit.record(kind, self.base_url + path, payload, response=resp.text, error="malformed")
                        raise MalformedResponseError(f"{kind} response is not JSON: {exc}") from exc
                    self.audit.record(kind, self.base_url + path, payload, response=body)
                    return body
            if attempt < self.attempts:
                logger.warning("%s (attempt %d/%d)", last_exc, attempt, self.attempts)
                if delay:
                    time.sleep(delay)
                delay *= 2
        self.audit.record(kind, self.base_url + path, payload, error=str(last_exc))
        assert last_exc is not None
        raise last_exc


class ZeroShotClient:
    def __init__(
        self,
        base_url: str,
        hypothesis_template: str = DEFAULT_HYPOTHESIS,
        multi_label: bool = True,
        **endpoint_kw: Any,
    ):
        self.endpoint = _Endpoint(base_url, **endpoint_kw)
        self.hypothesis_template = hypothesis_template
        self.multi_label = multi_label

    def classify(self, text: str, candidates: Sequence[str]) -> list[ClassifierScore]:
        payload = {
            "text": text,
            "labels": list(candidates),
            "hypothesis_template": self.hypothesis_template,
            "multi_label": self.multi_label,
        }
        body = self.endpoint.post("/classify", payload, "classify")
        try:
            return [ClassifierScore(str(s["label"]), float(s["confidence"])) for s in body["scores"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"classify response lacks scores: {exc}") from exc


def zero_shot_remote(text: str, candidates: Sequence[str], endpoint: ZeroShotClient) -> list[ClassifierScore]:
    return classify_text(text, candidates, endpoint)


def classify_text(text: str, candidates: Iterable[str], backend: Classifier) -> list[ClassifierScore]:
    """Classify ``text`` against ``candidates``; one score per candidate, in sorted label order."""
    labels = sorted(set(candidates))
    if not labels:
        raise ValueError("candidate set is empty")
    scores = backend.classify(text, labels)
    by_label: dict[str, float] = {}
    for s in scores:
        if s.label not in labels:
            raise ContractViolation(f"backend returned unknown label {s.label!r}")
        if s.label in by_label:
            raise ContractViolation(f"backend returned label {s.label!r} twice")
        if not 0.0 <= s.confidence <= 1.0:
            raise ContractViolation(f"confidence {s.confidence} for {s.label!r} outside [0, 1]")
        by_label[s.label] = s.confidence
    missing = [lbl for lbl in labels if lbl not in by_label]
    if missing:
        raise ContractViolation(f"backend omitted labels {missing}")
    return [ClassifierScore(lbl, by_label[lbl]) for lbl in labels]


# ---------------------------------------------------------------------------
# chat


class ChatClient:
    def __init__(self, base_url: str, **endpoint_kw: Any):
        self.endpoint = _Endpoint(base_url, **endpoint_kw)

    @property
    def audit(self) -> AuditLog:
        return self.endpoint.audit

    def chat(self, system: str, user: str, kind: str = "chat") -> ChatExchange:
        body = self.endpoint.post("/chat", {"system": system, "user": user}, kind)
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise MalformedResponseError("chat response lacks a 'text' string")
        return ChatExchange(exchange_id(kind, system, user), system, user, body["text"])


class StubChatClient:
    """Canned chat replies for offline runs and tests.

    Reply document::

        {"rules": [{"match": "<substring of system+user>", "reply": "<text>"},
                   {"match": "...", "error": "transport"}],
         "default": "<text>"}

    Rules are tried in order; ``error`` raises ``BackendTransportError``.
    """

    def __init__(self, replies: Union[str, Path, Mapping[str, Any]], audit: Optional[AuditLog] = None):
        if isinstance(replies, (str, Path)):
            self.source = str(replies)
            replies = json.loads(Path(replies).read_text(encoding="utf-8"))
        else:
            self.source = "<inline>"
        self.rules = list(replies.get("rules", []))
        self.default = replies.get("default")
        self.audit = audit or AuditLog()
        self.calls: list[tuple[str, str]] = []

    def chat(self, system: str, user: str, kind: str = "chat") -> ChatExchange:
        self.calls.append((system, user))
        prompt = system + "\n" + user
        xid = exchange_id(kind, system, user)
        request = {"system": system, "user": user}
        for rule in self.rules:
            if rule.get("match", "") in prompt:
                if "error" in rule:
                    self.audit.record(kind, "stub://" + self.source, request, error=rule["error"], id=xid)
                    raise BackendTransportError(f"stub endpoint failure: {rule['error']}")
                reply = rule["reply"]
                break
        else:
            if self.default is None:
                self.audit.record(kind, "stub://" + self.source, request, error="no matching rule", id=xid)
                raise BackendTransportError("stub endpoint has no reply for this prompt")
            reply = self.default
        if not isinstance(reply, str):
            reply = json.dumps(reply)
        self.audit.record(kind, "stub://" + self.source, request, response={"text": reply}, id=xid)
        return ChatExchange(xid, system, user, reply)


def _json_fragment(text: str, opener: str, closer: str) -> Any:
    start = text.find(opener)
    end = text.rfind(closer)
    if start == -1 or end <= start:
        raise ValueError("no JSON fragment")
    return json.loads(text[start:end + 1])


def truncate_words(text: str, limit: int = JUSTIFICATION_MAX_WORDS) -> str:
    words = text.split()
    return " ".join(words[:limit])


def describe_features(features: DeviceFeatures) -> str:
    lines = []
    for t in FEATURE_TYPES:
        vals = features.texts(t)
        if vals:
            lines.append(f"{t.value}: " + ", ".join(vals))
    return "\n".join(lines) if lines else "(no features observed)"


@dataclass
class ChatLabel:
    vendor: LabelResult
    function: LabelResult
    confidence: Optional[float]
    justification: str
    exchange: ChatExchange
    parse_error: Optional[str] = None


def chat_label(features: DeviceFeatures, client: ChatBackend, catalogs: Optional[Catalogs] = None) -> ChatLabel:
    """Ask a chat model for (vendor, function) with confidence and a short justification.

    Unparseable replies yield abstained results with the raw reply retained.
    """
    system = LABEL_PROMPT
    if catalogs is not None:
        system += (
            "\nChoose the vendor from this list: " + ", ".join(catalogs.vendors.names)
            + "\nChoose the function from this list: " + ", ".join(catalogs.functions.names)
        )
    ex = client.chat(system, describe_features(features), kind="label")
    try:
        payload = _json_fragment(ex.raw, "{", "}")
        if not isinstance(payload, dict):
            raise ValueError("reply is not a JSON object")
        conf = payload.get("confidence")
        conf = None if conf is None else max(0.0, min(1.0, float(conf)))
    except (ValueError, TypeError) as exc:
        return ChatLabel(LabelResult(), LabelResult(), None, "", ex, parse_error=str(exc))
    ex.parsed = payload
    score = conf if conf is not None else 1.0

    def result(value: Any, resolve) -> LabelResult:
        if not isinstance(value, str) or not value.strip():
            return LabelResult()
        label = resolve(value)
        return LabelResult([RankedLabel(label, score)], {label: score})

    def vendor_key(v: str) -> str:
        if catalogs is not None:
            return catalogs.vendors.resolve(v) or normalize_name(v)
        return normalize_name(v)

    return ChatLabel(
        result(payload.get("vendor"), vendor_key),
        result(payload.get("function"), lambda f: " ".join(f.lower().split())),
        conf,
        truncate_words(str(payload.get("justification", ""))),
        ex,
    )


def chunk_texts(texts: Sequence[str], limit: int = DEFAULT_CHUNK_CHARS) -> list[str]:
    """Pack texts into newline-joined windows of at most ``limit`` characters."""
    chunks: list[str] = []
    cur: list[str] = []
    size = 0
    for text in texts:
        pieces = [text[i:i + limit] for i in range(0, len(text), limit)] or [""]
        for piece in pieces:
            extra = len(piece) + (1 if cur else 0)
            if cur and size + extra > limit:
                chunks.append("\n".join(cur))
                cur, size = [], 0
                extra = len(piece)
            cur.append(piece)
            size += extra
    if cur and any(cur):
        chunks.append("\n".join(cur))
    return chunks


def _parse_entities(raw: str) -> list[str]:
    try:
        items = _json_fragment(raw, "[", "]")
        if isinstance(items, list):
            return [str(x) for x in items if isinstance(x, (str, int, float))]
    except ValueError:
        pass
    out = []
    for line in raw.splitlines():
        line = re.sub(r"^\s*(?:[-*•]|\d+[.)])\s*", "", line).strip().strip('"\'')
        if line:
            out.append(line)
    return out


def ner_extract(
    texts: Sequence[str],
    client: ChatBackend,
    chunk_chars: int = DEFAULT_CHUNK_CHARS,
    exchanges: Optional[list[ChatExchange]] = None,
) -> set[str]:
    """Named organizations in ``texts``, normalized and deduplicated across chunks."""
    entities: set[str] = set()
    for chunk in chunk_texts([t for t in texts if t], chunk_chars):
        ex = client.chat(NER_PROMPT, chunk, kind="ner")
        if exchanges is not None:
            exchanges.append(ex)
        for name in _parse_entities(ex.raw):
            key = normalize_name(name)
            if key:
                entities.add(key)
    return entities


_FLAG_LINE = re.compile(
    r"""^\s*(?:[-*•]\s*|\d+[.)]\s*)?      # bullet or numbering
        ["'`]?(?P<name>.+?)["'`]?\s*
        (?:[:,|=\-\u2013\u2014]\s*|\s+)  # separator, incl. en/em dash
        (?P<flag>true|false)\.?\s*$""",
    re.IGNORECASE | re.VERBOSE,
)


def parse_filter_reply(raw: str, requested: Iterable[str]) -> dict[str, bool]:
    """Parse ``<element> <sep> True/False`` lines strictly against the requested set."""
    wanted = {normalize_name(e): e for e in requested}
    flags: dict[str, bool] = {}
    bad: list[str] = []
    for line in raw.splitlines():
        if not line.strip():
            continue
        m = _FLAG_LINE.match(line)
        key = normalize_name(m.group("name")) if m else None
        if m is None or key not in wanted:
            bad.append(line.strip())
            continue
        flags[wanted[key]] = m.group("flag").lower() == "true"
    if bad:
        raise FilterParseError(bad)
    return flags


def filter_entities(
    entities: Iterable[str],
    client: ChatBackend,
    exchanges: Optional[list[ChatExchange]] = None,
) -> set[str]:
    ents = sorted(set(entities))
    if not ents:
        raise ValueError("no entities to filter")
    ex = client.chat(FILTER_PROMPT, "\n".join(ents), kind="filter")
    if exchanges is not None:
        exchanges.append(ex)
    flags = parse_filter_reply(ex.raw, ents)
    ex.parsed = flags
    return {e for e, ok in flags.items() if ok}
