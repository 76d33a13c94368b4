"""Search-result enrichment of feature values with a persistent cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence, Union

import httpx

from .features import FEATURE_TYPES, DeviceFeatures, FeatureType, FeatureValue

logger = logging.getLogger(__name__)

DEFAULT_K = 10
DEFAULT_CONCURRENCY = 4


class SearchError(RuntimeError):
    pass


class SearchTransportError(SearchError):
    """Provider unreachable or failing after all retries."""


class QuotaExceededError(SearchError):
    """Provider refused the request for quota / rate-limit reasons."""


class EnrichmentFailed(SearchError):
    """Every feature value of a device failed to enrich."""


@dataclass(frozen=True)
class SearchResult:
    rank: int
    title: str
    snippet: str
    url: str = ""

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if not self.title and not self.snippet:
            raise ValueError("search result needs a title or a snippet")

    def to_dict(self) -> dict[str, Any]:
        return {"rank": self.rank, "title": self.title, "snippet": self.snippet, "url": self.url}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SearchResult":
        return cls(int(d["rank"]), d.get("title") or "", d.get("snippet") or "", d.get("url") or "")


def _sorted_results(results: Iterable[SearchResult]) -> list[SearchResult]:
    out = sorted(results, key=lambda r: r.rank)
    ranks = [r.rank for r in out]
    if len(set(ranks)) != len(ranks):
        raise ValueError(f"duplicate ranks in result list: {ranks}")
    return out


@dataclass
class EnrichedFeature:
    source: FeatureValue
    results: list[SearchResult] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.results = _sorted_results(self.results)


@dataclass
class EnrichedDevice:
    device: DeviceFeatures
    enriched: dict[FeatureType, list[EnrichedFeature]] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list, compare=False)

    def __post_init__(self) -> None:
        for t in FEATURE_TYPES:
            self.enriched.setdefault(t, [])
        for t, items in self.enriched.items():
            known = set(self.device.texts(t))
            for ef in items:
                if ef.source.text not in known:
                    raise ValueError(
                        f"device {self.device.device_id}: enriched value {ef.source.text!r} "
                        f"not among its {t.value} features"
                    )

    @property
    def device_id(self) -> str:
        return self.device.device_id

    def result_counts(self) -> dict[FeatureType, list[int]]:
        return {t: [len(ef.results) for ef in self.enriched[t]] for t in FEATURE_TYPES}

    def n_results(self, t: FeatureType) -> int:
        return sum(len(ef.results) for ef in self.enriched[t])

    def restricted(self, types: Iterable[FeatureType]) -> "EnrichedDevice":
        keep = set(types)
        return EnrichedDevice(
            self.device,
            {t: (list(v) if t in keep else []) for t, v in self.enriched.items()},
        )


# ---------------------------------------------------------------------------
# cache


def cache_key(query: str) -> str:
    return hashlib.sha256(query.encode("utf-8")).hexdigest()


def normalize_query(query: str) -> str:
    return " ".join(query.strip().lower().split())


class EnrichmentCache:
    """Query -> results store, optionally persisted to a directory.

    Layout: ``<dir>/<sha256(query)>.json`` holding ``{"query", "fetched_at",
    "results"}`` plus ``<dir>/index.json`` mapping query -> file name.
    Writes go through one lock and land via atomic rename.
    """

    INDEX = "index.json"

    def __init__(self, directory: Optional[Union[str, Path]] = None):
        self.directory = Path(directory) if directory is not None else None
        self._entries: dict[str, tuple[list[SearchResult], str]] = {}
        self._lock = threading.Lock()
        if self.directory is not None and self.directory.exists():
            self._load()

    def _load(self) -> None:
        assert self.directory is not None
        for path in sorted(self.directory.glob("*.json")):
            if path.name == self.INDEX or path.name.startswith("."):
                continue
            doc = json.loads(path.read_text(encoding="utf-8"))
            results = [SearchResult.from_dict(r) for r in doc.get("results", [])]
            self._entries[normalize_query(doc["query"])] = (_sorted_results(results), doc.get("fetched_at", ""))

    def __contains__(self, query: str) -> bool:
        return normalize_query(query) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, query: str) -> Optional[list[SearchResult]]:
        hit = self._entries.get(normalize_query(query))
        return None if hit is None else list(hit[0])

    def fetched_at(self, query: str) -> Optional[str]:
        hit = self._entries.get(normalize_query(query))
        return None if hit is None else hit[1]

    def put(self, query: str, results: Sequence[SearchResult], fetched_at: Optional[str] = None) -> None:
        q = normalize_query(query)
        stamp = fetched_at or datetime.now(timezone.utc).isoformat(timespec="seconds")
        ordered = _sorted_results(results)
        with self._lock:
            self._entries[q] = (ordered, stamp)
            if self.directory is not None:
                self._write(q, ordered, stamp)

    def _write(self, q: str, results: list[SearchResult], stamp: str) -> None:
        assert self.directory is not None
        self.directory.mkdir(parents=True, exist_ok=True)
        name = cache_key(q) + ".json"
        doc = {"query": q, "fetched_at": stamp, "results": [r.to_dict() for r in results]}
        _atomic_write_json(self.directory / name, doc)
        index = {query: cache_key(query) + ".json" for query in sorted(self._entries)}
        _atomic_write_json(self.directory / self.INDEX, index)


def _atomic_write_json(path: Path, doc: Any) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, ensure_ascii=False, sort_keys=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# providers


class SearchProvider(Protocol):
    def search(self, query: str, num: int) -> list[SearchResult]: ...


class HttpSearchProvider:
    """Client for ``GET /search?q=<query>&num=<k>`` endpoints.

    Expects ``{"results": [{"rank", "title", "snippet", "url"}, ...]}``.
    """

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        timeout: float = 15.0,
        client: Optional[httpx.Client] = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(base_url=base_url, timeout=timeout, headers=headers)

    def search(self, query: str, num: int) -> list[SearchResult]:
        try:
            resp = self._client.get("/search", params={"q": query, "num": num})
        except httpx.HTTPError as exc:
            raise SearchTransportError(f"search request failed: {exc}") from exc
        if resp.status_code in (402, 429):
            raise QuotaExceededError(f"search quota exceeded (HTTP {resp.status_code})")
        if resp.status_code >= 400:
            raise SearchTransportError(f"search endpoint returned HTTP {resp.status_code}")
        try:
            items = resp.json()["results"]
            return [SearchResult.from_dict(r) for r in items]
        except (ValueError, KeyError, TypeError) as exc:
            raise SearchTransportError(f"malformed search response: {exc}") from exc


class FixtureSearchProvider:
    """Serves canned results from a ``{query: [result, ...]}`` mapping or JSON file."""

    def __init__(self, fixture: Union[str, Path, Mapping[str, Sequence[Mapping[str, Any]]]]):
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text(encoding="utf-8"))
        self._data = {
            normalize_query(q): [SearchResult.from_dict(r) for r in items] for q, items in fixture.items()
        }
        self.calls: list[str] = []

    def search(self, query: str, num: int) -> list[SearchResult]:
        self.calls.append(query)
        return _sorted_results(self._data.get(normalize_query(query), []))[:num]


def search_with_retry(
    provider: SearchProvider,
    query: str,
    num: int,
    attempts: int = 3,
    backoff: float = 0.5,
) -> list[SearchResult]:
    delay = backoff
    for attempt in range(1, attempts + 1):
        try:
            return provider.search(query, num)
        except QuotaExceededError:
            raise
        except SearchTransportError as exc:
            if attempt == attempts:
                raise
            logger.warning("search %r failed (attempt %d/%d): %s", query, attempt, attempts, exc)
            if delay:
                time.sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# operations


@dataclass
class EnrichmentSettings:
    k: int = DEFAULT_K
    attempts: int = 3
    backoff: float = 0.5
    concurrency: int = DEFAULT_CONCURRENCY


def enrich_value(
    value: FeatureValue,
    provider: Optional[SearchProvider],
    cache: EnrichmentCache,
    k: int = DEFAULT_K,
    attempts: int = 3,
    backoff: float = 0.5,
) -> EnrichedFeature:
    """Enrich one value; ``provider=None`` means cache-only (misses give no results)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = value.text
    cached = cache.get(query)
    if cached is not None:
        return EnrichedFeature(value, cached[:k])
    if provider is None:
        logger.debug("cache miss in offline mode: %r", query)
        return EnrichedFeature(value, [])
    results = search_with_retry(provider, query, k, attempts=attempts, backoff=backoff)
    cache.put(query, results)
    return EnrichedFeature(value, _sorted_results(results)[:k])


def enrich_device(
    device: DeviceFeatures,
    provider: Optional[SearchProvider],
    cache: EnrichmentCache,
    k: int = DEFAULT_K,
    settings: Optional[EnrichmentSettings] = None,
) -> EnrichedDevice:
    """Enrich every value of every feature type exactly once.

    Per-value failures are recorded on ``EnrichedDevice.errors``; if the device
    had values and none could be enriched, ``EnrichmentFailed`` is raised.
    Quota errors propagate immediately.
    """
    s = settings or EnrichmentSettings(k=k)
    jobs = [(t, v) for t in FEATURE_TYPES for v in device.values[t]]

    def run(job):
        t, v = job
        try:
            return enrich_value(v, provider, cache, k=s.k, attempts=s.attempts, backoff=s.backoff), None
        except QuotaExceededError:
            raise
        except SearchError as exc:
            return None, f"{t.value}:{v.text}: {exc}"

    if s.concurrency > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=s.concurrency) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]

    enriched: dict[FeatureType, list[EnrichedFeature]] = {t: [] for t in FEATURE_TYPES}
    errors = []
    for (t, _), (ef, err) in zip(jobs, outcomes):
        if ef is not None:
            enriched[t].append(ef)
        else:
            errors.append(err)
    if jobs and len(errors) == len(jobs):
        raise EnrichmentFailed(f"device {device.device_id}: no value could be enriched: {errors[0]}")
    return EnrichedDevice(device, enriched, errors)


def result_count_cdf(devices: Sequence[EnrichedDevice]) -> dict[int, float]:
    """Empirical CDF of the number of results per enriched value.

    Keys are the observed counts in ascending order; values are the fraction of
    enriched values with at most that many results.
    """
    counts = sorted(n for d in devices for per in d.result_counts().values() for n in per)
    if not counts:
        raise ValueError("no enriched values to summarize")
    total = len(counts)
    return {c: bisect_right(counts, c) / total for c in sorted(set(counts))}


def cdf_fraction_at_least(cdf: Mapping[int, float], threshold: int) -> float:
    """Fraction of values with ``count >= threshold`` read off a CDF."""
    below = [frac for c, frac in cdf.items() if c < threshold]
    return 1.0 - (max(below) if below else 0.0)
