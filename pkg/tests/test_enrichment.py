from __future__ import annotations

import json
import threading

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotlabel.enrichment import (
    EnrichedDevice,
    EnrichedFeature,
    EnrichmentCache,
    EnrichmentFailed,
    EnrichmentSettings,
    FixtureSearchProvider,
    HttpSearchProvider,
    QuotaExceededError,
    SearchResult,
    SearchTransportError,
    cdf_fraction_at_least,
    enrich_device,
    enrich_value,
    result_count_cdf,
    search_with_retry,
)
from iotlabel.features import DeviceFeatures, FeatureType, FeatureValue

from oracles import make_device


def results(n, prefix="r"):
    return [SearchResult(i, f"{prefix} title {i}", f"{prefix} snippet {i}", f"https://x/{i}") for i in range(1, n + 1)]


def fv(text, t=FeatureType.DOMAINS):
    return FeatureValue(text, t)


def test_cache_hit_passthrough_and_truncation(tmp_path):
    cache = EnrichmentCache(tmp_path)
    cache.put("xbcs.net", list(reversed(results(10))))
    ef = enrich_value(fv("xbcs.net"), None, cache, k=10)
    assert [r.rank for r in ef.results] == list(range(1, 11))
    ef3 = enrich_value(fv("xbcs.net"), None, cache, k=3)
    assert ef3.results == ef.results[:3]


def test_cache_persists_across_instances(tmp_path):
    EnrichmentCache(tmp_path).put("  XBCS.net ", results(2), fetched_at="2024-01-01T00:00:00+00:00")
    again = EnrichmentCache(tmp_path)
    assert "xbcs.net" in again
    assert again.get("xbcs.net") == results(2)
    assert again.fetched_at("xbcs.net") == "2024-01-01T00:00:00+00:00"
    index = json.loads((tmp_path / "index.json").read_text())
    assert list(index) == ["xbcs.net"]
    assert (tmp_path / index["xbcs.net"]).exists()


def test_offline_miss_gives_empty_results():
    ef = enrich_value(fv("nothing.example"), None, EnrichmentCache(), k=10)
    assert ef.results == []


def test_fixture_provider_six_results_are_cached():
    provider = FixtureSearchProvider({"foo.com": [r.to_dict() for r in results(6)]})
    cache = EnrichmentCache()
    ef = enrich_value(fv("foo.com"), provider, cache, k=10)
    assert len(ef.results) == 6
    assert cache.get("foo.com") == results(6)
    enrich_value(fv("foo.com"), provider, cache, k=10)
    assert provider.calls == ["foo.com"]


class Flaky:
    def __init__(self, failures, exc=SearchTransportError):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def search(self, query, num):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("boom")
        return results(2)


def test_retries_then_succeeds():
    p = Flaky(2)
    assert len(search_with_retry(p, "q", 10, attempts=3, backoff=0)) == 2
    assert p.calls == 3


def test_retries_exhausted():
    p = Flaky(5)
    with pytest.raises(SearchTransportError):
        search_with_retry(p, "q", 10, attempts=3, backoff=0)
    assert p.calls == 3


def test_quota_is_not_retried():
    p = Flaky(5, QuotaExceededError)
    with pytest.raises(QuotaExceededError):
        search_with_retry(p, "q", 10, attempts=3, backoff=0)
    assert p.calls == 1


def _transport(handler):
    return httpx.Client(base_url="http://search.test", transport=httpx.MockTransport(handler))


def test_http_provider_contract():
    seen = {}

    def handler(request):
        seen.update(dict(request.url.params))
        seen["path"] = request.url.path
        return httpx.Response(200, json={"results": [r.to_dict() for r in results(3)]})

    got = HttpSearchProvider("http://search.test", client=_transport(handler)).search("xbcs.net", 10)
    assert got == results(3)
    assert seen == {"q": "xbcs.net", "num": "10", "path": "/search"}


@pytest.mark.parametrize("status,exc", [(429, QuotaExceededError), (402, QuotaExceededError), (500, SearchTransportError)])
def test_http_provider_errors(status, exc):
    provider = HttpSearchProvider("http://search.test", client=_transport(lambda r: httpx.Response(status)))
    with pytest.raises(exc):
        provider.search("q", 10)


def test_http_provider_malformed():
    provider = HttpSearchProvider("http://search.test", client=_transport(lambda r: httpx.Response(200, text="nope")))
    with pytest.raises(SearchTransportError):
        provider.search("q", 10)


def test_enrich_device_counts_and_idempotence():
    dev = DeviceFeatures.from_raw("d", None, {FeatureType.DOMAINS: ["a.com", "b.com", "c.com"]})
    fixture = {q: [r.to_dict() for r in results(2, q)] for q in ("a.com", "b.com", "c.com")}
    cache = EnrichmentCache()
    first = enrich_device(dev, FixtureSearchProvider(fixture), cache, settings=EnrichmentSettings(concurrency=4))
    assert len(first.enriched[FeatureType.DOMAINS]) == 3
    assert first.n_results(FeatureType.DOMAINS) == 6
    second = enrich_device(dev, None, cache)
    assert first == second


def test_enrich_device_without_values():
    ed = enrich_device(DeviceFeatures("d"), None, EnrichmentCache())
    assert all(v == [] for v in ed.enriched.values())


def test_enrich_device_partial_and_total_failure():
    dev = DeviceFeatures.from_raw("d", None, {FeatureType.DOMAINS: ["a.com", "b.com"]})

    class Half:
        def search(self, q, n):
            if q == "a.com":
                raise SearchTransportError("down")
            return results(1)

    ed = enrich_device(dev, Half(), EnrichmentCache(), settings=EnrichmentSettings(attempts=1, backoff=0))
    assert len(ed.enriched[FeatureType.DOMAINS]) == 1
    assert len(ed.errors) == 1
    with pytest.raises(EnrichmentFailed):
        enrich_device(dev, Flaky(99), EnrichmentCache(), settings=EnrichmentSettings(attempts=1, backoff=0))


def test_enrich_device_quota_propagates():
    dev = DeviceFeatures.from_raw("d", None, {FeatureType.DOMAINS: ["a.com"]})
    with pytest.raises(QuotaExceededError):
        enrich_device(dev, Flaky(99, QuotaExceededError), EnrichmentCache())


def test_referential_integrity():
    dev = DeviceFeatures.from_raw("d", None, {FeatureType.DOMAINS: ["a.com"]})
    with pytest.raises(ValueError):
        EnrichedDevice(dev, {FeatureType.DOMAINS: [EnrichedFeature(fv("b.com"), results(1))]})


def test_search_result_invariants():
    with pytest.raises(ValueError):
        SearchResult(0, "t", "s")
    with pytest.raises(ValueError):
        SearchResult(1, "", "")
    with pytest.raises(ValueError):
        EnrichedFeature(fv("a.com"), [SearchResult(1, "a", ""), SearchResult(1, "b", "")])


def test_cdf_examples():
    devs = [make_device("d", {FeatureType.DOMAINS: {f"v{i}": [("t", "s")] * n for i, n in enumerate([2, 10, 10, 8])}})]
    assert result_count_cdf(devs) == {2: 0.25, 8: 0.5, 10: 1.0}
    assert cdf_fraction_at_least(result_count_cdf(devs), 9) == 0.5
    all_ten = [make_device("d", {FeatureType.DOMAINS: {"a": [("t", "s")] * 10}})]
    assert result_count_cdf(all_ten) == {10: 1.0}
    with pytest.raises(ValueError):
        result_count_cdf([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=10), min_size=1, max_size=20))
def test_cdf_is_monotone_and_ends_at_one(counts):
    dev = make_device("d", {FeatureType.DOMAINS: {f"v{i}": [("t", "s")] * n for i, n in enumerate(counts)}})
    cdf = result_count_cdf([dev])
    fracs = list(cdf.values())
    assert fracs == sorted(fracs) and fracs[-1] == 1.0
    assert list(cdf) == sorted(cdf)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=10), st.integers(min_value=1, max_value=10))
def test_truncation_is_prefix(k1, k2):
    k1, k2 = sorted((k1, k2))
    cache = EnrichmentCache()
    cache.put("q.com", results(10))
    a = enrich_value(fv("q.com"), None, cache, k=k1).results
    b = enrich_value(fv("q.com"), None, cache, k=k2).results
    assert b[:len(a)] == a


def test_concurrent_puts_keep_index_consistent(tmp_path):
    cache = EnrichmentCache(tmp_path)
    threads = [threading.Thread(target=cache.put, args=(f"q{i}.com", results(1))) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    index = json.loads((tmp_path / "index.json").read_text())
    assert len(index) == 16
    assert len(EnrichmentCache(tmp_path)) == 16
