from __future__ import annotations

import json

import pytest

from iotlabel import dataset as ds
from iotlabel.features import FeatureType


def doc(**device):
    base = {"device_id": "d1", "mac": None, "features": {}}
    base.update(device)
    return {"devices": [base]}


def test_dedup_and_missing_keys():
    data = ds.load(doc(features={"domains": ["a.com", "a.com"]}))
    (dev,) = data.devices
    assert dev.texts(FeatureType.DOMAINS) == ["a.com"]
    assert dev.texts(FeatureType.HOSTNAME) == []


def test_schema_violation_reports_json_path():
    with pytest.raises(ds.DatasetValidationError) as exc:
        ds.load(doc(features={"domains": "a.com"}))
    assert exc.value.path == "$.devices[0].features.domains"
    with pytest.raises(ds.DatasetValidationError) as exc:
        ds.load(doc(features={"ja3": []}))
    assert "$.devices[0].features" in exc.value.path


def test_duplicate_device_ids_rejected():
    d = doc()
    d["devices"].append(dict(d["devices"][0]))
    with pytest.raises(ds.DatasetValidationError) as exc:
        ds.load(d)
    assert exc.value.path == "$.devices[1].device_id"


def test_enriched_value_must_be_a_feature():
    bad = doc(features={"domains": ["a.com"]}, enriched={"domains": {"b.com": [{"rank": 1, "title": "t", "snippet": "", "url": ""}]}})
    with pytest.raises(ds.DatasetValidationError):
        ds.load(bad)


def test_enriched_keys_matched_after_normalization():
    d = doc(features={"domains": ["API.a.com"]}, enriched={"domains": {"API.a.com": [{"rank": 1, "title": "t", "snippet": "", "url": ""}]}})
    data = ds.load(d)
    assert data.enriched["d1"].n_results(FeatureType.DOMAINS) == 1


def test_golden_fixture_hand_counts(fixtures_dir):
    data = ds.load(fixtures_dir / "golden" / "dataset.json")
    assert len(data.devices) == 10
    assert len(data.truth) == 10
    counts = {t: sum(len(d.texts(t)) for d in data.devices) for t in FeatureType}
    assert counts[FeatureType.HOSTNAME] == 6
    assert counts[FeatureType.DOMAINS] == 6
    assert counts[FeatureType.TLS_ISSUER] == 1
    assert counts[FeatureType.USER_AGENT] == 0
    assert sum(e.n_results(t) for e in data.enriched.values() for t in FeatureType) == 15


def test_document_round_trip_is_byte_stable(fixtures_dir):
    text = (fixtures_dir / "golden" / "dataset.json").read_text()
    data = ds.load(json.loads(text))
    out = ds.dumps(ds.to_document(data.devices, data.truth, data.enriched))
    again = ds.load(json.loads(out))
    assert again.devices == data.devices
    assert again.enriched == data.enriched
    assert ds.dumps(ds.to_document(again.devices, again.truth, again.enriched)) == out


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ds.DatasetValidationError):
        ds.load(p)
