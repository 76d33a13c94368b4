from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotlabel.catalogs import VendorCatalog, VendorEntry
from iotlabel.evaluation import (
    THRESHOLD_GRID,
    WEIGHT_GRID,
    EvalReport,
    MissingTruthError,
    VendorFamily,
    coordinate_search,
    empty_result_ratio,
    evaluate,
    fold_assignment,
    format_table,
    group_similarity_report,
    hit_at_k,
    jaccard,
    optimize_config,
    per_feature_accuracy,
    select_unique_devices,
    table_hit1,
)
from iotlabel.features import FEATURE_TYPES, DeviceFeatures, FeatureType
from iotlabel.scoring import LabelResult, RankedLabel, ScoringConfig
from iotlabel.vendor import label_vendor

from oracles import make_device, random_device

D = FeatureType.DOMAINS
H = FeatureType.HOSTNAME


def res(*labels):
    return LabelResult([RankedLabel(l, 1.0 / (i + 1)) for i, l in enumerate(labels)])


def test_hit_examples():
    results = {"a": res("x", "y"), "b": res("y", "x"), "c": res()}
    truth = {"a": "x", "b": "x", "c": "x"}
    assert hit_at_k(results, truth, 1) == pytest.approx(1 / 3)
    assert hit_at_k(results, truth, 2) == pytest.approx(2 / 3)
    assert empty_result_ratio(results) == pytest.approx(1 / 3)
    with pytest.raises(MissingTruthError):
        hit_at_k({"z": res("x")}, truth, 1)
    with pytest.raises(ValueError):
        hit_at_k(results, truth, 0)


def test_jaccard_examples():
    assert jaccard({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert jaccard([], []) == 0.0
    assert jaccard({"a"}, {"a"}) == 1.0


def test_eval_report_guards_and_table():
    with pytest.raises(ValueError):
        EvalReport("V", "V", "all", 0.9, 0.8, 0.0, 10)
    r = evaluate({"a": res("x")}, {"a": "x"}, "Search+Match", "V")
    table = format_table([r])
    assert table.splitlines()[0].split() == ["Method", "Catalog", "Features", "HIT1", "HIT2"]
    assert "1.00" in table
    assert r.labeled_fraction == 1.0


def test_select_unique_devices_is_seeded():
    devs = [DeviceFeatures(f"d{i}") for i in range(12)]
    truth = {f"d{i}": ("v", f"f{i % 3}") for i in range(12)}
    a = select_unique_devices(devs, truth, 7)
    assert a == select_unique_devices(devs, truth, 7)
    assert sorted(truth[d.device_id] for d in a) == [("v", "f0"), ("v", "f1"), ("v", "f2")]
    seen = {tuple(d.device_id for d in select_unique_devices(devs, truth, s)) for s in range(20)}
    assert len(seen) > 1


def test_group_similarity():
    devs = [
        DeviceFeatures.from_raw("a", None, {D: ["x.com", "y.com"]}),
        DeviceFeatures.from_raw("b", None, {D: ["x.com"]}),
        DeviceFeatures.from_raw("c", None, {D: ["z.com"]}),
    ]
    truth = {"a": ("v", "f"), "b": ("v", "f"), "c": ("w", "g")}
    rep = group_similarity_report(devs, truth)
    assert rep["n_groups"] == 1
    assert rep["overall"]["domains"] == {"mean": 0.5, "sd": 0.0}
    with pytest.raises(ValueError):
        group_similarity_report(devs[2:], truth)


def test_per_feature_accuracy():
    devs = [
        make_device("a", {D: {"a.com": [("belkin", "")]}, H: {"h": [("samsung", "")]}}),
        make_device("b", {H: {"h": [("belkin", "")]}}),
    ]
    V = VendorCatalog([VendorEntry("belkin"), VendorEntry("samsung")])
    acc = per_feature_accuracy(devs, {"a": "belkin", "b": "belkin"}, lambda d, c: label_vendor(d, V, c), D)
    assert acc.accuracy == 1.0 and acc.availability == 0.5 and acc.n_devices == 1
    acc_h = per_feature_accuracy(devs, {"a": "belkin", "b": "belkin"}, lambda d, c: label_vendor(d, V, c), H)
    assert acc_h.accuracy == 0.5 and acc_h.availability == 1.0


def test_fold_assignment_partitions():
    ids = [f"d{i}" for i in range(23)]
    folds = fold_assignment(ids, 5, 3)
    assert sorted(i for f in folds for i in f) == sorted(ids)
    assert {len(f) for f in folds} <= {4, 5}
    assert folds == fold_assignment(ids, 5, 3)
    assert folds != fold_assignment(ids, 5, 4)


def test_coordinate_search_finds_separable_optimum():
    target = [1.0, 0.0, 0.5, 0.0, 0.25]

    def objective(w, th):
        return -sum(abs(a - b) for a, b in zip(w, target)) - sum(th)

    w, th, best = coordinate_search(objective)
    assert list(w) == target and list(th) == [0] * len(FEATURE_TYPES) and best == -0.0


def test_score_table_agrees_with_labeler():
    rng = random.Random(11)
    V = VendorCatalog([VendorEntry(n, a) for n, a in (("acme", ()), ("belkin", ("wemo",)), ("zeta", ()), ("lg", ()))])
    fam = VendorFamily(V)
    for i in range(60):
        dev = random_device(rng, f"d{i}")
        table = fam.table(dev)
        w = [rng.choice(WEIGHT_GRID[:-1]) for _ in FEATURE_TYPES]
        th = [rng.randrange(len(THRESHOLD_GRID)) for _ in FEATURE_TYPES]
        cfg = ScoringConfig(dict(zip(FEATURE_TYPES, w)), {t: THRESHOLD_GRID[j] for t, j in zip(FEATURE_TYPES, th)})
        assert table.top(np.array(w), th) == label_vendor(dev, V, cfg).top
        truth = {dev.device_id: label_vendor(dev, V, cfg).top or "?"}
        assert table_hit1([table], truth, w, th) == (1.0 if truth[dev.device_id] != "?" else 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.lists(st.sampled_from("abcde"), max_size=4, unique=True), st.sampled_from("abcde")), min_size=1, max_size=15))
def test_hit1_le_hit2_and_empty_ratio(rows):
    results = {f"d{i}": res(*labels) for i, (labels, _) in enumerate(rows)}
    truth = {f"d{i}": t for i, (_, t) in enumerate(rows)}
    h1, h2 = hit_at_k(results, truth, 1), hit_at_k(results, truth, 2)
    assert 0 <= h1 <= h2 <= 1
    labeled = sum(1 for r in results.values() if not r.abstained) / len(results)
    assert empty_result_ratio(results) == pytest.approx(1 - labeled)


def _random_labeled(rng, n):
    V = VendorCatalog([VendorEntry(v) for v in ("acme", "belkin", "zeta", "lg")])
    devices = [random_device(rng, f"d{i}") for i in range(n)]
    truth = {d.device_id: rng.choice(V.names) for d in devices}
    return devices, truth, V


def test_optimized_training_hit1_never_below_uniform():
    rng = random.Random(21)
    for _ in range(5):
        devices, truth, V = _random_labeled(rng, 15)
        r = optimize_config(devices, truth, VendorFamily(V), folds=5, seed=1)
        assert r.train_hit1 >= r.uniform_train_hit1


def test_uniform_signal_keeps_uniform_config():
    # every type names the true vendor equally often, so all configs tie
    devices, truth = [], {}
    for i, v in enumerate(["acme", "belkin", "zeta", "lg", "acme", "belkin"]):
        spec = {t: {f"{t.value}{i}": [(f"{v} device", "")]} for t in FEATURE_TYPES if t is not FeatureType.OUI}
        devices.append(make_device(f"d{i}", spec))
        truth[f"d{i}"] = v
    V = VendorCatalog([VendorEntry(v) for v in ("acme", "belkin", "zeta", "lg")])
    r = optimize_config(devices, truth, VendorFamily(V), folds=3, seed=0)
    assert r.config == ScoringConfig()
