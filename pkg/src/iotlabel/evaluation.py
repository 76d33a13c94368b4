"""Metrics, dataset hygiene and cross-validated weight/threshold search."""

from __future__ import annotations

import json
import random
import statistics
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .backends import Classifier
from .catalogs import Catalogs, VendorCatalog, candidate_functions, normalize_function, normalize_name
from .enrichment import EnrichedDevice
from .features import FEATURE_TYPES, DeviceFeatures, FeatureType
from .function import function_rows
from .scoring import TIE_DECIMALS, LabelResult, ResultRow, ScoringConfig
from .vendor import vendor_rows

WEIGHT_GRID = (1.0, 0.75, 0.5, 0.25, 0.0)
THRESHOLD_GRID = (0.0, 0.1, 0.3, 0.5)


class MissingTruthError(KeyError):
    pass


# ---------------------------------------------------------------------------
# ground truth and metrics


def truth_labels(
    truth: Mapping[str, tuple[str, str]],
    kind: str,
    catalogs: Optional[Catalogs] = None,
) -> dict[str, str]:
    """Project ``device -> (vendor, function)`` onto one label kind, normalized like labeler output."""
    if kind == "vendor":
        def norm(v: str) -> str:
            if catalogs is not None:
                return catalogs.vendors.resolve(v) or normalize_name(v)
            return normalize_name(v)
        return {d: norm(v) for d, (v, _) in truth.items()}
    if kind == "function":
        return {d: normalize_function(f) for d, (_, f) in truth.items()}
    raise ValueError(f"unknown label kind {kind!r}")


def hit_at_k(results: Mapping[str, LabelResult], truth: Mapping[str, str], k: int) -> float:
    """Fraction of devices whose true label is among the top ``k``; abstentions are misses."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        return 0.0
    hits = 0
    for dev, res in results.items():
        if dev not in truth:
            raise MissingTruthError(dev)
        if truth[dev] in res.labels(k):
            hits += 1
    return hits / len(results)


def empty_result_ratio(results: Mapping[str, LabelResult]) -> float:
    if not results:
        return 0.0
    return sum(1 for r in results.values() if r.abstained) / len(results)


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


@dataclass(frozen=True)
class FeatureAccuracy:
    accuracy: float
    availability: float
    n_devices: int

    def to_dict(self) -> dict[str, Any]:
        return {"accuracy": self.accuracy, "availability": self.availability, "n_devices": self.n_devices}


Labeler = Callable[[EnrichedDevice, ScoringConfig], LabelResult]


def per_feature_accuracy(
    devices: Sequence[EnrichedDevice],
    truth: Mapping[str, str],
    labeler: Labeler,
    feature_type: FeatureType,
) -> FeatureAccuracy:
    """Top-1 accuracy of ``labeler`` fed only ``feature_type``, over devices that have it."""
    if not devices:
        return FeatureAccuracy(0.0, 0.0, 0)
    cfg = ScoringConfig.only(feature_type)
    having = [d for d in devices if d.device.texts(feature_type)]
    correct = 0
    for d in having:
        if d.device_id not in truth:
            raise MissingTruthError(d.device_id)
        res = labeler(d.restricted([feature_type]), cfg)
        correct += res.top == truth[d.device_id]
    acc = correct / len(having) if having else 0.0
    return FeatureAccuracy(acc, len(having) / len(devices), len(having))


# ---------------------------------------------------------------------------
# dataset hygiene


def _device_id(d: Any) -> str:
    return d.device_id


def select_unique_devices(devices: Sequence[Any], truth: Mapping[str, tuple[str, str]], seed: int) -> list[Any]:
    """One seeded draw per (vendor, function) group, returned in input order."""
    groups: dict[tuple[str, str], list[int]] = {}
    for i, d in enumerate(devices):
        did = _device_id(d)
        if did not in truth:
            raise MissingTruthError(did)
        groups.setdefault(tuple(truth[did]), []).append(i)
    rng = random.Random(seed)
    chosen = {rng.choice(groups[g]) for g in sorted(groups)}
    return [d for i, d in enumerate(devices) if i in chosen]


@dataclass
class SimilarityStat:
    mean: float
    sd: float

    def to_dict(self) -> dict[str, float]:
        return {"mean": self.mean, "sd": self.sd}


def group_similarity_report(
    devices: Sequence[DeviceFeatures],
    truth: Mapping[str, tuple[str, str]],
) -> dict[str, Any]:
    """Pairwise Jaccard per feature type, averaged within each type group and then across groups.

    The spread is the population standard deviation of the group means.
    """
    groups: dict[tuple[str, str], list[DeviceFeatures]] = {}
    for d in devices:
        if d.device_id not in truth:
            raise MissingTruthError(d.device_id)
        groups.setdefault(tuple(truth[d.device_id]), []).append(d)
    multi = {g: ds for g, ds in sorted(groups.items()) if len(ds) >= 2}
    if not multi:
        raise ValueError("need at least one group with two or more devices")
    per_group: dict[str, dict[str, float]] = {}
    overall: dict[str, SimilarityStat] = {}
    for t in FEATURE_TYPES:
        means = []
        for g, ds in multi.items():
            sims = [jaccard(a.texts(t), b.texts(t)) for a, b in combinations(ds, 2)]
            m = sum(sims) / len(sims)
            per_group.setdefault(f"{g[0]}|{g[1]}", {})[t.value] = m
            means.append(m)
        overall[t.value] = SimilarityStat(statistics.fmean(means), statistics.pstdev(means))
    return {
        "groups": per_group,
        "overall": {k: v.to_dict() for k, v in overall.items()},
        "n_groups": len(multi),
    }


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    method: str
    catalog: str
    features: str
    hit1: float
    hit2: float
    empty_ratio: float
    n_devices: int
    per_feature: dict[str, FeatureAccuracy] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0 <= self.hit1 <= self.hit2 <= 1):
            raise ValueError("expected 0 <= hit1 <= hit2 <= 1")

    @property
    def labeled_fraction(self) -> float:
        return 1.0 - self.empty_ratio

    def to_dict(self) -> dict[str, Any]:
        out = {
            "method": self.method,
            "catalog": self.catalog,
            "features": self.features,
            "hit1": self.hit1,
            "hit2": self.hit2,
            "empty_ratio": self.empty_ratio,
            "n_devices": self.n_devices,
            "per_feature": {k: v.to_dict() for k, v in self.per_feature.items()},
        }
        if self.extra:
            out["extra"] = self.extra
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def evaluate(
    results: Mapping[str, LabelResult],
    truth: Mapping[str, str],
    method: str,
    catalog: str,
    features: str = "all",
) -> EvalReport:
    return EvalReport(
        method, catalog, features,
        hit_at_k(results, truth, 1), hit_at_k(results, truth, 2),
        empty_result_ratio(results), len(results),
    )


TABLE_COLUMNS = ("Method", "Catalog", "Features", "HIT1", "HIT2")


def format_table(reports: Sequence[EvalReport]) -> str:
    rows = [TABLE_COLUMNS] + [
        (r.method, r.catalog, r.features, f"{r.hit1:.2f}", f"{r.hit2:.2f}") for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# precomputed score tables for fast config search


@dataclass
class ScoreTable:
    """Per-device sums of kept scores for every (type, threshold, label).

    ``sums[t, j, l]`` is the sum of scores >= THRESHOLD_GRID[j] of label ``l``
    over the device's type-``t`` results, already divided by n_t when the
    table was built with normalization.
    """

    device_id: str
    labels: list[str]
    sums: np.ndarray
    has_results: bool
    keep_zero: bool

    def top(self, w: np.ndarray, theta_idx: Sequence[int]) -> Optional[str]:
        if not self.labels or (self.keep_zero and not self.has_results):
            return None
        scores = sum(w[t] * self.sums[t, theta_idx[t]] for t in range(len(FEATURE_TYPES)))
        best = float(np.max(np.abs(scores)))
        if best <= 0:
            if not self.keep_zero:
                return None
            return self.labels[0]
        rel = np.round(scores / best, TIE_DECIMALS)
        i = int(np.argmax(rel))  # labels are sorted, so the first max is the lexicographic winner
        if not self.keep_zero and scores[i] <= 0:
            return None
        return self.labels[i]


def build_table(
    device: EnrichedDevice,
    labels: Sequence[str],
    rows: Sequence[ResultRow],
    keep_zero: bool,
    thresholds: Sequence[float] = THRESHOLD_GRID,
    normalize: bool = True,
) -> ScoreTable:
    labels = sorted(labels)
    col = {lbl: i for i, lbl in enumerate(labels)}
    order = {t: i for i, t in enumerate(FEATURE_TYPES)}
    sums = np.zeros((len(FEATURE_TYPES), len(thresholds), len(labels)))
    for row in rows:
        ti = order[row.feature_type]
        for lbl, s in row.scores.items():
            if lbl not in col:
                continue
            for j, theta in enumerate(thresholds):
                if s >= theta:
                    sums[ti, j, col[lbl]] += s
    if normalize:
        for t in FEATURE_TYPES:
            n = device.n_results(t)
            if n:
                sums[order[t]] /= n
            else:
                sums[order[t]] = 0.0
    has = any(device.n_results(t) for t in FEATURE_TYPES)
    return ScoreTable(device.device_id, labels, sums, has, keep_zero)


class VendorFamily:
    keep_zero = False

    def __init__(self, vendors: VendorCatalog):
        self.vendors = [(e.key, e.match_strings()) for e in vendors.entries]

    def table(self, device: EnrichedDevice) -> ScoreTable:
        rows = vendor_rows(device, self.vendors)
        return build_table(device, [v for v, _ in self.vendors], rows, self.keep_zero)


class FunctionFamily:
    """Function labeler family; candidates follow each device's vendor (predicted or given)."""

    keep_zero = True

    def __init__(self, catalogs: Catalogs, backend: Classifier, vendor_of: Mapping[str, Optional[str]]):
        self.catalogs = catalogs
        self.backend = backend
        self.vendor_of = vendor_of

    def table(self, device: EnrichedDevice) -> ScoreTable:
        vendor = self.vendor_of.get(device.device_id)
        fl = sorted(candidate_functions(vendor, self.catalogs.types, self.catalogs.functions))
        if not any(device.n_results(t) for t in FEATURE_TYPES):
            return build_table(device, fl, [], True)
        return build_table(device, fl, function_rows(device, fl, self.backend), True)


def _vector(cfg_w: Sequence[float]) -> np.ndarray:
    return np.asarray(cfg_w, dtype=float)


def table_hit1(tables: Sequence[ScoreTable], truth: Mapping[str, str], w, theta_idx) -> float:
    if not tables:
        return 0.0
    w = _vector(w)
    return sum(t.top(w, theta_idx) == truth[t.device_id] for t in tables) / len(tables)


def config_from_point(w: Sequence[float], theta_idx: Sequence[int]) -> ScoringConfig:
    return ScoringConfig(
        {t: float(w[i]) for i, t in enumerate(FEATURE_TYPES)},
        {t: THRESHOLD_GRID[theta_idx[i]] for i, t in enumerate(FEATURE_TYPES)},
        True,
    )


def coordinate_search(objective: Callable[[Sequence[float], Sequence[int]], float], max_rounds: int = 20):
    """Coordinate ascent over the weight and threshold grids starting from the uniform config.

    Each coordinate takes the first grid value (in grid order) reaching the
    best objective, so ties resolve toward the lexicographically first grid
    point. All-zero weight vectors are never evaluated.
    """
    nt = len(FEATURE_TYPES)
    w = [WEIGHT_GRID[0]] * nt
    th = [0] * nt
    best = objective(w, th)
    for _ in range(max_rounds):
        changed = False
        for c in range(2 * nt):
            choices = WEIGHT_GRID if c < nt else range(len(THRESHOLD_GRID))
            pick, pick_val = None, None
            for v in choices:
                cand_w, cand_th = list(w), list(th)
                if c < nt:
                    cand_w[c] = v
                    if not any(cand_w):
                        continue
                else:
                    cand_th[c - nt] = v
                val = objective(cand_w, cand_th)
                if pick_val is None or val > pick_val + 1e-12:
                    pick, pick_val = (cand_w, cand_th), val
            if pick is not None and (pick[0] != w or pick[1] != th):
                w, th = pick
                best = pick_val
                changed = True
        if not changed:
            break
    return w, th, best


def fold_assignment(ids: Sequence[str], folds: int, seed: int) -> list[list[str]]:
    order = list(ids)
    random.Random(seed).shuffle(order)
    return [order[i::folds] for i in range(folds)]


@dataclass
class OptimizeResult:
    config: ScoringConfig
    train_hit1: float
    uniform_train_hit1: float
    fold_test_hit1: list[float]
    uniform_fold_test_hit1: list[float]
    fold_configs: list[ScoringConfig]
    folds: list[list[str]]

    @property
    def mean_test_hit1(self) -> float:
        return statistics.fmean(self.fold_test_hit1)

    @property
    def uniform_mean_test_hit1(self) -> float:
        return statistics.fmean(self.uniform_fold_test_hit1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "train_hit1": self.train_hit1,
            "uniform_train_hit1": self.uniform_train_hit1,
            "fold_test_hit1": self.fold_test_hit1,
            "uniform_fold_test_hit1": self.uniform_fold_test_hit1,
            "mean_test_hit1": self.mean_test_hit1,
            "fold_configs": [c.to_dict() for c in self.fold_configs],
            "folds": self.folds,
        }


def optimize_config(
    devices: Sequence[EnrichedDevice],
    truth: Mapping[str, str],
    family,
    folds: int = 5,
    seed: int = 0,
    tables: Optional[Sequence[ScoreTable]] = None,
) -> OptimizeResult:
    """Seeded k-fold search over weights and thresholds maximizing top-1 accuracy.

    Each fold's own optimum is scored on its held-out part. The returned
    config maximizes the mean training-fold HIT1.
    """
    if len(devices) < folds or folds < 2:
        raise ValueError(f"need at least {folds} devices and 2 folds")
    for d in devices:
        if d.device_id not in truth:
            raise MissingTruthError(d.device_id)
    if tables is None:
        tables = [family.table(d) for d in devices]
    by_id = {t.device_id: t for t in tables}
    split = fold_assignment([d.device_id for d in devices], folds, seed)
    train_sets = [[by_id[i] for f, part in enumerate(split) if f != k for i in part] for k in range(folds)]
    test_sets = [[by_id[i] for i in split[k]] for k in range(folds)]

    uniform = ([WEIGHT_GRID[0]] * len(FEATURE_TYPES), [0] * len(FEATURE_TYPES))
    fold_cfgs, test_hits, uni_test = [], [], []
    for k in range(folds):
        w, th, _ = coordinate_search(lambda w, th: table_hit1(train_sets[k], truth, w, th))
        fold_cfgs.append(config_from_point(w, th))
        test_hits.append(table_hit1(test_sets[k], truth, w, th))
        uni_test.append(table_hit1(test_sets[k], truth, *uniform))

    def mean_train(w, th):
        return statistics.fmean(table_hit1(s, truth, w, th) for s in train_sets)

    w, th, best = coordinate_search(mean_train)
    return OptimizeResult(
        config_from_point(w, th),
        best,
        mean_train(*uniform),
        test_hits,
        uni_test,
        fold_cfgs,
        split,
    )
