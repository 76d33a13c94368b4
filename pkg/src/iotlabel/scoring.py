"""Scoring configuration, label results and the shared aggregation rule.

Both labelers produce, for every search result attached to a feature value,
a per-label score S (a match count for vendors, a classifier confidence for
functions). A label's aggregate is

    sum over feature types t of  w_t * (sum of S >= theta_t over results of t) / n_t

where n_t is the number of search results of type t when normalization is on
and 1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .features import FEATURE_TYPES, FeatureType


@dataclass(frozen=True)
class ScoringConfig:
    weights: Mapping[FeatureType, float] = field(default_factory=lambda: {t: 1.0 for t in FEATURE_TYPES})
    thresholds: Mapping[FeatureType, float] = field(default_factory=lambda: {t: 0.0 for t in FEATURE_TYPES})
    normalize: bool = True

    def __post_init__(self) -> None:
        w = {t: float(self.weights.get(t, 0.0)) for t in FEATURE_TYPES}
        th = {t: float(self.thresholds.get(t, 0.0)) for t in FEATURE_TYPES}
        if any(v < 0 for v in w.values()) or not any(v > 0 for v in w.values()):
            raise ValueError("weights must be non-negative with at least one positive")
        if any(v < 0 for v in th.values()):
            raise ValueError("thresholds must be non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "thresholds", th)

    @classmethod
    def uniform(cls) -> "ScoringConfig":
        return cls()

    @classmethod
    def only(cls, t: FeatureType) -> "ScoringConfig":
        """Consume a single feature type."""
        return cls(weights={u: (1.0 if u is t else 0.0) for u in FEATURE_TYPES})

    def scaled(self, c: float) -> "ScoringConfig":
        return ScoringConfig({t: w * c for t, w in self.weights.items()}, self.thresholds, self.normalize)

    def to_dict(self) -> dict[str, Any]:
        return {
            "weights": {t.value: self.weights[t] for t in FEATURE_TYPES},
            "thresholds": {t.value: self.thresholds[t] for t in FEATURE_TYPES},
            "normalize": self.normalize,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoringConfig":
        return cls(
            {FeatureType.parse(k): v for k, v in d.get("weights", {}).items()},
            {FeatureType.parse(k): v for k, v in d.get("thresholds", {}).items()},
            bool(d.get("normalize", True)),
        )


@dataclass(frozen=True)
class EvidenceItem:
    feature_type: FeatureType
    source_value: str
    result_rank: int
    excerpt: str
    contribution: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.feature_type.value,
            "value": self.source_value,
            "rank": self.result_rank,
            "excerpt": self.excerpt,
            "contribution": round(self.contribution, 10),
        }


@dataclass
class RankedLabel:
    label: str
    score: float
    evidence: list[EvidenceItem] = field(default_factory=list)


@dataclass
class LabelResult:
    ranked: list[RankedLabel] = field(default_factory=list)
    # aggregate score of every label considered, ranked or not
    scores: dict[str, float] = field(default_factory=dict)
    # set when a backend failure left the device unlabeled
    error: Optional[str] = None

    @property
    def abstained(self) -> bool:
        return not self.ranked

    @property
    def top(self) -> Optional[str]:
        return self.ranked[0].label if self.ranked else None

    @property
    def best_score(self) -> float:
        return self.ranked[0].score if self.ranked else 0.0

    def labels(self, k: Optional[int] = None) -> list[str]:
        items = self.ranked if k is None else self.ranked[:k]
        return [r.label for r in items]

    def rank_of(self, label: str) -> Optional[int]:
        for i, r in enumerate(self.ranked, 1):
            if r.label == label:
                return i
        return None

    def to_report(self, max_evidence: int = 5) -> dict[str, Any]:
        first = self.ranked[0] if self.ranked else None
        return {
            "label": first.label if first else None,
            "score": round(first.score, 10) if first else 0.0,
            "top2": [{"label": r.label, "score": round(r.score, 10)} for r in self.ranked[:2]],
            "abstained": self.abstained,
            "evidence": [e.to_dict() for e in (first.evidence[:max_evidence] if first else [])],
        }


@dataclass(frozen=True)
class ResultRow:
    """Per-label scores of one search result."""

    feature_type: FeatureType
    source_value: str
    rank: int
    scores: Mapping[str, float]
    excerpts: Mapping[str, str] = field(default_factory=dict)


TIE_DECIMALS = 9


def rank_labels(scores: Mapping[str, float], labels: Optional[Iterable[str]] = None) -> list[str]:
    """Score descending, ties broken lexicographically on the label.

    Scores are compared relative to the largest one, rounded to
    ``TIE_DECIMALS`` places, so float noise from summation order or weight
    scaling cannot reorder labels that are mathematically tied.
    """
    keys = list(scores if labels is None else labels)
    top = max((abs(scores[k]) for k in keys), default=0.0)

    def key(lbl: str):
        rel = round(scores[lbl] / top, TIE_DECIMALS) if top > 0 else 0.0
        return (-rel, lbl)

    return sorted(keys, key=key)


def aggregate(
    rows: Sequence[ResultRow],
    labels: Sequence[str],
    cfg: ScoringConfig,
    n_results: Mapping[FeatureType, int],
) -> tuple[dict[str, float], dict[str, list[EvidenceItem]]]:
    totals = {lbl: 0.0 for lbl in labels}
    evidence: dict[str, list[EvidenceItem]] = {lbl: [] for lbl in labels}
    for t in FEATURE_TYPES:
        w = cfg.weights[t]
        theta = cfg.thresholds[t]
        denom = n_results.get(t, 0) if cfg.normalize else 1
        if denom == 0:
            continue
        typed = [r for r in rows if r.feature_type is t]
        for lbl in labels:
            kept = 0.0
            for row in typed:
                s = row.scores.get(lbl, 0.0)
                if s < theta:
                    continue
                kept += s
                if s > 0 and w > 0 and lbl in row.excerpts:
                    evidence[lbl].append(
                        EvidenceItem(t, row.source_value, row.rank, row.excerpts[lbl], w * s / denom)
                    )
            totals[lbl] += w * (kept / denom)
    order = {t: i for i, t in enumerate(FEATURE_TYPES)}
    for items in evidence.values():
        items.sort(key=lambda e: (-e.contribution, order[e.feature_type], e.source_value, e.result_rank))
    return totals, evidence


def build_result(
    totals: Mapping[str, float],
    evidence: Mapping[str, list[EvidenceItem]],
    top_k: int,
    keep_zero: bool = False,
) -> LabelResult:
    order = rank_labels(totals)
    if not keep_zero:
        order = [lbl for lbl in order if totals[lbl] > 0]
    ranked = [RankedLabel(lbl, totals[lbl], list(evidence.get(lbl, []))) for lbl in order[:top_k]]
    return LabelResult(ranked, dict(totals))
