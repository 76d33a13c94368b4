"""Vendor labeling by string matching against enriched search results."""

from __future__ import annotations

from typing import Optional, Sequence

from .catalogs import VendorCatalog, VendorEntry, normalize_name
from .enrichment import EnrichedDevice
from .features import FEATURE_TYPES, DeviceFeatures
from .matching import excerpt, find_spans, fold, match_count
from .oui import UNKNOWN, OuiDatabase
from .scoring import (
    EvidenceItem,
    LabelResult,
    RankedLabel,
    ResultRow,
    ScoringConfig,
    aggregate,
    build_result,
)

DEFAULT_TOP_K = 3

__all__ = ["match_count", "vendor_rows", "score_vendor", "label_vendor", "oui_baseline"]


def _strings(vendor) -> tuple[str, ...]:
    if isinstance(vendor, VendorEntry):
        return vendor.match_strings()
    if isinstance(vendor, str):
        return (vendor,)
    return tuple(vendor)


def vendor_rows(device: EnrichedDevice, vendors: Sequence[tuple[str, tuple[str, ...]]]) -> list[ResultRow]:
    """One row per search result with the match count of every vendor.

    A result's count is the sum over its title and its snippet, matched
    separately so no hit can straddle the two fields.
    """
    rows = []
    for t in FEATURE_TYPES:
        for ef in device.enriched[t]:
            for res in ef.results:
                scores: dict[str, float] = {}
                excerpts: dict[str, str] = {}
                fields = [fold(res.title), fold(res.snippet)]
                for label, strings in vendors:
                    n = 0
                    for ft in fields:
                        spans = find_spans(strings, ft)
                        if spans and label not in excerpts:
                            excerpts[label] = excerpt(ft, spans[0])
                        n += len(spans)
                    if n:
                        scores[label] = float(n)
                rows.append(ResultRow(t, ef.source.text, res.rank, scores, excerpts))
    return rows


def _n_results(device: EnrichedDevice):
    return {t: device.n_results(t) for t in FEATURE_TYPES}


def score_vendor(vendor, device: EnrichedDevice, cfg: Optional[ScoringConfig] = None) -> tuple[float, list[EvidenceItem]]:
    """Aggregate score and evidence of one vendor.

    ``vendor`` is a VendorEntry, a single label string, or a sequence of strings
    (canonical name first).
    """
    cfg = cfg or ScoringConfig()
    strings = _strings(vendor)
    label = normalize_name(strings[0]) if strings else ""
    rows = vendor_rows(device, [(label, strings)])
    totals, evidence = aggregate(rows, [label], cfg, _n_results(device))
    return totals[label], evidence[label]


def label_vendor(
    device: EnrichedDevice,
    V: VendorCatalog,
    cfg: Optional[ScoringConfig] = None,
    top_k: int = DEFAULT_TOP_K,
) -> LabelResult:
    if not len(V):
        raise ValueError("vendor catalog is empty")
    cfg = cfg or ScoringConfig()
    vendors = [(e.key, e.match_strings()) for e in V.entries]
    rows = vendor_rows(device, vendors)
    totals, evidence = aggregate(rows, [v for v, _ in vendors], cfg, _n_results(device))
    return build_result(totals, evidence, top_k)


def oui_baseline(device: DeviceFeatures, db: OuiDatabase, V: Optional[VendorCatalog] = None) -> LabelResult:
    """Label a device with its NIC registrant (resolved to a catalog vendor when possible)."""
    if not device.mac:
        return LabelResult()
    hit = db.lookup(device.mac)
    if hit is UNKNOWN:
        return LabelResult()
    label = hit
    if V is not None:
        resolved = V.resolve(hit)
        if resolved is None:
            # "Belkin International Inc." -> catalog vendor "belkin"
            reg = normalize_name(hit)
            keys = [k for e in V.entries for k in e.match_strings() if reg == k or reg.startswith(k + " ")]
            if keys:
                resolved = V.resolve(max(keys, key=lambda k: (len(k), k)))
        label = resolved or hit
    return LabelResult([RankedLabel(label, 1.0)], {label: 1.0})
