"""Catalog acquisition and updating through a chat endpoint.

All operations return new catalog snapshots and never mutate their inputs.
Every addition carries provenance (device ids, query, exchange id).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .backends import (
    BackendError,
    ChatBackend,
    Classifier,
    _parse_entities,
    filter_entities,
    ner_extract,
)
from .catalogs import Catalogs, FunctionCatalog, TypeCatalog, VendorCatalog, VendorEntry, normalize_name
from .enrichment import EnrichedDevice
from .features import FEATURE_TYPES
from .function import label_function
from .scoring import LabelResult, ScoringConfig
from .vendor import score_vendor

logger = logging.getLogger(__name__)

ACQUIRE_PROMPT = (
    "You are helping build a catalog of IoT device manufacturers. List the top vendors that "
    "sell IoT devices of the given function. Reply with a JSON array of vendor names only."
)
VERIFY_PROMPT = (
    "Answer with a single word, True or False: does the given manufacturer produce IoT devices "
    "of the given function?"
)


class UpdateAborted(RuntimeError):
    """A stage failed; no catalog change was produced."""


@dataclass
class Addition:
    name: str
    provenance: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, **self.provenance}


@dataclass
class ChangeReport:
    operation: str
    before: dict[str, int]
    after: dict[str, int]
    additions: list[Addition] = field(default_factory=list)
    type_additions: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "operation": self.operation,
            "before": self.before,
            "after": self.after,
            "additions": [a.to_dict() for a in self.additions],
            "type_additions": self.type_additions,
        }


def _with_provenance(catalogs: Catalogs, vendors: VendorCatalog, types: TypeCatalog, vend_prov, type_prov) -> Catalogs:
    prov = {
        "vendors": dict(catalogs.provenance.get("vendors", {})),
        "types": dict(catalogs.provenance.get("types", {})),
    }
    prov["vendors"].update(vend_prov)
    prov["types"].update(type_prov)
    return Catalogs(vendors, catalogs.functions, types, prov)


def acquire_catalogs(
    seed_functions: FunctionCatalog,
    client: ChatBackend,
    base: Optional[Catalogs] = None,
) -> tuple[Catalogs, ChangeReport]:
    """Ask the chat endpoint for vendors of each function and build V and T.

    Per-function failures are logged and skipped.
    """
    vendors = base.vendors if base is not None else VendorCatalog([])
    types = base.types if base is not None else TypeCatalog([])
    start = Catalogs(vendors, seed_functions, types, dict(base.provenance) if base else {})
    before = start.sizes()
    new_entries: list[VendorEntry] = []
    new_pairs: list[tuple[str, str]] = []
    vend_prov: dict[str, Any] = {}
    type_prov: dict[str, Any] = {}
    additions: list[Addition] = []
    type_adds: list[dict[str, Any]] = []
    known = {e.key for e in vendors.entries}
    have_pairs = types.as_set()

    for function in seed_functions.names:
        try:
            ex = client.chat(ACQUIRE_PROMPT, f"Function: {function}", kind="acquire")
        except BackendError as exc:
            logger.warning("acquisition for %r failed: %s", function, exc)
            continue
        names = _parse_entities(ex.raw)
        for name in names:
            key = normalize_name(name)
            if not key:
                continue
            current = VendorCatalog(list(vendors.entries) + new_entries)
            resolved = current.resolve(key)
            if resolved is None and key not in known:
                new_entries.append(VendorEntry(key))
                known.add(key)
                resolved = key
                prov = {"source": "acquire", "function": function, "exchange": ex.id}
                vend_prov[key] = prov
                additions.append(Addition(key, prov))
            pair = (resolved or key, function)
            if pair not in have_pairs:
                have_pairs.add(pair)
                new_pairs.append(pair)
                tp = {"source": "acquire", "exchange": ex.id}
                type_prov[f"{pair[0]}|{pair[1]}"] = tp
                type_adds.append({"vendor": pair[0], "function": pair[1], **tp})

    out = _with_provenance(
        start,
        VendorCatalog(list(vendors.entries) + new_entries),
        types.with_additions(new_pairs),
        vend_prov,
        type_prov,
    )
    return out, ChangeReport("acquire", before, out.sizes(), additions, type_adds)


def _device_texts(device: EnrichedDevice) -> list[str]:
    return [
        " ".join(p for p in (r.title, r.snippet) if p)
        for t in FEATURE_TYPES
        for ef in device.enriched[t]
        for r in ef.results
    ]


def discover_vendors(devices: Sequence[EnrichedDevice], client: ChatBackend, chunk_chars: int = 8000):
    """NER over each device's search results, then the vendor filter over the union.

    Returns ``(vendor_entities, entity -> [(device_id, exchange_id)], filter_exchange_id)``.
    """
    seen: dict[str, list[tuple[str, str]]] = {}
    for dev in devices:
        texts = _device_texts(dev)
        if not texts:
            continue
        exchanges: list = []
        for ent in sorted(ner_extract(texts, client, chunk_chars, exchanges)):
            seen.setdefault(ent, []).append((dev.device_id, exchanges[0].id if exchanges else ""))
    if not seen:
        return set(), seen, None
    fex: list = []
    vendors = filter_entities(seen, client, fex)
    return vendors, seen, fex[0].id if fex else None


def _evidence_for(entity: str, device: Optional[EnrichedDevice]) -> Optional[str]:
    if device is None:
        return None
    for text in _device_texts(device):
        if re.search(re.escape(entity), text, re.IGNORECASE):
            return text[:200]
    return None


def update_vendor_catalog(
    devices: Sequence[EnrichedDevice],
    catalogs: Catalogs,
    client: ChatBackend,
    chunk_chars: int = 8000,
) -> tuple[Catalogs, ChangeReport]:
    """Append filtered NER entities that the vendor catalog cannot already resolve.

    Any stage failure raises ``UpdateAborted`` and produces no catalog.
    """
    try:
        vendors, seen, filter_id = discover_vendors(devices, client, chunk_chars)
    except (BackendError, ValueError) as exc:
        raise UpdateAborted(f"vendor update aborted: {exc}") from exc
    by_id = {d.device_id: d for d in devices}
    V = catalogs.vendors
    additions: list[Addition] = []
    prov: dict[str, Any] = {}
    for ent in sorted(vendors):
        if V.resolve(ent) is not None:
            continue
        sources = seen.get(ent, [])
        p = {
            "source": "update-vendors",
            "devices": sorted({d for d, _ in sources}),
            "ner_exchanges": sorted({x for _, x in sources if x}),
            "filter_exchange": filter_id,
            "evidence": _evidence_for(ent, by_id.get(sources[0][0])) if sources else None,
        }
        additions.append(Addition(ent, p))
        prov[ent] = p
    newV = V.with_additions(a.name for a in additions)
    out = _with_provenance(catalogs, newV, catalogs.types, prov, {})
    return out, ChangeReport("update-vendors", catalogs.sizes(), out.sizes(), additions)


def parse_verdict(raw: str) -> Optional[bool]:
    m = re.search(r"\b(true|false|yes|no)\b", raw, re.IGNORECASE)
    if not m:
        return None
    return m.group(1).lower() in ("true", "yes")


def update_type_catalog(
    device: EnrichedDevice,
    vendor: str,
    catalogs: Catalogs,
    cfg: Optional[ScoringConfig],
    backend: Classifier,
    client: ChatBackend,
) -> Optional[tuple[str, str]]:
    """Propose a new (vendor, function) pair when the full function catalog beats the vendor's own.

    The pair is returned only if the chat endpoint confirms the vendor makes
    that function.
    """
    if not vendor:
        raise ValueError("a known vendor is required")
    narrow = label_function(device, vendor, catalogs, cfg, backend)
    full = label_function(device, vendor, catalogs, cfg, backend, candidates=catalogs.functions.names)
    if full.abstained or full.error or narrow.error:
        return None
    winner = full.top
    if winner == narrow.top or full.best_score <= narrow.best_score:
        return None
    try:
        ex = client.chat(VERIFY_PROMPT, f"Manufacturer: {vendor}\nFunction: {winner}", kind="verify-type")
    except BackendError as exc:
        logger.warning("type verification for (%s, %s) failed: %s", vendor, winner, exc)
        return None
    verdict = parse_verdict(ex.raw)
    if verdict:
        return (vendor, winner)
    return None


def apply_type_additions(catalogs: Catalogs, pairs: Iterable[tuple[str, str]], provenance: Mapping[str, Any]) -> tuple[Catalogs, ChangeReport]:
    pairs = list(pairs)
    before = catalogs.sizes()
    newT = catalogs.types.with_additions(pairs)
    added = [p for p in pairs if p not in catalogs.types.as_set()]
    tprov = {f"{v}|{f}": dict(provenance.get(f"{v}|{f}", {})) for v, f in added}
    out = _with_provenance(catalogs, catalogs.vendors, newT, {}, tprov)
    report = ChangeReport(
        "update-types", before, out.sizes(), [],
        [{"vendor": v, "function": f, **tprov[f"{v}|{f}"]} for v, f in added],
    )
    return out, report


@dataclass
class Recommendation:
    device_id: str
    vendor: str
    score: float
    previous_label: Optional[str]
    previous_score: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "device_id": self.device_id,
            "vendor": self.vendor,
            "score": self.score,
            "previous_label": self.previous_label,
            "previous_score": self.previous_score,
        }


def periodic_revendor_check(
    devices: Sequence[EnrichedDevice],
    catalogs: Catalogs,
    labels: Mapping[str, LabelResult],
    client: Optional[ChatBackend] = None,
    new_vendors: Optional[Iterable[str]] = None,
    cfg: Optional[ScoringConfig] = None,
) -> list[Recommendation]:
    """Recommend relabeling devices where a newly discovered vendor outscores the stored label.

    New vendors come from ``new_vendors`` or, when omitted, from a vendor
    update run against ``client``.
    """
    if new_vendors is None:
        if client is None:
            raise ValueError("need either new_vendors or a chat client")
        _, report = update_vendor_catalog(devices, catalogs, client)
        new_vendors = [a.name for a in report.additions]
    fresh = [v for v in new_vendors if catalogs.vendors.resolve(v) is None]
    recs = []
    for dev in devices:
        stored = labels.get(dev.device_id, LabelResult())
        best: Optional[Recommendation] = None
        for v in sorted(fresh):
            score, _ = score_vendor(VendorEntry(v), dev, cfg)
            if score > stored.best_score and (best is None or score > best.score):
                best = Recommendation(dev.device_id, normalize_name(v), score, stored.top, stored.best_score)
        if best is not None:
            recs.append(best)
    return recs


__all__ = [
    "acquire_catalogs",
    "update_vendor_catalog",
    "update_type_catalog",
    "apply_type_additions",
    "periodic_revendor_check",
    "discover_vendors",
    "ChangeReport",
    "Recommendation",
    "UpdateAborted",
]
