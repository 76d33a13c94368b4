"""Function labeling by zero-shot classification against vendor-restricted candidates."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from .backends import BackendError, Classifier, classify_text
from .catalogs import Catalogs, candidate_functions
from .enrichment import EnrichedDevice
from .features import FEATURE_TYPES
from .scoring import LabelResult, ResultRow, ScoringConfig, aggregate, build_result
from .vendor import DEFAULT_TOP_K, label_vendor

logger = logging.getLogger(__name__)

EXCERPT_CHARS = 200


@dataclass(frozen=True)
class TypeLabel:
    vendor: Optional[str]
    function: Optional[str]

    def as_list(self) -> list[Optional[str]]:
        return [self.vendor, self.function]


@dataclass
class TypeResult:
    type: TypeLabel
    vendor: LabelResult
    function: LabelResult
    # (vendor, function) pair missing from the type catalog
    new_type: bool = False


def result_text(title: str, snippet: str) -> str:
    return " ".join(p for p in (title.strip(), snippet.strip()) if p)


def function_rows(
    device: EnrichedDevice,
    candidates: Sequence[str],
    backend: Classifier,
    parallelism: int = 1,
) -> list[ResultRow]:
    """Classifier confidences for every search result against ``candidates``."""
    items = [
        (t, ef.source.text, res)
        for t in FEATURE_TYPES
        for ef in device.enriched[t]
        for res in ef.results
    ]
    texts = list(dict.fromkeys(result_text(r.title, r.snippet) for _, _, r in items))

    def run(text: str):
        return {s.label: s.confidence for s in classify_text(text, candidates, backend)}

    if parallelism > 1 and len(texts) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            scored = dict(zip(texts, pool.map(run, texts)))
    else:
        scored = {text: run(text) for text in texts}

    rows = []
    for t, value, res in items:
        scores = scored[result_text(res.title, res.snippet)]
        quote = (res.snippet or res.title)[:EXCERPT_CHARS].strip()
        rows.append(ResultRow(t, value, res.rank, scores, {lbl: quote for lbl in scores}))
    return rows


def label_function(
    device: EnrichedDevice,
    vendor: Optional[str],
    catalogs: Catalogs,
    cfg: Optional[ScoringConfig] = None,
    backend: Optional[Classifier] = None,
    top_k: int = DEFAULT_TOP_K,
    candidates: Optional[Sequence[str]] = None,
    parallelism: int = 1,
) -> LabelResult:
    """Rank functions for ``device``.

    Candidates default to the vendor's functions in the type catalog, falling
    back to the whole function catalog when the vendor has none or is unknown.
    Abstains only when the device has no search results; backend failures
    leave the device unlabeled with ``error`` set.
    """
    if backend is None:
        raise ValueError("a classifier backend is required")
    cfg = cfg or ScoringConfig()
    fl = sorted(candidates) if candidates is not None else sorted(
        candidate_functions(vendor, catalogs.types, catalogs.functions)
    )
    if not any(device.n_results(t) for t in FEATURE_TYPES):
        return LabelResult()
    try:
        rows = function_rows(device, fl, backend, parallelism)
    except BackendError as exc:
        logger.warning("device %s left unlabeled: %s", device.device_id, exc)
        return LabelResult(error=str(exc))
    n = {t: device.n_results(t) for t in FEATURE_TYPES}
    totals, evidence = aggregate(rows, fl, cfg, n)
    return build_result(totals, evidence, top_k, keep_zero=True)


def label_type(
    device: EnrichedDevice,
    catalogs: Catalogs,
    cfg: Optional[ScoringConfig] = None,
    vendor_cfg: Optional[ScoringConfig] = None,
    backend: Optional[Classifier] = None,
    top_k: int = DEFAULT_TOP_K,
    parallelism: int = 1,
) -> TypeResult:
    vres = label_vendor(device, catalogs.vendors, vendor_cfg, top_k=top_k)
    fres = label_function(device, vres.top, catalogs, cfg, backend, top_k=top_k, parallelism=parallelism)
    tl = TypeLabel(vres.top, fres.top)
    new = tl.vendor is not None and tl.function is not None and (tl.vendor, tl.function) not in catalogs.types.as_set()
    return TypeResult(tl, vres, fres, new)
