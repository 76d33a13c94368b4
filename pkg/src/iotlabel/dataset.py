"""Dataset JSON format shared by extraction, enrichment and labeling.

Top level ``{"devices": [...]}``; each device::

    {"device_id": str, "mac": str | null,
     "ground_truth": {"vendor": str, "function": str} | null,
     "features": {"hostname": [str], "domains": [str], "tls_issuers": [str],
                  "user_agents": [str], "oui": [str]},
     "enriched": {"<feature_type>": {"<feature_value>": [{"rank", "title", "snippet", "url"}]}}}

Missing feature keys mean "no values". Unknown extra keys are tolerated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import jsonschema

from .enrichment import EnrichedDevice, EnrichedFeature, SearchResult
from .features import FEATURE_TYPES, DeviceFeatures, FeatureType, normalize_feature

# Key order used when writing; matches the documented schema.
FEATURE_KEYS = ("hostname", "domains", "tls_issuers", "user_agents", "oui")

_RESULT = {
    "type": "object",
    "required": ["rank", "title", "snippet", "url"],
    "properties": {
        "rank": {"type": "integer", "minimum": 1},
        "title": {"type": "string"},
        "snippet": {"type": "string"},
        "url": {"type": "string"},
    },
}

DATASET_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["devices"],
    "properties": {
        "devices": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["device_id"],
                "properties": {
                    "device_id": {"type": "string", "minLength": 1},
                    "mac": {"type": ["string", "null"]},
                    "ground_truth": {
                        "oneOf": [
                            {"type": "null"},
                            {
                                "type": "object",
                                "required": ["vendor", "function"],
                                "properties": {
                                    "vendor": {"type": "string"},
                                    "function": {"type": "string"},
                                },
                            },
                        ]
                    },
                    "features": {
                        "type": "object",
                        "properties": {k: {"type": "array", "items": {"type": "string"}} for k in FEATURE_KEYS},
                        "additionalProperties": False,
                    },
                    "enriched": {
                        "type": "object",
                        "propertyNames": {"enum": list(FEATURE_KEYS)},
                        "additionalProperties": {
                            "type": "object",
                            "additionalProperties": {"type": "array", "items": _RESULT},
                        },
                    },
                },
            },
        }
    },
}


class DatasetValidationError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class Dataset:
    devices: list[DeviceFeatures] = field(default_factory=list)
    truth: dict[str, tuple[str, str]] = field(default_factory=dict)
    # device_id -> enrichment, only for devices that carry an "enriched" block
    enriched: dict[str, EnrichedDevice] = field(default_factory=dict)

    def enriched_devices(self) -> list[EnrichedDevice]:
        """One EnrichedDevice per device, empty enrichment where none is stored."""
        return [self.enriched.get(d.device_id) or EnrichedDevice(d) for d in self.devices]

    def device(self, device_id: str) -> DeviceFeatures:
        for d in self.devices:
            if d.device_id == device_id:
                return d
        raise KeyError(device_id)


def validate(doc: Any) -> None:
    validator = jsonschema.Draft202012Validator(DATASET_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise DatasetValidationError(err.message, err.json_path)
    seen = set()
    for i, dev in enumerate(doc["devices"]):
        if dev["device_id"] in seen:
            raise DatasetValidationError(f"duplicate device_id {dev['device_id']!r}", f"$.devices[{i}].device_id")
        seen.add(dev["device_id"])


def from_document(doc: Any) -> Dataset:
    validate(doc)
    ds = Dataset()
    for i, item in enumerate(doc["devices"]):
        feats = item.get("features") or {}
        raw = {FeatureType.parse(k): v for k, v in feats.items()}
        dev = DeviceFeatures.from_raw(item["device_id"], item.get("mac"), raw)
        ds.devices.append(dev)
        gt = item.get("ground_truth")
        if gt:
            ds.truth[dev.device_id] = (gt["vendor"], gt["function"])
        if "enriched" in item:
            ds.enriched[dev.device_id] = _enriched_from_doc(dev, item["enriched"], f"$.devices[{i}].enriched")
    return ds


def _enriched_from_doc(dev: DeviceFeatures, block: dict, path: str) -> EnrichedDevice:
    enriched = {t: [] for t in FEATURE_TYPES}
    for key, per_value in block.items():
        t = FeatureType.parse(key)
        by_text = {v.text: v for v in dev.values[t]}
        for text, results in per_value.items():
            source = by_text.get(text)
            if source is None:
                # Stored keys may be un-normalized; match after normalization.
                source = by_text.get(normalize_feature(text, t) or "")
            if source is None:
                raise DatasetValidationError(f"enriched value {text!r} is not a {key} feature of the device", f"{path}.{key}")
            try:
                items = [SearchResult.from_dict(r) for r in results]
                enriched[t].append(EnrichedFeature(source, items))
            except ValueError as exc:
                raise DatasetValidationError(str(exc), f"{path}.{key}") from exc
    # keep enrichment in feature order regardless of document order
    for t in FEATURE_TYPES:
        order = {v.text: i for i, v in enumerate(dev.values[t])}
        enriched[t].sort(key=lambda ef: order[ef.source.text])
    return EnrichedDevice(dev, enriched)


def extract_from_json_log(log: Union[str, Path, dict]) -> list[DeviceFeatures]:
    return load(log).devices


def load(source: Union[str, Path, dict]) -> Dataset:
    if isinstance(source, dict):
        return from_document(source)
    path = Path(source)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetValidationError(f"invalid JSON: {exc}") from exc
    return from_document(doc)


def device_to_doc(
    dev: DeviceFeatures,
    truth: Optional[tuple[str, str]] = None,
    enriched: Optional[EnrichedDevice] = None,
) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "device_id": dev.device_id,
        "mac": dev.mac,
        "ground_truth": {"vendor": truth[0], "function": truth[1]} if truth else None,
        "features": {k: dev.texts(FeatureType(k)) for k in FEATURE_KEYS},
    }
    if enriched is not None:
        doc["enriched"] = {
            t.value: {ef.source.text: [r.to_dict() for r in ef.results] for ef in enriched.enriched[t]}
            for t in FEATURE_TYPES
            if enriched.enriched[t]
        }
    return doc


def to_document(
    devices: Sequence[DeviceFeatures],
    truth: Optional[dict[str, tuple[str, str]]] = None,
    enriched: Optional[dict[str, EnrichedDevice]] = None,
) -> dict[str, Any]:
    truth = truth or {}
    enriched = enriched or {}
    return {
        "devices": [device_to_doc(d, truth.get(d.device_id), enriched.get(d.device_id)) for d in devices]
    }


def dumps(doc: Any) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def save(path: Union[str, Path], doc: Any) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")
