"""Vendor, function and type catalogs.

On disk a catalog directory holds three JSON files::

    vendors.json    [{"name": str, "aliases": [str]}]
    functions.json  [str]
    types.json      [[vendor, function]]

plus an optional ``provenance.json`` sidecar written by catalog maintenance.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional, Union

logger = logging.getLogger(__name__)

VENDORS_FILE = "vendors.json"
FUNCTIONS_FILE = "functions.json"
TYPES_FILE = "types.json"
PROVENANCE_FILE = "provenance.json"

LEGAL_SUFFIXES = frozenset(
    {
        "inc", "incorporated", "ltd", "limited", "llc", "corp", "corporation",
        "co", "company", "gmbh", "ag", "sa", "bv", "nv", "plc", "pty", "oy",
        "ab", "srl", "spa", "kk", "sas", "lp",
    }
)


class CatalogError(ValueError):
    pass


def normalize_name(name: str) -> str:
    """Catalog key: lowercase, trimmed, punctuation-split, legal suffixes dropped."""
    text = re.sub(r"[,.()]+", " ", name.strip().lower())
    tokens = text.split()
    while len(tokens) > 1 and tokens[-1] in LEGAL_SUFFIXES:
        tokens.pop()
    return " ".join(tokens)


@dataclass(frozen=True)
class VendorEntry:
    name: str
    aliases: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return normalize_name(self.name)

    def match_strings(self) -> tuple[str, ...]:
        """Canonical key followed by normalized aliases, deduplicated."""
        out: list[str] = []
        for s in (self.key, *(normalize_name(a) for a in self.aliases)):
            if s and s not in out:
                out.append(s)
        return tuple(out)


@dataclass
class VendorCatalog:
    entries: list[VendorEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._index: dict[str, str] = {}
        for i, e in enumerate(self.entries):
            key = e.key
            if not key:
                raise CatalogError(f"vendors[{i}]: empty vendor name")
            owner = self._index.get(key)
            if owner is not None:
                raise CatalogError(f"vendors[{i}]: duplicate canonical vendor {key!r}")
            self._index[key] = key
        for i, e in enumerate(self.entries):
            for alias in e.aliases:
                a = normalize_name(alias)
                if not a or a == e.key:
                    continue
                owner = self._index.get(a)
                if owner is not None and owner != e.key:
                    raise CatalogError(f"vendors[{i}]: alias {alias!r} already maps to {owner!r}")
                self._index[a] = e.key

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return self.resolve(name) is not None

    @property
    def names(self) -> list[str]:
        return [e.key for e in self.entries]

    def entry(self, canonical: str) -> VendorEntry:
        for e in self.entries:
            if e.key == canonical:
                return e
        raise KeyError(canonical)

    def resolve(self, name: str) -> Optional[str]:
        return self._index.get(normalize_name(name))

    def with_additions(self, names: Iterable[str]) -> "VendorCatalog":
        entries = list(self.entries)
        for n in names:
            entries.append(VendorEntry(n, ()))
        return VendorCatalog(entries)

    def to_json(self) -> list[dict[str, Any]]:
        return [{"name": e.name, "aliases": list(e.aliases)} for e in self.entries]


@dataclass
class FunctionCatalog:
    entries: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen = set()
        for i, f in enumerate(self.entries):
            key = normalize_function(f)
            if not key:
                raise CatalogError(f"functions[{i}]: empty function name")
            if key in seen:
                raise CatalogError(f"functions[{i}]: duplicate function {key!r}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return normalize_function(name) in self.names

    @property
    def names(self) -> list[str]:
        return [normalize_function(f) for f in self.entries]

    def to_json(self) -> list[str]:
        return list(self.entries)


def normalize_function(name: str) -> str:
    return " ".join(name.strip().lower().split())


@dataclass
class TypeCatalog:
    pairs: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self.as_set()

    def as_set(self) -> set[tuple[str, str]]:
        return {(normalize_name(v), normalize_function(f)) for v, f in self.pairs}

    def functions_of(self, vendor: str) -> set[str]:
        key = normalize_name(vendor)
        return {normalize_function(f) for v, f in self.pairs if normalize_name(v) == key}

    def with_additions(self, pairs: Iterable[tuple[str, str]]) -> "TypeCatalog":
        out = list(self.pairs)
        have = self.as_set()
        for v, f in pairs:
            k = (normalize_name(v), normalize_function(f))
            if k not in have:
                out.append((v, f))
                have.add(k)
        return TypeCatalog(out)

    def to_json(self) -> list[list[str]]:
        return [[v, f] for v, f in self.pairs]


@dataclass
class Catalogs:
    vendors: VendorCatalog
    functions: FunctionCatalog
    types: TypeCatalog
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate(self.vendors, self.functions, self.types)

    def sizes(self) -> dict[str, int]:
        return {"n_V": len(self.vendors), "n_F": len(self.functions), "n_T": len(self.types)}


def validate(V: VendorCatalog, F: FunctionCatalog, T: TypeCatalog) -> None:
    if not len(F):
        raise CatalogError("function catalog is empty; function labeling is impossible")
    fnames = set(F.names)
    for i, (v, f) in enumerate(T.pairs):
        if V.resolve(v) != normalize_name(v):
            raise CatalogError(f"types[{i}]: pair ({v!r}, {f!r}) references unknown vendor {v!r}")
        if normalize_function(f) not in fnames:
            raise CatalogError(f"types[{i}]: pair ({v!r}, {f!r}) references unknown function {f!r}")


def candidate_functions(vendor: Optional[str], T: TypeCatalog, F: FunctionCatalog) -> set[str]:
    """Functions the vendor is known to make; the full catalog when there are none."""
    if vendor:
        fl = T.functions_of(vendor)
        if fl:
            return fl
    return set(F.names)


def resolve_alias(name: str, V: VendorCatalog) -> Optional[str]:
    return V.resolve(name)


# ---------------------------------------------------------------------------
# file I/O


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CatalogError(f"{path.name}: invalid JSON: {exc}") from exc


def load_catalogs(path: Union[str, Path]) -> Catalogs:
    root = Path(path)
    vdoc = _read_json(root / VENDORS_FILE)
    if not isinstance(vdoc, list):
        raise CatalogError(f"{VENDORS_FILE}: expected a list")
    entries = []
    for i, item in enumerate(vdoc):
        if not isinstance(item, dict) or not isinstance(item.get("name"), str):
            raise CatalogError(f"{VENDORS_FILE}[{i}]: expected {{'name': str, 'aliases': [str]}}")
        entries.append(VendorEntry(item["name"], tuple(item.get("aliases") or ())))
    fpath = root / FUNCTIONS_FILE
    if fpath.exists():
        fdoc = _read_json(fpath)
    elif (root / "functions.csv").exists():
        fdoc = read_functions_csv(root / "functions.csv")
    else:
        raise CatalogError(f"{root}: no {FUNCTIONS_FILE}")
    if not isinstance(fdoc, list) or not all(isinstance(f, str) for f in fdoc):
        raise CatalogError(f"{FUNCTIONS_FILE}: expected a list of strings")
    tdoc = _read_json(root / TYPES_FILE)
    if not isinstance(tdoc, list) or not all(isinstance(p, list) and len(p) == 2 for p in tdoc):
        raise CatalogError(f"{TYPES_FILE}: expected a list of [vendor, function] pairs")
    prov = _read_json(root / PROVENANCE_FILE) if (root / PROVENANCE_FILE).exists() else {}
    return Catalogs(
        VendorCatalog(entries),
        FunctionCatalog(list(fdoc)),
        TypeCatalog([(v, f) for v, f in tdoc]),
        prov,
    )


def read_functions_csv(path: Union[str, Path]) -> list[str]:
    """One function per row, first column; an optional ``function`` header is skipped."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            if i == 0 and row[0].strip().lower() in ("function", "functions", "name"):
                continue
            out.append(row[0].strip())
    return out


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def catalog_files(c: Catalogs) -> dict[str, str]:
    files = {
        VENDORS_FILE: dumps(c.vendors.to_json()),
        FUNCTIONS_FILE: dumps(c.functions.to_json()),
        TYPES_FILE: dumps(c.types.to_json()),
    }
    if c.provenance:
        files[PROVENANCE_FILE] = dumps(c.provenance)
    return files


def save_catalogs(c: Catalogs, path: Union[str, Path]) -> None:
    """Stage every catalog file first, then move them into place.

    Nothing under ``path`` changes unless all files were written successfully.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=root, prefix=".staging-"))
    try:
        files = catalog_files(c)
        for name, text in files.items():
            (staging / name).write_text(text, encoding="utf-8")
        for name in files:
            os.replace(staging / name, root / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def bundled_catalog_dir() -> Path:
    return Path(str(resources.files("iotlabel.data").joinpath("catalogs")))


def load_bundled() -> Catalogs:
    return load_catalogs(bundled_catalog_dir())
