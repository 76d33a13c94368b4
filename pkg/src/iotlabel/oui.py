"""Wireshark ``manuf``-style OUI database with longest-prefix lookup."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

logger = logging.getLogger(__name__)

_HEX_SPLIT = re.compile(r"[:\-.]")


class _Unknown:
    """Sentinel returned by lookups that match no registered prefix."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNKNOWN"

    def __bool__(self) -> bool:
        return False


UNKNOWN = _Unknown()


def parse_mac(mac: Union[str, bytes, int]) -> int:
    """Return a MAC address as a 48-bit integer.

    Accepts ``aa:bb:cc:dd:ee:ff``, ``aa-bb-...``, ``aabb.ccdd.eeff``, bare hex,
    6 raw bytes, or an int.
    """
    if isinstance(mac, int):
        if not 0 <= mac < 1 << 48:
            raise ValueError(f"MAC out of range: {mac}")
        return mac
    if isinstance(mac, (bytes, bytearray)):
        if len(mac) != 6:
            raise ValueError(f"MAC must be 6 bytes, got {len(mac)}")
        return int.from_bytes(mac, "big")
    digits = "".join(_HEX_SPLIT.split(mac.strip()))
    if len(digits) != 12:
        raise ValueError(f"malformed MAC address: {mac!r}")
    return int(digits, 16)


def format_mac(mac: Union[str, bytes, int]) -> str:
    value = parse_mac(mac)
    return ":".join(f"{b:02x}" for b in value.to_bytes(6, "big"))


def _parse_prefix(token: str) -> tuple[int, int]:
    """Return ``(masked_value, prefix_bits)`` for a manuf prefix column."""
    if "/" in token:
        addr, bits_s = token.split("/", 1)
        bits = int(bits_s)
    else:
        addr, bits = token, None
    parts = [p for p in _HEX_SPLIT.split(addr) if p]
    raw = bytes(int(p, 16) for p in parts)
    if bits is None:
        bits = 8 * len(raw)
    if not 0 < bits <= 48 or len(raw) > 6:
        raise ValueError(f"bad prefix {token!r}")
    value = int.from_bytes(raw.ljust(6, b"\0"), "big")
    mask = ((1 << bits) - 1) << (48 - bits)
    return value & mask, bits


@dataclass
class OuiDatabase:
    # prefix length -> {masked 48-bit value -> registrant}
    tables: dict[int, dict[int, str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(t) for t in self.tables.values())

    def add(self, prefix: str, name: str) -> None:
        value, bits = _parse_prefix(prefix)
        self.tables.setdefault(bits, {})[value] = name

    def entries(self) -> list[tuple[int, int, str]]:
        return [(bits, value, name) for bits, t in self.tables.items() for value, name in t.items()]

    def lookup(self, mac: Union[str, bytes, int]):
        """Longest-prefix match; returns the registrant name or ``UNKNOWN``."""
        value = parse_mac(mac)
        for bits in sorted(self.tables, reverse=True):
            mask = ((1 << bits) - 1) << (48 - bits)
            hit = self.tables[bits].get(value & mask)
            if hit is not None:
                return hit
        return UNKNOWN

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "OuiDatabase":
        db = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            cols = [c.strip() for c in line.split("\t") if c.strip()]
            if len(cols) < 2:
                logger.warning("%s:%d: skipping line without a name", source, lineno)
                continue
            name = cols[2] if len(cols) >= 3 else cols[1]
            try:
                db.add(cols[0], name)
            except ValueError as exc:
                logger.warning("%s:%d: %s", source, lineno, exc)
        return db

    @classmethod
    def load(cls, path: Union[str, Path]) -> "OuiDatabase":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), source=str(path))

    @classmethod
    def bundled(cls) -> "OuiDatabase":
        text = resources.files("iotlabel.data").joinpath("manuf").read_text(encoding="utf-8")
        return cls.parse(text, source="bundled manuf")


def oui_lookup(mac: Union[str, bytes, int], db: OuiDatabase) -> Union[str, _Unknown]:
    return db.lookup(mac)


def bundled_manuf_path() -> Path:
    return Path(str(resources.files("iotlabel.data").joinpath("manuf")))


def registrant_or_none(mac: Optional[str], db: OuiDatabase) -> Optional[str]:
    if not mac:
        return None
    hit = db.lookup(mac)
    return None if hit is UNKNOWN else hit
