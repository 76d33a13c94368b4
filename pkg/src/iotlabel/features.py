"""Feature types, per-device feature records and value normalization."""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Mapping, Optional

from publicsuffixlist import PublicSuffixList

logger = logging.getLogger(__name__)


class FeatureType(str, Enum):
    """The five textual signal kinds extracted from traffic.

    The enum value doubles as the key used in the dataset JSON.
    """

    HOSTNAME = "hostname"
    DOMAINS = "domains"
    TLS_ISSUER = "tls_issuers"
    OUI = "oui"
    USER_AGENT = "user_agents"

    @classmethod
    def parse(cls, name: str) -> "FeatureType":
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "hostname": cls.HOSTNAME,
            "hostnames": cls.HOSTNAME,
            "domains": cls.DOMAINS,
            "domain": cls.DOMAINS,
            "tls_issuers": cls.TLS_ISSUER,
            "tls_issuer": cls.TLS_ISSUER,
            "tls": cls.TLS_ISSUER,
            "tlsissuer": cls.TLS_ISSUER,
            "oui": cls.OUI,
            "user_agents": cls.USER_AGENT,
            "user_agent": cls.USER_AGENT,
            "useragent": cls.USER_AGENT,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown feature type: {name!r}") from None


# Canonical iteration order; every fold over feature types uses it.
FEATURE_TYPES: tuple[FeatureType, ...] = (
    FeatureType.HOSTNAME,
    FeatureType.DOMAINS,
    FeatureType.TLS_ISSUER,
    FeatureType.OUI,
    FeatureType.USER_AGENT,
)


@dataclass(frozen=True)
class FeatureValue:
    text: str
    source_type: FeatureType
    # Pre-normalization form (e.g. the full DNS name); not part of identity.
    original: Optional[str] = field(default=None, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("feature value text must be non-empty")


@dataclass
class DeviceFeatures:
    device_id: str
    mac: Optional[str] = None
    values: dict[FeatureType, list[FeatureValue]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for t in FEATURE_TYPES:
            self.values.setdefault(t, [])
        extra = set(self.values) - set(FEATURE_TYPES)
        if extra:
            raise ValueError(f"unsupported feature types: {sorted(map(str, extra))}")
        if len(self.values[FeatureType.OUI]) > 1:
            raise ValueError(f"device {self.device_id}: more than one OUI value")

    def texts(self, t: FeatureType) -> list[str]:
        return [v.text for v in self.values[t]]

    def value_count(self) -> int:
        return sum(len(v) for v in self.values.values())

    def add(self, raw: str, t: FeatureType) -> bool:
        """Normalize ``raw`` and append it unless it is empty or a duplicate."""
        text = normalize_feature(raw, t)
        if text is None:
            return False
        if t is FeatureType.OUI and self.values[t]:
            return False
        if text in self.texts(t):
            return False
        self.values[t].append(FeatureValue(text, t, original=raw))
        return True

    @classmethod
    def from_raw(
        cls,
        device_id: str,
        mac: Optional[str],
        raw: Mapping[FeatureType, Iterable[str]],
    ) -> "DeviceFeatures":
        dev = cls(device_id=device_id, mac=mac)
        for t in FEATURE_TYPES:
            for item in raw.get(t, ()):
                dev.add(item, t)
        return dev


@lru_cache(maxsize=1)
def _psl() -> PublicSuffixList:
    # ICANN section only: private suffixes (cloud buckets etc.) would make
    # every tenant its own registrable domain.
    return PublicSuffixList(only_icann=True)


def registrable_domain(name: str) -> str:
    name = name.strip().lower().rstrip(".")
    if not name:
        return ""
    try:
        ipaddress.ip_address(name)
        return name
    except ValueError:
        pass
    reg = _psl().privatesuffix(name)
    return reg if reg else name


def normalize_feature(raw: str, t: FeatureType) -> Optional[str]:
    """Return the normalized form of a feature value, or None to discard it."""
    if raw is None:
        return None
    text = raw.strip().lower()
    if t is FeatureType.DOMAINS:
        text = registrable_domain(text)
    return text or None

