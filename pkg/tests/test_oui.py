from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotlabel.oui import UNKNOWN, OuiDatabase, bundled_manuf_path, format_mac, oui_lookup, parse_mac


def linear_scan(path, mac_int: int):
    """Reference: scan every manuf line, keep the longest matching prefix."""
    best_bits, best_name = -1, UNKNOWN
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0]
        cols = [c.strip() for c in line.split("\t") if c.strip()]
        if len(cols) < 2:
            continue
        prefix = cols[0]
        name = cols[2] if len(cols) >= 3 else cols[1]
        addr, _, bits = prefix.partition("/")
        hexdigits = addr.replace(":", "").replace("-", "").replace(".", "")
        nbits = int(bits) if bits else 4 * len(hexdigits)
        value = int(hexdigits.ljust(12, "0"), 16)
        if (mac_int >> (48 - nbits)) == (value >> (48 - nbits)) and nbits > best_bits:
            best_bits, best_name = nbits, name
    return best_name


def _manuf_prefixes():
    out = []
    for line in bundled_manuf_path().read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            out.append(line.split("\t")[0])
    return out


def test_known_prefixes_return_registrant_verbatim():
    db = OuiDatabase.bundled()
    lines = {l.split("\t")[0]: l.split("\t")[-1] for l in bundled_manuf_path().read_text().splitlines() if l and l[0] != "#"}
    for prefix in ("14:91:82", "00:17:88", "B8:27:EB"):
        mac = prefix + ":12:34:56"
        assert oui_lookup(mac, db) == lines[prefix]


def test_unknown_and_all_zero():
    db = OuiDatabase.bundled()
    assert db.lookup("00:00:00:00:00:00") is UNKNOWN
    assert not UNKNOWN


def test_shared_24_bits_give_identical_result():
    db = OuiDatabase.bundled()
    assert db.lookup("14:91:82:00:00:01") == db.lookup("14:91:82:ff:ee:dd")


def test_longest_prefix_wins():
    db = OuiDatabase.parse("70:B3:D5\tIEEERegi\tIEEE Registration Authority\n70:B3:D5:00:10:00/36\tSmall\tSmall Vendor Ltd\n")
    assert db.lookup("70:b3:d5:00:1a:bc") == "Small Vendor Ltd"
    assert db.lookup("70:b3:d5:00:20:00") == "IEEE Registration Authority"


def test_parse_two_column_lines_and_comments():
    db = OuiDatabase.parse("# header\nAA:BB:CC\tShortOnly\n\nAA-BB-CD\tX\tLong Name # trailing comment\n")
    assert db.lookup("aa:bb:cc:00:00:00") == "ShortOnly"
    assert db.lookup("aa:bb:cd:00:00:00") == "Long Name"


def test_mac_formats():
    assert parse_mac("AA-BB-CC-DD-EE-FF") == parse_mac("aabb.ccdd.eeff") == parse_mac(b"\xaa\xbb\xcc\xdd\xee\xff")
    assert format_mac("AABBCCDDEEFF") == "aa:bb:cc:dd:ee:ff"
    with pytest.raises(ValueError):
        parse_mac("aa:bb")


@pytest.mark.criterion(7)
def test_lookup_matches_linear_scan_for_random_macs():
    db = OuiDatabase.bundled()
    path = bundled_manuf_path()
    rng = random.Random(7)
    prefixes = _manuf_prefixes()
    for i in range(1000):
        if i % 2:
            mac = rng.getrandbits(48)
        else:
            # bias half the sample toward registered prefixes so hits are exercised
            addr = prefixes[rng.randrange(len(prefixes))].split("/")[0].replace(":", "")
            mac = int(addr.ljust(12, "0"), 16) | rng.getrandbits(48 - 4 * len(addr))
        assert db.lookup(mac) == linear_scan(path, mac), format_mac(mac)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=(1 << 48) - 1))
def test_lookup_property(mac):
    assert OuiDatabase.bundled().lookup(mac) == linear_scan(bundled_manuf_path(), mac)
