"""Passive feature extraction from pcap / pcapng captures.

Protocol to feature mapping:

    DNS query names          -> domains
    DHCP option 12           -> hostname
    TLS server certificate   -> tls_issuers (issuer CN and O of the leaf cert)
    plaintext HTTP requests  -> user_agents
    source MAC               -> oui (via the OUI database)

Container framing is parsed here so malformed files can be reported with a
byte offset; packet dissection is delegated to dpkt.
"""

from __future__ import annotations

import io
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Optional, Union

import dpkt
from cryptography import x509
from cryptography.x509.oid import NameOID

from .features import DeviceFeatures, FeatureType
from .oui import UNKNOWN, OuiDatabase, format_mac

logger = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1

_PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": "<",
    b"\xa1\xb2\xc3\xd4": ">",
    b"\x4d\x3c\xb2\xa1": "<",  # nanosecond resolution
    b"\xa1\xb2\x3c\x4d": ">",
}
_PCAPNG_SHB = 0x0A0D0D0A
_PCAPNG_BOM = 0x1A2B3C4D

_HTTP_METHODS = (b"GET ", b"POST ", b"HEAD ", b"PUT ", b"DELETE ", b"OPTIONS ", b"PATCH ", b"CONNECT ")
_TLS_STREAM_CAP = 1 << 16


class CaptureParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Frame:
    offset: int
    linktype: int
    data: bytes


def _read_exact(buf: bytes, offset: int, n: int, what: str) -> bytes:
    chunk = buf[offset:offset + n]
    if len(chunk) != n:
        raise CaptureParseError(f"truncated {what}: need {n} bytes, have {len(chunk)}", offset)
    return chunk


def _iter_pcap(buf: bytes, endian: str) -> Iterator[Frame]:
    hdr = _read_exact(buf, 0, 24, "pcap global header")
    linktype = struct.unpack(endian + "I", hdr[20:24])[0] & 0x0FFFFFFF
    off = 24
    while off < len(buf):
        rec = _read_exact(buf, off, 16, "pcap record header")
        _, _, incl_len, _ = struct.unpack(endian + "IIII", rec)
        if incl_len > 0x4000000:
            raise CaptureParseError(f"implausible record length {incl_len}", off)
        data = _read_exact(buf, off + 16, incl_len, "pcap record data")
        yield Frame(off, linktype, data)
        off += 16 + incl_len


def _iter_pcapng(buf: bytes) -> Iterator[Frame]:
    off = 0
    endian = "<"
    linktypes: list[int] = []
    snaplens: list[int] = []
    while off < len(buf):
        head = _read_exact(buf, off, 8, "pcapng block header")
        btype_le = struct.unpack("<I", head[:4])[0]
        if btype_le == _PCAPNG_SHB:
            bom = _read_exact(buf, off + 8, 4, "pcapng byte-order magic")
            if struct.unpack("<I", bom)[0] == _PCAPNG_BOM:
                endian = "<"
            elif struct.unpack(">I", bom)[0] == _PCAPNG_BOM:
                endian = ">"
            else:
                raise CaptureParseError("bad pcapng byte-order magic", off + 8)
            linktypes, snaplens = [], []
        btype, blen = struct.unpack(endian + "II", head)
        if blen < 12 or blen % 4:
            raise CaptureParseError(f"bad pcapng block length {blen}", off + 4)
        block = _read_exact(buf, off, blen, "pcapng block")
        trailer = struct.unpack(endian + "I", block[-4:])[0]
        if trailer != blen:
            raise CaptureParseError("pcapng block length mismatch", off + blen - 4)
        body = block[8:-4]
        if btype == 1:  # interface description
            lt, _, snap = struct.unpack(endian + "HHI", body[:8])
            linktypes.append(lt)
            snaplens.append(snap)
        elif btype == 6:  # enhanced packet
            if len(body) < 20:
                raise CaptureParseError("short enhanced packet block", off)
            iface, _, _, caplen, _ = struct.unpack(endian + "IIIII", body[:20])
            if iface >= len(linktypes):
                raise CaptureParseError(f"packet references unknown interface {iface}", off + 8)
            if 20 + caplen > len(body):
                raise CaptureParseError("enhanced packet data overruns block", off + 28)
            yield Frame(off, linktypes[iface], body[20:20 + caplen])
        elif btype == 3:  # simple packet
            if not linktypes:
                raise CaptureParseError("simple packet before interface description", off)
            (orig_len,) = struct.unpack(endian + "I", body[:4])
            caplen = min(orig_len, snaplens[0] or orig_len, len(body) - 4)
            yield Frame(off, linktypes[0], body[4:4 + caplen])
        elif btype == 2:  # obsolete packet block
            iface, _, _, _, caplen, _ = struct.unpack(endian + "HHIIII", body[:20])
            if iface >= len(linktypes):
                raise CaptureParseError(f"packet references unknown interface {iface}", off + 8)
            yield Frame(off, linktypes[iface], body[20:20 + caplen])
        off += blen


def iter_frames(buf: bytes) -> Iterator[Frame]:
    """Yield link-layer frames from a pcap or pcapng byte string."""
    if not buf:
        return
    magic = buf[:4]
    if magic in _PCAP_MAGICS:
        yield from _iter_pcap(buf, _PCAP_MAGICS[magic])
    elif len(magic) == 4 and struct.unpack("<I", magic)[0] == _PCAPNG_SHB:
        yield from _iter_pcapng(buf)
    else:
        raise CaptureParseError(f"unrecognized capture magic {magic.hex()}", 0)


def _decode(raw: bytes) -> str:
    # Unknown encodings: lossy UTF-8, normalization happens downstream.
    return raw.decode("utf-8", errors="replace")


def _user_agent(payload: bytes) -> Optional[str]:
    head = payload.split(b"\r\n\r\n", 1)[0]
    for line in head.split(b"\r\n")[1:]:
        name, sep, value = line.partition(b":")
        if sep and name.strip().lower() == b"user-agent":
            return _decode(value.strip())
    return None


def issuer_string(cert: x509.Certificate) -> str:
    """Issuer CN and O joined by ", "; falls back to the full RFC 4514 DN."""
    parts = []
    for oid in (NameOID.COMMON_NAME, NameOID.ORGANIZATION_NAME):
        for attr in cert.issuer.get_attributes_for_oid(oid):
            value = attr.value if isinstance(attr.value, str) else _decode(attr.value)
            if value not in parts:
                parts.append(value)
    return ", ".join(parts) if parts else cert.issuer.rfc4514_string()


def _tls_leaf_certificates(stream: bytes) -> list[bytes]:
    """Return DER leaf certificates from cleartext Certificate handshakes."""
    handshake = bytearray()
    off = 0
    while off + 5 <= len(stream):
        ctype, major, _, length = struct.unpack("!BBBH", stream[off:off + 5])
        if major != 3 or ctype not in (20, 21, 22, 23):
            break
        if ctype != 22:
            # Anything after ChangeCipherSpec/appdata is encrypted.
            break
        handshake += stream[off + 5:off + 5 + length]
        off += 5 + length
    leaves = []
    pos = 0
    while pos + 4 <= len(handshake):
        mtype = handshake[pos]
        mlen = int.from_bytes(handshake[pos + 1:pos + 4], "big")
        body = bytes(handshake[pos + 4:pos + 4 + mlen])
        if len(body) < mlen:
            break
        if mtype == 11 and len(body) >= 6:
            first = int.from_bytes(body[3:6], "big")
            der = body[6:6 + first]
            if len(der) == first and first:
                leaves.append(der)
        pos += 4 + mlen
    return leaves


@dataclass
class _TcpStream:
    segments: dict[int, bytes] = field(default_factory=dict)
    size: int = 0

    def add(self, seq: int, data: bytes) -> None:
        if self.size >= _TLS_STREAM_CAP or seq in self.segments:
            return
        self.segments[seq] = data
        self.size += len(data)

    def assemble(self) -> bytes:
        out = bytearray()
        nxt = None
        for seq in sorted(self.segments):
            data = self.segments[seq]
            if nxt is None:
                nxt = seq
            if seq > nxt:
                break  # gap: stop at the first missing segment
            skip = nxt - seq
            if skip < len(data):
                out += data[skip:]
                nxt = seq + len(data)
        return bytes(out)


class PcapExtractor:
    """Stateful extractor; ``skipped`` counts packets that failed to decode."""

    def __init__(self, oui_db: Optional[OuiDatabase] = None, device_filter: Optional[Iterable[str]] = None):
        self.oui_db = oui_db
        self.device_filter = None if device_filter is None else [format_mac(m) for m in device_filter]
        self.skipped = 0
        self.frames = 0

    def extract(self, capture: Union[bytes, BinaryIO, str, Path]) -> list[DeviceFeatures]:
        buf = _read_capture(capture)
        raw: "OrderedDict[str, dict[FeatureType, list[str]]]" = OrderedDict()
        streams: "OrderedDict[tuple, _TcpStream]" = OrderedDict()

        def bucket(mac: str) -> dict[FeatureType, list[str]]:
            if mac not in raw:
                raw[mac] = {t: [] for t in FeatureType}
            return raw[mac]

        for frame in iter_frames(buf):
            self.frames += 1
            if frame.linktype != LINKTYPE_ETHERNET:
                self.skipped += 1
                continue
            try:
                self._dissect(frame.data, bucket, streams)
            except (dpkt.UnpackError, struct.error, ValueError, IndexError, UnicodeError) as exc:
                self.skipped += 1
                logger.debug("skipping packet at offset %d: %s", frame.offset, exc)

        for (dst_mac, *_), stream in streams.items():
            if dst_mac not in raw:
                continue
            for der in _tls_leaf_certificates(stream.assemble()):
                try:
                    cert = x509.load_der_x509_certificate(der)
                except ValueError as exc:
                    self.skipped += 1
                    logger.debug("undecodable certificate for %s: %s", dst_mac, exc)
                    continue
                raw[dst_mac][FeatureType.TLS_ISSUER].append(issuer_string(cert))

        if self.skipped:
            logger.info("skipped %d undecodable packets", self.skipped)

        macs = self.device_filter if self.device_filter is not None else list(raw)
        devices = []
        for mac in macs:
            values = dict(raw.get(mac, {}))
            if self.oui_db is not None:
                hit = self.oui_db.lookup(mac)
                values[FeatureType.OUI] = [] if hit is UNKNOWN else [hit]
            devices.append(DeviceFeatures.from_raw(mac, mac, values))
        return devices

    def _dissect(self, data: bytes, bucket, streams) -> None:
        eth = dpkt.ethernet.Ethernet(data)
        src = format_mac(eth.src)
        dst = format_mac(eth.dst)
        tracked = self.device_filter is None or src in self.device_filter
        if tracked:
            bucket(src)
        ip = eth.data
        if not isinstance(ip, (dpkt.ip.IP, dpkt.ip6.IP6)):
            return
        l4 = ip.data
        if isinstance(l4, dpkt.udp.UDP):
            if l4.dport == 53 and tracked:
                dns = dpkt.dns.DNS(l4.data)
                if dns.qr == dpkt.dns.DNS_Q:
                    for q in dns.qd:
                        bucket(src)[FeatureType.DOMAINS].append(q.name)
            elif l4.sport == 68 and l4.dport == 67 and tracked:
                dhcp = dpkt.dhcp.DHCP(l4.data)
                for code, value in dhcp.opts:
                    if code == dpkt.dhcp.DHCP_OPT_HOSTNAME:
                        bucket(src)[FeatureType.HOSTNAME].append(_decode(value))
        elif isinstance(l4, dpkt.tcp.TCP) and l4.data:
            payload = bytes(l4.data)
            if payload.startswith(_HTTP_METHODS) and tracked:
                ua = _user_agent(payload)
                if ua is not None:
                    bucket(src)[FeatureType.USER_AGENT].append(ua)
            key = (dst, bytes(ip.src), l4.sport, bytes(ip.dst), l4.dport)
            stream = streams.get(key)
            if stream is None:
                # Only follow flows that open with a TLS handshake record.
                if payload[:1] != b"\x16" or payload[1:2] != b"\x03":
                    return
                stream = streams[key] = _TcpStream()
            stream.add(l4.seq, payload)


def _read_capture(capture: Union[bytes, BinaryIO, str, Path]) -> bytes:
    if isinstance(capture, (bytes, bytearray)):
        return bytes(capture)
    if isinstance(capture, (str, Path)):
        return Path(capture).read_bytes()
    if isinstance(capture, io.IOBase) or hasattr(capture, "read"):
        return capture.read()
    raise TypeError(f"unsupported capture input: {type(capture).__name__}")


def extract_from_pcap(
    capture: Union[bytes, BinaryIO, str, Path],
    device_filter: Optional[Iterable[str]] = None,
    oui_db: Optional[OuiDatabase] = None,
) -> list[DeviceFeatures]:
    return PcapExtractor(oui_db=oui_db, device_filter=device_filter).extract(capture)
