"""
IPv4/IPv6 + TCP packets with bit-exact serialization.

Packets are immutable values. Every mutating helper in this module returns a
new packet whose length fields and checksums have been recomputed, so a
packet obtained from here is always valid on the wire.

The discovery identifier travels in a shared-use experimental TCP option:

    +--------+--------+--------+--------+-----------------------+
    | kind   | length | experiment id   | identifier (16 bytes) |
    | 254    | 20     | 0xEB 0x9F       |                       |
    +--------+--------+--------+--------+-----------------------+
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, replace
from enum import IntFlag
from typing import Optional, Union

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

PROTO_TCP = 6

OPT_EOL = 0
OPT_NOP = 1
OPT_EXPERIMENTAL = 254
DISCOVERY_EXID = 0xEB9F
DISCOVERY_OPTION_LEN = 20
IDENTIFIER_LEN = 16

# Options a stripping middlebox lets through (RFC 793/7323/2018).
KNOWN_OPTION_KINDS = frozenset({0, 1, 2, 3, 4, 5, 8})

TCP_MIN_HEADER = 20
TCP_MAX_HEADER = 60
IPV4_HEADER = 20
IPV6_HEADER = 40


class PacketError(ValueError):
    """Structural problem with a packet or its byte encoding."""


class TruncatedPacket(PacketError):
    pass


class NoOptionSpace(PacketError):
    """The TCP header cannot grow enough to hold the discovery option."""


class AlreadyTagged(PacketError):
    pass


class TcpFlags(IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


def internet_checksum(data: bytes) -> int:
    """RFC 1071 checksum.

    Uses the identity 2**16 == 1 (mod 0xffff): the ones-complement sum of the
    16-bit words is congruent to the big-endian integer value of the buffer.
    """
    if len(data) % 2:
        data = data + b"\x00"
    value = int.from_bytes(data, "big")
    if value == 0:
        total = 0
    else:
        total = value % 0xFFFF or 0xFFFF
    return ~total & 0xFFFF


@dataclass(frozen=True)
class TcpOption:
    kind: int
    payload: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.kind <= 255:
            raise PacketError(f"option kind out of range: {self.kind}")
        if self.kind in (OPT_EOL, OPT_NOP) and self.payload:
            raise PacketError(f"option kind {self.kind} carries no payload")
        if len(self.payload) > 38:
            raise PacketError("option payload longer than 38 bytes")

    @property
    def size(self) -> int:
        return 1 if self.kind in (OPT_EOL, OPT_NOP) else len(self.payload) + 2

    def to_bytes(self) -> bytes:
        if self.kind in (OPT_EOL, OPT_NOP):
            return bytes([self.kind])
        return bytes([self.kind, len(self.payload) + 2]) + self.payload


@dataclass(frozen=True, order=True)
class DiscoveryIdentifier:
    value: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.value, bytes) or len(self.value) != IDENTIFIER_LEN:
            raise PacketError("discovery identifier must be exactly 16 bytes")

    def hex(self) -> str:
        return self.value.hex()

    def __str__(self) -> str:
        return self.value.hex()


def discovery_option(ident: DiscoveryIdentifier) -> TcpOption:
    return TcpOption(OPT_EXPERIMENTAL, struct.pack("!H", DISCOVERY_EXID) + ident.value)


def options_length(options: tuple[TcpOption, ...]) -> int:
    return sum(o.size for o in options)


def _data_offset_for(options: tuple[TcpOption, ...]) -> int:
    return (TCP_MIN_HEADER + options_length(options) + 3) // 4


@dataclass(frozen=True)
class IpHeader:
    """IP header fields. ``total_length`` is the IPv4 total length or the IPv6
    payload length; both it and ``header_checksum`` are filled by ``seal``."""

    src: IPAddress
    dst: IPAddress
    protocol: int = PROTO_TCP
    ttl: int = 64
    tos: int = 0
    ident: int = 0
    flags_fragment: int = 0x4000
    flow_label: int = 0
    total_length: int = 0
    header_checksum: int = 0

    def __post_init__(self) -> None:
        src = ipaddress.ip_address(self.src)
        dst = ipaddress.ip_address(self.dst)
        if src.version != dst.version:
            raise PacketError("source and destination address families differ")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        # Fields with no wire representation in the other family are pinned.
        if src.version == 6:
            object.__setattr__(self, "ident", 0)
            object.__setattr__(self, "flags_fragment", 0)
            object.__setattr__(self, "header_checksum", 0)
        else:
            object.__setattr__(self, "flow_label", 0)

    @property
    def version(self) -> int:
        return self.src.version

    @property
    def header_length(self) -> int:
        return IPV4_HEADER if self.version == 4 else IPV6_HEADER

    def to_bytes(self) -> bytes:
        if self.version == 4:
            return struct.pack(
                "!BBHHHBBH4s4s",
                0x45,
                self.tos,
                self.total_length,
                self.ident,
                self.flags_fragment,
                self.ttl,
                self.protocol,
                self.header_checksum,
                self.src.packed,
                self.dst.packed,
            )
        first = (6 << 28) | (self.tos << 20) | (self.flow_label & 0xFFFFF)
        return struct.pack(
            "!IHBB16s16s",
            first,
            self.total_length,
            self.protocol,
            self.ttl,
            self.src.packed,
            self.dst.packed,
        )

    def pseudo_header(self, tcp_length: int) -> bytes:
        if self.version == 4:
            return self.src.packed + self.dst.packed + struct.pack("!BBH", 0, self.protocol, tcp_length)
        return self.src.packed + self.dst.packed + struct.pack("!I3xB", tcp_length, self.protocol)


@dataclass(frozen=True)
class TcpHeader:
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    flags: int = TcpFlags.ACK
    window: int = 65535
    checksum: int = 0
    urgent: int = 0
    options: tuple[TcpOption, ...] = ()
    data_offset: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(self, "flags", int(self.flags))
        if self.data_offset is None:
            object.__setattr__(self, "data_offset", _data_offset_for(self.options))

    @property
    def header_length(self) -> int:
        return self.data_offset * 4

    def validate(self) -> None:
        for name in ("src_port", "dst_port", "window", "checksum", "urgent"):
            if not 0 <= getattr(self, name) <= 0xFFFF:
                raise PacketError(f"{name} out of 16-bit range")
        if not 0 <= self.seq <= 0xFFFFFFFF or not 0 <= self.ack <= 0xFFFFFFFF:
            raise PacketError("sequence/ack out of 32-bit range")
        if any(o.kind == OPT_EOL for o in self.options):
            raise PacketError("end-of-options is implicit padding, not a list entry")
        if not 5 <= self.data_offset <= 15:
            raise PacketError(f"data offset {self.data_offset} outside 5..15")
        if self.data_offset != _data_offset_for(self.options):
            raise PacketError(
                f"data offset {self.data_offset} does not match "
                f"{options_length(self.options)} option bytes"
            )

    def to_bytes(self) -> bytes:
        self.validate()
        opts = b"".join(o.to_bytes() for o in self.options)
        opts += b"\x00" * (self.header_length - TCP_MIN_HEADER - len(opts))
        offset_flags = (self.data_offset << 12) | (self.flags & 0x1FF)
        return (
            struct.pack(
                "!HHIIHHHH",
                self.src_port,
                self.dst_port,
                self.seq,
                self.ack,
                offset_flags,
                self.window,
                self.checksum,
                self.urgent,
            )
            + opts
        )


@dataclass(frozen=True)
class Packet:
    ip: IpHeader
    tcp: TcpHeader
    payload: bytes = field(default=b"")

    @classmethod
    def create(
        cls,
        src: Union[str, IPAddress],
        dst: Union[str, IPAddress],
        src_port: int,
        dst_port: int,
        payload: bytes = b"",
        *,
        flags: int = TcpFlags.ACK,
        seq: int = 0,
        ack: int = 0,
        options: tuple[TcpOption, ...] = (),
        ttl: int = 64,
    ) -> "Packet":
        ip = IpHeader(ipaddress.ip_address(src), ipaddress.ip_address(dst), ttl=ttl)
        tcp = TcpHeader(src_port, dst_port, seq=seq, ack=ack, flags=flags, options=options)
        return cls(ip, tcp, bytes(payload)).seal()

    @property
    def tcp_length(self) -> int:
        return self.tcp.header_length + len(self.payload)

    def expected_ip_length(self) -> int:
        if self.ip.version == 4:
            return IPV4_HEADER + self.tcp_length
        return self.tcp_length

    def compute_tcp_checksum(self) -> int:
        segment = replace(self.tcp, checksum=0).to_bytes() + self.payload
        return internet_checksum(self.ip.pseudo_header(len(segment)) + segment)

    def compute_ip_checksum(self) -> int:
        if self.ip.version != 4:
            return 0
        return internet_checksum(replace(self.ip, header_checksum=0).to_bytes())

    def seal(self) -> "Packet":
        """Recompute length fields and both checksums."""
        tcp = replace(self.tcp, data_offset=_data_offset_for(self.tcp.options))
        ip = replace(self.ip, total_length=0, header_checksum=0)
        pkt = Packet(ip, tcp, self.payload)
        ip = replace(ip, total_length=pkt.expected_ip_length())
        if ip.version == 4:
            ip = replace(ip, header_checksum=internet_checksum(ip.to_bytes()))
        pkt = Packet(ip, tcp, self.payload)
        return Packet(ip, replace(tcp, checksum=pkt.compute_tcp_checksum()), self.payload)

    def checksums_valid(self) -> bool:
        if self.ip.version == 4 and self.compute_ip_checksum() != self.ip.header_checksum:
            return False
        return self.compute_tcp_checksum() == self.tcp.checksum

    def five_tuple(self) -> "FiveTuple":
        return FiveTuple(self.ip.protocol, self.ip.src, self.tcp.src_port, self.ip.dst, self.tcp.dst_port)

    def with_addresses(self, src: IPAddress, sport: int, dst: IPAddress, dport: int) -> "Packet":
        ip = replace(self.ip, src=src, dst=dst)
        tcp = replace(self.tcp, src_port=sport, dst_port=dport)
        return Packet(ip, tcp, self.payload).seal()

    def has_flag(self, flag: TcpFlags) -> bool:
        return bool(self.tcp.flags & flag)


@dataclass(frozen=True, order=True)
class FiveTuple:
    protocol: int
    src: IPAddress
    sport: int
    dst: IPAddress
    dport: int

    def inverted(self) -> "FiveTuple":
        return FiveTuple(self.protocol, self.dst, self.dport, self.src, self.sport)

    def __str__(self) -> str:
        return f"{self.src}:{self.sport}>{self.dst}:{self.dport}"


def serialize(p: Packet) -> bytes:
    p.tcp.validate()
    if p.ip.total_length != p.expected_ip_length():
        raise PacketError(
            f"IP length field {p.ip.total_length} != expected {p.expected_ip_length()}"
        )
    return p.ip.to_bytes() + p.tcp.to_bytes() + p.payload


def _parse_options(raw: bytes) -> tuple[TcpOption, ...]:
    options = []
    i = 0
    while i < len(raw):
        kind = raw[i]
        if kind == OPT_EOL:
            break
        if kind == OPT_NOP:
            options.append(TcpOption(OPT_NOP))
            i += 1
            continue
        if i + 1 >= len(raw):
            raise PacketError(f"option kind {kind} missing its length byte")
        length = raw[i + 1]
        if length < 2 or i + length > len(raw):
            raise PacketError(f"option kind {kind} has bad length {length}")
        options.append(TcpOption(kind, bytes(raw[i + 2 : i + length])))
        i += length
    return tuple(options)


def parse(data: bytes) -> Packet:
    data = bytes(data)
    if not data:
        raise TruncatedPacket("empty input")
    version = data[0] >> 4
    if version == 4:
        if len(data) < IPV4_HEADER + TCP_MIN_HEADER:
            raise TruncatedPacket(f"{len(data)} bytes is below the minimum IPv4+TCP size")
        vihl, tos, total, ident, frag, ttl, proto, csum, src, dst = struct.unpack(
            "!BBHHHBBH4s4s", data[:IPV4_HEADER]
        )
        if vihl & 0x0F != 5:
            raise PacketError("IPv4 options are not supported")
        if total != len(data):
            raise PacketError(f"IPv4 total length {total} != {len(data)} bytes")
        ip = IpHeader(
            ipaddress.IPv4Address(src),
            ipaddress.IPv4Address(dst),
            protocol=proto,
            ttl=ttl,
            tos=tos,
            ident=ident,
            flags_fragment=frag,
            total_length=total,
            header_checksum=csum,
        )
        rest = data[IPV4_HEADER:]
    elif version == 6:
        if len(data) < IPV6_HEADER + TCP_MIN_HEADER:
            raise TruncatedPacket(f"{len(data)} bytes is below the minimum IPv6+TCP size")
        first, plen, nxt, hop, src, dst = struct.unpack("!IHBB16s16s", data[:IPV6_HEADER])
        if plen != len(data) - IPV6_HEADER:
            raise PacketError(f"IPv6 payload length {plen} != {len(data) - IPV6_HEADER}")
        ip = IpHeader(
            ipaddress.IPv6Address(src),
            ipaddress.IPv6Address(dst),
            protocol=nxt,
            ttl=hop,
            tos=(first >> 20) & 0xFF,
            flow_label=first & 0xFFFFF,
            total_length=plen,
        )
        rest = data[IPV6_HEADER:]
    else:
        raise PacketError(f"unknown IP version {version}")
    if ip.protocol != PROTO_TCP:
        raise PacketError(f"transport protocol {ip.protocol} is not TCP")

    sport, dport, seq, ack, off_flags, window, csum, urg = struct.unpack("!HHIIHHHH", rest[:20])
    data_offset = off_flags >> 12
    if data_offset < 5:
        raise PacketError(f"data offset {data_offset} < 5")
    hlen = data_offset * 4
    if hlen > len(rest):
        raise TruncatedPacket(f"TCP header claims {hlen} bytes, {len(rest)} available")
    options = _parse_options(rest[TCP_MIN_HEADER:hlen])
    if _data_offset_for(options) != data_offset:
        raise PacketError("TCP options do not account for the declared header length")
    tcp = TcpHeader(
        sport,
        dport,
        seq=seq,
        ack=ack,
        flags=off_flags & 0x1FF,
        window=window,
        checksum=csum,
        urgent=urg,
        options=options,
        data_offset=data_offset,
    )
    return Packet(ip, tcp, rest[hlen:])


def extract_identifier(p: Packet) -> Optional[DiscoveryIdentifier]:
    for opt in p.tcp.options:
        if (
            opt.kind == OPT_EXPERIMENTAL
            and len(opt.payload) == 2 + IDENTIFIER_LEN
            and struct.unpack("!H", opt.payload[:2])[0] == DISCOVERY_EXID
        ):
            return DiscoveryIdentifier(opt.payload[2:])
    return None


def inject_identifier(p: Packet, ident: DiscoveryIdentifier) -> Packet:
    """Append the discovery option and fix up offsets and checksums.

    Raises NoOptionSpace when the grown header would exceed 60 bytes and
    AlreadyTagged when the packet already carries a discovery option.
    """
    if extract_identifier(p) is not None:
        raise AlreadyTagged("packet already carries a discovery option")
    if p.tcp.header_length + DISCOVERY_OPTION_LEN > TCP_MAX_HEADER:
        raise NoOptionSpace(
            f"TCP header is {p.tcp.header_length} bytes; no room for a "
            f"{DISCOVERY_OPTION_LEN}-byte option"
        )
    tcp = replace(p.tcp, options=p.tcp.options + (discovery_option(ident),), data_offset=None)
    return Packet(p.ip, tcp, p.payload).seal()


def strip_unknown_options(p: Packet) -> Packet:
    kept = tuple(o for o in p.tcp.options if o.kind in KNOWN_OPTION_KINDS)
    if kept == p.tcp.options:
        return p
    return Packet(p.ip, replace(p.tcp, options=kept, data_offset=None), p.payload).seal()


def decrement_ttl(p: Packet) -> Packet:
    return Packet(replace(p.ip, ttl=p.ip.ttl - 1), p.tcp, p.payload).seal()
