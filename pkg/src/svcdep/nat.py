"""Netfilter-style DNAT/SNAT with connection tracking.

Rules are only consulted for the first packet of a connection. That packet
creates a conntrack entry holding the original tuple and the tuple replies
are expected to carry; every later packet in either direction is rewritten
from the entry alone.
"""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

from .packet import IPAddress, FiveTuple, Packet, PROTO_TCP

log = logging.getLogger(__name__)

PREROUTING = "prerouting"
POSTROUTING = "postrouting"

SNAT_PORT_BASE = 32768
SNAT_PORT_MAX = 60999

Network = Union[ipaddress.IPv4Network, ipaddress.IPv6Network]


@dataclass(frozen=True)
class NatRule:
    """One iptables-like rule.

    ``in_iface``/``out_iface`` match an interface name; the ``*_negate`` flags
    turn that into ``! -i``/``! -o``. ``translate_port`` of None keeps the
    port for DNAT and allocates a fresh one for SNAT.
    """

    chain: str
    translate_ip: IPAddress
    translate_port: Optional[int] = None
    in_iface: Optional[str] = None
    in_negate: bool = False
    out_iface: Optional[str] = None
    out_negate: bool = False
    protocol: Optional[int] = PROTO_TCP
    src: Optional[Network] = None
    dst: Optional[Network] = None
    dst_port: Optional[int] = None

    def __post_init__(self) -> None:
        if self.chain not in ("DNAT", "SNAT"):
            raise ValueError(f"unknown NAT chain {self.chain!r}")
        object.__setattr__(self, "translate_ip", ipaddress.ip_address(self.translate_ip))
        for name in ("src", "dst"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, ipaddress.ip_network(value, strict=False))
        if self.chain == "DNAT" and self.out_iface is not None:
            raise ValueError("DNAT runs before routing and cannot match an output interface")
        if self.chain == "SNAT" and self.in_iface is not None:
            raise ValueError("SNAT rules match on the output interface only")

    def matches(self, t: FiveTuple, iface: str) -> bool:
        if self.protocol is not None and t.protocol != self.protocol:
            return False
        if self.src is not None and t.src not in self.src:
            return False
        if self.dst is not None and t.dst not in self.dst:
            return False
        if self.dst_port is not None and t.dport != self.dst_port:
            return False
        want, negate = (
            (self.in_iface, self.in_negate) if self.chain == "DNAT" else (self.out_iface, self.out_negate)
        )
        if want is not None and (iface == want) == negate:
            return False
        return True

    def describe(self) -> str:
        parts = [self.chain]
        if self.in_iface:
            parts.append(f"{'!' if self.in_negate else ''}-i {self.in_iface}")
        if self.out_iface:
            parts.append(f"{'!' if self.out_negate else ''}-o {self.out_iface}")
        if self.src:
            parts.append(f"-s {self.src}")
        if self.dst:
            parts.append(f"-d {self.dst}")
        if self.dst_port is not None:
            parts.append(f"dpt:{self.dst_port}")
        to = str(self.translate_ip) + (f":{self.translate_port}" if self.translate_port else "")
        parts.append(f"to:{to}")
        return " ".join(parts)


@dataclass
class ConntrackEntry:
    orig: FiveTuple
    reply: FiveTuple
    owner: str
    confirmed: bool = False

    @property
    def translated(self) -> bool:
        return self.orig != self.reply.inverted()


@dataclass
class NatTable:
    """Rules plus conntrack state for one NAT-capable node."""

    owner: str
    rules: list[NatRule] = field(default_factory=list)
    strip_options: bool = False
    _by_orig: dict = field(default_factory=dict, repr=False)
    _by_reply: dict = field(default_factory=dict, repr=False)
    _next_port: int = SNAT_PORT_BASE

    def add_rule(self, rule: NatRule) -> None:
        self.rules.append(rule)

    def entries(self) -> list[ConntrackEntry]:
        return list(self._by_orig.values())

    def lookup_orig(self, t: FiveTuple) -> Optional[ConntrackEntry]:
        return self._by_orig.get(t)

    def lookup_reply(self, t: FiveTuple) -> Optional[ConntrackEntry]:
        return self._by_reply.get(t)

    def _first_match(self, chain: str, t: FiveTuple, iface: str) -> Optional[NatRule]:
        for rule in self.rules:
            if rule.chain == chain and rule.matches(t, iface):
                return rule
        return None

    def _allocate_port(self, ip: IPAddress, t: FiveTuple) -> int:
        # A translated source must not make the reply tuple ambiguous.
        span = SNAT_PORT_MAX - SNAT_PORT_BASE + 1
        for _ in range(span):
            port = self._next_port
            self._next_port = SNAT_PORT_BASE + (self._next_port - SNAT_PORT_BASE + 1) % span
            if FiveTuple(t.protocol, t.dst, t.dport, ip, port) not in self._by_reply:
                return port
        raise RuntimeError(f"{self.owner}: SNAT port range exhausted for {ip}")

    def _index(self, entry: ConntrackEntry) -> None:
        self._by_orig[entry.orig] = entry
        self._by_reply[entry.reply] = entry

    def _reindex_reply(self, entry: ConntrackEntry, reply: FiveTuple) -> None:
        self._by_reply.pop(entry.reply, None)
        entry.reply = reply
        self._by_reply[reply] = entry

    def prerouting(self, p: Packet, in_iface: str) -> tuple[Packet, Optional[ConntrackEntry]]:
        t = p.five_tuple()
        entry = self._by_orig.get(t)
        if entry is not None:
            return _rewrite(p, entry.reply.inverted()), entry
        entry = self._by_reply.get(t)
        if entry is not None:
            return _rewrite(p, entry.orig.inverted()), entry
        rule = self._first_match("DNAT", t, in_iface)
        new = t
        if rule is not None:
            port = rule.translate_port if rule.translate_port is not None else t.dport
            new = FiveTuple(t.protocol, t.src, t.sport, rule.translate_ip, port)
            log.debug("%s DNAT %s -> %s (%s)", self.owner, t, new, rule.describe())
        entry = ConntrackEntry(orig=t, reply=new.inverted(), owner=self.owner)
        self._index(entry)
        return _rewrite(p, new), entry

    def postrouting(
        self, p: Packet, out_iface: str, entry: Optional[ConntrackEntry] = None
    ) -> Packet:
        """Source translation. ``entry`` is what prerouting returned for a
        forwarded packet; None means the packet was generated locally."""
        if entry is not None and entry.confirmed:
            return p
        t = p.five_tuple()
        if entry is None:
            known = self._by_orig.get(t)
            if known is not None:
                return _rewrite(p, known.reply.inverted())
            known = self._by_reply.get(t)
            if known is not None:
                return _rewrite(p, known.orig.inverted())
        rule = self._first_match("SNAT", t, out_iface)
        new = t
        if rule is not None:
            port = rule.translate_port
            if port is None:
                port = self._allocate_port(rule.translate_ip, t)
            new = FiveTuple(t.protocol, rule.translate_ip, port, t.dst, t.dport)
            log.debug("%s SNAT %s -> %s (%s)", self.owner, t, new, rule.describe())
        if entry is None:
            entry = ConntrackEntry(orig=t, reply=new.inverted(), owner=self.owner)
            self._index(entry)
        elif new != t:
            self._reindex_reply(entry, new.inverted())
        entry.confirmed = True
        return _rewrite(p, new)

    def confirm(self, entry: Optional[ConntrackEntry]) -> None:
        """Mark a locally delivered connection as established."""
        if entry is not None:
            entry.confirmed = True


def _rewrite(p: Packet, t: FiveTuple) -> Packet:
    if p.five_tuple() == t:
        return p
    return p.with_addresses(t.src, t.sport, t.dst, t.dport)


def apply_nat(table: NatTable, p: Packet, direction: str, iface: str) -> Packet:
    """Run one netfilter hook on ``p`` in isolation.

    For a full pass through a forwarding node call ``prerouting`` and then
    ``postrouting`` with the returned entry; this helper treats a
    postrouting call as a locally generated packet.
    """
    if direction == PREROUTING:
        out, entry = table.prerouting(p, iface)
        return out
    if direction == POSTROUTING:
        return table.postrouting(p, iface)
    raise ValueError(f"unknown NAT direction {direction!r}")
