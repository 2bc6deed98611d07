"""Independent reference implementations used as test oracles.

Nothing here imports the code under test's algorithms; only plain data
types cross the boundary.
"""

from __future__ import annotations

import ipaddress
import struct

from hypothesis import strategies as st


def naive_checksum(data: bytes) -> int:
    """Word-at-a-time 32-bit accumulate, fold carries, complement."""
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def verify_wire(raw: bytes) -> tuple[bool, bool]:
    """Check IPv4 header and TCP checksums straight from wire bytes."""
    version = raw[0] >> 4
    if version == 4:
        ihl = (raw[0] & 0x0F) * 4
        ip_ok = naive_checksum(raw[:ihl]) == 0
        src, dst = raw[12:16], raw[16:20]
        seg = raw[ihl:]
        pseudo = src + dst + struct.pack("!BBH", 0, raw[9], len(seg))
    else:
        ip_ok = True
        src, dst = raw[8:24], raw[24:40]
        seg = raw[40:]
        pseudo = src + dst + struct.pack("!I3xB", len(seg), raw[6])
    tcp_ok = naive_checksum(pseudo + seg) == 0
    return ip_ok, tcp_ok


def wire_payload(raw: bytes) -> bytes:
    ihl = (raw[0] & 0x0F) * 4 if raw[0] >> 4 == 4 else 40
    doff = (raw[ihl + 12] >> 4) * 4
    return raw[ihl + doff :]


def wire_data_offset(raw: bytes) -> int:
    ihl = (raw[0] & 0x0F) * 4 if raw[0] >> 4 == 4 else 40
    return raw[ihl + 12] >> 4


# -- packet generation --------------------------------------------------------

ipv4 = st.integers(1, 2**32 - 2).map(ipaddress.IPv4Address)
ipv6 = st.integers(1, 2**128 - 2).map(ipaddress.IPv6Address)
port = st.integers(1, 65535)
u32 = st.integers(0, 2**32 - 1)


@st.composite
def option_lists(draw, max_bytes: int = 40):
    """Realistic option mixes, including unknown kinds, within ``max_bytes``."""
    from svcdep.packet import TcpOption

    out = []
    used = 0
    for _ in range(draw(st.integers(0, 6))):
        choice = draw(st.sampled_from(["nop", "mss", "ws", "sackok", "ts", "unknown"]))
        if choice == "nop":
            opt = TcpOption(1)
        elif choice == "mss":
            opt = TcpOption(2, struct.pack("!H", draw(st.integers(0, 65535))))
        elif choice == "ws":
            opt = TcpOption(3, bytes([draw(st.integers(0, 14))]))
        elif choice == "sackok":
            opt = TcpOption(4)
        elif choice == "ts":
            opt = TcpOption(8, draw(st.binary(min_size=8, max_size=8)))
        else:
            kind = draw(st.integers(5, 253).filter(lambda k: k != 8))
            opt = TcpOption(kind, draw(st.binary(max_size=10)))
        if used + opt.size > max_bytes:
            break
        out.append(opt)
        used += opt.size
    return tuple(out)


@st.composite
def packets(draw, *, v6: bool | None = None, max_option_bytes: int = 40, min_payload: int = 0):
    from svcdep.packet import IpHeader, Packet, TcpHeader

    use_v6 = draw(st.booleans()) if v6 is None else v6
    addr = ipv6 if use_v6 else ipv4
    ip = IpHeader(
        draw(addr),
        draw(addr),
        ttl=draw(st.integers(2, 255)),
        tos=draw(st.integers(0, 255)),
        ident=0 if use_v6 else draw(st.integers(0, 65535)),
        flags_fragment=0 if use_v6 else 0x4000,
        flow_label=draw(st.integers(0, 0xFFFFF)) if use_v6 else 0,
    )
    tcp = TcpHeader(
        draw(port),
        draw(port),
        seq=draw(u32),
        ack=draw(u32),
        flags=draw(st.integers(0, 0x1FF)),
        window=draw(st.integers(0, 65535)),
        urgent=draw(st.integers(0, 65535)),
        options=draw(option_lists(max_option_bytes)),
    )
    payload = draw(st.binary(min_size=min_payload, max_size=300))
    return Packet(ip, tcp, payload).seal()


# -- propagation --------------------------------------------------------------


def time_respecting_reach(bootstrap: set, requests: list[tuple[int, str, str]]) -> set:
    """Processes reached by tagged traffic.

    ``requests`` are (time, caller, callee) with distinct, well-separated
    times so each request and its reply complete before the next request.
    A callee is reached when a reached caller sends it a request; a caller
    is reached when a reached callee answers it.
    """
    reached = set(bootstrap)
    for _, caller, callee in sorted(requests):
        if caller in reached:
            reached.add(callee)
        if callee in reached:
            reached.add(caller)
    return reached


def contract_paths(nodes: set, edges: set, removed: set) -> set:
    """Brute-force forwarder contraction: u->v survives iff a path u->...->v
    exists whose interior nodes are all removed ones."""
    keep = nodes - removed
    out = set()
    for u in keep:
        stack = [v for (a, v) in edges if a == u]
        seen = set()
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            if x in removed:
                stack.extend(v for (a, v) in edges if a == x)
            elif x != u:
                out.add((u, x))
    return out


def reachable_pairs(nodes: set, edges: set) -> set:
    adj: dict = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
    out = set()
    for u in nodes:
        stack, seen = list(adj.get(u, ())), set()
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            stack.extend(adj.get(x, ()))
        out |= {(u, v) for v in seen if v != u}
    return out
