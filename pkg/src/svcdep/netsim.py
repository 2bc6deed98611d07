"""Deterministic discrete-event network simulator.

A ``SimWorld`` holds machines, network namespaces (``Node``), L2 segments and
a single event queue. Nodes route with longest-prefix match and may run a
``NatTable``. Time is an integer tick counter; every segment has a fixed
latency and delivery is lossless and in order.
"""

from __future__ import annotations

import hashlib
import heapq
import ipaddress
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol

from .nat import ConntrackEntry, NatTable
from .packet import IPAddress, Packet, decrement_ttl, extract_identifier, strip_unknown_options

log = logging.getLogger(__name__)

PACKET = "packet-arrival"
ACTION = "process-action"
TIMER = "timer"


class TopologyError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


class ConntrackAccessDenied(PermissionError):
    """An observer tried to read NAT state outside its own machine."""


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    action: Callable[[], Any] = field(compare=False, repr=False)
    payload: Any = field(default=None, compare=False)


@dataclass
class Machine:
    """A physical or virtual host. Agents attach here and see every
    namespace the machine runs. ``administered`` is False for devices such as
    provider gateways whose state observers may not read."""

    name: str
    administered: bool = True
    hooks: list = field(default_factory=list)


@dataclass(frozen=True)
class Route:
    prefix: ipaddress._BaseNetwork
    dev: str
    via: Optional[IPAddress] = None


@dataclass(eq=False)
class Interface:
    node: "Node"
    name: str
    address: ipaddress._BaseAddress
    network: ipaddress._BaseNetwork
    segment: "Segment"

    @property
    def label(self) -> str:
        return f"{self.node.name}:{self.name}"


@dataclass(eq=False)
class Segment:
    name: str
    latency: int = 1
    members: dict = field(default_factory=dict)

    def attach(self, iface: Interface) -> None:
        if iface.address in self.members:
            other = self.members[iface.address]
            raise TopologyError(
                f"duplicate address {iface.address} on segment {self.name}: "
                f"{other.label} and {iface.label}"
            )
        self.members[iface.address] = iface


class LocalStack(Protocol):
    def deliver(self, packet: Packet, entry: Optional[ConntrackEntry]) -> None: ...


class Node:
    """One network namespace: interfaces, routes, optional NAT, and the
    transport stack of the processes living in it."""

    def __init__(self, world: "SimWorld", name: str, machine: Machine, *, forwarding: bool = False):
        self.world = world
        self.name = name
        self.machine = machine
        self.forwarding = forwarding
        self.interfaces: dict[str, Interface] = {}
        self.routes: list[Route] = []
        self.nat: Optional[NatTable] = None
        self.stack: Optional[LocalStack] = None

    def __repr__(self) -> str:
        return f"Node({self.name})"

    def add_interface(self, name: str, cidr: str, segment: Segment) -> Interface:
        if name in self.interfaces:
            raise TopologyError(f"{self.name}: interface {name} declared twice")
        ifa = ipaddress.ip_interface(cidr)
        iface = Interface(self, name, ifa.ip, ifa.network, segment)
        segment.attach(iface)
        self.interfaces[name] = iface
        self.routes.append(Route(ifa.network, name))
        return iface

    def add_route(self, prefix: str, dev: str, via: Optional[str] = None) -> None:
        if dev not in self.interfaces:
            raise TopologyError(f"{self.name}: route via unknown interface {dev}")
        self.routes.append(
            Route(ipaddress.ip_network(prefix), dev, ipaddress.ip_address(via) if via else None)
        )

    def enable_nat(self, strip_options: bool = False) -> NatTable:
        if self.nat is None:
            self.nat = NatTable(self.name, strip_options=strip_options)
        return self.nat

    def local_addresses(self) -> list:
        return [i.address for i in self.interfaces.values()]

    def is_local(self, addr: IPAddress) -> bool:
        return any(i.address == addr for i in self.interfaces.values())

    def lookup(self, dst: IPAddress) -> Optional[tuple[Interface, IPAddress]]:
        """Longest-prefix match. Returns the egress interface and next hop."""
        best: Optional[Route] = None
        for r in self.routes:
            if r.prefix.version == dst.version and dst in r.prefix:
                if best is None or r.prefix.prefixlen > best.prefix.prefixlen:
                    best = r
        if best is None:
            return None
        return self.interfaces[best.dev], best.via if best.via is not None else dst

    def transport(self) -> LocalStack:
        """The namespace's TCP stack, created on first use like a kernel's."""
        if self.stack is None:
            from .endpoint import TcpStack

            TcpStack(self)
        return self.stack

    # -- packet path -------------------------------------------------------

    def output(self, packet: Packet) -> None:
        """Send a locally generated packet."""
        if self.is_local(packet.ip.dst):
            self.world.schedule(1, PACKET, lambda: self._loopback(packet), payload=packet)
            return
        hop = self.lookup(packet.ip.dst)
        if hop is None:
            self.world.drop(self, packet, "no route")
            return
        iface, next_hop = hop
        if self.nat is not None:
            packet = self.nat.postrouting(packet, iface.name)
        self.world.transmit(iface, next_hop, packet)

    def _loopback(self, packet: Packet) -> None:
        self.world.record(f"{self.world.now} lo@{self.name} {packet.five_tuple()} {_opt_flag(packet)}")
        self.transport().deliver(packet, None)

    def receive(self, packet: Packet, iface: Interface) -> None:
        entry = None
        if self.nat is not None:
            before = packet.five_tuple()
            packet, entry = self.nat.prerouting(packet, iface.name)
            if packet.five_tuple() != before:
                self.world.record(f"{self.world.now} nat@{self.name} pre {before} => {packet.five_tuple()}")
        if self.is_local(packet.ip.dst):
            if self.nat is not None:
                self.nat.confirm(entry)
            self.transport().deliver(packet, entry)
            return
        if not self.forwarding:
            self.world.drop(self, packet, "not addressed here and forwarding disabled")
            return
        if packet.ip.ttl <= 1:
            self.world.drop(self, packet, "ttl exceeded")
            return
        hop = self.lookup(packet.ip.dst)
        if hop is None:
            self.world.drop(self, packet, "no route")
            return
        out, next_hop = hop
        packet = decrement_ttl(packet)
        if self.nat is not None:
            before = packet.five_tuple()
            packet = self.nat.postrouting(packet, out.name, entry)
            if packet.five_tuple() != before:
                self.world.record(f"{self.world.now} nat@{self.name} post {before} => {packet.five_tuple()}")
            if self.nat.strip_options:
                packet = strip_unknown_options(packet)
        self.world.transmit(out, next_hop, packet)


def _opt_flag(packet: Packet) -> str:
    return "opt=id" if extract_identifier(packet) is not None else "opt=-"


class SimWorld:
    def __init__(self, *, verify_checksums: bool = True):
        self.now = 0
        self.verify_checksums = verify_checksums
        self.machines: dict[str, Machine] = {}
        self.nodes: dict[str, Node] = {}
        self.segments: dict[str, Segment] = {}
        self.drops: list[tuple[int, str, str, str]] = []
        self.trace: list[str] = []
        self.app_log: list[tuple] = []
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self._pids: dict[str, itertools.count] = {}
        self._socket_ids = itertools.count(1)
        self.processes: dict = {}

    # -- construction ------------------------------------------------------

    def add_machine(self, name: str, *, administered: bool = True) -> Machine:
        if name in self.machines:
            raise TopologyError(f"machine {name} declared twice")
        m = Machine(name, administered)
        self.machines[name] = m
        return m

    def add_segment(self, name: str, latency: int = 1) -> Segment:
        if name in self.segments:
            raise TopologyError(f"segment {name} declared twice")
        if latency < 0:
            raise TopologyError("segment latency must be non-negative")
        s = Segment(name, latency)
        self.segments[name] = s
        return s

    def add_node(self, name: str, machine: str, *, forwarding: bool = False) -> Node:
        if name in self.nodes:
            raise TopologyError(f"node {name} declared twice")
        if machine not in self.machines:
            raise TopologyError(f"node {name} references unknown machine {machine}")
        n = Node(self, name, self.machines[machine], forwarding=forwarding)
        self.nodes[name] = n
        return n

    def next_pid(self, machine: str) -> int:
        return next(self._pids.setdefault(machine, itertools.count(1000)))

    def next_socket_id(self) -> int:
        return next(self._socket_ids)

    # -- events --------------------------------------------------------------

    def schedule(self, delay: int, kind: str, action: Callable[[], Any], payload: Any = None) -> SimEvent:
        if delay < 0:
            raise SimulationError("cannot schedule into the past")
        ev = SimEvent(self.now + delay, next(self._seq), kind, action, payload)
        heapq.heappush(self._queue, ev)
        return ev

    def at(self, time: int, kind: str, action: Callable[[], Any], payload: Any = None) -> SimEvent:
        return self.schedule(max(0, time - self.now), kind, action, payload)

    def step(self) -> Optional[SimEvent]:
        if not self._queue:
            return None
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        ev.action()
        return ev

    def run(self, until: Optional[int] = None, max_events: Optional[int] = None) -> int:
        count = 0
        while self._queue:
            if until is not None and self._queue[0].time > until:
                break
            if max_events is not None and count >= max_events:
                raise SimulationError(f"event budget of {max_events} exhausted at t={self.now}")
            self.step()
            count += 1
        return count

    @property
    def pending(self) -> int:
        return len(self._queue)

    # -- links ---------------------------------------------------------------

    def transmit(self, iface: Interface, next_hop: IPAddress, packet: Packet) -> None:
        target = iface.segment.members.get(next_hop)
        if target is None:
            self.drop(iface.node, packet, f"no neighbour {next_hop} on {iface.segment.name}")
            return

        def arrive() -> None:
            self.record(
                f"{self.now} {iface.segment.name} {iface.label}->{target.label} "
                f"{packet.five_tuple()} {_opt_flag(packet)}"
            )
            if self.verify_checksums and not packet.checksums_valid():
                raise SimulationError(f"invalid checksum on {iface.segment.name}: {packet.five_tuple()}")
            target.node.receive(packet, target)

        self.schedule(iface.segment.latency, PACKET, arrive, payload=packet)

    def inject(self, node: str, packet: Packet) -> None:
        """Hand a raw packet to a node's output path (tests, debugging)."""
        self.nodes[node].output(packet)

    def drop(self, node: Node, packet: Packet, reason: str) -> None:
        self.drops.append((self.now, node.name, str(packet.five_tuple()), reason))
        self.record(f"{self.now} drop@{node.name} {packet.five_tuple()} {reason}")
        log.debug("t=%d drop at %s: %s (%s)", self.now, node.name, packet.five_tuple(), reason)

    def record(self, line: str) -> None:
        self.trace.append(line)

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.trace:
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    # -- observer capabilities -------------------------------------------------

    def hooks_for(self, machine: Machine) -> list:
        return machine.hooks

    def attach(self, machine: str, observer: Any) -> None:
        self.machines[machine].hooks.append(observer)

    def conntrack_view(self, machine: str) -> "ConntrackView":
        return ConntrackView(self, machine)


class ConntrackView:
    """Read access to the NAT tables of one machine's namespaces."""

    def __init__(self, world: SimWorld, machine: str):
        self._world = world
        self.machine = machine

    def tables(self) -> list[NatTable]:
        m = self._world.machines[self.machine]
        if not m.administered:
            raise ConntrackAccessDenied(f"{self.machine} is outside administrative control")
        return [n.nat for n in self._world.nodes.values() if n.machine is m and n.nat is not None]

    def table_of(self, node: str) -> NatTable:
        n = self._world.nodes[node]
        if n.machine.name != self.machine or not n.machine.administered:
            raise ConntrackAccessDenied(f"observer on {self.machine} may not read conntrack of {node}")
        if n.nat is None:
            raise KeyError(f"{node} has no NAT table")
        return n.nat
