"""Dependency graph, event collector, forwarder abstraction and exports.

JSON export schema (``svcdep.graph/1``)::

    {
      "schema": "svcdep.graph/1",
      "meta":  {...run metadata, free-form...},
      "nodes": [{"id": "h1/1000", "kind": "process", "host": "h1",
                 "pid": 1000, "cgroup": "/docker/frontend", "name": "frontend"},
                {"id": "addr:h2:192.168.2.2:5000", "kind": "address",
                 "host": "h2", "ip": "192.168.2.2", "port": 5000}],
      "edges": [{"src": "h1/1000", "dst": "h2/1000", "provenance": "ripple",
                 "first_seen": 57, "last_seen": 940, "connections": 1,
                 "forward": true, "reverse": false, "active": null}]
    }

Nodes are sorted by id and edges by (src, dst, provenance), so identical
graphs always serialize to identical bytes.
"""

from __future__ import annotations

import ipaddress
import json
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .agent import RECEIVER, SENDER, DiscoveryEvent
from .baselines import CONNTRACK, FIVETUPLE, INBOUND, OUTBOUND, FlowRecord
from .endpoint import ProcessRef
from .packet import DiscoveryIdentifier, FiveTuple

SCHEMA = "svcdep.graph/1"
RIPPLE = "ripple"


class ProtocolViolation(RuntimeError):
    """Events that cannot come from a correct agent, e.g. an identifier sent twice."""


@dataclass(frozen=True, order=True)
class AddressNode:
    """Stand-in for a remote end an observer could not attribute to a process."""

    ip: str
    port: int
    host: Optional[str] = None

    @property
    def node_id(self) -> str:
        return f"addr:{self.host or '?'}:{self.ip}:{self.port}"

    @property
    def name(self) -> str:
        return self.node_id


GraphNode = Union[ProcessRef, AddressNode]


def node_id(n: GraphNode) -> str:
    return n.node_id


@dataclass
class Edge:
    src: GraphNode
    dst: GraphNode
    provenance: str
    first_seen: int
    last_seen: int
    connections: int = 1
    forward: bool = False
    reverse: bool = False
    active: Optional[bool] = None
    activity: list = field(default_factory=list, repr=False, compare=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return (node_id(self.src), node_id(self.dst), self.provenance)

    def touch(self, time: int) -> None:
        self.activity.append(time)
        if time > self.last_seen:
            self.last_seen = time


class DependencyGraph:
    def __init__(self) -> None:
        self.nodes: dict[str, GraphNode] = {}
        self.edges: dict[tuple[str, str, str], Edge] = {}
        self.meta: dict = {}

    def add_node(self, n: GraphNode) -> None:
        self.nodes.setdefault(node_id(n), n)

    def add_edge(
        self,
        src: GraphNode,
        dst: GraphNode,
        provenance: str,
        time: int,
        *,
        forward: bool = True,
        reverse: bool = False,
        new_connection: bool = True,
    ) -> Edge:
        self.add_node(src)
        self.add_node(dst)
        key = (node_id(src), node_id(dst), provenance)
        edge = self.edges.get(key)
        if edge is None:
            edge = Edge(src, dst, provenance, time, time, 1, forward, reverse)
            edge.activity.append(time)
            self.edges[key] = edge
            return edge
        if new_connection:
            edge.connections += 1
        edge.forward |= forward
        edge.reverse |= reverse
        edge.touch(time)
        return edge

    @property
    def unresolved(self) -> list[Edge]:
        return [e for e in self.edges.values() if isinstance(e.dst, AddressNode) or isinstance(e.src, AddressNode)]

    def in_edges(self, nid: str) -> list[Edge]:
        return [e for k, e in self.edges.items() if k[1] == nid]

    def out_edges(self, nid: str) -> list[Edge]:
        return [e for k, e in self.edges.items() if k[0] == nid]

    def service_edges(self, *, directed: bool = True) -> set:
        """Edges as (caller name, callee name) pairs.

        Directed mode keeps edges observed from the connection initiator;
        undirected mode keeps every edge as a frozenset of the two names.
        """
        out: set = set()
        for e in self.edges.values():
            if directed:
                if e.forward:
                    out.add((e.src.name, e.dst.name))
            else:
                out.add(frozenset((e.src.name, e.dst.name)))
        return out

    def first_seen_of(self, pair: tuple[str, str]) -> Optional[int]:
        times = [e.first_seen for e in self.edges.values() if e.forward and (e.src.name, e.dst.name) == pair]
        return min(times) if times else None


class AddressBook:
    """What an address-based observer knows about who owns which address.

    ``scope`` is the machine on which an address is meaningful (bridge
    networks reuse the same private ranges on every host) or None for
    addresses that are unique across the deployment.
    """

    def __init__(self) -> None:
        self.services: dict[tuple[Optional[str], str, int], ProcessRef] = {}
        self.hosts: dict[tuple[Optional[str], str], str] = {}

    def add_service(self, ip, port: int, process: ProcessRef, scope: Optional[str] = None) -> None:
        self.services[(scope, str(ip), port)] = process

    def add_host(self, ip, machine: str, scope: Optional[str] = None) -> None:
        self.hosts[(scope, str(ip))] = machine

    def resolve(self, ip, port: int, observer_host: str) -> GraphNode:
        ip = str(ip)
        for scope in (observer_host, None):
            proc = self.services.get((scope, ip, port))
            if proc is not None:
                return proc
        host = self.hosts.get((observer_host, ip)) or self.hosts.get((None, ip))
        return AddressNode(ip, port, host)


class Collector:
    """Joins agent events and flow records into a ``DependencyGraph``.

    Discovery events pair on identifier value. Flow records from the
    five-tuple observer name the callee via the address book; conntrack
    records pair a client's outbound wire tuple with the server's inbound
    wire tuple, falling back to the address book at ``finalize``.
    """

    def __init__(self, address_book: Optional[AddressBook] = None):
        self.book = address_book or AddressBook()
        self.graph = DependencyGraph()
        self._lock = threading.Lock()
        self._senders: dict[DiscoveryIdentifier, DiscoveryEvent] = {}
        self._receivers: dict[DiscoveryIdentifier, DiscoveryEvent] = {}
        self._edge_by_id: dict[DiscoveryIdentifier, tuple] = {}
        self._flow_edges: dict[tuple, tuple] = {}
        self._clients: dict[FiveTuple, FlowRecord] = {}
        self._servers: dict[FiveTuple, FlowRecord] = {}
        self._finalized = False

    # -- ingestion -------------------------------------------------------------

    def ingest(self, event: Union[DiscoveryEvent, FlowRecord]) -> None:
        with self._lock:
            if isinstance(event, DiscoveryEvent):
                self._ingest_discovery(event)
            elif isinstance(event, FlowRecord):
                self._ingest_flow(event)
            else:
                raise TypeError(f"cannot ingest {type(event).__name__}")

    def _ingest_discovery(self, ev: DiscoveryEvent) -> None:
        if ev.role == SENDER:
            if ev.id in self._senders:
                raise ProtocolViolation(f"identifier {ev.id} sent twice")
            self._senders[ev.id] = ev
        elif ev.role == RECEIVER:
            if ev.id in self._receivers:
                raise ProtocolViolation(f"identifier {ev.id} received twice")
            self._receivers[ev.id] = ev
        else:
            raise ProtocolViolation(f"unknown event role {ev.role!r}")
        snd, rcv = self._senders.get(ev.id), self._receivers.get(ev.id)
        if snd is not None and rcv is not None:
            edge = self.graph.add_edge(
                snd.endpoint,
                rcv.endpoint,
                RIPPLE,
                max(snd.time, rcv.time),
                forward=bool(snd.initiator),
                reverse=not snd.initiator,
            )
            self._edge_by_id[ev.id] = edge.key

    def note_activity(self, ident: DiscoveryIdentifier, time: int) -> None:
        with self._lock:
            key = self._edge_by_id.get(ident)
            if key is not None:
                self.graph.edges[key].touch(time)

    def _flow_key(self, rec: FlowRecord) -> tuple:
        return (rec.host, rec.socket, rec.direction)

    def _ingest_flow(self, rec: FlowRecord) -> None:
        known = self._flow_edges.get(self._flow_key(rec))
        if known is not None:
            if known in self.graph.edges:
                self.graph.edges[known].touch(rec.time)
            return
        if rec.provenance == FIVETUPLE:
            if rec.direction == OUTBOUND and rec.client:
                callee = self.book.resolve(rec.tuple.dst, rec.tuple.dport, rec.host)
                edge = self.graph.add_edge(rec.local_process, callee, FIVETUPLE, rec.time)
                self._flow_edges[self._flow_key(rec)] = edge.key
            return
        if rec.provenance != CONNTRACK:
            raise ProtocolViolation(f"unknown flow provenance {rec.provenance!r}")
        if rec.direction == OUTBOUND and rec.client:
            self._clients.setdefault(rec.tuple, rec)
        elif rec.direction == INBOUND and not rec.client:
            self._servers.setdefault(rec.tuple, rec)
        else:
            return
        client, server = self._clients.get(rec.tuple), self._servers.get(rec.tuple)
        if client is not None and server is not None:
            edge = self.graph.add_edge(client.local_process, server.local_process, CONNTRACK, rec.time)
            self._flow_edges[self._flow_key(client)] = edge.key
            self._flow_edges[self._flow_key(server)] = edge.key
            del self._clients[rec.tuple]
            del self._servers[rec.tuple]

    # -- results ---------------------------------------------------------------

    def finalize(self) -> DependencyGraph:
        """Resolve conntrack flows that never paired. Idempotent."""
        with self._lock:
            if not self._finalized:
                for t, rec in sorted(self._clients.items(), key=lambda kv: (kv[1].time, str(kv[0]))):
                    callee = self.book.resolve(t.dst, t.dport, rec.host)
                    self.graph.add_edge(rec.local_process, callee, CONNTRACK, rec.time)
                self._finalized = True
            return self.graph

    @property
    def unpaired_events(self) -> int:
        ripple = sum(1 for i in self._senders if i not in self._receivers)
        ripple += sum(1 for i in self._receivers if i not in self._senders)
        return ripple + len(self._clients)

    @property
    def discovery_events(self) -> int:
        return len(self._senders) + len(self._receivers)


def abstract_forwarders(g: DependencyGraph, forwarders: Iterable[GraphNode]) -> DependencyGraph:
    """Contract forwarder nodes, composing each in-edge with each out-edge.

    A composed edge is forward (resp. reverse) only when both halves are, so
    a request path and its reply path never mix. Forwarders lacking in- or
    out-edges disappear without composing anything.
    """
    fids = sorted({node_id(f) for f in forwarders})
    missing = [f for f in fids if f not in g.nodes]
    if missing:
        raise ValueError(f"forwarders not in graph: {missing}")
    edges = {k: _copy_edge(e) for k, e in g.edges.items()}
    for fid in fids:
        ins = [e for k, e in edges.items() if k[1] == fid and k[0] != fid]
        outs = [e for k, e in edges.items() if k[0] == fid and k[1] != fid]
        edges = {k: e for k, e in edges.items() if fid not in (k[0], k[1])}
        for a in ins:
            for b in outs:
                if node_id(a.src) == node_id(b.dst):
                    continue
                fwd, rev = a.forward and b.forward, a.reverse and b.reverse
                if not (fwd or rev):
                    continue
                key = (node_id(a.src), node_id(b.dst), a.provenance)
                first = max(a.first_seen, b.first_seen)
                activity = sorted(set(a.activity) | set(b.activity))
                cur = edges.get(key)
                if cur is None:
                    edges[key] = Edge(
                        a.src, b.dst, a.provenance, first, max(a.last_seen, b.last_seen),
                        min(a.connections, b.connections), fwd, rev, None, activity,
                    )
                else:
                    cur.first_seen = min(cur.first_seen, first)
                    cur.last_seen = max(cur.last_seen, a.last_seen, b.last_seen)
                    cur.forward |= fwd
                    cur.reverse |= rev
                    cur.activity = sorted(set(cur.activity) | set(activity))
    out = DependencyGraph()
    out.meta = dict(g.meta)
    for nid, n in g.nodes.items():
        if nid not in fids:
            out.add_node(n)
    for key, e in sorted(edges.items(), key=lambda kv: (kv[1].first_seen, kv[0])):
        out.edges[key] = e
    return out


def _copy_edge(e: Edge) -> Edge:
    return Edge(
        e.src, e.dst, e.provenance, e.first_seen, e.last_seen, e.connections,
        e.forward, e.reverse, e.active, list(e.activity),
    )


def mark_active(g: DependencyGraph, window: tuple[int, int]) -> None:
    """Flag edges that saw any traffic in ``[start, end)``."""
    start, end = window
    for e in g.edges.values():
        e.active = any(start <= t < end for t in e.activity)


# -- exports -------------------------------------------------------------------


def _node_json(n: GraphNode) -> dict:
    if isinstance(n, ProcessRef):
        return {"id": n.node_id, "kind": "process", "host": n.host, "pid": n.pid, "cgroup": n.cgroup, "name": n.name}
    return {"id": n.node_id, "kind": "address", "host": n.host, "ip": n.ip, "port": n.port}


def export_json(g: DependencyGraph) -> str:
    doc = {
        "schema": SCHEMA,
        "meta": g.meta,
        "nodes": [_node_json(g.nodes[k]) for k in sorted(g.nodes)],
        "edges": [
            {
                "src": k[0],
                "dst": k[1],
                "provenance": k[2],
                "first_seen": e.first_seen,
                "last_seen": e.last_seen,
                "connections": e.connections,
                "forward": e.forward,
                "reverse": e.reverse,
                "active": e.active,
            }
            for k, e in sorted(g.edges.items())
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def graph_from_json(text: str) -> DependencyGraph:
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"unsupported graph schema {doc.get('schema')!r}")
    g = DependencyGraph()
    g.meta = doc.get("meta", {})
    for n in doc["nodes"]:
        if n["kind"] == "process":
            g.add_node(ProcessRef(n["host"], n["pid"], n["cgroup"], n["name"]))
        else:
            g.add_node(AddressNode(n["ip"], n["port"], n["host"]))
    edges = []
    for e in doc["edges"]:
        edges.append(
            Edge(
                g.nodes[e["src"]], g.nodes[e["dst"]], e["provenance"], e["first_seen"], e["last_seen"],
                e["connections"], e["forward"], e["reverse"], e["active"],
            )
        )
    for e in sorted(edges, key=lambda e: (e.first_seen, e.key)):
        g.edges[e.key] = e
    return g


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(g: DependencyGraph) -> str:
    """Graphviz text with one cluster per machine. Inactive edges are
    dotted, reply-direction-only edges dashed."""
    lines = ["digraph dependencies {", "  rankdir=LR;", "  node [shape=box, fontsize=10];"]
    by_host: dict[str, list[GraphNode]] = {}
    loose: list[AddressNode] = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        if isinstance(n, ProcessRef):
            by_host.setdefault(n.host, []).append(n)
        else:
            loose.append(n)
    for host in sorted(by_host):
        lines.append(f"  subgraph {_dot_quote('cluster_' + host)} {{")
        lines.append(f"    label={_dot_quote(host)};")
        for n in by_host[host]:
            label = f"{n.name}\\n{n.cgroup}\\npid {n.pid}"
            lines.append(f"    {_dot_quote(n.node_id)} [label=\"{label}\"];")
        lines.append("  }")
    for n in loose:
        lines.append(f"  {_dot_quote(n.node_id)} [label={_dot_quote(f'{n.ip}:{n.port}')}, style=dashed];")
    for k, e in sorted(g.edges.items()):
        attrs = [f"label={_dot_quote(e.provenance)}"]
        if e.active is False:
            attrs.append("style=dotted")
        elif not e.forward:
            attrs.append("style=dashed")
        lines.append(f"  {_dot_quote(k[0])} -> {_dot_quote(k[1])} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def parse_ip(text: str):
    return ipaddress.ip_address(text)
