import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import contract_paths, reachable_pairs
from svcdep.agent import RECEIVER, SENDER, DiscoveryEvent
from svcdep.endpoint import ProcessRef
from svcdep.graph import (
    RIPPLE,
    AddressBook,
    AddressNode,
    Collector,
    DependencyGraph,
    ProtocolViolation,
    abstract_forwarders,
    export_dot,
    export_json,
    graph_from_json,
    mark_active,
)
from svcdep.packet import DiscoveryIdentifier


def proc(name, host="h1", pid=None):
    return ProcessRef(host, pid if pid is not None else 1000 + sum(map(ord, name)), f"/docker/{name}", name)


def ident(n):
    return DiscoveryIdentifier(n.to_bytes(16, "big"))


A, B, C, P1, P2 = proc("a"), proc("b", "h2"), proc("c"), proc("p1"), proc("p2", "h2")


def test_sender_receiver_join():
    c = Collector()
    c.ingest(DiscoveryEvent(ident(1), A, SENDER, 5, True))
    c.ingest(DiscoveryEvent(ident(1), B, RECEIVER, 7))
    g = c.finalize()
    (e,) = g.edges.values()
    assert (e.src, e.dst, e.provenance, e.first_seen, e.forward) == (A, B, RIPPLE, 7, True)


def test_receiver_before_sender_also_joins():
    c = Collector()
    c.ingest(DiscoveryEvent(ident(1), B, RECEIVER, 7))
    c.ingest(DiscoveryEvent(ident(1), A, SENDER, 5, True))
    assert len(c.finalize().edges) == 1


def test_unpaired_sender_counted():
    c = Collector()
    c.ingest(DiscoveryEvent(ident(2), A, SENDER, 5, True))
    assert c.finalize().edges == {}
    assert c.unpaired_events == 1


def test_two_connections_one_edge():
    c = Collector()
    for i, t in ((1, 10), (2, 30)):
        c.ingest(DiscoveryEvent(ident(i), A, SENDER, t, True))
        c.ingest(DiscoveryEvent(ident(i), B, RECEIVER, t + 1))
    (e,) = c.finalize().edges.values()
    assert e.first_seen == 11 and e.connections == 2 and e.last_seen == 31


def test_duplicate_sender_is_violation():
    c = Collector()
    c.ingest(DiscoveryEvent(ident(3), A, SENDER, 1, True))
    with pytest.raises(ProtocolViolation):
        c.ingest(DiscoveryEvent(ident(3), C, SENDER, 2, True))


def test_duplicate_receiver_is_violation():
    c = Collector()
    c.ingest(DiscoveryEvent(ident(3), A, RECEIVER, 1))
    with pytest.raises(ProtocolViolation):
        c.ingest(DiscoveryEvent(ident(3), C, RECEIVER, 2))


def test_reverse_direction_edge_flagged():
    c = Collector()
    c.ingest(DiscoveryEvent(ident(4), B, SENDER, 1, False))
    c.ingest(DiscoveryEvent(ident(4), A, RECEIVER, 2))
    (e,) = c.finalize().edges.values()
    assert e.reverse and not e.forward
    assert c.graph.service_edges() == set()
    assert c.graph.service_edges(directed=False) == {frozenset(("a", "b"))}


def test_concurrent_ingest():
    c = Collector()
    procs = [proc(f"s{i}", pid=2000 + i) for i in range(8)]

    def worker(k):
        for j in range(200):
            n = k * 1000 + j
            c.ingest(DiscoveryEvent(ident(n), procs[k], SENDER, j, True))
            c.ingest(DiscoveryEvent(ident(n), procs[(k + 1) % 8], RECEIVER, j))

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    g = c.finalize()
    assert len(g.edges) == 8
    assert sum(e.connections for e in g.edges.values()) == 1600
    assert c.unpaired_events == 0


def test_first_seen_nondecreasing_in_insertion_order():
    c = Collector()
    for i, (s, r) in enumerate([(A, B), (B, C), (C, A), (A, C)]):
        c.ingest(DiscoveryEvent(ident(i), s, SENDER, 10 * i, True))
        c.ingest(DiscoveryEvent(ident(i), r, RECEIVER, 10 * i + 1))
    times = [e.first_seen for e in c.finalize().edges.values()]
    assert times == sorted(times)


# -- address book ----------------------------------------------------------------------


def test_address_book_scoping():
    book = AddressBook()
    book.add_service("172.17.0.2", 8080, A, scope="h1")
    book.add_service("192.168.2.2", 80, B)
    book.add_host("192.168.2.3", "h3")
    assert book.resolve("172.17.0.2", 8080, "h1") == A
    assert book.resolve("172.17.0.2", 8080, "h2") == AddressNode("172.17.0.2", 8080, None)
    assert book.resolve("192.168.2.2", 80, "h9") == B
    assert book.resolve("192.168.2.3", 5000, "h1") == AddressNode("192.168.2.3", 5000, "h3")


# -- forwarder abstraction -----------------------------------------------------------------


def build(edges):
    g = DependencyGraph()
    for i, (s, d) in enumerate(edges):
        g.add_edge(s, d, RIPPLE, i)
    return g


def pairs(g):
    return {(k[0], k[1]) for k in g.edges}


def test_single_proxy_contracted():
    g = abstract_forwarders(build([(A, P1), (P1, B)]), [P1])
    assert pairs(g) == {(A.node_id, B.node_id)}
    assert P1.node_id not in g.nodes


def test_no_forwarders_identity():
    g = build([(A, B), (B, C)])
    h = abstract_forwarders(g, [])
    assert export_json(h) == export_json(g)


def test_proxy_chain():
    g = abstract_forwarders(build([(A, P1), (P1, P2), (P2, B)]), [P1, P2])
    assert pairs(g) == {(A.node_id, B.node_id)}


def test_forwarder_without_out_edges_removed():
    g = abstract_forwarders(build([(A, P1), (A, B)]), [P1])
    assert pairs(g) == {(A.node_id, B.node_id)}


def test_missing_forwarder_rejected():
    with pytest.raises(ValueError):
        abstract_forwarders(build([(A, B)]), [P1])


def test_composed_edge_direction_must_agree():
    g = DependencyGraph()
    g.add_edge(A, P1, RIPPLE, 1, forward=True)
    g.add_edge(P1, B, RIPPLE, 2, forward=False, reverse=True)
    assert abstract_forwarders(g, [P1]).edges == {}


@settings(max_examples=200)
@given(
    st.integers(3, 9).flatmap(
        lambda n: st.tuples(
            st.just(n),
            st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] != e[1]), max_size=20),
            st.sets(st.integers(0, n - 1), max_size=n - 1),
        )
    )
)
def test_abstraction_matches_path_contraction(data):
    n, raw_edges, removed = data
    procs = [proc(f"n{i}", pid=3000 + i) for i in range(n)]
    g = build([(procs[a], procs[b]) for a, b in raw_edges])
    fwd = [procs[i] for i in removed if procs[i].node_id in g.nodes]
    out = abstract_forwarders(g, fwd)
    ids = {p.node_id for p in procs if p.node_id in g.nodes}
    rem = {p.node_id for p in fwd}
    assert pairs(out) == contract_paths(ids, pairs(g), rem)
    # reachability among survivors is preserved
    keep = ids - rem
    before = {(u, v) for (u, v) in reachable_pairs(ids, pairs(g)) if u in keep and v in keep}
    assert reachable_pairs(keep, pairs(out)) == before


# -- exports ---------------------------------------------------------------------------


def test_empty_exports():
    g = DependencyGraph()
    assert graph_from_json(export_json(g)).edges == {}
    dot = export_dot(g)
    assert dot.startswith("digraph") and dot.rstrip().endswith("}")


def test_dot_clusters_per_machine():
    dot = export_dot(build([(A, B)]))
    assert dot.count("subgraph") == 2
    assert dot.count("->") == 1
    assert 'cluster_h1' in dot and 'cluster_h2' in dot


def test_json_roundtrip_byte_stable():
    g = build([(A, B), (B, C), (A, AddressNode("1.1.1.1", 80, None))])
    g.meta = {"scenario": "x"}
    text = export_json(g)
    assert export_json(graph_from_json(text)) == text


def test_json_rejects_unknown_schema():
    with pytest.raises(ValueError):
        graph_from_json('{"schema": "other/9", "nodes": [], "edges": []}')


def test_export_deterministic_under_insertion_order():
    g1 = build([(A, B), (B, C)])
    g2 = DependencyGraph()
    g2.add_edge(B, C, RIPPLE, 1)
    g2.add_edge(A, B, RIPPLE, 0)
    assert export_json(g1) == export_json(g2)
    assert export_dot(g1) == export_dot(g2)


def test_mark_active_window():
    g = DependencyGraph()
    e1 = g.add_edge(A, B, RIPPLE, 10)
    e1.touch(500)
    e2 = g.add_edge(B, C, RIPPLE, 20)
    mark_active(g, (400, 600))
    assert e1.active is True and e2.active is False
    assert "style=dotted" in export_dot(g)
