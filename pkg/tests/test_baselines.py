import pytest

from helpers import bench_scenario, small_scenario
from svcdep.baselines import CONNTRACK, FIVETUPLE, OUTBOUND, conntrack_observe
from svcdep.graph import AddressNode
from svcdep.harness.runner import execute
from svcdep.netsim import ConntrackAccessDenied
from svcdep.packet import Packet

EDGES = [("a", "b"), ("b", "c"), ("a", "c")]


def graph_pairs(result):
    return {(e.src.name, e.dst.name) for e in result.graph.edges.values()}


def test_fivetuple_nat_free_correct():
    r = execute(small_scenario("nat-free", EDGES), agent="fivetuple")
    assert r.report.f1 == 1.0
    assert all(e.provenance == FIVETUPLE for e in r.graph.edges.values())


def test_fivetuple_internal_nat_resolves_to_vm():
    r = execute(small_scenario("internal-nat", EDGES), agent="fivetuple")
    assert r.report.correct_edges == 0
    dsts = [e.dst for e in r.graph.edges.values()]
    assert dsts and all(isinstance(d, AddressNode) for d in dsts)
    assert {d.host for d in dsts} <= {"h1", "h2"}
    assert all(d.host is not None for d in dsts)


def test_fivetuple_external_nat_resolves_to_gateway():
    r = execute(small_scenario("external-nat", EDGES), agent="fivetuple")
    assert r.report.correct_edges == 0
    dsts = [e.dst for e in r.graph.edges.values()]
    assert dsts and all(isinstance(d, AddressNode) and d.host is None for d in dsts)


def test_conntrack_internal_nat_correct():
    r = execute(small_scenario("internal-nat", EDGES), agent="conntrack")
    assert r.report.f1 == 1.0
    assert all(e.provenance == CONNTRACK for e in r.graph.edges.values())


def test_conntrack_external_nat_degraded():
    r = execute(small_scenario("external-nat", EDGES), agent="conntrack")
    assert r.report.recall < 0.3
    assert r.report.discovered_edges > 0
    assert r.report.precision < 0.5


def test_conntrack_equals_fivetuple_without_nat():
    s = small_scenario("nat-free", EDGES)
    a = execute(s, agent="fivetuple")
    b = execute(s, agent="conntrack")
    assert graph_pairs(a) == graph_pairs(b)


@pytest.mark.parametrize("template", ["nat-free", "internal-nat", "external-nat"])
@pytest.mark.parametrize("agent", ["fivetuple", "conntrack"])
def test_observers_are_passive(template, agent):
    s = small_scenario(template, EDGES)
    plain = execute(s, agent="none")
    watched = execute(s, agent=agent)
    assert plain.world.trace_digest() == watched.world.trace_digest()


@pytest.mark.parametrize("template", ["nat-free", "internal-nat", "external-nat"])
@pytest.mark.parametrize("kind", ["boutique", "social"])
def test_conntrack_dominates_fivetuple(template, kind):
    s = bench_scenario(kind, template, count=2)
    ft = execute(s, agent="fivetuple")
    ct = execute(s, agent="conntrack")
    correct = lambda r: r.graph.service_edges() & {tuple(e) for e in s.ground_truth}
    assert correct(ft) <= correct(ct)


def test_gateway_conntrack_unreadable():
    s = small_scenario("external-nat", EDGES)
    r = execute(s, agent="none")
    view = r.world.conntrack_view("gw-h1")
    sock = next(iter(r.world.nodes["h1/a"].stack.connections.values()))
    p = Packet.create("192.168.2.10", "8.8.8.8", 1, 2, b"x")
    with pytest.raises(ConntrackAccessDenied):
        conntrack_observe(view, "gw-h1", p, OUTBOUND, sock)
    with pytest.raises(ConntrackAccessDenied):
        r.world.conntrack_view("h1").table_of("gw-h2")


def test_conntrack_reads_only_own_machine():
    s = small_scenario("internal-nat", EDGES)
    r = execute(s, agent="conntrack")
    for obs in r.agents:
        owners = {t.owner for t in obs.view.tables()}
        assert owners == {obs.host}
