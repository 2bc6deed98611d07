import pytest

from svcdep.agent import DISCOVERED, MANUAL, RECEIVER, SENDER, ForeignProcess, IdentifierSource, RippleAgent
from svcdep.endpoint import RequestReplyServer, connect, send, spawn_forwarder, spawn_process
from svcdep.packet import TcpOption, extract_identifier
from svcdep.topology import ServiceSpec, build_topology, plan_network


class ListSink:
    def __init__(self):
        self.events = []
        self.activity = []

    def ingest(self, ev):
        self.events.append(ev)

    def note_activity(self, ident, time):
        self.activity.append((ident, time))


class TagCounter:
    """Counts tagged payload segments arriving per receiving socket."""

    def __init__(self):
        self.tagged = {}

    def on_send(self, *a):
        pass

    def on_transmit(self, p, s):
        return p

    def on_data_queued(self, s, p):
        if extract_identifier(p) is not None:
            self.tagged[s.sid] = self.tagged.get(s.sid, 0) + 1

    def on_recv(self, *a):
        pass


def setup(template="nat-free", services=("a", "b", "c"), hosts=("h1", "h2"), agents_on=None):
    specs = [ServiceSpec(n, hosts[i % len(hosts)]) for i, n in enumerate(services)]
    plan = plan_network(template, list(hosts), specs)
    w = build_topology(plan.topology)
    procs = {}
    for name, pl in plan.placements.items():
        procs[name] = spawn_process(w, pl.node, name)
        RequestReplyServer(w, procs[name], pl.listen, lambda d: b"ok:" + d)
    for f in plan.forwarders:
        spawn_forwarder(w, f.node, f.listen_port, f.target)
    sink = ListSink()
    agents = {h: RippleAgent(w, h, sink, seed=7) for h in (agents_on if agents_on is not None else hosts)}
    return w, plan, procs, agents, sink


def test_register_bootstrap_and_idempotent():
    w, _, procs, agents, _ = setup()
    agents["h1"].register_target(procs["a"])
    agents["h1"].register_target(procs["a"])
    assert agents["h1"].targets == {procs["a"]: MANUAL}


def test_register_foreign_process_rejected():
    _, _, procs, agents, _ = setup()
    with pytest.raises(ForeignProcess):
        agents["h1"].register_target(procs["b"])


def test_on_send_records_only_targets():
    w, plan, procs, agents, _ = setup()
    ag = agents["h1"]
    ag.register_target(procs["a"])
    s_a = connect(w, procs["a"], plan.placements["b"].address)
    s_c = connect(w, procs["c"], plan.placements["b"].address)
    send(s_a, b"1")
    send(s_c, b"1")
    w.run()
    assert s_a in ag.owned and s_c not in ag.owned
    send(s_a, b"2")
    w.run()
    assert ag.owned[s_a] == procs["a"]


def test_first_data_packet_tagged_once():
    w, plan, procs, agents, sink = setup()
    counter = TagCounter()
    w.attach("h2", counter)
    agents["h1"].register_target(procs["a"])
    s = connect(w, procs["a"], plan.placements["b"].address)
    for t in (10, 20, 30):
        w.at(t, "process-action", lambda: send(s, b"req"))
    w.run()
    senders = [e for e in sink.events if e.role == SENDER and e.endpoint == procs["a"]]
    assert len(senders) == 1 and senders[0].initiator is True
    assert agents["h1"].injections >= 1
    assert all(v <= 1 for v in counter.tagged.values())
    receivers = [e for e in sink.events if e.role == RECEIVER and e.id == senders[0].id]
    assert receivers[0].endpoint == procs["b"]


def test_handshake_never_tagged():
    w, plan, procs, agents, _ = setup()
    agents["h1"].register_target(procs["a"])
    connect(w, procs["a"], plan.placements["b"].address)
    w.run()
    assert agents["h1"].injections == 0
    assert not any("opt=id" in line for line in w.trace)


def test_no_room_retries_on_next_packet():
    w, plan, procs, agents, sink = setup()
    agents["h1"].register_target(procs["a"])
    s = connect(w, procs["a"], plan.placements["b"].address)
    s.tcp_options = (TcpOption(200, bytes(22)),)
    w.at(10, "process-action", lambda: send(s, b"stuffed"))

    def roomy():
        s.tcp_options = ()
        send(s, b"roomy")

    w.at(20, "process-action", roomy)
    w.run()
    ag = agents["h1"]
    assert ag.skipped_no_room == 1 and ag.injections >= 1
    (snd,) = [e for e in sink.events if e.role == SENDER and e.endpoint == procs["a"]]
    assert snd.time >= 20


def test_untagged_packet_leaves_no_pending():
    w, plan, procs, agents, sink = setup()
    s = connect(w, procs["a"], plan.placements["b"].address)
    send(s, b"plain")
    w.run()
    assert sink.events == []
    assert all(not a.pending for a in agents.values())


def test_tagged_packet_to_agentless_host_is_harmless():
    w, plan, procs, agents, sink = setup(agents_on=("h1",))
    agents["h1"].register_target(procs["a"])
    got = []
    s = connect(w, procs["a"], plan.placements["b"].address)
    s.on_data = lambda _s, d: got.append(d)
    send(s, b"hello")
    w.run()
    assert got == [b"ok:hello"]
    assert [e.role for e in sink.events] == [SENDER]


def test_receiver_becomes_target_and_propagates():
    w, plan, procs, agents, sink = setup()
    agents["h1"].register_target(procs["a"])
    s_ab = connect(w, procs["a"], plan.placements["b"].address)
    s_bc = connect(w, procs["b"], plan.placements["c"].address)
    w.at(10, "process-action", lambda: send(s_bc, b"early"))  # b not yet a target
    w.at(50, "process-action", lambda: send(s_ab, b"x"))
    w.at(100, "process-action", lambda: send(s_bc, b"late"))
    w.run()
    assert agents["h2"].targets[procs["b"]] == DISCOVERED
    assert procs["b"] in agents["h2"].discovered_via
    b_sends = [e for e in sink.events if e.role == SENDER and e.endpoint == procs["b"] and e.initiator]
    assert len(b_sends) == 1 and b_sends[0].time >= 100
    assert agents["h1"].targets[procs["c"]] == DISCOVERED


def test_every_discovered_target_has_receiver_event():
    w, plan, procs, agents, sink = setup()
    agents["h1"].register_target(procs["a"])
    for t, (x, y) in enumerate([("a", "b"), ("b", "c"), ("c", "a")]):
        s = connect(w, procs[x], plan.placements[y].address)
        w.at(20 + 40 * t, "process-action", lambda s=s: send(s, b"q"))
    w.run()
    received = {e.endpoint for e in sink.events if e.role == RECEIVER}
    for ag in agents.values():
        for p, origin in ag.targets.items():
            if origin == DISCOVERED:
                assert p in received


def test_proxy_becomes_intermediary():
    w, plan, procs, agents, sink = setup("internal-nat", services=("a", "b"), hosts=("h1",))
    agents["h1"].register_target(procs["a"])
    s = connect(w, procs["a"], plan.placements["b"].address)
    send(s, b"via proxy")
    w.run()
    proxies = [p for p in agents["h1"].targets if p.name == "docker-proxy"]
    assert len(proxies) == 1
    proxy_sends = [e for e in sink.events if e.role == SENDER and e.endpoint == proxies[0] and e.initiator]
    a_sends = [e for e in sink.events if e.role == SENDER and e.endpoint == procs["a"]]
    assert proxy_sends and a_sends and proxy_sends[0].id != a_sends[0].id


def test_linked_socket_reports_activity():
    w, plan, procs, agents, sink = setup()
    agents["h1"].register_target(procs["a"])
    s = connect(w, procs["a"], plan.placements["b"].address)
    w.at(10, "process-action", lambda: send(s, b"1"))
    w.at(40, "process-action", lambda: send(s, b"2"))
    w.run()
    assert any(t >= 40 for _, t in sink.activity)


def test_identifier_source_unique_and_deterministic():
    a, b = IdentifierSource(1, "h1"), IdentifierSource(1, "h1")
    ids = [a.next() for _ in range(100)]
    assert len(set(ids)) == 100
    assert ids == [b.next() for _ in range(100)]
    assert IdentifierSource(1, "h2").next() not in ids


def test_unknown_host_rejected():
    w, *_ = setup()
    with pytest.raises(ValueError):
        RippleAgent(w, "nope", ListSink())
