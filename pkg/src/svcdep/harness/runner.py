"""Build a world from a scenario, drive its workload and score the result."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from ..agent import RippleAgent
from ..baselines import ConntrackObserver, FiveTupleObserver
from ..endpoint import ProcessRef, RequestReplyServer, connect, send, spawn_forwarder, spawn_process
from ..graph import AddressBook, Collector, DependencyGraph, abstract_forwarders, mark_active
from ..netsim import ACTION, SimulationError, SimWorld
from ..topology import (
    ForwarderSpec,
    NetworkPlan,
    Placement,
    ServiceSpec,
    build_topology,
    parse_endpoint,
    plan_network,
)
from .metrics import MetricsReport, compute_metrics
from .scenario import Scenario

log = logging.getLogger(__name__)

MAX_EVENTS = 20_000_000


@dataclass
class RunResult:
    scenario: Scenario
    agent: str
    world: SimWorld
    plan: NetworkPlan
    collector: Collector
    raw_graph: DependencyGraph
    graph: DependencyGraph
    report: MetricsReport
    processes: dict[str, ProcessRef] = field(default_factory=dict)
    forwarders: list[ProcessRef] = field(default_factory=list)
    agents: list = field(default_factory=list)


def plan_for(s: Scenario) -> NetworkPlan:
    net = s.network
    if "template" in net:
        services = [ServiceSpec(d["name"], d["host"], d.get("port"), d.get("host_port")) for d in s.services]
        return plan_network(net["template"], list(net["hosts"]), services, containers=net.get("containers", True))
    topo = net["topology"]
    machine_of = {n["name"]: n["machine"] for n in topo.get("nodes", [])}
    plan = NetworkPlan(net.get("name", "custom"), topo)
    for name, p in net["placements"].items():
        if p["node"] not in machine_of:
            raise SimulationError(f"placement of {name} references unknown node {p['node']}")
        listen = parse_endpoint(p["listen"])
        plan.placements[name] = Placement(
            p["node"], machine_of[p["node"]], listen, parse_endpoint(p.get("address", p["listen"])), p.get("scope")
        )
    for f in net.get("forwarders", []):
        plan.forwarders.append(ForwarderSpec(f["node"], machine_of[f["node"]], f["listen_port"], parse_endpoint(f["target"])))
    for h in net.get("host_addresses", []):
        plan.host_addresses[(h.get("scope"), h["ip"])] = h["machine"]
    return plan


def _cgroup(placement: Placement, name: str) -> str:
    if placement.node != placement.host:
        return f"/docker/{name}"
    return f"/system.slice/{name}.service"


def _respond(data: bytes) -> bytes:
    return b"re:" + data


def execute(
    s: Scenario,
    *,
    agent: Optional[str] = None,
    agent_hosts: Optional[list[str]] = None,
    window: Optional[tuple[int, int]] = None,
    verify_checksums: bool = True,
    max_events: int = MAX_EVENTS,
) -> RunResult:
    agent = agent or s.agent
    hosts_override = agent_hosts if agent_hosts is not None else s.agent_hosts
    plan = plan_for(s)
    world = build_topology(plan.topology, verify_checksums=verify_checksums)

    book = AddressBook()
    for (scope, ip), machine in sorted(plan.host_addresses.items(), key=lambda kv: (kv[0][0] or "", kv[0][1])):
        book.add_host(ip, machine, scope)

    processes: dict[str, ProcessRef] = {}
    for svc in s.service_names:
        pl = plan.placements[svc]
        proc = spawn_process(world, pl.node, svc, cgroup=_cgroup(pl, svc))
        processes[svc] = proc
        RequestReplyServer(world, proc, pl.listen, _respond)
        book.add_service(pl.listen[0], pl.listen[1], proc, pl.scope)

    forwarders: list[ProcessRef] = []
    for fs in plan.forwarders:
        proc, _ = spawn_forwarder(world, fs.node, fs.listen_port, fs.target)
        forwarders.append(proc)

    collector = Collector(book)
    if hosts_override is None:
        agent_machines = [m for m in sorted(world.machines) if world.machines[m].administered]
    else:
        unknown = [h for h in hosts_override if h not in world.machines]
        if unknown:
            raise SimulationError(f"agent hosts not in topology: {unknown}")
        agent_machines = list(hosts_override)

    agents: list = []
    for m in agent_machines:
        if agent == "ripple":
            agents.append(RippleAgent(world, m, collector, seed=s.seed))
        elif agent == "fivetuple":
            agents.append(FiveTupleObserver(world, m, collector))
        elif agent == "conntrack":
            agents.append(ConntrackObserver(world, m, collector))

    if agent == "ripple":
        by_host = {a.host: a for a in agents}

        def bootstrap() -> None:
            for name in s.bootstrap:
                proc = processes[name]
                a = by_host.get(proc.host)
                if a is None:
                    log.warning("bootstrap service %s runs on %s, which has no agent", name, proc.host)
                    continue
                a.register_target(proc)

        world.at(s.bootstrap_at, ACTION, bootstrap)

    schedules = s.schedules()
    for (caller, callee), sched in schedules.items():
        if not sched.times:
            continue
        sock = connect(world, processes[caller], plan.placements[callee].address)
        for i, t in enumerate(sched.times):
            payload = f"{caller}>{callee}#{i}".encode()
            world.at(t, ACTION, lambda sock=sock, payload=payload: send(sock, payload))

    world.run(max_events=max_events)
    raw = collector.finalize()
    raw.meta = {
        "scenario": s.id,
        "agent": agent,
        "seed": s.seed,
        "network": s.network.get("template", plan.template),
    }
    present = [p for p in forwarders if p.node_id in raw.nodes]
    graph = abstract_forwarders(raw, present) if plan.forwarders else raw
    if window is not None:
        mark_active(raw, window)
        mark_active(graph, window)

    report = score(s, graph, agent, schedules)
    report.unpaired_events = collector.unpaired_events
    return RunResult(s, agent, world, plan, collector, raw, graph, report, processes, forwarders, agents)


def score(s: Scenario, graph: DependencyGraph, agent: str, schedules=None) -> MetricsReport:
    directed = s.scoring == "directed"
    truth = {tuple(e) if directed else frozenset(e) for e in s.ground_truth}
    found = graph.service_edges(directed=directed)
    report = compute_metrics(found, truth)
    report.scenario = s.id
    report.agent = agent
    schedules = schedules if schedules is not None else s.schedules()
    report.undiscoverable_edges = sorted(
        f"{a} -> {b}" for (a, b) in map(tuple, s.ground_truth) if not schedules.get((a, b), None) or not schedules[(a, b)].times
    )
    scored = [e for e in graph.edges.values() if e.forward or not directed]
    if scored:
        report.time_to_completion = max(e.first_seen for e in scored) - s.bootstrap_at
    return report


def run_scenario(s: Scenario, **kwargs) -> tuple[DependencyGraph, MetricsReport]:
    r = execute(s, **kwargs)
    return r.graph, r.report


def measure_time_to_completion(s: Scenario, **kwargs) -> Optional[int]:
    return execute(s, agent="ripple", **kwargs).report.time_to_completion
