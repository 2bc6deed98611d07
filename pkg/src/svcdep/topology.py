"""Topology descriptions and the three built-in network templates.

A topology description is a JSON-compatible dict::

    {
      "machines": [{"name": "h1", "administered": true}],
      "segments": [{"name": "lan", "latency": 1}],
      "nodes": [{
          "name": "h1", "machine": "h1", "forwarding": false,
          "interfaces": [{"name": "eth0", "segment": "lan", "address": "192.168.2.1/24"}],
          "routes": [{"prefix": "0.0.0.0/0", "dev": "eth0", "via": "192.168.2.254"}],
          "nat": {"strip_options": false,
                  "rules": [{"chain": "DNAT", "in_iface": "br0", "in_negate": true,
                             "dst": "192.168.2.1/32", "dst_port": 5000,
                             "to": "172.17.0.2:8080"}]}
      }]
    }

Templates return a ``NetworkPlan``: the description plus where each service
runs, the address it listens on, the address callers dial, and any
port-forwarding processes the runtime would start.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import Optional

from .nat import NatRule
from .netsim import SimWorld, TopologyError

NAT_FREE = "nat-free"
INTERNAL_NAT = "internal-nat"
EXTERNAL_NAT = "external-nat"
TEMPLATES = (NAT_FREE, INTERNAL_NAT, EXTERNAL_NAT)

LAN_PREFIX = "192.168.2.0/24"
BRIDGE_PREFIX = "172.17.0.0/16"
BRIDGE_GATEWAY = "172.17.0.1"
PUBLIC_IPS = ["1.1.1.1", "8.8.8.8", "9.9.9.9", "4.4.4.4"]

SERVICE_PORT_BASE = 8000
CONTAINER_PORT = 8080
HOST_PORT_BASE = 5000


def _public_ip(i: int) -> str:
    return PUBLIC_IPS[i] if i < len(PUBLIC_IPS) else f"203.0.113.{i - len(PUBLIC_IPS) + 1}"


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise TopologyError(f"bad endpoint {text!r}, expected ip:port")
    return host.strip("[]"), int(port)


def build_topology(desc: dict, *, verify_checksums: bool = True) -> SimWorld:
    world = SimWorld(verify_checksums=verify_checksums)
    for m in desc.get("machines", []):
        world.add_machine(m["name"], administered=m.get("administered", True))
    for s in desc.get("segments", []):
        world.add_segment(s["name"], latency=s.get("latency", 1))
    for n in desc.get("nodes", []):
        node = world.add_node(n["name"], n["machine"], forwarding=n.get("forwarding", False))
        for i in n.get("interfaces", []):
            if i["segment"] not in world.segments:
                raise TopologyError(f"{n['name']}:{i['name']} references unknown segment {i['segment']}")
            node.add_interface(i["name"], i["address"], world.segments[i["segment"]])
        for r in n.get("routes", []):
            node.add_route(r["prefix"], r["dev"], r.get("via"))
        nat = n.get("nat")
        if nat is not None:
            table = node.enable_nat(strip_options=nat.get("strip_options", False))
            for r in nat.get("rules", []):
                table.add_rule(rule_from_dict(r))
    return world


def rule_from_dict(r: dict) -> NatRule:
    to = r["to"]
    if ":" in to and to.count(":") == 1:
        ip, port = parse_endpoint(to)
        translate_port: Optional[int] = port
    else:
        ip, translate_port = to, None
    return NatRule(
        chain=r["chain"],
        translate_ip=ipaddress.ip_address(ip),
        translate_port=translate_port,
        in_iface=r.get("in_iface"),
        in_negate=r.get("in_negate", False),
        out_iface=r.get("out_iface"),
        out_negate=r.get("out_negate", False),
        src=r.get("src"),
        dst=r.get("dst"),
        dst_port=r.get("dst_port"),
    )


@dataclass
class Placement:
    node: str
    host: str
    listen: tuple[str, int]
    address: tuple[str, int]
    # Machine on which ``listen`` is meaningful, for bridge-private addresses.
    scope: Optional[str] = None


@dataclass
class ForwarderSpec:
    node: str
    host: str
    listen_port: int
    target: tuple[str, int]


@dataclass
class NetworkPlan:
    template: str
    topology: dict
    placements: dict[str, Placement] = field(default_factory=dict)
    forwarders: list[ForwarderSpec] = field(default_factory=list)
    # (scope machine or None, ip) -> machine owning that address
    host_addresses: dict[tuple[Optional[str], str], str] = field(default_factory=dict)


@dataclass
class ServiceSpec:
    name: str
    host: str
    port: Optional[int] = None
    host_port: Optional[int] = None


def _host_node(name: str, forwarding: bool = False) -> dict:
    return {"name": name, "machine": name, "forwarding": forwarding, "interfaces": [], "routes": []}


def _group_by_host(hosts: list[str], services: list[ServiceSpec]) -> dict[str, list[ServiceSpec]]:
    known = set(hosts)
    grouped: dict[str, list[ServiceSpec]] = {h: [] for h in hosts}
    for s in services:
        if s.host not in known:
            raise TopologyError(f"service {s.name} placed on undeclared host {s.host}")
        grouped[s.host].append(s)
    return grouped


def _add_containers(
    plan: NetworkPlan, desc: dict, host: dict, host_ip: str, services: list[ServiceSpec], dial_ip: str
) -> None:
    """Docker-style bridge networking: one namespace per service behind
    br0, SNAT for traffic leaving the bridge, and a DNAT rule plus a
    docker-proxy process per published port."""
    h = host["name"]
    bridge = f"{h}-br0"
    desc["segments"].append({"name": bridge, "latency": 1})
    host["forwarding"] = True
    host["interfaces"].append({"name": "br0", "segment": bridge, "address": f"{BRIDGE_GATEWAY}/16"})
    rules = [
        {"chain": "SNAT", "src": BRIDGE_PREFIX, "out_iface": "br0", "out_negate": True, "to": host_ip},
    ]
    used_ports: set[int] = set()
    for k, svc in enumerate(services):
        cip = str(ipaddress.ip_address("172.17.0.2") + k)
        cport = svc.port if svc.port is not None else CONTAINER_PORT
        hport = svc.host_port if svc.host_port is not None else HOST_PORT_BASE + k
        if hport in used_ports:
            raise TopologyError(f"host port {hport} published twice on {h}")
        used_ports.add(hport)
        cname = f"{h}/{svc.name}"
        desc["nodes"].append(
            {
                "name": cname,
                "machine": h,
                "interfaces": [{"name": "eth0", "segment": bridge, "address": f"{cip}/16"}],
                "routes": [{"prefix": "0.0.0.0/0", "dev": "eth0", "via": BRIDGE_GATEWAY}],
            }
        )
        rules.append(
            {
                "chain": "DNAT",
                "in_iface": "br0",
                "in_negate": True,
                "dst": f"{host_ip}/32",
                "dst_port": hport,
                "to": f"{cip}:{cport}",
            }
        )
        plan.placements[svc.name] = Placement(cname, h, (cip, cport), (dial_ip, hport), scope=h)
        plan.forwarders.append(ForwarderSpec(h, h, hport, (cip, cport)))
    host["nat"] = {"rules": rules}


def plan_nat_free(hosts: list[str], services: list[ServiceSpec]) -> NetworkPlan:
    desc: dict = {"machines": [], "segments": [{"name": "lan", "latency": 1}], "nodes": []}
    plan = NetworkPlan(NAT_FREE, desc)
    for i, (h, svcs) in enumerate(_group_by_host(hosts, services).items()):
        ip = f"192.168.2.{i + 1}"
        desc["machines"].append({"name": h})
        node = _host_node(h)
        node["interfaces"].append({"name": "eth0", "segment": "lan", "address": f"{ip}/24"})
        desc["nodes"].append(node)
        plan.host_addresses[(None, ip)] = h
        for k, svc in enumerate(svcs):
            port = svc.port if svc.port is not None else SERVICE_PORT_BASE + k
            plan.placements[svc.name] = Placement(h, h, (ip, port), (ip, port))
    return plan


def plan_internal_nat(hosts: list[str], services: list[ServiceSpec]) -> NetworkPlan:
    desc: dict = {"machines": [], "segments": [{"name": "lan", "latency": 1}], "nodes": []}
    plan = NetworkPlan(INTERNAL_NAT, desc)
    for i, (h, svcs) in enumerate(_group_by_host(hosts, services).items()):
        ip = f"192.168.2.{i + 1}"
        desc["machines"].append({"name": h})
        node = _host_node(h)
        node["interfaces"].append({"name": "eth0", "segment": "lan", "address": f"{ip}/24"})
        desc["nodes"].append(node)
        plan.host_addresses[(None, ip)] = h
        _add_containers(plan, desc, node, ip, svcs, ip)
    return plan


def plan_external_nat(
    hosts: list[str], services: list[ServiceSpec], *, containers: bool = True
) -> NetworkPlan:
    """Every host sits alone in a 192.168.2.0/24 LAN behind a provider
    gateway doing 1:1 NAT to a public address. Callers dial public
    addresses, so even co-located calls hairpin through the gateway."""
    desc: dict = {"machines": [], "segments": [{"name": "internet", "latency": 1}], "nodes": []}
    plan = NetworkPlan(EXTERNAL_NAT, desc)
    private_ip = "192.168.2.10"
    gw_ip = "192.168.2.1"
    for i, (h, svcs) in enumerate(_group_by_host(hosts, services).items()):
        public = _public_ip(i)
        lan = f"lan-{h}"
        gw = f"gw-{h}"
        desc["segments"].append({"name": lan, "latency": 1})
        desc["machines"].append({"name": h})
        desc["machines"].append({"name": gw, "administered": False})
        node = _host_node(h)
        node["interfaces"].append({"name": "eth0", "segment": lan, "address": f"{private_ip}/24"})
        node["routes"].append({"prefix": "0.0.0.0/0", "dev": "eth0", "via": gw_ip})
        desc["nodes"].append(node)
        desc["nodes"].append(
            {
                "name": gw,
                "machine": gw,
                "forwarding": True,
                "interfaces": [
                    {"name": "lan", "segment": lan, "address": f"{gw_ip}/24"},
                    {"name": "wan", "segment": "internet", "address": f"{public}/32"},
                ],
                "routes": [{"prefix": "0.0.0.0/0", "dev": "wan"}],
                "nat": {
                    "rules": [
                        {"chain": "DNAT", "in_iface": "wan", "dst": f"{public}/32", "to": private_ip},
                        {"chain": "DNAT", "in_iface": "lan", "dst": f"{public}/32", "to": private_ip},
                        {"chain": "SNAT", "out_iface": "lan", "src": LAN_PREFIX, "to": gw_ip},
                        {"chain": "SNAT", "out_iface": "wan", "src": LAN_PREFIX, "to": public},
                    ]
                },
            }
        )
        plan.host_addresses[(h, private_ip)] = h
        if containers:
            _add_containers(plan, desc, node, private_ip, svcs, public)
        else:
            for k, svc in enumerate(svcs):
                port = svc.port if svc.port is not None else SERVICE_PORT_BASE + k
                plan.placements[svc.name] = Placement(h, h, (private_ip, port), (public, port), scope=h)
    return plan


def plan_network(
    template: str, hosts: list[str], services: list[ServiceSpec], *, containers: bool = True
) -> NetworkPlan:
    if template == NAT_FREE:
        return plan_nat_free(hosts, services)
    if template == INTERNAL_NAT:
        return plan_internal_nat(hosts, services)
    if template == EXTERNAL_NAT:
        return plan_external_nat(hosts, services, containers=containers)
    raise TopologyError(f"unknown network template {template!r}; expected one of {TEMPLATES}")


def fig1() -> NetworkPlan:
    """Two hosts on one LAN talking directly."""
    return plan_nat_free(["A", "B"], [ServiceSpec("svc-a", "A"), ServiceSpec("svc-b", "B", port=80)])


def fig2() -> NetworkPlan:
    """Two docker hosts; B publishes container port 80 as host port 80."""
    return plan_internal_nat(
        ["A", "B"], [ServiceSpec("svc-a", "A", port=80), ServiceSpec("svc-b", "B", port=80, host_port=80)]
    )


def fig3() -> NetworkPlan:
    """Two LANs sharing 192.168.2.0/24 behind gateways 1.1.1.1 and 8.8.8.8."""
    return plan_external_nat(
        ["A", "B"], [ServiceSpec("svc-a", "A"), ServiceSpec("svc-b", "B", port=80)], containers=False
    )
