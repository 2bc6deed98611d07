"""Scenario files.

Schema ``svcdep.scenario/1`` (JSON)::

    {
      "schema": "svcdep.scenario/1",
      "id": "boutique-internal-nat",
      "benchmark": "boutique",              # informational
      "network": {"template": "internal-nat", "hosts": ["h1", "h2", "h3"]},
      "services": [{"name": "frontend", "host": "h1"},
                   {"name": "cart", "host": "h2", "port": 7070, "host_port": 7070}],
      "ground_truth": [["frontend", "cart"]],
      "workload": {
        "defaults": {"start_min": 20, "start_spread": 50, "period": 50, "count": 24},
        "edges": {"frontend->cart": {"start": 100, "period": 50, "count": 3},
                  "cart->frontend": {"times": [400]}}
      },
      "bootstrap": ["frontend"],
      "bootstrap_at": 0,
      "agent": "ripple",                    # ripple | fivetuple | conntrack | none
      "agent_hosts": null,                  # null = every administered machine
      "seed": 1,
      "scoring": "directed"                 # directed | undirected
    }

``network`` may instead carry an explicit topology::

    {"topology": {...build_topology description...},
     "placements": {"svc": {"node": "n1", "listen": "10.0.0.1:80",
                            "address": "10.0.0.1:80", "scope": null}},
     "forwarders": [{"node": "n1", "listen_port": 5000, "target": "172.17.0.2:8080"}],
     "host_addresses": [{"ip": "10.0.0.1", "machine": "m1", "scope": null}]}

Every ground-truth edge without an explicit schedule gets the default one:
a request every ``period`` ticks, ``count`` times, starting at
``start_min + rng.randrange(start_spread)`` with ``rng`` seeded from the
scenario seed and drawn in ground-truth order.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..topology import TEMPLATES

SCHEMA = "svcdep.scenario/1"
AGENTS = ("ripple", "fivetuple", "conntrack", "none")
DEFAULT_WORKLOAD = {"start_min": 20, "start_spread": 50, "period": 50, "count": 24}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    times: tuple[int, ...]

    @classmethod
    def periodic(cls, start: int, period: int, count: int) -> "Schedule":
        if count < 0 or period <= 0 or start < 0:
            raise ScenarioError(f"bad schedule start={start} period={period} count={count}")
        return cls(tuple(start + i * period for i in range(count)))


@dataclass
class Scenario:
    id: str
    network: dict
    services: list[dict]
    ground_truth: list[tuple[str, str]]
    bootstrap: list[str] = field(default_factory=list)
    workload: dict = field(default_factory=dict)
    agent: str = "ripple"
    agent_hosts: Optional[list[str]] = None
    seed: int = 0
    bootstrap_at: int = 0
    scoring: str = "directed"
    benchmark: Optional[str] = None

    @property
    def service_names(self) -> list[str]:
        return [s["name"] for s in self.services]

    def validate(self) -> None:
        names = self.service_names
        if len(set(names)) != len(names):
            raise ScenarioError(f"{self.id}: duplicate service names")
        known = set(names)
        for a, b in self.ground_truth:
            if a not in known or b not in known:
                raise ScenarioError(f"{self.id}: ground-truth edge {a}->{b} references an undeclared service")
            if a == b:
                raise ScenarioError(f"{self.id}: self edge {a}->{b}")
        for b in self.bootstrap:
            if b not in known:
                raise ScenarioError(f"{self.id}: bootstrap service {b} is not declared")
        if self.agent not in AGENTS:
            raise ScenarioError(f"{self.id}: unknown agent {self.agent!r}; expected one of {AGENTS}")
        if self.scoring not in ("directed", "undirected"):
            raise ScenarioError(f"{self.id}: scoring must be directed or undirected")
        if "template" in self.network:
            if self.network["template"] not in TEMPLATES:
                raise ScenarioError(f"{self.id}: unknown network template {self.network['template']!r}")
            hosts = set(self.network.get("hosts", []))
            for s in self.services:
                if s.get("host") not in hosts:
                    raise ScenarioError(f"{self.id}: service {s['name']} placed on undeclared host {s.get('host')}")
        elif "topology" in self.network:
            placements = self.network.get("placements", {})
            for n in names:
                if n not in placements:
                    raise ScenarioError(f"{self.id}: service {n} has no placement in the explicit topology")
        else:
            raise ScenarioError(f"{self.id}: network needs a template or an explicit topology")
        for key in self.workload.get("edges", {}):
            a, b = parse_edge_key(key)
            if a not in known or b not in known:
                raise ScenarioError(f"{self.id}: workload edge {key} references an undeclared service")
        self.schedules()

    def schedules(self) -> dict[tuple[str, str], Schedule]:
        """Request times per traffic edge, ground-truth order first."""
        defaults = dict(DEFAULT_WORKLOAD)
        defaults.update(self.workload.get("defaults") or {})
        explicit = {parse_edge_key(k): v for k, v in self.workload.get("edges", {}).items()}
        rng = random.Random(self.seed)
        out: dict[tuple[str, str], Schedule] = {}
        for edge in self.ground_truth:
            edge = tuple(edge)
            spread = defaults["start_spread"]
            offset = rng.randrange(spread) if spread > 0 else 0
            if edge in explicit:
                out[edge] = _schedule(explicit[edge], self.id)
            else:
                out[edge] = Schedule.periodic(defaults["start_min"] + offset, defaults["period"], defaults["count"])
        for edge in sorted(explicit):
            if edge not in out:
                out[edge] = _schedule(explicit[edge], self.id)
        return out

    def to_dict(self) -> dict:
        d = {
            "schema": SCHEMA,
            "id": self.id,
            "network": self.network,
            "services": self.services,
            "ground_truth": [list(e) for e in self.ground_truth],
            "bootstrap": self.bootstrap,
            "bootstrap_at": self.bootstrap_at,
            "workload": self.workload,
            "agent": self.agent,
            "agent_hosts": self.agent_hosts,
            "seed": self.seed,
            "scoring": self.scoring,
        }
        if self.benchmark is not None:
            d["benchmark"] = self.benchmark
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _schedule(spec: dict, sid: str) -> Schedule:
    if "times" in spec:
        times = tuple(int(t) for t in spec["times"])
        if any(t < 0 for t in times):
            raise ScenarioError(f"{sid}: negative request time")
        return Schedule(tuple(sorted(times)))
    try:
        return Schedule.periodic(int(spec["start"]), int(spec.get("period", 50)), int(spec["count"]))
    except KeyError as e:
        raise ScenarioError(f"{sid}: workload entry missing {e}") from None


def parse_edge_key(key: str) -> tuple[str, str]:
    a, sep, b = key.partition("->")
    if not sep or not a or not b:
        raise ScenarioError(f"bad workload edge key {key!r}, expected 'caller->callee'")
    return a.strip(), b.strip()


def scenario_from_dict(d: dict) -> Scenario:
    schema = d.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ScenarioError(f"unsupported scenario schema {schema!r}")
    try:
        s = Scenario(
            id=d["id"],
            network=d["network"],
            services=list(d["services"]),
            ground_truth=[(a, b) for a, b in d.get("ground_truth", [])],
            bootstrap=list(d.get("bootstrap", [])),
            workload=d.get("workload") or {},
            agent=d.get("agent", "ripple"),
            agent_hosts=d.get("agent_hosts"),
            seed=int(d.get("seed", 0)),
            bootstrap_at=int(d.get("bootstrap_at", 0)),
            scoring=d.get("scoring", "directed"),
            benchmark=d.get("benchmark"),
        )
    except KeyError as e:
        raise ScenarioError(f"scenario missing required field {e}") from None
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario: {e}") from None
    s.validate()
    return s


def load_scenario(path) -> Scenario:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: invalid JSON: {e}") from None
    return scenario_from_dict(d)


def benchmark_scenario(kind: str, template: str, *, hosts: int = 3, agent: str = "ripple", seed: int = 1) -> Scenario:
    from .benchmarks import generate_benchmark

    frag = generate_benchmark(kind, hosts)
    return scenario_from_dict(
        {
            "schema": SCHEMA,
            "id": f"{kind}-{template}",
            "benchmark": kind,
            "network": {"template": template, "hosts": frag["hosts"]},
            "services": frag["services"],
            "ground_truth": frag["ground_truth"],
            "bootstrap": frag["bootstrap"],
            "agent": agent,
            "seed": seed,
        }
    )
