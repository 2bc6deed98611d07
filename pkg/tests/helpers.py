"""Scenario builders shared by the test modules."""

from svcdep.harness.benchmarks import generate_benchmark
from svcdep.harness.scenario import SCHEMA, scenario_from_dict


def small_scenario(template, edges, *, hosts=2, bootstrap=None, count=3, period=50, agent="ripple", seed=1, sid=None, **extra):
    names = []
    for a, b in edges:
        for n in (a, b):
            if n not in names:
                names.append(n)
    host_list = [f"h{i + 1}" for i in range(hosts)]
    d = {
        "schema": SCHEMA,
        "id": sid or f"small-{template}",
        "network": {"template": template, "hosts": host_list},
        "services": [{"name": n, "host": host_list[i % hosts]} for i, n in enumerate(names)],
        "ground_truth": [list(e) for e in edges],
        "bootstrap": bootstrap if bootstrap is not None else [names[0]],
        "workload": {"defaults": {"count": count, "period": period}},
        "agent": agent,
        "seed": seed,
    }
    d.update(extra)
    return scenario_from_dict(d)


def bench_scenario(kind, template, *, hosts=3, count=24, agent="ripple", seed=1):
    frag = generate_benchmark(kind, hosts)
    return scenario_from_dict(
        {
            "id": f"{kind}-{template}",
            "benchmark": kind,
            "network": {"template": template, "hosts": frag["hosts"]},
            "services": frag["services"],
            "ground_truth": frag["ground_truth"],
            "bootstrap": frag["bootstrap"],
            "workload": {"defaults": {"count": count}},
            "agent": agent,
            "seed": seed,
        }
    )
