"""Run a directory of scenarios under several agents and tabulate the results."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .metrics import fmt
from .runner import run_scenario
from .scenario import load_scenario

DEFAULT_AGENTS = ("ripple", "fivetuple", "conntrack")


def _run_one(job: tuple[str, str]) -> dict:
    path, agent = job
    s = load_scenario(path)
    _, report = run_scenario(s, agent=agent)
    return report.to_dict()


def run_matrix(suite, agents=DEFAULT_AGENTS, jobs: int = 1) -> list[dict]:
    paths = sorted(str(p) for p in Path(suite).glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no scenario files in {suite}")
    work = [(p, a) for p in paths for a in agents]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    return sorted(results, key=lambda r: (r["agent"], r["scenario"]))


def format_table(results: list[dict]) -> str:
    """Rows per agent, one column group (P / R / F1) per scenario."""
    scenarios = sorted({r["scenario"] for r in results})
    agents = sorted({r["agent"] for r in results}, key=lambda a: (a != "ripple", a))
    cell = {(r["agent"], r["scenario"]): r for r in results}
    width = max([len(s) for s in scenarios] + [16])
    lines = [f"{'scenario':<{width}}  " + "  ".join(f"{a:^16}" for a in agents)]
    lines.append(f"{'':<{width}}  " + "  ".join(f"{'P    R    F1':^16}" for _ in agents))
    for sid in scenarios:
        row = []
        for a in agents:
            r: Optional[dict] = cell.get((a, sid))
            if r is None:
                row.append(f"{'-':^16}")
            else:
                row.append(f"{fmt(r['precision']):>4} {fmt(r['recall']):>4} {fmt(r['f1']):>4}  ")
        lines.append(f"{sid:<{width}}  " + "  ".join(row))
    return "\n".join(lines) + "\n"


def matrix_json(results: list[dict]) -> str:
    return json.dumps({"results": results}, indent=2, sort_keys=True) + "\n"
