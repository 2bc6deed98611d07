from .benchmarks import BENCHMARKS, generate_benchmark
from .metrics import MetricsReport, compute_metrics
from .runner import RunResult, execute, measure_time_to_completion, run_scenario
from .scenario import Scenario, ScenarioError, benchmark_scenario, load_scenario, scenario_from_dict

__all__ = [
    "BENCHMARKS",
    "MetricsReport",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "benchmark_scenario",
    "compute_metrics",
    "execute",
    "generate_benchmark",
    "load_scenario",
    "measure_time_to_completion",
    "run_scenario",
    "scenario_from_dict",
]
