"""Scenario laboratory: stub controller, traffic generators, experiments."""

from .modbus import StubController, build_request, BENCH_FUNCTIONS
from .scenarios import ScenarioSpec, gen_traffic, SCENARIO_KINDS
from .dataset import make_dataset, save_trace, load_trace, LabeledDataset
from .bench import bench_latency, BenchReport
from .flood import flood_experiment, FloodReport

__all__ = [
    "StubController", "build_request", "BENCH_FUNCTIONS",
    "ScenarioSpec", "gen_traffic", "SCENARIO_KINDS",
    "make_dataset", "save_trace", "load_trace", "LabeledDataset",
    "bench_latency", "BenchReport",
    "flood_experiment", "FloodReport",
]
