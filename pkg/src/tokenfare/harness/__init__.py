"""Open-loop load generator, statistics and benchmarks."""

from .bench import SizeReport, bench_blindsign, size_report
from .loadmodel import LoadModel, load_rods
from .profiles import saturation_shape
from .runner import ScenarioReport, SweepPoint, run_scenario, schedule, sweep_rates
from .scenarios import SCENARIOS, StubTarget, build_scenario
from .stats import Outcome, Record, Summary, summarize

__all__ = [
    "LoadModel", "Outcome", "Record", "SCENARIOS", "ScenarioReport", "SizeReport", "StubTarget",
    "Summary", "SweepPoint", "bench_blindsign", "build_scenario", "load_rods", "run_scenario",
    "saturation_shape", "schedule", "size_report", "summarize", "sweep_rates",
]
