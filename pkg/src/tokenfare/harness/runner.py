"""Open-loop load generation.

The issue schedule is drawn from the seed before the run starts, so request
times never depend on how fast earlier requests came back. Latency runs from
the scheduled time, which charges queueing delay in the generator to the
system under test instead of hiding it.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence

from ..errors import ParameterError
from ..transport import ConnectionFailure, Exchange, RequestTimeout
from .stats import FAILURES, Outcome, Record, Summary, summarize

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 60.0
UNIFORM = "uniform"
POISSON = "poisson"


class Scenario(Protocol):
    name: str

    def prepare(self, count: int, rng: random.Random) -> Sequence[Any]:
        """Provision per-iteration inputs before the timed window."""

    def execute(self, item: Any, observer: Callable[[Exchange], None], deadline: float) -> None:
        """Run one iteration; raise on failure."""


def schedule(rate: float, duration: int, seed: int, arrivals: str = UNIFORM) -> list[float]:
    """Issue offsets in seconds from the start of the run."""
    if rate <= 0:
        raise ParameterError("rate must be positive")
    if duration < 1:
        raise ParameterError("duration must be >= 1 s")
    rng = random.Random(seed)
    if arrivals == UNIFORM:
        if rate != int(rate):
            raise ParameterError("uniform arrivals need an integer rate")
        times = [sec + rng.random() for sec in range(duration) for _ in range(int(rate))]
        return sorted(times)
    if arrivals == POISSON:
        times, t = [], rng.expovariate(rate)
        while t < duration:
            times.append(t)
            t += rng.expovariate(rate)
        return times
    raise ParameterError(f"unknown arrival process {arrivals!r}")


@dataclass
class ScenarioReport:
    scenario: str
    rate: float
    duration: int
    seed: int
    records: list[Record]
    summary: Summary
    throughput: float
    wall_time: float
    meta: dict = field(default_factory=dict)

    @property
    def failure_pct(self) -> dict[str, float]:
        n = self.summary.total or 1
        return {k: 100.0 * v / n for k, v in self.summary.failures.items()}

    def to_dict(self, with_records: bool = False) -> dict:
        out = {
            "scenario": self.scenario, "rate": self.rate, "duration": self.duration, "seed": self.seed,
            "summary": self.summary.to_dict(), "throughput": self.throughput,
            "failure_pct": self.failure_pct, "wall_time": self.wall_time, "meta": self.meta,
        }
        if with_records:
            out["records"] = [
                {"scheduled": r.scheduled, "latency_ms": r.latency_ms, "outcome": r.outcome.value,
                 "response_bytes": r.response_bytes, "request_bytes": r.request_bytes, "error": r.error}
                for r in self.records
            ]
        return out

    def write_json(self, path, with_records: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(with_records), indent=2) + "\n")


def classify(exc: BaseException) -> Outcome:
    if isinstance(exc, RequestTimeout):
        return Outcome.TIMEOUT
    if isinstance(exc, ConnectionFailure):
        return Outcome.TRANSPORT_ERROR
    # Error statuses, protocol refusals and bad payloads all count against the server.
    return Outcome.SERVER_ERROR


def run_scenario(scenario: Scenario, rate: float, duration: int, seed: int = 0,
                 timeout: float = DEFAULT_TIMEOUT, arrivals: str = UNIFORM,
                 lead: float = 0.05) -> ScenarioReport:
    if rate < 1:
        raise ParameterError("rate must be >= 1 req/s")
    offsets = schedule(rate, duration, seed, arrivals)
    items = scenario.prepare(len(offsets), random.Random(seed ^ 0x5EED))
    records: list[Optional[Record]] = [None] * len(offsets)
    completions = [0.0] * len(offsets)

    def iteration(i: int, scheduled: float) -> None:
        subs: list[tuple[str, int, int]] = []

        def observe(x: Exchange) -> None:
            subs.append((x.name, x.response_bytes, x.request_bytes))

        deadline = scheduled + timeout
        outcome, error = Outcome.SUCCESS, ""
        try:
            scenario.execute(items[i], observe, deadline)
        except Exception as exc:  # noqa: BLE001 - every failure becomes a record
            outcome, error = classify(exc), f"{type(exc).__name__}: {exc}"
        done = time.monotonic()
        if outcome is Outcome.SUCCESS and done > deadline:
            outcome, error = Outcome.TIMEOUT, "completed after client timeout"
        completions[i] = done
        records[i] = Record(scheduled - start, (done - scheduled) * 1000.0, outcome,
                            sum(s[1] for s in subs), sum(s[2] for s in subs), subs, error)

    threads = []
    start = time.monotonic() + lead
    for i, off in enumerate(offsets):
        at = start + off
        delay = at - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        th = threading.Thread(target=iteration, args=(i, at), name=f"{scenario.name}-{i}", daemon=True)
        th.start()
        threads.append(th)
    for th in threads:
        th.join()
    end = max(completions, default=start)
    final = [r for r in records if r is not None]
    summary = summarize(final)
    elapsed = max(float(duration), end - start)
    return ScenarioReport(scenario.name, rate, duration, seed, final, summary,
                          summary.successes / elapsed, end - start)


@dataclass
class SweepPoint:
    rate: float
    throughput: float
    failure_pct: dict[str, float]
    p50: Optional[float]
    p95: Optional[float]


def sweep_rates(scenario_for: Callable[[float], Scenario], rates: Sequence[float], duration: int,
                seed: int = 0, timeout: float = DEFAULT_TIMEOUT, out_dir=None,
                arrivals: str = UNIFORM) -> list[SweepPoint]:
    """One run per offered rate; ``scenario_for(rate)`` builds a fresh target."""
    if not rates:
        raise ParameterError("rates list is empty")
    points = []
    for rate in rates:
        report = run_scenario(scenario_for(rate), rate, duration, seed, timeout, arrivals)
        points.append(SweepPoint(rate, report.throughput, report.failure_pct,
                                 report.summary.p50, report.summary.p95))
        log.info("rate %s: throughput %.2f, failures %s", rate, report.throughput, report.failure_pct)
    if out_dir is not None:
        write_sweep(points, Path(out_dir))
    return points


def write_sweep(points: Sequence[SweepPoint], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "throughput.dat", "w") as fh:
        fh.write("# offered_rate successful_throughput\n")
        for p in points:
            fh.write(f"{p.rate:g} {p.throughput:.6f}\n")
    with open(out_dir / "failures.dat", "w") as fh:
        fh.write("# offered_rate " + " ".join(o.value for o in FAILURES) + "\n")
        for p in points:
            fh.write(f"{p.rate:g} " + " ".join(f"{p.failure_pct[o.value]:.4f}" for o in FAILURES) + "\n")
    with open(out_dir / "latency.dat", "w") as fh:
        fh.write("# offered_rate p50_ms p95_ms\n")
        for p in points:
            fh.write(f"{p.rate:g} {_num(p.p50)} {_num(p.p95)}\n")


def _num(v: Optional[float]) -> str:
    return "nan" if v is None else f"{v:.3f}"
