"""Blind-sign microbenchmark and response-size accounting."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .. import blindsig
from ..errors import ParameterError
from .runner import ScenarioReport
from .stats import Outcome


def bench_blindsign(sizes: Sequence[int], iterations: int, seed: Optional[int] = 0) -> list[tuple[int, float]]:
    """Mean wall time in ms of one in-process sign, unblind and verify, per group size.

    Group and key generation happen outside the timed region.
    """
    if not isinstance(iterations, int) or iterations < 1:
        raise ParameterError("iterations must be >= 1")
    if not sizes:
        raise ParameterError("no group sizes given")
    if any(n < 16 for n in sizes):
        raise ParameterError("group sizes must be >= 16 bits")
    out = []
    for bits in sizes:
        rng = random.Random(None if seed is None else seed * 7919 + bits)
        params = blindsig.generate_group(bits, rng)
        key = blindsig.keygen(params, rng)
        messages = [rng.randbytes(32) for _ in range(iterations)]
        blindsig.sign_blind(key, b"warm-up", rng)
        started = time.perf_counter()
        for m in messages:
            blindsig.sign_blind(key, m, rng)
        out.append((bits, (time.perf_counter() - started) * 1000.0 / iterations))
    return out


@dataclass
class SizeRow:
    name: str
    mean_response_bytes: float
    mean_request_bytes: float
    count: int


@dataclass
class SizeReport:
    rows: list[SizeRow]

    @property
    def total_response_bytes(self) -> float:
        return sum(r.mean_response_bytes for r in self.rows)

    @property
    def total_request_bytes(self) -> float:
        return sum(r.mean_request_bytes for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "rows": [r.__dict__ for r in self.rows],
            "total_response_bytes": self.total_response_bytes,
            "total_request_bytes": self.total_request_bytes,
        }

    def format(self) -> str:
        lines = [f"{'sub-request':<20} {'response kB':>12} {'request kB':>11}"]
        for r in self.rows:
            lines.append(f"{r.name:<20} {r.mean_response_bytes / 1024:>12.3f} {r.mean_request_bytes / 1024:>11.3f}")
        lines.append(f"{'total':<20} {self.total_response_bytes / 1024:>12.3f} {self.total_request_bytes / 1024:>11.3f}")
        return "\n".join(lines)


def size_report(report: ScenarioReport | Iterable) -> SizeReport:
    """Mean bytes per sub-request type over successful iterations.

    The mean is per occurrence, so a type issued twice in one iteration
    counts twice. Response and request directions are kept apart.
    """
    records = report.records if isinstance(report, ScenarioReport) else list(report)
    acc: dict[str, list[int]] = {}
    for rec in records:
        if rec.outcome is not Outcome.SUCCESS:
            continue
        for name, resp, req in rec.subrequests:
            row = acc.setdefault(name, [0, 0, 0])
            row[0] += resp
            row[1] += req
            row[2] += 1
    return SizeReport([SizeRow(name, resp / n, req / n, n) for name, (resp, req, n) in acc.items()])
