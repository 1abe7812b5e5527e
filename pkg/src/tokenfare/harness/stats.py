"""Per-request records and the latency summary reported for each run."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    TIMEOUT = "timeout"
    SERVER_ERROR = "server-error"
    TRANSPORT_ERROR = "transport-error"


FAILURES = (Outcome.TIMEOUT, Outcome.SERVER_ERROR, Outcome.TRANSPORT_ERROR)


@dataclass
class Record:
    scheduled: float
    latency_ms: float
    outcome: Outcome
    response_bytes: int = 0
    request_bytes: int = 0
    subrequests: list[tuple[str, int, int]] = field(default_factory=list)
    error: str = ""


@dataclass
class Summary:
    total: int
    successes: int
    failures: dict[str, int]
    min: Optional[float] = None
    p25: Optional[float] = None
    p50: Optional[float] = None
    p75: Optional[float] = None
    p95: Optional[float] = None
    p99: Optional[float] = None
    max: Optional[float] = None
    mean: Optional[float] = None
    stddev: Optional[float] = None
    skewness: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    if not sorted_values:
        raise ValueError("no values")
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def summarize(records: Iterable[Record]) -> Summary:
    records = list(records)
    failures = {o.value: 0 for o in FAILURES}
    ok = []
    for r in records:
        if r.outcome is Outcome.SUCCESS:
            ok.append(r.latency_ms)
        else:
            failures[r.outcome.value] += 1
    s = Summary(len(records), len(ok), failures)
    if not ok:
        return s
    ok.sort()
    n = len(ok)
    mean = math.fsum(ok) / n
    # A constant sample has sigma exactly 0; rounding in the mean must not say otherwise.
    sigma = 0.0 if ok[0] == ok[-1] else math.sqrt(math.fsum((x - mean) ** 2 for x in ok) / n)
    p50 = nearest_rank(ok, 50)
    s.min, s.max, s.mean, s.stddev = ok[0], ok[-1], mean, sigma
    s.p25, s.p50, s.p75 = nearest_rank(ok, 25), p50, nearest_rank(ok, 75)
    s.p95, s.p99 = nearest_rank(ok, 95), nearest_rank(ok, 99)
    s.skewness = 0.0 if sigma == 0 else 3 * (mean - p50) / sigma
    return s
