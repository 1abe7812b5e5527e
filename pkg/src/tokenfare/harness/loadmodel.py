"""Benchmark load levels from per-station 15-minute arrival counts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from ..errors import ParameterError

INTERVAL_SECONDS = 15 * 60
HEADER = ["station_id", "interval_start", "arrivals"]


@dataclass(frozen=True)
class LoadModel:
    rows: tuple[tuple[str, str, int], ...]

    @property
    def station_peaks(self) -> dict[str, int]:
        peaks: dict[str, int] = {}
        for station, _, arrivals in self.rows:
            peaks[station] = max(peaks.get(station, 0), arrivals)
        return peaks

    @property
    def load_avg(self) -> int:
        """Mean over stations of each station's busiest interval, per second, rounded up."""
        peaks = self.station_peaks
        return math.ceil(sum(peaks.values()) / (len(peaks) * INTERVAL_SECONDS))

    @property
    def load_max(self) -> int:
        return math.ceil(max(self.station_peaks.values()) / INTERVAL_SECONDS)


def load_rods(path: Union[str, Path]) -> LoadModel:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise ParameterError(f"{path}:1: header must be {','.join(HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParameterError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            station, start, raw = (c.strip() for c in row)
            if not station:
                raise ParameterError(f"{path}:{lineno}: empty station_id")
            try:
                arrivals = int(raw)
            except ValueError:
                raise ParameterError(f"{path}:{lineno}: arrivals {raw!r} is not an integer") from None
            if arrivals < 0:
                raise ParameterError(f"{path}:{lineno}: negative arrivals")
            rows.append((station, start, arrivals))
    if not rows:
        raise ParameterError(f"{path}: no data rows")
    return LoadModel(tuple(rows))
