"""Pass/fail checks over benchmark results, used by ``--assert`` and the acceptance tests."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence, Union

from ..errors import ParameterError
from .loadmodel import LoadModel
from .runner import ScenarioReport, SweepPoint

Check = tuple[str, bool, str]

BUILTIN = {
    "average-load": {"p50_max_ms": 500.0},
    "blindsign": {"mean_ms_max": {"256": 13.1}, "monotone": True},
    "saturation": {"saturation": True},
    "network-load": {"load_avg": 1, "load_max": 10},
}


def load_profile(name: Union[str, Path]) -> dict:
    if str(name) in BUILTIN:
        return BUILTIN[str(name)]
    path = Path(name)
    if not path.exists():
        raise ParameterError(f"no builtin profile or file named {name!r}; builtins: {', '.join(BUILTIN)}")
    return json.loads(path.read_text())


def check_report(report: ScenarioReport, profile: dict) -> list[Check]:
    s = report.summary
    out = []
    if "p50_max_ms" in profile:
        ok = s.p50 is not None and s.p50 < profile["p50_max_ms"]
        out.append(("p50", ok, f"p50={s.p50} ms, bar < {profile['p50_max_ms']} ms"))
    if "failure_pct_max" in profile:
        pct = sum(report.failure_pct.values())
        out.append(("failures", pct <= profile["failure_pct_max"], f"{pct:.2f}% failed"))
    if "throughput_min" in profile:
        out.append(("throughput", report.throughput >= profile["throughput_min"], f"{report.throughput:.3f} req/s"))
    return out


def check_blindsign(means: Sequence[tuple[int, float]], profile: dict) -> list[Check]:
    out = []
    by_bits = dict(means)
    for bits, bar in profile.get("mean_ms_max", {}).items():
        got = by_bits.get(int(bits))
        out.append((f"mean@{bits}", got is not None and got < bar, f"{got} ms, bar < {bar} ms"))
    if profile.get("monotone"):
        ordered = [m for _, m in sorted(means)]
        ok = all(a < b for a, b in zip(ordered, ordered[1:]))
        out.append(("monotone", ok, " < ".join(f"{m:.3f}" for m in ordered)))
    return out


def check_loadmodel(model: LoadModel, profile: dict) -> list[Check]:
    out = []
    for key in ("load_avg", "load_max"):
        if key in profile:
            got = getattr(model, key)
            out.append((key, got == profile[key], f"{got} (expected {profile[key]})"))
    return out


def saturation_shape(points: Sequence[SweepPoint], track: float = 0.9) -> list[Check]:
    """Throughput follows the offered rate up to a knee, then flattens while latency and timeouts grow."""
    pts = sorted(points, key=lambda p: p.rate)
    if len(pts) < 3:
        return [("points", False, "need at least three rates")]
    knee = next((i for i, p in enumerate(pts) if p.throughput < track * p.rate), None)
    if knee is None:
        return [("knee", False, "throughput tracked the offered rate everywhere; no saturation")]
    before, after = pts[:knee], pts[knee:]
    checks = [("knee", knee >= 1, f"first rate below {track:.0%} of offered: {pts[knee].rate:g} req/s")]
    checks.append(("tracks-diagonal", all(p.throughput >= track * p.rate for p in before),
                   ", ".join(f"{p.rate:g}->{p.throughput:.2f}" for p in before)))
    peak = max(p.throughput for p in pts)
    top = pts[-1]
    checks.append(("plateau", top.throughput < track * top.rate and top.throughput <= 1.25 * after[0].throughput,
                   f"peak {peak:.2f}, at {top.rate:g} req/s: {top.throughput:.2f}"))
    lo, hi = pts[0], pts[-1]
    lat_ok = lo.p50 is not None and (hi.p50 is None or hi.p50 > lo.p50)
    checks.append(("latency-grows", lat_ok, f"p50 {lo.p50} -> {hi.p50} ms"))
    checks.append(("timeouts-grow", hi.failure_pct["timeout"] > lo.failure_pct["timeout"],
                   f"timeout% {lo.failure_pct['timeout']:.1f} -> {hi.failure_pct['timeout']:.1f}"))
    return checks


def check_sweep(points: Sequence[SweepPoint], profile: dict) -> list[Check]:
    return saturation_shape(points) if profile.get("saturation") else []
