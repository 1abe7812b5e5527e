import json
import math
import random

import pytest
from hypothesis import given, strategies as st

from tokenfare.errors import ParameterError
from tokenfare.harness import (
    Outcome, Record, StubTarget, bench_blindsign, load_rods, run_scenario, saturation_shape, schedule,
    size_report, summarize, sweep_rates,
)
from tokenfare.harness.runner import write_sweep
from tokenfare.harness.stats import nearest_rank
from tokenfare.transport import HttpTransport


def rods(tmp_path, rows, header="station_id,interval_start,arrivals"):
    p = tmp_path / "rods.csv"
    p.write_text("\n".join([header] + [",".join(map(str, r)) for r in rows]) + "\n")
    return p


# -- load model

def test_single_station(tmp_path):
    m = load_rods(rods(tmp_path, [("S1", "07:00", 900)]))
    assert (m.load_avg, m.load_max) == (1, 1)


def test_two_stations_by_hand(tmp_path):
    m = load_rods(rods(tmp_path, [("S1", "07:00", 900), ("S1", "07:15", 10),
                                  ("S2", "07:00", 1800), ("S2", "07:15", 5)]))
    assert m.station_peaks == {"S1": 900, "S2": 1800}
    assert (m.load_avg, m.load_max) == (2, 2)


def test_ceiling(tmp_path):
    m = load_rods(rods(tmp_path, [("S1", "t", 901), ("S2", "t", 1)]))
    # (901 + 1) / 1800 -> 1 ; 901 / 900 -> 2
    assert (m.load_avg, m.load_max) == (1, 2)


def test_malformed_rows(tmp_path):
    with pytest.raises(ParameterError, match=":3:"):
        load_rods(rods(tmp_path, [("S1", "t", 1), ("S2", "t", "lots")]))
    with pytest.raises(ParameterError, match=":2:.*negative"):
        load_rods(rods(tmp_path, [("S1", "t", -1)]))
    with pytest.raises(ParameterError, match=":2:"):
        load_rods(rods(tmp_path, [("S1", "t")]))
    with pytest.raises(ParameterError, match=":1:"):
        load_rods(rods(tmp_path, [("S1", "t", 1)], header="a,b,c"))
    with pytest.raises(ParameterError, match="no data"):
        load_rods(rods(tmp_path, []))


@given(st.lists(st.tuples(st.sampled_from("ABCDE"), st.integers(0, 20000)), min_size=1, max_size=30))
def test_load_avg_le_load_max(rows):
    from tokenfare.harness.loadmodel import LoadModel
    m = LoadModel(tuple((s, str(i), a) for i, (s, a) in enumerate(rows)))
    assert m.load_avg <= m.load_max


# -- statistics

def recs(values, outcome=Outcome.SUCCESS):
    return [Record(0.0, float(v), outcome) for v in values]


def test_summary_examples():
    s = summarize(recs([5, 1, 4, 2, 3]))
    assert (s.min, s.p50, s.max) == (1, 3, 5)
    c = summarize(recs([7.3] * 11))
    assert c.stddev == 0 and c.skewness == 0
    assert summarize(recs([1, 2, 3])).skewness == 0


def test_summary_without_successes():
    s = summarize(recs([1, 2], Outcome.TIMEOUT) + recs([3], Outcome.TRANSPORT_ERROR))
    assert s.successes == 0 and s.p50 is None and s.stddev is None
    assert s.failures == {"timeout": 2, "server-error": 0, "transport-error": 1}


def naive(values):
    xs = sorted(values)
    n = len(xs)
    pick = lambda p: xs[max(0, -(-p * n // 100) - 1)]  # integer ceil(p*n/100) - 1
    mean = sum(xs) / n
    sd = (sum((x - mean) ** 2 for x in xs) / n) ** 0.5
    return xs, pick, mean, sd


@given(st.lists(st.floats(0, 1e5, allow_nan=False), min_size=1, max_size=200))
def test_summary_matches_naive(values):
    s = summarize(recs(values))
    xs, pick, mean, sd = naive(values)
    assert (s.min, s.max) == (xs[0], xs[-1])
    for p in (25, 50, 75, 95, 99):
        assert getattr(s, f"p{p}") == pick(p)
    assert s.p25 <= s.p50 <= s.p75 <= s.p95 <= s.p99 <= s.max
    assert math.isclose(s.mean, mean, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(s.stddev, sd, rel_tol=1e-6, abs_tol=1e-6)


def test_nearest_rank_edges():
    assert nearest_rank([4.0], 99) == 4.0
    assert nearest_rank([1, 2, 3, 4], 0) == 1
    with pytest.raises(ValueError):
        nearest_rank([], 50)


# -- runner

def test_schedule_determinism():
    a = schedule(3, 5, seed=11)
    assert a == schedule(3, 5, seed=11) and a != schedule(3, 5, seed=12)
    assert len(a) == 15
    for sec in range(5):
        assert sum(1 for t in a if sec <= t < sec + 1) == 3
    p = schedule(4.5, 10, seed=1, arrivals="poisson")
    assert p == schedule(4.5, 10, seed=1, arrivals="poisson") and all(0 <= t < 10 for t in p)
    with pytest.raises(ParameterError):
        schedule(2.5, 3, seed=0)
    with pytest.raises(ParameterError):
        schedule(1, 0, seed=0)


@pytest.mark.slow
def test_stub_ten_ms():
    report = run_scenario(StubTarget(latency=0.010), rate=1, duration=60, seed=3)
    s = report.summary
    assert s.total == 60 and s.successes == 60
    assert 10 <= s.p50 < 25
    assert report.throughput == pytest.approx(1.0, abs=0.02)


def test_scenario_inputs_are_seeded():
    seen = []

    class Echo(StubTarget):
        def prepare(self, count, rng):
            items = [rng.random() for _ in range(count)]
            seen.append(items)
            return items

    run_scenario(Echo(latency=0), 2, 1, seed=5)
    run_scenario(Echo(latency=0), 2, 1, seed=5)
    assert seen[0] == seen[1]


def test_always_timeout():
    report = run_scenario(StubTarget(always_timeout=True), rate=4, duration=1, timeout=0.2)
    assert report.summary.failures["timeout"] == 4
    assert report.failure_pct["timeout"] == 100.0
    assert report.summary.p50 is None and report.throughput == 0


def test_unreachable_target_records_transport_errors():
    t = HttpTransport("http://127.0.0.1:9", timeout=2)

    class Dead(StubTarget):
        def execute(self, item, observer, deadline):
            t.get("/key")

    report = run_scenario(Dead(), rate=5, duration=1, timeout=2)
    assert report.summary.failures["transport-error"] == 5
    t.close()


def test_server_errors_are_classified():
    class Broken(StubTarget):
        def execute(self, item, observer, deadline):
            if item % 2:
                raise ValueError("bad payload")

    report = run_scenario(Broken(latency=0), rate=4, duration=2)
    assert report.summary.successes == 4 and report.summary.failures["server-error"] == 4


@given(st.lists(st.sampled_from(list(Outcome)), max_size=50))
def test_conservation(outcomes):
    s = summarize([Record(0.0, 1.0, o) for o in outcomes])
    assert s.successes + sum(s.failures.values()) == s.total == len(outcomes)


def test_report_json(tmp_path):
    report = run_scenario(StubTarget(latency=0), 2, 1)
    report.write_json(tmp_path / "r.json", with_records=True)
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["summary"]["total"] == 2 and len(data["records"]) == 2


# -- sweeps

def test_sweep_empty():
    with pytest.raises(ParameterError):
        sweep_rates(lambda r: StubTarget(), [], 1)


def test_all_success_sweep_has_no_failures(tmp_path):
    pts = sweep_rates(lambda r: StubTarget(latency=0.001), [1, 2, 3], 1, out_dir=tmp_path)
    assert all(sum(p.failure_pct.values()) == 0 for p in pts)
    lines = (tmp_path / "throughput.dat").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 4
    assert len((tmp_path / "failures.dat").read_text().splitlines()[1].split()) == 4


@pytest.mark.slow
def test_capacity_stub_plateaus():
    rates = [1, 2, 3, 4, 8, 10]
    pts = sweep_rates(lambda r: StubTarget(capacity=5), rates, duration=4, seed=1, timeout=1.5)
    by = {p.rate: p for p in pts}
    for r in (1, 2, 3):
        assert by[r].throughput >= 0.9 * r
    for r in (8, 10):
        assert 4.5 <= by[r].throughput <= 5.5
    checks = saturation_shape(pts)
    assert all(ok for _, ok, _ in checks), checks


def test_saturation_shape_rejects_linear():
    from tokenfare.harness import SweepPoint
    flat = {"timeout": 0.0, "server-error": 0.0, "transport-error": 0.0}
    pts = [SweepPoint(r, float(r), flat, 10.0, 12.0) for r in range(1, 6)]
    assert not all(ok for _, ok, _ in saturation_shape(pts))


def test_write_sweep_nan(tmp_path):
    from tokenfare.harness import SweepPoint
    write_sweep([SweepPoint(1, 0.0, {"timeout": 100.0, "server-error": 0.0, "transport-error": 0.0},
                            None, None)], tmp_path)
    assert "nan nan" in (tmp_path / "latency.dat").read_text()


# -- bench

def test_blindsign_params():
    for bad in (0, -2):
        with pytest.raises(ParameterError):
            bench_blindsign([64], bad)
    with pytest.raises(ParameterError):
        bench_blindsign([], 1)
    with pytest.raises(ParameterError):
        bench_blindsign([8], 1)
    ((bits, ms),) = bench_blindsign([64], 3)
    assert bits == 64 and ms > 0


def test_size_report_fixed_bodies():
    report = run_scenario(StubTarget(latency=0, body_bytes=100), rate=3, duration=1)
    sizes = size_report(report)
    assert [(r.name, r.mean_response_bytes, r.count) for r in sizes.rows] == [("stub", 100, 3)]
    assert sizes.total_response_bytes == 100
    assert "total" in sizes.format()


def test_size_report_skips_failures():
    ok = Record(0, 1, Outcome.SUCCESS, subrequests=[("a", 10, 1), ("a", 30, 1), ("b", 5, 2)])
    bad = Record(0, 1, Outcome.TIMEOUT, subrequests=[("a", 1000, 1)])
    rows = {r.name: r for r in size_report([ok, bad]).rows}
    assert rows["a"].mean_response_bytes == 20 and rows["b"].mean_request_bytes == 2
