"""Command-line entry points: ``wallet``, ``bench`` and ``tokenfare serve``."""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import click

from .api import ApClient, CpClient, ServiceClient
from .deploy import Stack, StackConfig
from .errors import FareError
from .fareservice import FareTable
from .harness import bench_blindsign, build_scenario, load_rods, run_scenario, size_report, sweep_rates
from .harness.profiles import check_blindsign, check_loadmodel, check_report, check_sweep, load_profile
from .transport import HttpTransport, TransportFailure
from .wallet import JourneyTicket, Token, Wallet

DEFAULT_CONFIG = Path(os.environ.get("TOKENFARE_WALLET_CONFIG", "~/.config/tokenfare/wallet.json")).expanduser()


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(1)


def _report_checks(checks) -> None:
    failed = False
    for name, ok, detail in checks:
        click.echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed |= not ok
    if failed:
        sys.exit(2)


# -- wallet -----------------------------------------------------------------


class WalletContext:
    def __init__(self, config_path: Path):
        self.config_path = config_path
        self.config = json.loads(config_path.read_text()) if config_path.exists() else {}
        path = Path(self.config.get("wallet", config_path.with_name("wallet.jsonl"))).expanduser()
        path.parent.mkdir(parents=True, exist_ok=True)
        trusted = self.config.get("trusted_fingerprints")
        self.wallet = Wallet(path, verify_after_entry=self.config.get("verify_after_entry", True),
                             trusted_fingerprints=set(trusted) if trusted else None,
                             user_ref=self.config.get("user_ref", "user"))

    def url(self, given: Optional[str], key: str) -> str:
        url = given or self.config.get(key)
        if not url:
            _fail(f"no {key} URL given and none in {self.config_path}")
        return url

    def token(self, prefix: str) -> Token:
        hits = [t for tid, t in self.wallet.tokens.items() if tid.startswith(prefix)]
        if len(hits) != 1:
            _fail(f"token id {prefix!r} matches {len(hits)} tokens")
        return hits[0]

    def ticket(self, prefix: str) -> JourneyTicket:
        hits = [t for tid, t in self.wallet.tickets.items() if tid.startswith(prefix)]
        if len(hits) != 1:
            _fail(f"ticket id {prefix!r} matches {len(hits)} tickets")
        return hits[0]


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (FareError, TransportFailure) as exc:
            _fail(f"{type(exc).__name__}: {exc}")
    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=DEFAULT_CONFIG, show_default=True,
              help="JSON file with endpoint URLs, wallet path and trusted key fingerprints.")
@click.pass_context
def wallet(ctx, config_path: Path):
    """Hold fare tokens and travel with them."""
    ctx.obj = WalletContext(config_path)


@wallet.command()
@click.option("--cp", "cp_url", help="Certification provider URL.")
@click.option("--count", type=int, required=True)
@click.option("--interval", type=int, default=None)
@click.pass_obj
@_guard
def acquire(obj: WalletContext, cp_url, count, interval):
    """Buy COUNT unit tokens."""
    tokens = obj.wallet.acquire_tokens(CpClient(HttpTransport(obj.url(cp_url, "cp"))), count, interval)
    for t in tokens:
        click.echo(f"{t.token_id[:16]} {t.issuer}/{t.interval} {t.state.value}")


@wallet.command()
@click.option("--token", "token_id", required=True)
@click.option("--ap", "ap_url")
@click.pass_obj
@_guard
def verify(obj: WalletContext, token_id, ap_url):
    """Audit the proof block a token was issued in."""
    token = obj.token(token_id)
    m = obj.wallet.verify_anonymity_set(token, ApClient(HttpTransport(obj.url(ap_url, "ap"))))
    click.echo(f"{token.token_id[:16]} anonymity set {m}")


@wallet.command()
@click.option("--service", "service_url")
@click.option("--ap", "ap_url")
@click.option("--tokens", "token_ids", required=True, help="Comma-separated token ids or prefixes.")
@click.option("--station", default=None)
@click.pass_obj
@_guard
def enter(obj: WalletContext, service_url, ap_url, token_ids, station):
    """Pass the entry gate, escrowing the given tokens."""
    tokens = [obj.token(t) for t in token_ids.split(",") if t]
    station = station or obj.config.get("station") or _fail("no --station given")
    ticket = obj.wallet.enter(ServiceClient(HttpTransport(obj.url(service_url, "service"))),
                              ApClient(HttpTransport(obj.url(ap_url, "ap"))), tokens, station)
    click.echo(f"ticket {ticket.ticket_id} at {ticket.entry_station}")


@wallet.command(name="exit")
@click.option("--ticket", "ticket_id", required=True)
@click.option("--station", default=None)
@click.pass_obj
@_guard
def exit_(obj: WalletContext, ticket_id, station):
    """Pass the exit gate for a ticket and collect any rebate."""
    ticket = obj.ticket(ticket_id)
    station = station or obj.config.get("station") or _fail("no --station given")
    rebates = obj.wallet.exit(ServiceClient(HttpTransport(ticket.service_url or obj.url(None, "service"))),
                              ApClient(HttpTransport(ticket.ap_url or obj.url(None, "ap"))), ticket, station)
    click.echo(f"exit settled, {len(rebates)} rebate token(s)")
    for t in rebates:
        click.echo(f"{t.token_id[:16]} {t.issuer}/{t.interval} {t.state.value}")


@wallet.command(name="ls")
@click.pass_obj
def ls(obj: WalletContext):
    """List tokens and open tickets."""
    for t in obj.wallet.tokens.values():
        m = "" if t.anonymity_set is None else f" m={t.anonymity_set}"
        click.echo(f"token  {t.token_id[:16]} {t.issuer}/{t.interval} {t.state.value}{m}")
    for t in obj.wallet.tickets.values():
        if not t.closed:
            click.echo(f"ticket {t.ticket_id} {t.entry_station} {time.ctime(t.entry_time)}")


# -- bench ------------------------------------------------------------------


def _parse_rates(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x]


def _stack_options(fn):
    opts = [
        click.option("--bits", type=int, default=256, show_default=True, help="Group size n."),
        click.option("--local", is_flag=True, help="Dispatch in-process instead of over HTTP."),
        click.option("--workers", type=int, default=None, help="Concurrent handlers per server."),
        click.option("--service-time", type=float, default=0.0, help="Minimum seconds a worker is held."),
        click.option("--gateway-timeout", type=float, default=60.0, show_default=True),
        click.option("--timeout", type=float, default=60.0, show_default=True, help="Client timeout in seconds."),
        click.option("--compact", is_flag=True, help="Send values without their moduli."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _stack(bits, local, workers, service_time, gateway_timeout, timeout, compact) -> Stack:
    return Stack(StackConfig(bits=bits, http=not local, workers=workers, service_time=service_time,
                             gateway_timeout=gateway_timeout, client_timeout=timeout, moduli=not compact))


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def bench(verbose):
    """Load scenarios, rate sweeps and microbenchmarks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@bench.command()
@click.option("--name", required=True)
@click.option("--rate", type=int, required=True)
@click.option("--duration", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--records", is_flag=True, help="Include per-request records in --out.")
@click.option("--assert", "profile", default=None, help="Builtin profile name or JSON file of thresholds.")
@click.option("--arrivals", type=click.Choice(["uniform", "poisson"]), default="uniform", show_default=True)
@_stack_options
@_guard
def scenario(name, rate, duration, seed, out, records, profile, arrivals, bits, local, workers, service_time,
             gateway_timeout, timeout, compact):
    """Run one scenario open-loop at RATE req/s for DURATION s."""
    with _stack(bits, local, workers, service_time, gateway_timeout, timeout, compact) as stack:
        report = run_scenario(build_scenario(name, stack), rate, duration, seed, timeout=timeout,
                              arrivals=arrivals)
    report.meta["sizes"] = size_report(report).to_dict()
    click.echo(json.dumps(report.to_dict(), indent=2))
    if out:
        report.write_json(out, records)
    if profile:
        _report_checks(check_report(report, load_profile(profile)))


@bench.command()
@click.option("--name", required=True)
@click.option("--rates", default="1..10", show_default=True, help="A..B or comma list.")
@click.option("--duration", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out-dir", type=click.Path(path_type=Path), default=Path("sweep"), show_default=True)
@click.option("--assert", "profile", default=None)
@click.option("--arrivals", type=click.Choice(["uniform", "poisson"]), default="uniform", show_default=True)
@_stack_options
@_guard
def sweep(name, rates, duration, seed, out_dir, profile, arrivals, bits, local, workers, service_time,
          gateway_timeout, timeout, compact):
    """Run a scenario at each offered rate; writes throughput/failure/latency .dat files."""
    stacks = []

    def scenario_for(rate):
        stack = _stack(bits, local, workers, service_time, gateway_timeout, timeout, compact)
        stacks.append(stack)
        return build_scenario(name, stack)

    try:
        points = sweep_rates(scenario_for, _parse_rates(rates), duration, seed, timeout, out_dir, arrivals)
    finally:
        for s in stacks:
            s.close()
    for p in points:
        click.echo(f"{p.rate:>4g} req/s  throughput {p.throughput:6.2f}  p50 {p.p50}  failures {p.failure_pct}")
    if profile:
        _report_checks(check_sweep(points, load_profile(profile)))


@bench.command()
@click.option("--sizes", default="128,256,512,1024", show_default=True)
@click.option("--iters", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write a .dat file (bits mean_ms).")
@click.option("--assert", "profile", default=None)
@_guard
def blindsign(sizes, iters, out, profile):
    """Time the in-process blind signature flow per group size."""
    means = bench_blindsign([int(s) for s in sizes.split(",")], iters)
    for bits, ms in means:
        click.echo(f"{bits:>6} bits  {ms:9.3f} ms")
    if out:
        out.write_text("# bits mean_ms\n" + "".join(f"{b} {m:.6f}\n" for b, m in means))
    if profile:
        _report_checks(check_blindsign(means, load_profile(profile)))


@bench.command()
@click.option("--rods", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--assert", "profile", default=None)
def loadmodel(rods, profile):
    """Derive average and peak request rates from station arrival counts."""
    try:
        model = load_rods(rods)
    except FareError as exc:
        _fail(str(exc))
    click.echo(f"load_avg {model.load_avg} req/s\nload_max {model.load_max} req/s")
    if profile:
        _report_checks(check_loadmodel(model, load_profile(profile)))


# -- serve ------------------------------------------------------------------


@click.group()
def main():
    """Fare token deployment tools."""


@main.command()
@click.option("--bits", type=int, default=256, show_default=True)
@click.option("--aps", type=int, default=1, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--base-port", type=int, default=8400, show_default=True)
@click.option("--stations", default="A,B,C", show_default=True)
@click.option("--fare", type=int, default=1, show_default=True)
@click.option("--max-fare", type=int, default=1, show_default=True)
@click.option("--fares", type=click.Path(exists=True, path_type=Path), default=None,
              help="CSV with header entry,exit,fare; overrides --stations/--fare.")
@click.option("--required-units", type=int, default=None, help="Defaults to --max-fare.")
@click.option("--interval", type=float, default=60.0, show_default=True, help="Seconds per CP key interval.")
@click.option("--publication-period", type=float, default=0.0, show_default=True)
@click.option("--ledger", type=click.Path(path_type=Path), default=None, help="JSON-lines ledger file.")
def serve(bits, aps, host, base_port, stations, fare, max_fare, fares, required_units, interval,
          publication_period, ledger):
    """Run CP, APs and Service over HTTP until interrupted."""
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    table = FareTable.load_csv(fares, max_fare) if fares else FareTable.flat(stations.split(","), fare, max_fare)
    cfg = StackConfig(bits=bits, n_aps=aps, fare_table=table, http=True, host=host, base_port=base_port,
                      required_units=required_units or max_fare, interval_seconds=interval,
                      publication_period=publication_period, ledger_path=ledger, background=True)
    with Stack(cfg) as stack:
        click.echo(json.dumps({name: stack.url(name) for name in stack.apps}, indent=2))
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
