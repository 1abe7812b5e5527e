"""Wire a full CP / AP / Service deployment around one simulated ledger."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import blindsig
from .api import ApClient, CpClient, ServiceClient, ap_app, cp_app, service_app
from .blindsig import Rng
from .errors import FareError, LedgerUnavailable
from .fareservice import FareService, FareTable
from .gateway import AuthenticatingParty
from .issuer import CertificationProvider
from .ledger import Ledger
from .transport import Exchange, HttpTransport, LocalTransport, Server, Transport
from .wallet import Wallet

log = logging.getLogger(__name__)

DEFAULT_STATIONS = ("A", "B", "C")


@dataclass
class StackConfig:
    bits: int = 256
    n_aps: int = 1
    stations: Sequence[str] = DEFAULT_STATIONS
    fare: int = 1
    max_fare: int = 1
    fare_table: Optional[FareTable] = None
    http: bool = False
    host: str = "127.0.0.1"
    base_port: Optional[int] = None
    workers: Optional[int] = None
    service_time: float = 0.0
    gateway_timeout: float = 60.0
    client_timeout: float = 60.0
    publication_period: float = 0.0
    sync_period: float = 5.0
    required_units: int = 1
    interval_seconds: float = 60.0
    commit_latency: float = 0.0
    ledger_path: Optional[Path] = None
    background: bool = False
    tick: float = 1.0
    moduli: bool = True


class Stack:
    """Everything but the user. Use as a context manager to stop servers."""

    def __init__(self, config: Optional[StackConfig] = None, rng: Optional[Rng] = None, **overrides):
        cfg = config or StackConfig()
        for k, v in overrides.items():
            if not hasattr(cfg, k):
                raise TypeError(f"unknown stack option {k!r}")
            setattr(cfg, k, v)
        self.config = cfg
        self.rng = rng
        self.ledger = Ledger(commit_latency=cfg.commit_latency, path=cfg.ledger_path)
        self.params = blindsig.generate_group(cfg.bits, rng)
        self.cp = CertificationProvider("cp", self.ledger, params=self.params, rng=rng,
                                        interval_seconds=cfg.interval_seconds)
        table = cfg.fare_table or FareTable.flat(cfg.stations, cfg.fare, cfg.max_fare)
        self.required_units = cfg.required_units
        self.aps: list[AuthenticatingParty] = []
        # The Service's rebate issuer must exist before the APs can trust it.
        self.service = FareService("svc", table, {}, self.ledger, self.params, rng=rng,
                                   interval_seconds=cfg.interval_seconds)
        issuers = {self.cp.cp_id: self.cp, self.service.rebates.cp_id: self.service.rebates}
        for i in range(cfg.n_aps):
            ap = AuthenticatingParty(f"ap{i}", self.ledger, issuers, self.params, rng=rng,
                                     required_units=cfg.required_units,
                                     publication_period=cfg.publication_period, sync_period=cfg.sync_period)
            self.aps.append(ap)
            self.service.trusted_aps[ap.ap_id] = ap.public

        self.apps = {"cp": cp_app(self.cp, cfg.moduli), "svc": service_app(self.service, cfg.moduli)}
        self.apps.update({ap.ap_id: ap_app(ap, cfg.moduli) for ap in self.aps})
        self.servers: dict[str, Server] = {}
        self._transports: dict[str, Transport] = {}
        for offset, (name, app) in enumerate(self.apps.items()):
            if cfg.http:
                port = 0 if cfg.base_port is None else cfg.base_port + offset
                server = Server(app, cfg.host, port, workers=cfg.workers, service_time=cfg.service_time,
                                gateway_timeout=cfg.gateway_timeout)
                self.servers[name] = server
                self._transports[name] = HttpTransport(server.url, timeout=cfg.client_timeout)
            else:
                self._transports[name] = LocalTransport(app)

        self._stop = threading.Event()
        self._ticker: Optional[threading.Thread] = None
        if cfg.background:
            self.start_background()

    # -- endpoints

    def url(self, name: str) -> str:
        return self.servers[name].url if name in self.servers else f"local://{name}"

    def transport(self, name: str, observer: Optional[Callable[[Exchange], None]] = None,
                  deadline: Optional[float] = None) -> Transport:
        base = self._transports[name]
        return base if observer is None and deadline is None else base.view(observer, deadline)

    def cp_client(self, observer=None, deadline=None) -> CpClient:
        return CpClient(self.transport("cp", observer, deadline), self.config.moduli)

    def ap_client(self, index: int = 0, observer=None, deadline=None) -> ApClient:
        ap = self.aps[index]
        return ApClient(self.transport(ap.ap_id, observer, deadline), ap.ap_id, self.config.moduli)

    def service_client(self, observer=None, deadline=None) -> ServiceClient:
        return ServiceClient(self.transport("svc", observer, deadline), self.config.moduli)

    def wallet(self, path: Optional[Path] = None, **kwargs) -> Wallet:
        kwargs.setdefault("rng", self.rng)
        return Wallet(path, **kwargs)

    # -- housekeeping

    def publish_all(self) -> list[tuple[str, int]]:
        """Seal every non-empty open interval of both issuers, current one included."""
        refs = []
        for issuer in (self.cp, self.service.rebates):
            for interval in issuer.intervals():
                if issuer.queued(interval):
                    refs.append(issuer.publish_interval_block(interval))
        return refs

    def sync_aps(self) -> None:
        for ap in self.aps:
            ap.sync_spent_cache()

    def _tick(self) -> None:
        since_sync = 0.0
        while not self._stop.wait(self.config.tick):
            since_sync += self.config.tick
            try:
                self.cp.publish_due()
                self.service.rebates.publish_due()
                self.service.expire_journeys()
                if since_sync >= self.config.sync_period:
                    since_sync = 0.0
                    self.sync_aps()
            except LedgerUnavailable:
                log.warning("ledger unavailable, housekeeping deferred")
            except FareError:
                log.exception("housekeeping failed")

    def start_background(self) -> None:
        if self._ticker is None:
            self._ticker = threading.Thread(target=self._tick, name="stack-housekeeping", daemon=True)
            self._ticker.start()

    def close(self) -> None:
        self._stop.set()
        if self._ticker is not None:
            self._ticker.join(timeout=5)
        for t in self._transports.values():
            if isinstance(t, HttpTransport):
                t.close()
        for s in self.servers.values():
            s.close()

    def __enter__(self) -> "Stack":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
