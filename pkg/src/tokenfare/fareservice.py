"""The fare gate: nonces, admission on AP(y), exit settlement and rebates.

The Service never sees a credential. It links a journey's entry and exit
only through the digest of AP(y) that the user presents, and pays rebates as
unit-value credentials from its own issuer.
"""

from __future__ import annotations

import csv
import enum
import logging
import secrets
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from . import blindsig
from .blindsig import BlindSignature, GroupParams, Proof, PublicKey, Rng
from .errors import Denied, DoubleSpend, ParameterError
from .issuer import CertificationProvider, IssuanceSession
from .ledger import Ledger
from .tokens import session_tag

log = logging.getLogger(__name__)

NONCE_BYTES = 32


class Direction(str, enum.Enum):
    ENTRY = "ENTRY"
    EXIT = "EXIT"


class JourneyState(str, enum.Enum):
    OPEN = "OPEN"
    CLOSING = "CLOSING"
    CLOSED = "CLOSED"


@dataclass(frozen=True)
class FareNonce:
    nonce: bytes
    station_id: str
    direction: Direction
    issued_at: float


@dataclass
class JourneySession:
    entry_tag: bytes
    entry_station: str
    entry_time: float
    state: JourneyState = JourneyState.OPEN
    exit_station: Optional[str] = None
    exit_nonce: Optional[bytes] = None
    rebate_session: Optional[str] = None
    rebate_amount: int = 0


class FareTable:
    def __init__(self, fares: Mapping[tuple[str, str], int], max_fare: int):
        self.fares = dict(fares)
        self.max_fare = max_fare
        self.validate()

    @property
    def stations(self) -> list[str]:
        return sorted({s for pair in self.fares for s in pair})

    def validate(self) -> None:
        if self.max_fare < 0:
            raise ParameterError("max_fare must be non-negative")
        for pair, fare in self.fares.items():
            if not 0 <= fare <= self.max_fare:
                raise ParameterError(f"fare {pair} = {fare} outside [0, {self.max_fare}]")
        stations = self.stations
        missing = [(a, b) for a in stations for b in stations if (a, b) not in self.fares]
        if missing:
            raise ParameterError(f"fare table is not total, missing {missing[:3]}")

    def fare(self, entry: str, exit: str) -> int:
        try:
            return self.fares[(entry, exit)]
        except KeyError:
            raise ParameterError(f"unknown station pair {entry!r} -> {exit!r}") from None

    def rebate(self, entry: str, exit: str) -> int:
        return self.max_fare - self.fare(entry, exit)

    @classmethod
    def flat(cls, stations: Sequence[str], fare: int, max_fare: Optional[int] = None) -> "FareTable":
        return cls({(a, b): fare for a in stations for b in stations},
                   fare if max_fare is None else max_fare)

    @classmethod
    def load_csv(cls, path, max_fare: int) -> "FareTable":
        fares = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["entry", "exit", "fare"]:
                raise ParameterError(f"{path}: header must be entry,exit,fare")
            for lineno, row in enumerate(reader, 2):
                try:
                    fares[(row["entry"], row["exit"])] = int(row["fare"])
                except (TypeError, ValueError):
                    raise ParameterError(f"{path}:{lineno}: bad fare row {row}") from None
        return cls(fares, max_fare)


class FareService:
    def __init__(self, service_id: str, fare_table: FareTable, trusted_aps: Mapping[str, PublicKey],
                 ledger: Ledger, params: GroupParams, rng: Optional[Rng] = None,
                 clock: Callable[[], float] = time.time, journey_timeout: float = 4 * 3600.0,
                 interval_seconds: float = 60.0):
        self.service_id = service_id
        self.fare_table = fare_table
        self.trusted_aps = dict(trusted_aps)
        self.clock = clock
        self.journey_timeout = journey_timeout
        self.rebates = CertificationProvider(f"rebate:{service_id}", ledger, params=params, rng=rng,
                                             interval_seconds=interval_seconds, clock=clock)
        self._pending: dict[bytes, FareNonce] = {}
        self._exit_binding: dict[bytes, bytes] = {}
        self._sessions: dict[bytes, JourneySession] = {}
        self._lock = threading.RLock()

    def issue_nonce(self, direction: Direction, station_id: str) -> FareNonce:
        direction = Direction(direction)
        if station_id not in self.fare_table.stations:
            raise ParameterError(f"unknown station {station_id!r}")
        nonce = FareNonce(secrets.token_bytes(NONCE_BYTES), station_id, direction, self.clock())
        with self._lock:
            self._pending[nonce.nonce] = nonce
        return nonce

    def is_pending(self, nonce: bytes) -> bool:
        return nonce in self._pending

    def _check_ap(self, ap_id: str, message: bytes, signature: BlindSignature) -> None:
        pub = self.trusted_aps.get(ap_id)
        if pub is None or not blindsig.verify(pub, message, signature):
            raise Denied("AP signature not valid under a trusted key")

    def admit_entry(self, ap_id: str, signature: BlindSignature, nonce: bytes) -> JourneySession:
        with self._lock:
            y = self._pending.get(nonce)
            if y is None or y.direction is not Direction.ENTRY:
                raise Denied("unknown or used entry nonce")
            del self._pending[nonce]
        self._check_ap(ap_id, nonce, signature)
        tag = session_tag(signature)
        with self._lock:
            if tag in self._sessions:
                raise Denied("journey already open for this AP signature")
            session = JourneySession(tag, y.station_id, self.clock())
            self._sessions[tag] = session
        return session

    def finish(self, signature: BlindSignature, station_id: str) -> tuple[FareNonce, Optional[IssuanceSession], int]:
        """Move an open journey to CLOSING; returns exit nonce z and rebate challenges."""
        tag = session_tag(signature)
        with self._lock:
            session = self._sessions.get(tag)
            if session is None:
                raise Denied("no journey for this AP signature")
            if session.state is not JourneyState.OPEN:
                raise DoubleSpend("journey already exited")
            amount = self.fare_table.rebate(session.entry_station, station_id)
            z = self.issue_nonce(Direction.EXIT, station_id)
            rebate = self.rebates.begin_issuance("rebate", amount) if amount > 0 else None
            session.state = JourneyState.CLOSING
            session.exit_station = station_id
            session.exit_nonce = z.nonce
            session.rebate_session = rebate.session_id if rebate else None
            session.rebate_amount = amount
            self._exit_binding[z.nonce] = tag
        return z, rebate, amount

    def settle_exit(self, ap_id: str, signature: BlindSignature, nonce: bytes, es: Sequence[int]) -> list[Proof]:
        with self._lock:
            z = self._pending.get(nonce)
            tag = self._exit_binding.get(nonce)
            if z is None or z.direction is not Direction.EXIT or tag is None:
                raise Denied("exit nonce not bound to a closing journey")
            session = self._sessions[tag]
            if session.state is not JourneyState.CLOSING:
                raise Denied("journey is not closing")
            if len(es) != session.rebate_amount:
                raise ParameterError(f"expected {session.rebate_amount} rebate requests, got {len(es)}")
            del self._pending[nonce]
            del self._exit_binding[nonce]
        self._check_ap(ap_id, nonce, signature)
        if session.rebate_session is None:
            proofs = []
        else:
            proofs = self.rebates.complete_issuance(session.rebate_session, list(es))
        with self._lock:
            session.state = JourneyState.CLOSED
        return proofs

    def expire_journeys(self) -> int:
        """Close journeys left open past the timeout; their escrow is forfeit."""
        cutoff = self.clock() - self.journey_timeout
        n = 0
        with self._lock:
            for session in self._sessions.values():
                if session.state is not JourneyState.CLOSED and session.entry_time < cutoff:
                    session.state = JourneyState.CLOSED
                    n += 1
        return n

    def journey(self, tag: bytes) -> Optional[JourneySession]:
        return self._sessions.get(tag)

    def persisted_state(self) -> list[dict]:
        with self._lock:
            return [asdict(s) for s in self._sessions.values()]
