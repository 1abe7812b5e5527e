"""The six benchmark request types, and stub targets for testing the harness itself."""

from __future__ import annotations

import random
import threading
import time
from typing import Any, Callable, Optional, Sequence

from .. import blindsig
from ..deploy import Stack
from ..errors import Discrepancy, ParameterError
from ..fareservice import Direction
from ..transport import Exchange, RequestTimeout
from ..wallet import Token

Observer = Callable[[Exchange], None]

ISSUE_BATCH = 50


class StubTarget:
    """In-process stand-in with a fixed latency, a capacity limit, or a black hole."""

    def __init__(self, latency: float = 0.010, capacity: Optional[float] = None,
                 always_timeout: bool = False, body_bytes: int = 100, name: str = "stub"):
        self.name = name
        self.latency = latency
        self.capacity = capacity
        self.always_timeout = always_timeout
        self.body_bytes = body_bytes
        self._worker = threading.Lock()

    def prepare(self, count: int, rng: random.Random) -> Sequence[Any]:
        return range(count)

    def execute(self, item: Any, observer: Observer, deadline: float) -> None:
        started = time.monotonic()
        if self.always_timeout:
            time.sleep(max(0.0, deadline - started))
            raise RequestTimeout("stub never answers")
        if self.capacity is None:
            time.sleep(self.latency)
        else:
            # One worker serving 1/capacity seconds per request. Work that could not
            # finish before the client gives up is never started, so capacity is not
            # spent on answers nobody reads.
            service = 1.0 / self.capacity
            if not self._worker.acquire(timeout=max(0.0, deadline - service - time.monotonic())):
                raise RequestTimeout("queued past the client timeout")
            try:
                time.sleep(service)
            finally:
                self._worker.release()
        observer(Exchange("stub", "GET", "/stub", 200, 0, self.body_bytes, b"", time.monotonic() - started))


class _StackScenario:
    name = ""

    def __init__(self, stack: Stack, ap_index: int = 0):
        self.stack = stack
        self.ap_index = ap_index
        self.ap = stack.ap_client(ap_index)
        self.svc = stack.service_client()
        self.cp = stack.cp_client()
        self.wallet = stack.wallet(verify_after_entry=False)
        self.stations = stack.service.fare_table.stations

    def tokens(self, groups: int, per_group: int) -> list[list[Token]]:
        """Acquire ``groups * per_group`` fresh tokens ahead of the timed window."""
        need = groups * per_group
        pool: list[Token] = []
        while len(pool) < need:
            pool.extend(self.wallet.acquire_tokens(self.cp, min(ISSUE_BATCH, need - len(pool))))
        return [pool[i * per_group:(i + 1) * per_group] for i in range(groups)]


class RequestNonce(_StackScenario):
    name = "request-nonce"

    def prepare(self, count, rng):
        return [rng.choice(self.stations) for _ in range(count)]

    def execute(self, station, observer, deadline):
        self.svc.bound(observer, deadline).nonce(Direction.ENTRY.value, station)


class RequestSignature(_StackScenario):
    name = "request-signature"

    def prepare(self, count, rng):
        return range(count)

    def execute(self, item, observer, deadline):
        self.ap.bound(observer, deadline).open_session("entry")


class ProveOwnership(_StackScenario):
    """Ownership proof plus escrow: challenge, then the credential submission."""

    name = "prove-ownership"

    def prepare(self, count, rng):
        self.ap.key()
        groups = self.tokens(count, self.stack.required_units)
        return [(g, rng.randbytes(32)) for g in groups]

    def execute(self, item, observer, deadline):
        tokens, message = item
        self.wallet.ap_entry_signature(self.ap.bound(observer, deadline), tokens, message)


class VerifySignature(_StackScenario):
    """The gate check of a pre-provisioned AP(y)."""

    name = "verify-signature"

    def prepare(self, count, rng):
        self.ap.key()
        ap_key = self.stack.aps[self.ap_index].key
        items = []
        for _ in range(count):
            y = self.svc.nonce(Direction.ENTRY.value, rng.choice(self.stations))
            items.append((y.nonce, blindsig.sign_blind(ap_key, y.nonce)))
        return items

    def execute(self, item, observer, deadline):
        nonce, sig = item
        self.svc.bound(observer, deadline).enter(self.ap.ap_id, nonce, sig, self.ap.key().params)


class VerifyBlock(_StackScenario):
    """Fetch one interval's proof block and check every transcript in it."""

    name = "verify-block"

    def __init__(self, stack: Stack, ap_index: int = 0, block_size: int = 10):
        super().__init__(stack, ap_index)
        if block_size < 1:
            raise ParameterError("block_size must be >= 1")
        self.block_size = block_size

    def prepare(self, count, rng):
        cp = self.stack.cp
        interval = max(cp.intervals() + [cp.current_interval()]) + 1
        cp.ensure_interval(interval)
        got = 0
        while got < self.block_size:
            got += len(self.wallet.acquire_tokens(self.cp, min(ISSUE_BATCH, self.block_size - got), interval))
        cp.publish_interval_block(interval)
        self.cp.public_key(interval)
        return [(cp.cp_id, interval)] * count

    def execute(self, item, observer, deadline):
        issuer, interval = item
        block = self.ap.bound(observer, deadline).block(issuer, interval)
        pub = self.cp.public_key(interval)
        if block.cp_key_fingerprint != pub.fingerprint():
            raise Discrepancy("block sealed under an unexpected key")
        for rec in block.proofs:
            if not blindsig.verify_transcript(pub, rec.transcript):
                raise Discrepancy("block entry does not verify")


class AccessService(_StackScenario):
    """Full gate entry: nonce, AP challenge, ownership and escrow, unblind, present AP(y)."""

    name = "access-service"

    def prepare(self, count, rng):
        self.ap.key()
        groups = self.tokens(count, self.stack.required_units)
        return [(g, rng.choice(self.stations)) for g in groups]

    def execute(self, item, observer, deadline):
        tokens, station = item
        self.wallet.enter(self.svc.bound(observer, deadline), self.ap.bound(observer, deadline), tokens, station)


SCENARIOS = {cls.name: cls for cls in
             (RequestNonce, ProveOwnership, RequestSignature, VerifySignature, VerifyBlock, AccessService)}


def build_scenario(name: str, stack: Stack, **kwargs) -> _StackScenario:
    try:
        cls = SCENARIOS[name]
    except KeyError:
        raise ParameterError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None
    return cls(stack, **kwargs)
