"""Authenticating Party.

Checks credentials and ownership, escrows tokens on entry and finalises them
on exit, blind-signs the Service's nonces, and relays proof blocks. Finalise
records can be buffered for ``publication_period`` seconds before they reach
the ledger; the local spent cache is what stops double exits in that window.
"""

from __future__ import annotations

import hashlib
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

from . import blindsig
from .blindsig import BlindSignature, GroupParams, OwnershipProof, Proof, PublicKey, Rng
from .errors import (
    Denied,
    DoubleSpend,
    LedgerUnavailable,
    NotFound,
    ParameterError,
    ReplayError,
)
from .ledger import EscrowResult, Ledger, ProofBlock, SpendResult, TokenState
from .tokens import UNIT, TokenMessage, token_id

log = logging.getLogger(__name__)

ENTRY = "entry"
EXIT = "exit"


class KeySource(Protocol):
    def public_key(self, interval: int) -> PublicKey: ...


@dataclass(frozen=True)
class Credential:
    signature: BlindSignature
    message: bytes

    @property
    def token_id(self) -> bytes:
        return token_id(self.signature)


@dataclass
class EscrowEntry:
    token_ids: tuple[bytes, ...]
    session_tag: bytes
    created_at: float


@dataclass
class SpentCache:
    states: dict[bytes, TokenState] = field(default_factory=dict)
    last_sync: float = 0.0

    def state(self, tid: bytes) -> TokenState:
        return self.states.get(tid, TokenState.FRESH)

    def __contains__(self, tid: bytes) -> bool:
        return tid in self.states

    def update(self, tid: bytes, state: TokenState) -> bool:
        old = self.states.get(tid, TokenState.FRESH)
        if state is TokenState.SPENT or (state is TokenState.ESCROWED and old is TokenState.FRESH):
            if old is not state:
                self.states[tid] = state
                return True
        return False


@dataclass
class ApSession:
    session_id: str
    purpose: str
    signer: blindsig.SignerSession = field(repr=False)
    owner_challenge: bytes
    expires_at: float


class AuthenticatingParty:
    def __init__(self, ap_id: str, ledger: Ledger, issuers: Mapping[str, KeySource],
                 params: GroupParams, rng: Optional[Rng] = None,
                 clock: Callable[[], float] = time.time, required_units: int = 1,
                 publication_period: float = 0.0, challenge_ttl: float = 30.0,
                 sync_period: float = 5.0):
        self.ap_id = ap_id
        self.ledger = ledger
        self.issuers = dict(issuers)
        self.rng = rng
        self.clock = clock
        self.key = blindsig.keygen(params, rng)
        self.required_units = required_units
        self.publication_period = publication_period
        self.challenge_ttl = challenge_ttl
        self.sync_period = sync_period
        self.cache = SpentCache()
        self.escrows: dict[bytes, EscrowEntry] = {}
        self.detected_double_spends: list[bytes] = []
        self._pending: list[bytes] = []
        self._sessions: dict[str, ApSession] = {}
        self._lock = threading.RLock()

    @property
    def public(self) -> PublicKey:
        return self.key.public

    def serve_proof_block(self, cp_id: str, interval: int) -> ProofBlock:
        return self.ledger.get_proof_block(cp_id, interval)

    # -- sessions

    def open_session(self, purpose: str) -> ApSession:
        if purpose not in (ENTRY, EXIT):
            raise ParameterError(f"unknown session purpose {purpose!r}")
        signer, _ = blindsig.signer_initial_challenge(self.key, self.rng)
        now = self.clock()
        session = ApSession(secrets.token_hex(16), purpose, signer, secrets.token_bytes(32),
                            now + self.challenge_ttl)
        with self._lock:
            for sid in [s for s, v in self._sessions.items() if v.expires_at < now]:
                del self._sessions[sid]
            self._sessions[session.session_id] = session
        return session

    def _take_session(self, session_id: str, purpose: str) -> ApSession:
        with self._lock:
            session = self._sessions.pop(session_id, None)
        if session is None:
            raise ReplayError("unknown or already used session")
        if session.purpose != purpose:
            raise Denied(f"session was opened for {session.purpose}, not {purpose}")
        if session.expires_at < self.clock():
            raise Denied("ownership challenge expired")
        return session

    # -- validation

    def _issuer_key(self, msg: TokenMessage) -> PublicKey:
        source = self.issuers.get(msg.issuer)
        if source is None:
            raise Denied(f"untrusted issuer {msg.issuer!r}")
        try:
            return source.public_key(msg.interval)
        except NotFound:
            raise Denied(f"no key for {msg.issuer}/{msg.interval}") from None

    def _validate(self, session: ApSession, credentials: Sequence[Credential],
                  ownership: Sequence[OwnershipProof], e: int) -> list[bytes]:
        if not credentials:
            raise ParameterError("at least one credential is required")
        if len(ownership) != len(credentials):
            raise ParameterError("one ownership proof per credential is required")
        if not isinstance(e, int) or not 0 <= e < self.key.params.q:
            raise ParameterError("challenge-response out of range")
        ids = [c.token_id for c in credentials]
        if len(set(ids)) != len(ids):
            raise ParameterError("duplicate token in vector")
        for cred, proof in zip(credentials, ownership):
            msg = TokenMessage.decode(cred.message)
            if msg.value != UNIT:
                raise Denied("only unit-value tokens are accepted")
            pub = self._issuer_key(msg)
            if not blindsig.verify(pub, cred.message, cred.signature):
                raise Denied("invalid credential")
            if not blindsig.verify_ownership(pub.params, msg.X, session.owner_challenge, proof):
                raise Denied("ownership proof failed")
        if len(credentials) * UNIT < self.required_units:
            raise Denied(f"escrow needs {self.required_units} units, got {len(credentials)}")
        return ids

    # -- entry / exit

    def entry(self, session_id: str, credentials: Sequence[Credential],
              ownership: Sequence[OwnershipProof], e: int) -> Proof:
        session = self._take_session(session_id, ENTRY)
        ids = self._validate(session, credentials, ownership, e)
        with self._lock:
            if any(self.cache.state(t) is not TokenState.FRESH for t in ids) or any(t in self._pending for t in ids):
                raise Denied("token already used")
            results = self.ledger.escrow_all(ids, self.ap_id)
            if any(r is not EscrowResult.OK for r in results):
                for t, r in zip(ids, results):
                    if r is not EscrowResult.OK:
                        self.cache.update(t, TokenState.SPENT if r is EscrowResult.ALREADY_SPENT else TokenState.ESCROWED)
                raise Denied("token already used: " + ", ".join(r.value for r in results))
            tag = hashlib.sha256(b"ESCROW" + blindsig.encode(
                session.signer.rnd, session.signer.a, session.signer.b1, session.signer.b2, e)).digest()
            for t in ids:
                self.cache.update(t, TokenState.ESCROWED)
            self.escrows[tag] = EscrowEntry(tuple(ids), tag, self.clock())
        return blindsig.signer_respond(session.signer, e)

    def exit(self, session_id: str, credentials: Sequence[Credential],
             ownership: Sequence[OwnershipProof], e: int) -> Proof:
        session = self._take_session(session_id, EXIT)
        ids = self._validate(session, credentials, ownership, e)
        with self._lock:
            for t in ids:
                if self.cache.state(t) is TokenState.SPENT or t in self._pending:
                    raise DoubleSpend("token already spent (local cache)")
            for t in ids:
                state = self.ledger.query_token_state(t)
                if state is TokenState.SPENT:
                    self.cache.update(t, TokenState.SPENT)
                    raise DoubleSpend("token already spent (ledger)")
                if state is TokenState.FRESH:
                    raise Denied("token was never escrowed")
            if self.publication_period <= 0:
                results = self.ledger.spend_all(ids, self.ap_id)
                if any(r is SpendResult.ALREADY_SPENT for r in results):
                    raise DoubleSpend("token already spent (ledger)")
                if any(r is not SpendResult.OK for r in results):
                    raise Denied("token was never escrowed")
            else:
                self._pending.extend(ids)
            for t in ids:
                self.cache.update(t, TokenState.SPENT)
            closed = set(ids)
            for tag in [k for k, v in self.escrows.items() if closed.intersection(v.token_ids)]:
                del self.escrows[tag]
        return blindsig.signer_respond(session.signer, e)

    # -- publication and cache

    def publish_spends(self) -> int:
        """Push buffered finalise records to the ledger."""
        with self._lock:
            pending, self._pending = self._pending, []
        written = 0
        for i, t in enumerate(pending):
            try:
                result = self.ledger.record_spend(t, self.ap_id)
            except LedgerUnavailable:
                with self._lock:
                    self._pending = pending[i:] + self._pending
                raise
            if result is SpendResult.OK:
                written += 1
            else:
                log.warning("%s: late double-spend detected for %s (%s)", self.ap_id, t.hex()[:16], result.value)
                self.detected_double_spends.append(t)
        return written

    def sync_spent_cache(self) -> int:
        """Flush own finalise records, then pull everything newer than last sync."""
        started = self.clock()
        self.publish_spends()
        try:
            records = self.ledger.records_since(self.cache.last_sync)
        except LedgerUnavailable:
            log.warning("%s: spent-cache sync failed, keeping stale cache", self.ap_id)
            raise
        changed = set()
        with self._lock:
            for rec in records:
                if self.cache.update(rec.token_id, rec.state):
                    changed.add(rec.token_id)
            self.cache.last_sync = started
        return len(changed)

