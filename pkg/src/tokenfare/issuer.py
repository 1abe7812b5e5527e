"""Certification Provider: trades an identified purchase for blind signatures.

Credentials go straight back to the user; the signer transcripts are queued
per interval and published as one proof block, which is the anonymity set
users can later audit.
"""

from __future__ import annotations

import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

from . import blindsig
from .blindsig import GroupParams, Proof, PublicKey, Rng, SignerKeyPair, Transcript
from .errors import ConflictError, Denied, NothingToPublish, NotFound, ParameterError, ReplayError
from .ledger import Ledger, ProofBlock, ProofRecord

log = logging.getLogger(__name__)


class PaymentClient(Protocol):
    def approve(self, user_ref: str, count: int) -> bool: ...


class ApproveAll:
    def approve(self, user_ref: str, count: int) -> bool:
        return True


@dataclass(frozen=True)
class IntervalKey:
    interval: int
    key: SignerKeyPair


@dataclass
class IssuanceSession:
    session_id: str
    user_ref: str
    interval: int
    signers: list[blindsig.SignerSession] = field(repr=False)

    @property
    def token_count(self) -> int:
        return len(self.signers)

    @property
    def challenges(self) -> list[blindsig.Challenge]:
        return [s.challenge for s in self.signers]


class CertificationProvider:
    def __init__(self, cp_id: str, ledger: Ledger, params: Optional[GroupParams] = None,
                 bits: int = 256, rng: Optional[Rng] = None, interval_seconds: float = 60.0,
                 clock: Callable[[], float] = time.time, payment: Optional[PaymentClient] = None):
        self.cp_id = cp_id
        self.ledger = ledger
        self.rng = rng
        self.params = params if params is not None else blindsig.generate_group(bits, rng)
        self.interval_seconds = interval_seconds
        self.clock = clock
        self.payment = payment or ApproveAll()
        self._keys: dict[int, IntervalKey] = {}
        self._queues: dict[int, list[ProofRecord]] = {}
        self._published: set[int] = set()
        self._sessions: dict[str, IssuanceSession] = {}
        self._completed: set[str] = set()
        self._lock = threading.RLock()

    def current_interval(self) -> int:
        return int(self.clock() // self.interval_seconds)

    def rotate_interval_key(self, interval: int) -> IntervalKey:
        with self._lock:
            if interval in self._published or self.ledger.has_block(self.cp_id, interval):
                raise ConflictError(f"interval {interval} already published")
            if interval in self._keys:
                raise ConflictError(f"interval {interval} already has a key")
            ik = IntervalKey(interval, blindsig.keygen(self.params, self.rng))
            self._keys[interval] = ik
            self._queues[interval] = []
            return ik

    def ensure_interval(self, interval: int) -> IntervalKey:
        with self._lock:
            if interval in self._keys:
                return self._keys[interval]
            return self.rotate_interval_key(interval)

    def interval_key(self, interval: int) -> IntervalKey:
        try:
            return self._keys[interval]
        except KeyError:
            raise NotFound(f"{self.cp_id} has no key for interval {interval}") from None

    def public_key(self, interval: int) -> PublicKey:
        return self.interval_key(interval).key.public

    def intervals(self) -> list[int]:
        return sorted(self._keys)

    def begin_issuance(self, user_ref: str, count: int, interval: Optional[int] = None) -> IssuanceSession:
        if not isinstance(count, int) or count < 1:
            raise ParameterError("token count must be >= 1")
        if interval is None:
            interval = self.current_interval()
            self.ensure_interval(interval)
        key = self.interval_key(interval).key
        if interval in self._published:
            raise ConflictError(f"interval {interval} is closed")
        if not self.payment.approve(user_ref, count):
            raise Denied("payment not approved")
        signers = [blindsig.signer_initial_challenge(key, self.rng)[0] for _ in range(count)]
        session = IssuanceSession(secrets.token_hex(16), user_ref, interval, signers)
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def complete_issuance(self, session_id: str, es: Sequence[int]) -> list[Proof]:
        with self._lock:
            if session_id in self._completed:
                raise ReplayError("issuance session already completed")
            session = self._sessions.get(session_id)
            if session is None:
                raise NotFound("unknown issuance session")
            if len(es) != session.token_count:
                raise ParameterError(f"expected {session.token_count} challenge-responses, got {len(es)}")
            q = self.params.q
            if any(not isinstance(e, int) or not 0 <= e < q for e in es):
                raise ParameterError("challenge-response out of range")
            if session.interval in self._published:
                raise ConflictError(f"interval {session.interval} is closed")
            del self._sessions[session_id]
            self._completed.add(session_id)
            fp = session.signers[0].key.public.fingerprint()
            proofs = []
            records = []
            for signer, e in zip(session.signers, es):
                proof = blindsig.signer_respond(signer, e)
                proofs.append(proof)
                records.append(ProofRecord(fp, Transcript.of(signer.challenge, e, proof)))
            self._queues[session.interval].extend(records)
        return proofs

    def queued(self, interval: int) -> int:
        return len(self._queues.get(interval, ()))

    def publish_interval_block(self, interval: int) -> tuple[str, int]:
        with self._lock:
            if interval in self._published:
                raise ConflictError(f"interval {interval} already published")
            queue = self._queues.get(interval)
            if not queue:
                raise NothingToPublish(f"no proofs queued for interval {interval}")
            fp = self.public_key(interval).fingerprint()
            block = ProofBlock(self.cp_id, interval, fp, tuple(queue), self.clock())
            ref = self.ledger.append_proof_block(block)
            self._published.add(interval)
            self._queues[interval] = []
        log.info("%s published interval %d (%d proofs)", self.cp_id, interval, len(block.proofs))
        return ref

    def publish_due(self) -> list[tuple[str, int]]:
        """Publish every past interval that still has queued proofs."""
        now = self.current_interval()
        refs = []
        for interval in self.intervals():
            if interval < now and interval not in self._published and self._queues.get(interval):
                refs.append(self.publish_interval_block(interval))
        return refs
