"""In-process append-only ledger standing in for the permissioned DLT.

Holds two kinds of record: per-interval proof blocks published by issuers,
and token state records written by authenticating parties. Token state is a
compare-and-set state machine FRESH -> ESCROWED -> SPENT; nothing is ever
rewritten or deleted.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from . import wire
from .blindsig import Transcript
from .errors import ConflictError, LedgerUnavailable, NotFound, ParameterError

log = logging.getLogger(__name__)


class TokenState(str, enum.Enum):
    FRESH = "FRESH"
    ESCROWED = "ESCROWED"
    SPENT = "SPENT"


class EscrowResult(str, enum.Enum):
    OK = "ok"
    ALREADY_ESCROWED = "already-escrowed"
    ALREADY_SPENT = "already-spent"


class SpendResult(str, enum.Enum):
    OK = "ok"
    NOT_ESCROWED = "not-escrowed"
    ALREADY_SPENT = "already-spent"


@dataclass(frozen=True)
class ProofRecord:
    key_fingerprint: bytes
    transcript: Transcript

    def to_wire(self) -> dict:
        return {"key": self.key_fingerprint.hex(), "transcript": wire.transcript_to_wire(self.transcript)}

    @classmethod
    def from_wire(cls, body: dict) -> "ProofRecord":
        return cls(wire.unhb(wire.field(body, "key"), "key"),
                   wire.transcript_from_wire(wire.field(body, "transcript")))


@dataclass(frozen=True)
class ProofBlock:
    cp_id: str
    interval: int
    cp_key_fingerprint: bytes
    proofs: tuple[ProofRecord, ...]
    sealed_at: float

    def validate(self) -> None:
        if not self.proofs:
            raise ParameterError("a proof block needs at least one proof")
        for rec in self.proofs:
            if rec.key_fingerprint != self.cp_key_fingerprint:
                raise ParameterError("proof block mixes key fingerprints")

    def to_wire(self) -> dict:
        return {
            "cp": self.cp_id,
            "interval": self.interval,
            "key": self.cp_key_fingerprint.hex(),
            "proofs": [rec.to_wire() for rec in self.proofs],
            "sealed_at": self.sealed_at,
        }

    @classmethod
    def from_wire(cls, body: dict) -> "ProofBlock":
        proofs = wire.field(body, "proofs")
        if not isinstance(proofs, list):
            raise ParameterError("proofs must be a list")
        return cls(
            str(wire.field(body, "cp")),
            int(wire.field(body, "interval")),
            wire.unhb(wire.field(body, "key"), "key"),
            tuple(ProofRecord.from_wire(p) for p in proofs),
            float(wire.field(body, "sealed_at")),
        )


@dataclass(frozen=True)
class TokenStateRecord:
    token_id: bytes
    state: TokenState
    ap_id: str
    recorded_at: float
    seq: int

    def to_wire(self) -> dict:
        return {"token": self.token_id.hex(), "state": self.state.value, "ap": self.ap_id,
                "at": self.recorded_at, "seq": self.seq}


class Ledger:
    """Thread-safe simulated ledger.

    ``commit_latency`` (seconds) is slept inside every write to model a slow
    backend. ``path`` enables an append-only JSON-lines log which is replayed
    on construction.
    """

    def __init__(self, commit_latency: float = 0.0, path: Optional[Path] = None,
                 clock: Callable[[], float] = time.time):
        self.commit_latency = commit_latency
        self.clock = clock
        self.available = True
        self._lock = threading.RLock()
        self._blocks: dict[tuple[str, int], ProofBlock] = {}
        self._records: list[TokenStateRecord] = []
        self._state: dict[bytes, TokenState] = {}
        self._path = Path(path) if path is not None else None
        if self._path is not None and self._path.exists():
            self._replay(self._path)

    # -- persistence

    def _replay(self, path: Path) -> None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                kind = rec.get("kind")
                if kind == "block":
                    block = ProofBlock.from_wire(rec["block"])
                    self._blocks[(block.cp_id, block.interval)] = block
                elif kind == "state":
                    tr = TokenStateRecord(bytes.fromhex(rec["token"]), TokenState(rec["state"]),
                                          rec["ap"], float(rec["at"]), len(self._records))
                    self._records.append(tr)
                    self._state[tr.token_id] = tr.state
                else:
                    raise ParameterError(f"{path}:{lineno}: unknown record kind {kind!r}")

    def _persist(self, rec: dict) -> None:
        if self._path is not None:
            with open(self._path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def _commit(self) -> None:
        if not self.available:
            raise LedgerUnavailable("ledger is not reachable")
        if self.commit_latency:
            time.sleep(self.commit_latency)

    # -- proof blocks

    def append_proof_block(self, block: ProofBlock) -> tuple[str, int]:
        block.validate()
        ref = (block.cp_id, block.interval)
        with self._lock:
            self._commit()
            if ref in self._blocks:
                raise ConflictError(f"block for {ref} already published")
            self._blocks[ref] = block
            self._persist({"kind": "block", "block": block.to_wire()})
        log.debug("block %s/%d sealed with %d proofs", block.cp_id, block.interval, len(block.proofs))
        return ref

    def get_proof_block(self, cp_id: str, interval: int) -> ProofBlock:
        if not self.available:
            raise LedgerUnavailable("ledger is not reachable")
        try:
            return self._blocks[(cp_id, interval)]
        except KeyError:
            raise NotFound(f"no block for {cp_id}/{interval}") from None

    def has_block(self, cp_id: str, interval: int) -> bool:
        return (cp_id, interval) in self._blocks

    # -- token state

    def _append_state(self, token_id: bytes, state: TokenState, ap_id: str, now: float) -> None:
        rec = TokenStateRecord(token_id, state, ap_id, now, len(self._records))
        self._records.append(rec)
        self._state[token_id] = state
        self._persist({"kind": "state", **rec.to_wire()})

    def query_token_state(self, token_id: bytes) -> TokenState:
        if not self.available:
            raise LedgerUnavailable("ledger is not reachable")
        return self._state.get(token_id, TokenState.FRESH)

    def record_escrow(self, token_id: bytes, ap_id: str) -> EscrowResult:
        return self.escrow_all([token_id], ap_id)[0]

    def record_spend(self, token_id: bytes, ap_id: str) -> SpendResult:
        return self.spend_all([token_id], ap_id)[0]

    def escrow_all(self, token_ids: Sequence[bytes], ap_id: str) -> list[EscrowResult]:
        """Escrow every token or none; results are per token."""
        if len(set(token_ids)) != len(token_ids):
            raise ParameterError("duplicate token in vector")
        with self._lock:
            self._commit()
            results = []
            for tid in token_ids:
                state = self._state.get(tid, TokenState.FRESH)
                if state is TokenState.FRESH:
                    results.append(EscrowResult.OK)
                elif state is TokenState.ESCROWED:
                    results.append(EscrowResult.ALREADY_ESCROWED)
                else:
                    results.append(EscrowResult.ALREADY_SPENT)
            if all(r is EscrowResult.OK for r in results):
                now = self.clock()
                for tid in token_ids:
                    self._append_state(tid, TokenState.ESCROWED, ap_id, now)
            return results

    def spend_all(self, token_ids: Sequence[bytes], ap_id: str) -> list[SpendResult]:
        if len(set(token_ids)) != len(token_ids):
            raise ParameterError("duplicate token in vector")
        with self._lock:
            self._commit()
            results = []
            for tid in token_ids:
                state = self._state.get(tid, TokenState.FRESH)
                if state is TokenState.ESCROWED:
                    results.append(SpendResult.OK)
                elif state is TokenState.SPENT:
                    results.append(SpendResult.ALREADY_SPENT)
                else:
                    results.append(SpendResult.NOT_ESCROWED)
            if all(r is SpendResult.OK for r in results):
                now = self.clock()
                for tid in token_ids:
                    self._append_state(tid, TokenState.SPENT, ap_id, now)
            return results

    def records_since(self, since: float) -> list[TokenStateRecord]:
        if not self.available:
            raise LedgerUnavailable("ledger is not reachable")
        with self._lock:
            return [r for r in self._records if r.recorded_at >= since]

    def snapshot_spent_set(self, since: float) -> list[bytes]:
        seen: dict[bytes, None] = {}
        for rec in self.records_since(since):
            seen.setdefault(rec.token_id)
        return list(seen)

    def history(self, token_id: bytes) -> list[TokenState]:
        with self._lock:
            return [r.state for r in self._records if r.token_id == token_id]

    def blocks(self) -> Iterable[ProofBlock]:
        return list(self._blocks.values())
