"""User client: acquires credentials, audits proof blocks, drives entry and exit."""

from __future__ import annotations

import enum
import json
import logging
import os
import secrets
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import blindsig, wire
from .api import ApClient, CpClient, ServiceClient
from .blindsig import BlindSignature, OwnershipKeyPair, PublicKey, Rng, Transcript
from .errors import Discrepancy, DoubleSpend, FareError, NotFound, ParameterError
from .gateway import ENTRY, EXIT, Credential
from .ledger import ProofRecord
from .tokens import UNIT, TokenMessage, token_id

log = logging.getLogger(__name__)


class TokenStatus(str, enum.Enum):
    REQUESTED = "REQUESTED"
    ISSUED = "ISSUED"
    VERIFIED = "VERIFIED"
    ESCROWED = "ESCROWED"
    SPENT = "SPENT"


_ORDER = {s: i for i, s in enumerate(TokenStatus)}


@dataclass
class Token:
    token_id: str
    issuer: str
    interval: int
    ownership: OwnershipKeyPair = field(repr=False)
    message: bytes
    credential: Optional[BlindSignature]
    transcript: Optional[Transcript]
    key_fingerprint: bytes
    state: TokenStatus = TokenStatus.ISSUED
    anonymity_set: Optional[int] = None

    @property
    def value(self) -> int:
        return TokenMessage.decode(self.message).value

    def advance(self, state: TokenStatus) -> None:
        if _ORDER[state] < _ORDER[self.state]:
            raise ParameterError(f"token state cannot go from {self.state.value} to {state.value}")
        self.state = state

    def to_record(self) -> dict:
        return {
            "kind": "token", "id": self.token_id, "issuer": self.issuer, "interval": self.interval,
            "x_star": wire.h(self.ownership.x_star), "X": wire.h(self.ownership.X),
            "message": wire.hb(self.message),
            "credential": wire.sig_to_wire(self.credential) if self.credential else None,
            "transcript": wire.transcript_to_wire(self.transcript) if self.transcript else None,
            "key": self.key_fingerprint.hex(), "state": self.state.value, "m": self.anonymity_set,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Token":
        return cls(
            rec["id"], rec["issuer"], rec["interval"],
            OwnershipKeyPair(wire.unh(rec["x_star"]), wire.unh(rec["X"])),
            wire.unhb(rec["message"]),
            wire.sig_from_wire(rec["credential"]) if rec["credential"] else None,
            wire.transcript_from_wire(rec["transcript"]) if rec["transcript"] else None,
            bytes.fromhex(rec["key"]), TokenStatus(rec["state"]), rec.get("m"),
        )


@dataclass
class JourneyTicket:
    ticket_id: str
    ap_id: str
    ap_signature_y: BlindSignature
    y: bytes
    tokens_escrowed: list[str]
    entry_time: float
    entry_station: str
    service_url: str = ""
    ap_url: str = ""
    closed: bool = False

    def to_record(self) -> dict:
        return {
            "kind": "ticket", "id": self.ticket_id, "ap": self.ap_id,
            "signature": wire.sig_to_wire(self.ap_signature_y), "y": wire.hb(self.y),
            "tokens": self.tokens_escrowed, "entry_time": self.entry_time, "station": self.entry_station,
            "service_url": self.service_url, "ap_url": self.ap_url, "closed": self.closed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "JourneyTicket":
        return cls(rec["id"], rec["ap"], wire.sig_from_wire(rec["signature"]), wire.unhb(rec["y"]),
                   list(rec["tokens"]), rec["entry_time"], rec["station"], rec.get("service_url", ""),
                   rec.get("ap_url", ""), rec.get("closed", False))


class WalletStore:
    """Append-only JSON-lines file; the last record per (kind, id) wins."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None

    def append(self, records: Iterable[dict]) -> None:
        if self.path is None:
            return
        with open(self.path, "a") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def load(self) -> dict[tuple[str, str], dict]:
        latest: dict[tuple[str, str], dict] = {}
        if self.path is None or not self.path.exists():
            return latest
        with open(self.path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    raise ParameterError(f"{self.path}:{lineno}: corrupt wallet record") from None
                latest[(rec["kind"], rec["id"])] = rec
        return latest

    def compact(self, records: Iterable[dict]) -> None:
        if self.path is None:
            return
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        os.replace(tmp, self.path)


class Wallet:
    def __init__(self, path: Optional[Path] = None, rng: Optional[Rng] = None,
                 verify_after_entry: bool = True, trusted_fingerprints: Optional[set[str]] = None,
                 user_ref: str = "user"):
        self.store = WalletStore(path)
        self.rng = rng
        self.verify_after_entry = verify_after_entry
        self.trusted_fingerprints = trusted_fingerprints
        self.user_ref = user_ref
        self.tokens: dict[str, Token] = {}
        self.tickets: dict[str, JourneyTicket] = {}
        self.keys: dict[tuple[str, int], PublicKey] = {}
        for (kind, _), rec in self.store.load().items():
            if kind == "token":
                tok = Token.from_record(rec)
                self.tokens[tok.token_id] = tok
            elif kind == "ticket":
                t = JourneyTicket.from_record(rec)
                self.tickets[t.ticket_id] = t
            elif kind == "key":
                self.keys[(rec["issuer"], rec["interval"])] = wire.key_from_wire(rec["key"])

    # -- bookkeeping

    def _save(self, *objs) -> None:
        self.store.append(o.to_record() for o in objs)

    def compact(self) -> None:
        recs = [{"kind": "key", "id": f"{i}/{n}", "issuer": i, "interval": n, "key": wire.key_to_wire(k)}
                for (i, n), k in self.keys.items()]
        recs += [t.to_record() for t in self.tokens.values()]
        recs += [t.to_record() for t in self.tickets.values()]
        self.store.compact(recs)

    def add_token(self, token: Token, key: Optional[PublicKey] = None) -> None:
        if key is not None:
            self._remember_key(token.issuer, token.interval, key)
        self.tokens[token.token_id] = token
        self._save(token)

    def _remember_key(self, issuer: str, interval: int, pub: PublicKey) -> None:
        fp = pub.fingerprint().hex()
        if self.trusted_fingerprints is not None and fp not in self.trusted_fingerprints:
            raise Discrepancy(f"key {issuer}/{interval} ({fp[:16]}) is not in the trusted set")
        if (issuer, interval) not in self.keys:
            self.keys[(issuer, interval)] = pub
            self.store.append([{"kind": "key", "id": f"{issuer}/{interval}", "issuer": issuer,
                                "interval": interval, "key": wire.key_to_wire(pub)}])

    def key_for(self, token: Token) -> PublicKey:
        try:
            return self.keys[(token.issuer, token.interval)]
        except KeyError:
            raise NotFound(f"no key cached for {token.issuer}/{token.interval}") from None

    def usable(self) -> list[Token]:
        return [t for t in self.tokens.values() if t.state in (TokenStatus.ISSUED, TokenStatus.VERIFIED)]

    # -- issuance

    def _issue(self, issuer: str, interval: int, pub: PublicKey, challenges, complete) -> list[Token]:
        """Blind fresh unit tokens against ``challenges``; ``complete(es, params)`` returns proofs."""
        self._remember_key(issuer, interval, pub)
        pending = []
        for ch in challenges:
            owner = blindsig.ownership_keygen(pub.params, self.rng)
            message = TokenMessage(owner.X, UNIT, interval, issuer).encode()
            session, e = blindsig.user_blind(pub, message, ch, self.rng)
            pending.append((owner, message, session, e))
        if not pending:
            return []
        proofs = complete([e for *_, e in pending], pub.params)
        if len(proofs) != len(pending):
            raise ParameterError("issuer returned the wrong number of proofs")
        fp = pub.fingerprint()
        tokens = []
        for (owner, message, session, e), proof in zip(pending, proofs):
            sig = blindsig.user_unblind(session, proof)
            tokens.append(Token(token_id(sig).hex(), issuer, interval, owner, message, sig,
                                Transcript.of(session.challenge, e, proof), fp))
        for tok in tokens:
            self.tokens[tok.token_id] = tok
        self._save(*tokens)
        return tokens

    def acquire_tokens(self, cp: CpClient, count: int, interval: Optional[int] = None) -> list[Token]:
        if not isinstance(count, int) or count < 1:
            raise ParameterError("token count must be >= 1")
        start = cp.begin(self.user_ref, count, interval)
        pub = cp.public_key(start.interval)
        return self._issue(start.issuer, start.interval, pub, start.challenges,
                           lambda es, params: cp.complete(start.session, es, params))

    # -- audit

    def verify_anonymity_set(self, token: Token, ap: ApClient) -> int:
        block = ap.block(token.issuer, token.interval)
        pub = self.key_for(token)
        fp = pub.fingerprint()
        if block.cp_key_fingerprint != fp:
            raise Discrepancy("block is sealed under a different key than my credential")
        if any(rec.key_fingerprint != fp for rec in block.proofs):
            raise Discrepancy("block mixes signing keys")
        if token.transcript is None or ProofRecord(fp, token.transcript) not in block.proofs:
            raise Discrepancy("my own proof is missing from the block")
        for i, rec in enumerate(block.proofs):
            if not blindsig.verify_transcript(pub, rec.transcript):
                raise Discrepancy(f"block entry {i} does not verify under {token.issuer}/{token.interval}")
        token.anonymity_set = len(block.proofs)
        if token.state is TokenStatus.ISSUED:
            token.advance(TokenStatus.VERIFIED)
        self._save(token)
        return token.anonymity_set

    # -- spending

    def _ap_signature(self, ap: ApClient, purpose: str, tokens: Sequence[Token], message: bytes,
                      on_accept) -> BlindSignature:
        info = ap.open_session(purpose)
        ap_key = ap.key()
        session, e = blindsig.user_blind(ap_key, message, info.challenge, self.rng)
        creds = [Credential(t.credential, t.message) for t in tokens]
        ownership = [blindsig.prove_ownership(self.key_for(t).params, t.ownership, info.owner_challenge, self.rng)
                     for t in tokens]
        submit = ap.entry if purpose == ENTRY else ap.exit
        proof = submit(info.session, creds, ownership, e, [self.key_for(t).params for t in tokens])
        on_accept()
        return blindsig.user_unblind(session, proof)

    def _mark(self, tokens: Sequence[Token], state: TokenStatus) -> None:
        for t in tokens:
            t.advance(state)
        self._save(*tokens)

    def ap_entry_signature(self, ap: ApClient, tokens: Sequence[Token], message: bytes) -> BlindSignature:
        return self._ap_signature(ap, ENTRY, tokens, message, lambda: self._mark(tokens, TokenStatus.ESCROWED))

    def ap_exit_signature(self, ap: ApClient, tokens: Sequence[Token], message: bytes) -> BlindSignature:
        return self._ap_signature(ap, EXIT, tokens, message, lambda: self._mark(tokens, TokenStatus.SPENT))

    def enter(self, service: ServiceClient, ap: ApClient, tokens: Sequence[Token], station: str) -> JourneyTicket:
        if not tokens:
            raise ParameterError("no tokens given")
        for t in tokens:
            if t.state not in (TokenStatus.ISSUED, TokenStatus.VERIFIED):
                raise ParameterError(f"token {t.token_id[:16]} is {t.state.value}, not spendable")
        y = service.nonce("ENTRY", station)
        sig = self.ap_entry_signature(ap, tokens, y.nonce)
        service.enter(ap.ap_id, y.nonce, sig, ap.key().params)
        ticket = JourneyTicket(secrets.token_hex(8), ap.ap_id, sig, y.nonce, [t.token_id for t in tokens],
                               time.time(), station, getattr(service.t, "base_url", ""), getattr(ap.t, "base_url", ""))
        self.tickets[ticket.ticket_id] = ticket
        self._save(ticket)
        if self.verify_after_entry:
            for t in tokens:
                try:
                    self.verify_anonymity_set(t, ap)
                except NotFound:
                    pass
                except Discrepancy as exc:
                    log.warning("anonymity-set discrepancy for %s: %s", t.token_id[:16], exc)
        return ticket

    def exit(self, service: ServiceClient, ap: ApClient, ticket: JourneyTicket, station: str) -> list[Token]:
        if ticket.closed:
            raise DoubleSpend("ticket already settled")
        tokens = [self.tokens[tid] for tid in ticket.tokens_escrowed]
        fin = service.finish(ticket.ap_signature_y, station, ap.key().params)
        sig_z = self.ap_exit_signature(ap, tokens, fin.z.nonce)
        rebate = fin.rebate
        if rebate is None:
            service.settle(ap.ap_id, fin.z.nonce, sig_z, [], ap.key().params)
            rebates = []
        else:
            pub = service.public_key(rebate.interval)
            rebates = self._issue(rebate.issuer, rebate.interval, pub, rebate.challenges,
                                  lambda es, params: service.settle(ap.ap_id, fin.z.nonce, sig_z, es,
                                                                    ap.key().params, params))
        ticket.closed = True
        self._save(ticket)
        return rebates

    def balance(self) -> int:
        return sum(t.value for t in self.usable())


def describe(exc: FareError) -> str:
    return f"{exc.code}: {exc}"
