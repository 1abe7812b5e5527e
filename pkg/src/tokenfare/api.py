"""JSON endpoints for the CP, AP and Service, and the matching clients."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Optional, Sequence
from urllib.parse import quote

from . import wire
from .blindsig import BlindSignature, Challenge, GroupParams, OwnershipProof, Proof, PublicKey
from .errors import ParameterError
from .fareservice import Direction, FareNonce, FareService
from .gateway import AuthenticatingParty, Credential
from .issuer import CertificationProvider
from .ledger import ProofBlock
from .transport import App, Transport


def _int(body: Any, name: str) -> int:
    v = wire.field(body, name)
    if not isinstance(v, int) or isinstance(v, bool):
        raise ParameterError(f"{name} must be an integer")
    return v


def _list(body: Any, name: str) -> list:
    v = wire.field(body, name)
    if not isinstance(v, list):
        raise ParameterError(f"{name} must be a list")
    return v


def _key_body(issuer: str, interval: int, pub: PublicKey) -> dict:
    return {"issuer": issuer, "interval": interval, "key": wire.key_to_wire(pub),
            "fingerprint": pub.fingerprint().hex()}


def _nonce_body(n: FareNonce) -> dict:
    return {"nonce": wire.hb(n.nonce), "station": n.station_id, "direction": n.direction.value,
            "issued_at": n.issued_at}


def _credentials(body: dict) -> tuple[list[Credential], list[OwnershipProof]]:
    creds = [Credential(wire.sig_from_wire(wire.field(c, "signature")),
                        wire.unhb(wire.field(c, "message"), "message"))
             for c in _list(body, "credentials")]
    proofs = [wire.ownership_from_wire(p) for p in _list(body, "ownership")]
    return creds, proofs


# -- server apps ------------------------------------------------------------


def cp_app(cp: CertificationProvider, moduli: bool = True) -> App:
    app = App(cp.cp_id)
    P = cp.params if moduli else None

    @app.route("POST", "/issue/begin", "issue-begin")
    def begin(body):
        interval = wire.field(body, "interval") if "interval" in (body or {}) else None
        if interval is not None and not isinstance(interval, int):
            raise ParameterError("interval must be an integer")
        session = cp.begin_issuance(str(wire.field(body, "user_ref")), _int(body, "count"), interval)
        return {"session": session.session_id, "issuer": cp.cp_id, "interval": session.interval,
                "challenges": [wire.challenge_to_wire(c, P) for c in session.challenges]}

    @app.route("POST", "/issue/complete", "issue-complete")
    def complete(body):
        es = [wire.unh(e, "e") for e in _list(body, "e")]
        proofs = cp.complete_issuance(str(wire.field(body, "session")), es)
        return {"proofs": [wire.proof_to_wire(p, P) for p in proofs]}

    @app.route("POST", "/admin/publish", "publish")
    def publish(body):
        issuer, interval = cp.publish_interval_block(_int(body, "interval"))
        return {"issuer": issuer, "interval": interval}

    @app.route("GET", "/keys/{interval}", "keys")
    def keys(interval):
        i = int(interval)
        return _key_body(cp.cp_id, i, cp.public_key(i))

    return app


def ap_app(ap: AuthenticatingParty, moduli: bool = True) -> App:
    app = App(ap.ap_id)
    P = ap.key.params if moduli else None

    @app.route("GET", "/key", "key")
    def key():
        return {"ap": ap.ap_id, "key": wire.key_to_wire(ap.public), "fingerprint": ap.public.fingerprint().hex()}

    @app.route("GET", "/blocks/{cp}/{interval}", "verify-block")
    def blocks(cp, interval):
        return ap.serve_proof_block(cp, int(interval)).to_wire()

    @app.route("POST", "/entry/challenge", "request-signature")
    def challenge(body):
        session = ap.open_session(str(wire.field(body, "purpose")))
        return {"session": session.session_id, "challenge": wire.challenge_to_wire(session.signer.challenge, P),
                "owner_challenge": wire.hb(session.owner_challenge), "expires_at": session.expires_at}

    @app.route("POST", "/entry", "prove-owner")
    def entry(body):
        creds, proofs = _credentials(body)
        proof = ap.entry(str(wire.field(body, "session")), creds, proofs, wire.unh(wire.field(body, "e"), "e"))
        return {"proof": wire.proof_to_wire(proof, P)}

    @app.route("POST", "/exit", "finalise")
    def exit_(body):
        creds, proofs = _credentials(body)
        proof = ap.exit(str(wire.field(body, "session")), creds, proofs, wire.unh(wire.field(body, "e"), "e"))
        return {"proof": wire.proof_to_wire(proof, P)}

    @app.route("POST", "/admin/sync", "sync")
    def sync(body):
        return {"new_entries": ap.sync_spent_cache()}

    return app


def service_app(svc: FareService, moduli: bool = True) -> App:
    app = App(svc.service_id)
    rebates = svc.rebates
    P = rebates.params if moduli else None

    @app.route("POST", "/nonce", "request-nonce")
    def nonce(body):
        direction = str(wire.field(body, "direction"))
        if direction not in Direction.__members__:
            raise ParameterError(f"unknown direction {direction!r}")
        return _nonce_body(svc.issue_nonce(Direction(direction), str(wire.field(body, "station"))))

    @app.route("POST", "/enter", "verify-signature")
    def enter(body):
        session = svc.admit_entry(str(wire.field(body, "ap")), wire.sig_from_wire(wire.field(body, "signature")),
                                  wire.unhb(wire.field(body, "nonce"), "nonce"))
        return {"admitted": True, "station": session.entry_station}

    @app.route("POST", "/finish", "finish")
    def finish(body):
        z, rebate, amount = svc.finish(wire.sig_from_wire(wire.field(body, "signature")),
                                       str(wire.field(body, "station")))
        out = {"nonce": _nonce_body(z), "amount": amount, "rebate": None}
        if rebate is not None:
            out["rebate"] = {"session": rebate.session_id, "issuer": rebates.cp_id, "interval": rebate.interval,
                             "challenges": [wire.challenge_to_wire(c, P) for c in rebate.challenges]}
        return out

    @app.route("POST", "/settle", "settle")
    def settle(body):
        es = [wire.unh(e, "e") for e in _list(body, "e")]
        proofs = svc.settle_exit(str(wire.field(body, "ap")), wire.sig_from_wire(wire.field(body, "signature")),
                                 wire.unhb(wire.field(body, "nonce"), "nonce"), es)
        return {"proofs": [wire.proof_to_wire(p, P) for p in proofs]}

    @app.route("GET", "/keys/{interval}", "keys")
    def keys(interval):
        i = int(interval)
        return _key_body(rebates.cp_id, i, rebates.public_key(i))

    @app.route("POST", "/admin/publish", "publish")
    def publish(body):
        issuer, interval = rebates.publish_interval_block(_int(body, "interval"))
        return {"issuer": issuer, "interval": interval}

    @app.route("POST", "/admin/expire", "expire")
    def expire(body):
        return {"expired": svc.expire_journeys()}

    return app


# -- clients ----------------------------------------------------------------


@dataclass
class IssueStart:
    session: str
    issuer: str
    interval: int
    challenges: list[Challenge]


@dataclass
class ApSessionInfo:
    session: str
    challenge: Challenge
    owner_challenge: bytes
    expires_at: float


@dataclass
class FinishResult:
    z: FareNonce
    amount: int
    rebate: Optional[IssueStart]


def _nonce_from(body: dict) -> FareNonce:
    return FareNonce(wire.unhb(body["nonce"], "nonce"), body["station"], Direction(body["direction"]),
                     float(body["issued_at"]))


class _Client:
    def __init__(self, transport: Transport, moduli: bool = True):
        self.t = transport
        self.moduli = moduli
        self._keys: dict[int, PublicKey] = {}

    def _tag(self, params: Optional[GroupParams]) -> Optional[GroupParams]:
        return params if self.moduli else None

    def public_key(self, interval: int) -> PublicKey:
        """Key source interface used by the AP and the wallet; cached."""
        if interval not in self._keys:
            body = self.t.get(f"/keys/{interval}", "keys")
            pub = wire.key_from_wire(body["key"])
            if pub.fingerprint().hex() != body["fingerprint"]:
                raise ParameterError("key fingerprint mismatch")
            self._keys[interval] = pub
        return self._keys[interval]

    def bound(self, observer=None, deadline=None):
        """Same client and key cache, with a per-call observer and deadline."""
        clone = copy.copy(self)
        clone.t = self.t.view(observer, deadline)
        return clone


class CpClient(_Client):
    def begin(self, user_ref: str, count: int, interval: Optional[int] = None) -> IssueStart:
        body: dict[str, Any] = {"user_ref": user_ref, "count": count}
        if interval is not None:
            body["interval"] = interval
        out = self.t.post("/issue/begin", body, "issue-begin")
        return IssueStart(out["session"], out["issuer"], out["interval"],
                          [wire.challenge_from_wire(c) for c in out["challenges"]])

    def complete(self, session: str, es: Sequence[int], params: Optional[GroupParams] = None) -> list[Proof]:
        out = self.t.post("/issue/complete", {"session": session, "e": [wire.scalar(e, self._tag(params)) for e in es]},
                          "issue-complete")
        return [wire.proof_from_wire(p) for p in out["proofs"]]

    def publish(self, interval: int) -> None:
        self.t.post("/admin/publish", {"interval": interval}, "publish")


class ApClient:
    def __init__(self, transport: Transport, ap_id: Optional[str] = None, moduli: bool = True):
        self.t = transport
        self.moduli = moduli
        self._key: Optional[PublicKey] = None
        self.ap_id = ap_id

    def bound(self, observer=None, deadline=None):
        """Same client and key cache, with a per-call observer and deadline."""
        clone = copy.copy(self)
        clone.t = self.t.view(observer, deadline)
        return clone

    def key(self) -> PublicKey:
        if self._key is None:
            body = self.t.get("/key", "key")
            self._key = wire.key_from_wire(body["key"])
            self.ap_id = body["ap"]
        return self._key

    def block(self, cp: str, interval: int) -> ProofBlock:
        return ProofBlock.from_wire(self.t.get(f"/blocks/{quote(cp, safe='')}/{interval}", "verify-block"))

    def open_session(self, purpose: str) -> ApSessionInfo:
        out = self.t.post("/entry/challenge", {"purpose": purpose}, "request-signature")
        return ApSessionInfo(out["session"], wire.challenge_from_wire(out["challenge"]),
                             wire.unhb(out["owner_challenge"]), float(out["expires_at"]))

    def _submit(self, path: str, name: str, session: str, credentials: Sequence[Credential],
                ownership: Sequence[OwnershipProof], e: int,
                params: Optional[Sequence[GroupParams]] = None) -> Proof:
        """``params`` holds each credential's issuer group, for modulus-tagged encoding."""
        tagged = self.moduli and params is not None
        tags = list(params) if tagged else [None] * len(credentials)
        ap_params = self._key.params if tagged and self._key is not None else None
        body = {
            "session": session,
            "credentials": [{"message": wire.hb(c.message), "signature": wire.sig_to_wire(c.signature, P)}
                            for c, P in zip(credentials, tags)],
            "ownership": [wire.ownership_to_wire(p, P) for p, P in zip(ownership, tags)],
            "e": wire.scalar(e, ap_params),
        }
        return wire.proof_from_wire(self.t.post(path, body, name)["proof"])

    def entry(self, session, credentials, ownership, e, params=None) -> Proof:
        return self._submit("/entry", "prove-owner", session, credentials, ownership, e, params)

    def exit(self, session, credentials, ownership, e, params=None) -> Proof:
        return self._submit("/exit", "finalise", session, credentials, ownership, e, params)

    def sync(self) -> int:
        return self.t.post("/admin/sync", {}, "sync")["new_entries"]


class ServiceClient(_Client):
    def nonce(self, direction: str, station: str) -> FareNonce:
        return _nonce_from(self.t.post("/nonce", {"direction": direction, "station": station}, "request-nonce"))

    def enter(self, ap_id: str, nonce: bytes, signature: BlindSignature,
              params: Optional[GroupParams] = None) -> dict:
        return self.t.post("/enter", {"ap": ap_id, "nonce": wire.hb(nonce),
                                      "signature": wire.sig_to_wire(signature, self._tag(params))}, "verify-signature")

    def finish(self, signature: BlindSignature, station: str, params: Optional[GroupParams] = None) -> FinishResult:
        out = self.t.post("/finish", {"signature": wire.sig_to_wire(signature, self._tag(params)), "station": station}, "finish")
        rebate = None
        if out["rebate"] is not None:
            r = out["rebate"]
            rebate = IssueStart(r["session"], r["issuer"], r["interval"],
                                [wire.challenge_from_wire(c) for c in r["challenges"]])
        return FinishResult(_nonce_from(out["nonce"]), out["amount"], rebate)

    def settle(self, ap_id: str, nonce: bytes, signature: BlindSignature, es: Sequence[int],
               params: Optional[GroupParams] = None, rebate_params: Optional[GroupParams] = None) -> list[Proof]:
        out = self.t.post("/settle", {"ap": ap_id, "nonce": wire.hb(nonce),
                                      "signature": wire.sig_to_wire(signature, self._tag(params)),
                                      "e": [wire.scalar(e, self._tag(rebate_params)) for e in es]}, "settle")
        return [wire.proof_from_wire(p) for p in out["proofs"]]

    def publish(self, interval: int) -> None:
        self.t.post("/admin/publish", {"interval": interval}, "publish")
