"""JSON wire encoding: big integers as lowercase hex without leading zeros.

A value may travel bare (``"1f"``) or tagged with its modulus
(``{"v": "1f", "m": "2b"}``). Writers tag when given the group parameters;
readers accept either form, so tagged and compact peers interoperate.
"""

from __future__ import annotations

import re
from typing import Any, Optional

from .blindsig import (
    BlindSignature,
    Challenge,
    GroupParams,
    OwnershipProof,
    Proof,
    PublicKey,
    Transcript,
)
from .errors import ParameterError

_HEX = re.compile(r"^(0|[1-9a-f][0-9a-f]*)$")
_HEXBYTES = re.compile(r"^([0-9a-f]{2})*$")


def h(x: int, mod: Optional[int] = None) -> Any:
    if mod is None:
        return format(x, "x")
    return {"v": format(x, "x"), "m": format(mod, "x")}


def unh(s: Any, name: str = "value") -> int:
    if isinstance(s, dict):
        v, m = unh(field(s, "v"), name), unh(field(s, "m"), name)
        if not 0 <= v < m:
            raise ParameterError(f"{name}: value not reduced by its modulus")
        return v
    if not isinstance(s, str) or not _HEX.match(s):
        raise ParameterError(f"{name}: expected lowercase hex integer")
    return int(s, 16)


def hb(b: bytes) -> str:
    return bytes(b).hex()


def unhb(s: Any, name: str = "value") -> bytes:
    if not isinstance(s, str) or not _HEXBYTES.match(s):
        raise ParameterError(f"{name}: expected hex byte string")
    return bytes.fromhex(s)


def field(body: Any, name: str) -> Any:
    if not isinstance(body, dict) or name not in body:
        raise ParameterError(f"missing field {name!r}")
    return body[name]


def _ints(body: dict, names: tuple[str, ...]) -> list[int]:
    return [unh(field(body, n), n) for n in names]


def key_to_wire(pub: PublicKey) -> dict:
    return {"p": h(pub.p), "q": h(pub.q), "g": h(pub.g), "h": h(pub.h), "y": h(pub.y), "z": h(pub.z)}


def key_from_wire(body: dict) -> PublicKey:
    p, q, g, hh, y, z = _ints(body, ("p", "q", "g", "h", "y", "z"))
    return PublicKey(GroupParams(p, q, g), hh, y, z)


def _p(params: Optional[GroupParams]) -> Optional[int]:
    return params.p if params is not None else None


def _q(params: Optional[GroupParams]) -> Optional[int]:
    return params.q if params is not None else None


def scalar(x: int, params: Optional[GroupParams] = None) -> Any:
    return h(x, _q(params))


def challenge_to_wire(c: Challenge, params: Optional[GroupParams] = None) -> dict:
    p = _p(params)
    return {"rnd": hb(c.rnd), "a": h(c.a, p), "b1": h(c.b1, p), "b2": h(c.b2, p)}


def challenge_from_wire(body: dict) -> Challenge:
    a, b1, b2 = _ints(body, ("a", "b1", "b2"))
    return Challenge(unhb(field(body, "rnd"), "rnd"), a, b1, b2)


_PROOF = ("r", "c", "s1", "s2", "d")


def proof_to_wire(p: Proof, params: Optional[GroupParams] = None) -> dict:
    return {k: h(getattr(p, k), _q(params)) for k in _PROOF}


def proof_from_wire(body: dict) -> Proof:
    return Proof(*_ints(body, _PROOF))


_SIG = ("zeta", "zeta1", "rho", "omega", "sigma1", "sigma2", "delta", "mu")


def sig_to_wire(s: BlindSignature, params: Optional[GroupParams] = None) -> dict:
    out = {k: h(getattr(s, k), _p(params)) for k in _SIG[:2]}
    out.update({k: h(getattr(s, k), _q(params)) for k in _SIG[2:]})
    return out


def sig_from_wire(body: dict) -> BlindSignature:
    return BlindSignature(*_ints(body, _SIG))


_TRANSCRIPT = ("a", "b1", "b2", "e", "r", "c", "s1", "s2", "d")


def transcript_to_wire(t: Transcript, params: Optional[GroupParams] = None) -> dict:
    out = {"rnd": hb(t.rnd)}
    out.update({k: h(getattr(t, k), _p(params)) for k in _TRANSCRIPT[:3]})
    out.update({k: h(getattr(t, k), _q(params)) for k in _TRANSCRIPT[3:]})
    return out


def transcript_from_wire(body: dict) -> Transcript:
    return Transcript(unhb(field(body, "rnd"), "rnd"), *_ints(body, _TRANSCRIPT))


def ownership_to_wire(p: OwnershipProof, params: Optional[GroupParams] = None) -> dict:
    return {"c": h(p.c, _q(params)), "s": h(p.s, _q(params))}


def ownership_from_wire(body: dict) -> OwnershipProof:
    return OwnershipProof(*_ints(body, ("c", "s")))
