"""Abe's three-move blind signature over a prime-order subgroup of Z*_p.

Signer and user each keep a small session object between moves::

    >>> params = generate_group(64, rng=random.Random(1))
    >>> key = keygen(params, rng=random.Random(2))
    >>> signer, challenge = signer_initial_challenge(key)
    >>> user, e = user_blind(key.public, b"hello", challenge)
    >>> sig = user_unblind(user, signer_respond(signer, e))
    >>> verify(key.public, b"hello", sig)
    True

The module also carries a Schnorr identification proof used to show
ownership of a token key, and a public check of a signer transcript which
is what proof blocks on the ledger contain.
"""

from __future__ import annotations

import hashlib
import random
import secrets
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import gmpy2

from .errors import InvalidProof, ParameterError, ProtocolAbort, ReplayError

MIN_BITS = 16
RND_BYTES = 32

Rng = Union[random.Random, secrets.SystemRandom]
_system_rng = secrets.SystemRandom()


def _rng(rng: Optional[Rng]) -> Rng:
    return _system_rng if rng is None else rng


def int_to_bytes(x: int) -> bytes:
    return x.to_bytes(max(1, (x.bit_length() + 7) // 8), "big")


def encode(*parts: Union[int, bytes, str]) -> bytes:
    """Length-prefixed big-endian concatenation used for every hash input."""
    out = bytearray()
    for part in parts:
        if isinstance(part, int):
            if part < 0:
                raise ParameterError("cannot encode negative integer")
            raw = int_to_bytes(part)
        elif isinstance(part, str):
            raw = part.encode()
        else:
            raw = bytes(part)
        out += struct.pack(">I", len(raw))
        out += raw
    return bytes(out)


def _sha256(*chunks: bytes) -> bytes:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk)
    return h.digest()


# -- group and keys ---------------------------------------------------------


@dataclass(frozen=True)
class GroupParams:
    p: int
    q: int
    g: int

    @property
    def n(self) -> int:
        return self.q.bit_length()

    def in_group(self, v: int) -> bool:
        return 0 < v < self.p and pow(v, self.q, self.p) == 1

    def validate(self) -> None:
        if (self.p - 1) % self.q:
            raise ParameterError("q does not divide p-1")
        if not (gmpy2.is_prime(self.p) and gmpy2.is_prime(self.q)):
            raise ParameterError("p or q is not prime")
        if self.g in (0, 1) or not self.in_group(self.g):
            raise ParameterError("g does not have order q")


def generate_group(n: int, rng: Optional[Rng] = None) -> GroupParams:
    """Return (p, q, g) with an n-bit prime q dividing p-1 and g of order q."""
    if n < MIN_BITS:
        raise ParameterError(f"security parameter must be >= {MIN_BITS} bits, got {n}")
    rng = _rng(rng)
    while True:
        start = rng.getrandbits(n) | (1 << (n - 1))
        q = int(gmpy2.next_prime(start))
        if q.bit_length() == n:
            break
    k = 2
    while not gmpy2.is_prime(k * q + 1):
        k += 2
    p = k * q + 1
    while True:
        g = pow(rng.randrange(2, p - 1), k, p)
        if g != 1:
            return GroupParams(p, q, g)


@dataclass(frozen=True)
class PublicKey:
    """The signer's published 6-tuple (p, q, g, h, y, z)."""

    params: GroupParams
    h: int
    y: int
    z: int

    @property
    def p(self) -> int:
        return self.params.p

    @property
    def q(self) -> int:
        return self.params.q

    @property
    def g(self) -> int:
        return self.params.g

    def fingerprint(self) -> bytes:
        return _sha256(b"KEY", encode(self.p, self.q, self.g, self.h, self.y, self.z))


@dataclass(frozen=True)
class SignerKeyPair:
    params: GroupParams
    h: int
    x_sk: int = field(repr=False)
    y: int
    z: int

    @property
    def public(self) -> PublicKey:
        return PublicKey(self.params, self.h, self.y, self.z)


def hash_to_group(params: GroupParams, tag: str, data: bytes) -> int:
    """H1/H2: hash into <g> by clearing the cofactor (p-1)/q."""
    if tag not in ("H1", "H2"):
        raise ParameterError(f"unknown group hash tag {tag!r}")
    cofactor = (params.p - 1) // params.q
    counter = 0
    while True:
        digest = _sha256(encode(tag, counter, data))
        v = pow(int.from_bytes(digest, "big") % params.p, cofactor, params.p)
        if v > 1:
            return v
        counter += 1


def hash_to_scalar(params: GroupParams, data: bytes, tag: str = "H3") -> int:
    """H3: hash into Z_q, expanded to bits(q)+128 bits before reduction."""
    need = (params.q.bit_length() + 128 + 7) // 8
    out = b""
    counter = 0
    while len(out) < need:
        out += _sha256(encode(tag, counter, data))
        counter += 1
    return int.from_bytes(out[:need], "big") % params.q


def keygen(params: GroupParams, rng: Optional[Rng] = None, x_sk: Optional[int] = None) -> SignerKeyPair:
    rng = _rng(rng)
    p, q, g = params.p, params.q, params.g
    while True:
        w = rng.randrange(1, q)
        h = pow(g, w, p)
        if h == 1:
            continue
        x = rng.randrange(q) if x_sk is None else x_sk % q
        y = pow(g, x, p)
        z = hash_to_group(params, "H1", encode(p, q, g, h, y))
        if z != 1:
            return SignerKeyPair(params, h, x, y, z)


def _z1(pub: PublicKey, rnd: bytes) -> int:
    return hash_to_group(pub.params, "H2", encode(pub.fingerprint(), rnd))


def _inv(v: int, p: int) -> int:
    return pow(v, -1, p)


def _h3(pub: PublicKey, zeta, zeta1, alpha, beta1, beta2, eta, m: bytes) -> int:
    return hash_to_scalar(pub.params, encode(zeta, zeta1, alpha, beta1, beta2, eta, m))


# -- protocol messages ------------------------------------------------------


@dataclass(frozen=True)
class Challenge:
    """Move (2): the signer's commitment."""

    rnd: bytes
    a: int
    b1: int
    b2: int


@dataclass(frozen=True)
class Proof:
    """Move (4): the signer's response."""

    r: int
    c: int
    s1: int
    s2: int
    d: int


@dataclass(frozen=True)
class BlindSignature:
    zeta: int
    zeta1: int
    rho: int
    omega: int
    sigma1: int
    sigma2: int
    delta: int
    mu: int

    def as_tuple(self) -> tuple[int, ...]:
        return (self.zeta, self.zeta1, self.rho, self.omega,
                self.sigma1, self.sigma2, self.delta, self.mu)

    def digest(self) -> bytes:
        return _sha256(b"SIG", encode(*self.as_tuple()))


@dataclass(frozen=True)
class Transcript:
    """Everything the signer saw during one run: what proof blocks publish."""

    rnd: bytes
    a: int
    b1: int
    b2: int
    e: int
    r: int
    c: int
    s1: int
    s2: int
    d: int

    @classmethod
    def of(cls, challenge: Challenge, e: int, proof: Proof) -> "Transcript":
        return cls(challenge.rnd, challenge.a, challenge.b1, challenge.b2, e,
                   proof.r, proof.c, proof.s1, proof.s2, proof.d)


@dataclass
class SignerSession:
    key: SignerKeyPair = field(repr=False)
    rnd: bytes
    u: int
    s1: int
    s2: int
    d: int
    a: int
    b1: int
    b2: int
    consumed: bool = False

    @property
    def challenge(self) -> Challenge:
        return Challenge(self.rnd, self.a, self.b1, self.b2)


@dataclass
class UserBlindingSession:
    pub: PublicKey
    m: bytes
    challenge: Challenge
    z1: int
    gamma: int
    zeta: int
    zeta1: int
    zeta2: int
    t: tuple[int, int, int, int, int]
    tau: int
    alpha: int
    beta1: int
    beta2: int
    eta: int
    epsilon: int
    e: int


def signer_initial_challenge(key: SignerKeyPair, rng: Optional[Rng] = None) -> tuple[SignerSession, Challenge]:
    rng = _rng(rng)
    p, q, g = key.params.p, key.params.q, key.params.g
    rnd = rng.randbytes(RND_BYTES)
    z1 = _z1(key.public, rnd)
    z2 = key.z * _inv(z1, p) % p
    u, s1, s2, d = (rng.randrange(q) for _ in range(4))
    a = pow(g, u, p)
    b1 = pow(g, s1, p) * pow(z1, d, p) % p
    b2 = pow(key.h, s2, p) * pow(z2, d, p) % p
    session = SignerSession(key, rnd, u, s1, s2, d, a, b1, b2)
    return session, session.challenge


def user_blind(pub: PublicKey, m: bytes, challenge: Challenge,
               rng: Optional[Rng] = None) -> tuple[UserBlindingSession, int]:
    rng = _rng(rng)
    params = pub.params
    p, q, g = params.p, params.q, params.g
    if not isinstance(challenge.rnd, (bytes, bytearray)) or not challenge.rnd:
        raise ProtocolAbort("challenge rnd must be a non-empty bitstring")
    for name in ("a", "b1", "b2"):
        if not params.in_group(getattr(challenge, name)):
            raise ProtocolAbort(f"challenge element {name} is not in <g>")
    z1 = _z1(pub, challenge.rnd)
    gamma = rng.randrange(1, q)
    zeta = pow(pub.z, gamma, p)
    zeta1 = pow(z1, gamma, p)
    zeta2 = zeta * _inv(zeta1, p) % p
    t1, t2, t3, t4, t5 = (rng.randrange(q) for _ in range(5))
    alpha = challenge.a * pow(g, t1, p) * pow(pub.y, t2, p) % p
    beta1 = pow(challenge.b1, gamma, p) * pow(g, t3, p) * pow(zeta1, t4, p) % p
    # h^t5 here, not h^t2: sigma2 = gamma*s2 + t5 needs it to close the check.
    beta2 = pow(challenge.b2, gamma, p) * pow(pub.h, t5, p) * pow(zeta2, t4, p) % p
    tau = rng.randrange(q)
    eta = pow(pub.z, tau, p)
    epsilon = _h3(pub, zeta, zeta1, alpha, beta1, beta2, eta, m)
    e = (epsilon - t2 - t4) % q
    session = UserBlindingSession(pub, bytes(m), challenge, z1, gamma, zeta, zeta1, zeta2,
                                  (t1, t2, t3, t4, t5), tau, alpha, beta1, beta2, eta, epsilon, e)
    return session, e


def signer_respond(session: SignerSession, e: int) -> Proof:
    q = session.key.params.q
    if session.consumed:
        raise ReplayError("signer session already answered a challenge")
    if not isinstance(e, int) or not 0 <= e < q:
        raise ParameterError("challenge-response e out of range")
    session.consumed = True
    c = (e - session.d) % q
    r = (session.u - c * session.key.x_sk) % q
    return Proof(r, c, session.s1, session.s2, session.d)


def user_unblind(session: UserBlindingSession, proof: Proof,
                 pub: Optional[PublicKey] = None, m: Optional[bytes] = None) -> BlindSignature:
    if pub is not None and pub != session.pub:
        raise ParameterError("blinding session belongs to a different key")
    if m is not None and bytes(m) != session.m:
        raise ParameterError("blinding session was opened for a different message")
    q = session.pub.q
    t1, t2, t3, t4, t5 = session.t
    for v in (proof.r, proof.c, proof.s1, proof.s2, proof.d):
        if not isinstance(v, int) or not 0 <= v < q:
            raise InvalidProof("proof scalar out of range")
    rho = (proof.r + t1) % q
    omega = (proof.c + t2) % q
    sigma1 = (session.gamma * proof.s1 + t3) % q
    sigma2 = (session.gamma * proof.s2 + t5) % q
    delta = (proof.d + t4) % q
    mu = (session.tau - delta * session.gamma) % q
    sig = BlindSignature(session.zeta, session.zeta1, rho, omega, sigma1, sigma2, delta, mu)
    if not verify(session.pub, session.m, sig):
        raise InvalidProof("signer response fails the final check")
    return sig


def signature_hash(pub: PublicKey, m: bytes, sig: BlindSignature) -> int:
    """Right-hand side of the verification congruence."""
    p = pub.p
    zeta2 = sig.zeta * _inv(sig.zeta1, p) % p
    return _h3(
        pub,
        sig.zeta,
        sig.zeta1,
        pow(pub.g, sig.rho, p) * pow(pub.y, sig.omega, p) % p,
        pow(pub.g, sig.sigma1, p) * pow(sig.zeta1, sig.delta, p) % p,
        pow(pub.h, sig.sigma2, p) * pow(zeta2, sig.delta, p) % p,
        pow(pub.z, sig.mu, p) * pow(sig.zeta, sig.delta, p) % p,
        m,
    )


def verify(pub: PublicKey, m: bytes, sig: BlindSignature) -> bool:
    try:
        q = pub.q
        if not all(isinstance(v, int) for v in sig.as_tuple()):
            return False
        if any(not 0 <= v < q for v in sig.as_tuple()[2:]):
            return False
        if sig.zeta == 1 or not pub.params.in_group(sig.zeta) or not pub.params.in_group(sig.zeta1):
            return False
        return (sig.omega + sig.delta) % q == signature_hash(pub, bytes(m), sig)
    except (TypeError, ValueError, AttributeError):
        return False


def verify_transcript(pub: PublicKey, t: Transcript) -> bool:
    """Publicly check a signer transcript against a key (no secret needed)."""
    try:
        params = pub.params
        p, q, g = params.p, params.q, params.g
        if not all(params.in_group(v) for v in (t.a, t.b1, t.b2)):
            return False
        if any(not 0 <= v < q for v in (t.e, t.r, t.c, t.s1, t.s2, t.d)):
            return False
        if (t.c + t.d) % q != t.e:
            return False
        z1 = _z1(pub, t.rnd)
        z2 = pub.z * _inv(z1, p) % p
        return (pow(g, t.r, p) * pow(pub.y, t.c, p) % p == t.a
                and pow(g, t.s1, p) * pow(z1, t.d, p) % p == t.b1
                and pow(pub.h, t.s2, p) * pow(z2, t.d, p) % p == t.b2)
    except (TypeError, ValueError, AttributeError):
        return False


def sign_blind(key: SignerKeyPair, m: bytes, rng: Optional[Rng] = None) -> BlindSignature:
    """Run both sides of the protocol in-process."""
    signer, challenge = signer_initial_challenge(key, rng)
    user, e = user_blind(key.public, m, challenge, rng)
    return user_unblind(user, signer_respond(signer, e))


# -- token ownership --------------------------------------------------------


@dataclass(frozen=True)
class OwnershipKeyPair:
    x_star: int = field(repr=False)
    X: int


@dataclass(frozen=True)
class OwnershipProof:
    c: int
    s: int


def ownership_keygen(params: GroupParams, rng: Optional[Rng] = None) -> OwnershipKeyPair:
    x = _rng(rng).randrange(1, params.q)
    return OwnershipKeyPair(x, pow(params.g, x, params.p))


def _ownership_challenge(params: GroupParams, X: int, commitment: int, challenge: bytes) -> int:
    return hash_to_scalar(params, encode(X, commitment, challenge), tag="OWN")


def prove_ownership(params: GroupParams, owner: OwnershipKeyPair, challenge: bytes,
                    rng: Optional[Rng] = None) -> OwnershipProof:
    k = _rng(rng).randrange(1, params.q)
    t = pow(params.g, k, params.p)
    c = _ownership_challenge(params, owner.X, t, challenge)
    return OwnershipProof(c, (k + c * owner.x_star) % params.q)


def verify_ownership(params: GroupParams, X: int, challenge: bytes, proof: OwnershipProof) -> bool:
    try:
        p, q = params.p, params.q
        if not params.in_group(X) or not (0 <= proof.c < q and 0 <= proof.s < q):
            return False
        t = pow(params.g, proof.s, p) * pow(X, q - proof.c, p) % p
        return _ownership_challenge(params, X, t, challenge) == proof.c
    except (TypeError, ValueError, AttributeError):
        return False


# -- test vectors -----------------------------------------------------------

VECTOR_FIELDS = (
    "p", "q", "g", "h", "x_sk", "y", "z", "m",
    "rnd", "u", "s1", "s2", "d",
    "gamma", "t1", "t2", "t3", "t4", "t5", "tau", "e",
    "r", "c",
    "zeta", "zeta1", "rho", "omega", "sigma1", "sigma2", "delta", "mu",
)


def transcript_vectors(count: int, bits: int, seed: int) -> Iterable[dict[str, int]]:
    rng = random.Random(seed)
    params = generate_group(bits, rng)
    key = keygen(params, rng)
    for _ in range(count):
        m = rng.randbytes(rng.randrange(1, 48))
        signer, challenge = signer_initial_challenge(key, rng)
        user, e = user_blind(key.public, m, challenge, rng)
        proof = signer_respond(signer, e)
        sig = user_unblind(user, proof)
        t1, t2, t3, t4, t5 = user.t
        yield {
            "p": params.p, "q": params.q, "g": params.g, "h": key.h, "x_sk": key.x_sk,
            "y": key.y, "z": key.z, "m": int.from_bytes(b"\x01" + m, "big"),
            "rnd": int.from_bytes(challenge.rnd, "big"),
            "u": signer.u, "s1": signer.s1, "s2": signer.s2, "d": signer.d,
            "gamma": user.gamma, "t1": t1, "t2": t2, "t3": t3, "t4": t4, "t5": t5,
            "tau": user.tau, "e": e, "r": proof.r, "c": proof.c,
            "zeta": sig.zeta, "zeta1": sig.zeta1, "rho": sig.rho, "omega": sig.omega,
            "sigma1": sig.sigma1, "sigma2": sig.sigma2, "delta": sig.delta, "mu": sig.mu,
        }


def export_test_vectors(path, count: int = 10, bits: int = 64, seed: int = 0) -> int:
    """Write one tab-separated record per line, integers in lowercase hex.

    ``m`` is stored with a leading 0x01 byte so empty and zero-prefixed
    messages survive the integer encoding; ``rnd`` is exactly 32 bytes.
    """
    n = 0
    with open(path, "w") as fh:
        fh.write("#" + "\t".join(VECTOR_FIELDS) + "\n")
        for rec in transcript_vectors(count, bits, seed):
            fh.write("\t".join(format(rec[k], "x") for k in VECTOR_FIELDS) + "\n")
            n += 1
    return n


def load_test_vectors(path) -> list[dict[str, int]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            values = line.rstrip("\n").split("\t")
            if len(values) != len(VECTOR_FIELDS):
                raise ParameterError(f"expected {len(VECTOR_FIELDS)} fields, got {len(values)}")
            out.append({k: int(v, 16) for k, v in zip(VECTOR_FIELDS, values)})
    return out


def vector_message(rec: dict[str, int]) -> bytes:
    raw = int_to_bytes(rec["m"])
    return raw[1:]


def vector_rnd(rec: dict[str, int]) -> bytes:
    return rec["rnd"].to_bytes(RND_BYTES, "big")
