"""The signed token payload and the token identifier."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .blindsig import BlindSignature, int_to_bytes
from .errors import ParameterError

VERSION = 1
UNIT = 1


@dataclass(frozen=True)
class TokenMessage:
    X: int
    value: int
    interval: int
    issuer: str

    def encode(self) -> bytes:
        x = int_to_bytes(self.X)
        issuer = self.issuer.encode()
        return (struct.pack(">BH", VERSION, len(x)) + x
                + struct.pack(">IQH", self.value, self.interval, len(issuer)) + issuer)

    @classmethod
    def decode(cls, raw: bytes) -> "TokenMessage":
        try:
            version, xlen = struct.unpack_from(">BH", raw, 0)
            if version != VERSION:
                raise ParameterError(f"unsupported token message version {version}")
            off = 3
            X = int.from_bytes(raw[off:off + xlen], "big")
            off += xlen
            value, interval, ilen = struct.unpack_from(">IQH", raw, off)
            off += 14
            issuer = raw[off:off + ilen].decode()
            if off + ilen != len(raw) or xlen == 0:
                raise ParameterError("token message has wrong length")
        except (struct.error, UnicodeDecodeError) as exc:
            raise ParameterError(f"malformed token message: {exc}") from None
        return cls(X, value, interval, issuer)


def token_id(sig: BlindSignature) -> bytes:
    return sig.digest()


def session_tag(sig: BlindSignature) -> bytes:
    """Journey key at the Service: digest of the unblinded AP(y)."""
    return hashlib.sha256(b"TAG" + sig.digest()).digest()
