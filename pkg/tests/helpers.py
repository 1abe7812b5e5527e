"""Shared builders for actor-level tests."""

import secrets

from tokenfare import blindsig
from tokenfare.gateway import Credential


def creds(tokens):
    return [Credential(t.credential, t.message) for t in tokens]


def present(stack, ap, purpose, tokens, wallet, challenge_override=None):
    """Open an AP session and submit ``tokens`` directly to the AP object."""
    session = ap.open_session(purpose)
    owner_ch = challenge_override or session.owner_challenge
    proofs = [blindsig.prove_ownership(stack.params, t.ownership, owner_ch) for t in tokens]
    _, e = blindsig.user_blind(ap.public, secrets.token_bytes(8), session.signer.challenge)
    submit = ap.entry if purpose == "entry" else ap.exit
    return submit(session.session_id, creds(tokens), proofs, e)
