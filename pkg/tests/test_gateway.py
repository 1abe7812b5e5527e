import dataclasses
import random

import pytest
from hypothesis import given, strategies as st

from helpers import creds, present
from tokenfare import blindsig
from tokenfare.errors import Denied, DoubleSpend, LedgerUnavailable, ParameterError, ReplayError
from tokenfare.gateway import Credential, SpentCache
from tokenfare.ledger import TokenState
from tokenfare.tokens import TokenMessage


def fresh(stack, n=1):
    wallet = stack.wallet()
    return wallet, wallet.acquire_tokens(stack.cp_client(), n)


def tid(token):
    return bytes.fromhex(token.token_id)


def test_entry_escrows_on_ledger_and_cache(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack, 2)
    proof = present(stack, ap, "entry", toks, None)
    assert isinstance(proof, blindsig.Proof)
    for t in toks:
        assert stack.ledger.query_token_state(tid(t)) is TokenState.ESCROWED
        assert ap.cache.state(tid(t)) is TokenState.ESCROWED
    assert len(ap.escrows) == 1


def test_entry_rejects_reused_token(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack)
    present(stack, ap, "entry", toks, None)
    with pytest.raises(Denied):
        present(stack, ap, "entry", toks, None)


def test_entry_rejects_wrong_ownership_challenge(stack):
    _, toks = fresh(stack)
    with pytest.raises(Denied):
        present(stack, stack.aps[0], "entry", toks, None, challenge_override=b"stale")
    assert stack.ledger.query_token_state(tid(toks[0])) is TokenState.FRESH


def test_entry_rejects_bad_credential(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack)
    forged = dataclasses.replace(toks[0], credential=dataclasses.replace(toks[0].credential,
                                                                         rho=toks[0].credential.rho ^ 1))
    with pytest.raises(Denied):
        present(stack, ap, "entry", [forged], None)


def test_entry_rejects_non_unit_value(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack)
    t = toks[0]
    msg = TokenMessage.decode(t.message)
    big = TokenMessage(msg.X, 5, msg.interval, msg.issuer).encode()
    sig = blindsig.sign_blind(stack.cp.interval_key(msg.interval).key, big)
    with pytest.raises(Denied, match="unit"):
        present(stack, ap, "entry", [dataclasses.replace(t, message=big, credential=sig)], None)


def test_entry_rejects_unknown_issuer(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack)
    msg = TokenMessage.decode(toks[0].message)
    other = TokenMessage(msg.X, 1, msg.interval, "mallory").encode()
    with pytest.raises(Denied, match="untrusted"):
        present(stack, ap, "entry", [dataclasses.replace(toks[0], message=other)], None)


def test_required_units(make_stack):
    s = make_stack(required_units=2, max_fare=2)
    _, toks = fresh(s, 2)
    with pytest.raises(Denied, match="units"):
        present(s, s.aps[0], "entry", toks[:1], None)
    present(s, s.aps[0], "entry", toks, None)


def test_duplicate_token_in_vector(stack):
    _, toks = fresh(stack)
    with pytest.raises(ParameterError):
        present(stack, stack.aps[0], "entry", toks * 2, None)


def test_session_is_single_use_and_purpose_bound(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack)
    session = ap.open_session("exit")
    proofs = [blindsig.prove_ownership(stack.params, toks[0].ownership, session.owner_challenge)]
    with pytest.raises(Denied, match="opened for exit"):
        ap.entry(session.session_id, creds(toks), proofs, 1)
    with pytest.raises(ReplayError):
        ap.entry(session.session_id, creds(toks), proofs, 1)
    with pytest.raises(ParameterError):
        ap.open_session("browse")


def test_expired_challenge(stack):
    ap = stack.aps[0]
    now = [1000.0]
    ap.clock = lambda: now[0]
    _, toks = fresh(stack)
    session = ap.open_session("entry")
    now[0] += ap.challenge_ttl + 1
    proofs = [blindsig.prove_ownership(stack.params, toks[0].ownership, session.owner_challenge)]
    with pytest.raises(Denied, match="expired"):
        ap.entry(session.session_id, creds(toks), proofs, 1)


def test_exit_needs_escrow_then_spends_once(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack)
    with pytest.raises(Denied, match="never escrowed"):
        present(stack, ap, "exit", toks, None)
    present(stack, ap, "entry", toks, None)
    present(stack, ap, "exit", toks, None)
    assert stack.ledger.query_token_state(tid(toks[0])) is TokenState.SPENT
    assert ap.escrows == {}
    with pytest.raises(DoubleSpend):
        present(stack, ap, "exit", toks, None)


def test_buffered_spend_is_blocked_locally_before_publication(make_stack):
    s = make_stack(publication_period=30.0)
    ap = s.aps[0]
    _, toks = fresh(s)
    present(s, ap, "entry", toks, None)
    present(s, ap, "exit", toks, None)
    assert s.ledger.query_token_state(tid(toks[0])) is TokenState.ESCROWED
    with pytest.raises(DoubleSpend, match="local cache"):
        present(s, ap, "exit", toks, None)
    assert ap.publish_spends() == 1
    assert s.ledger.query_token_state(tid(toks[0])) is TokenState.SPENT


def test_cross_ap_window_without_sync_is_caught_at_publication(make_stack):
    s = make_stack(n_aps=2, publication_period=30.0)
    ap0, ap1 = s.aps
    _, toks = fresh(s)
    present(s, ap0, "entry", toks, None)
    present(s, ap0, "exit", toks, None)
    # ap1 has not synced and ap0 has not published: the replay gets through ...
    present(s, ap1, "exit", toks, None)
    ap0.publish_spends()
    ap1.publish_spends()
    # ... and is detected when the second finalise reaches the ledger.
    assert ap1.detected_double_spends == [tid(toks[0])]


def test_cross_ap_after_sync_is_rejected(make_stack):
    s = make_stack(n_aps=2, publication_period=30.0)
    ap0, ap1 = s.aps
    _, toks = fresh(s)
    present(s, ap0, "entry", toks, None)
    present(s, ap0, "exit", toks, None)
    s.sync_aps()
    assert ap1.cache.state(tid(toks[0])) is TokenState.SPENT
    with pytest.raises(DoubleSpend):
        present(s, ap1, "exit", toks, None)


def test_sync_survives_ledger_outage(stack):
    ap = stack.aps[0]
    _, toks = fresh(stack)
    present(stack, ap, "entry", toks, None)
    stack.ledger.available = False
    with pytest.raises(LedgerUnavailable):
        ap.sync_spent_cache()
    assert ap.cache.state(tid(toks[0])) is TokenState.ESCROWED
    stack.ledger.available = True
    assert ap.sync_spent_cache() == 0


def test_sync_counts_new_entries(make_stack):
    s = make_stack(n_aps=2)
    _, toks = fresh(s, 2)
    present(s, s.aps[0], "entry", toks, None)
    assert s.aps[1].sync_spent_cache() == 2
    assert s.aps[1].sync_spent_cache() == 0


def test_serve_proof_block(stack):
    _, toks = fresh(stack, 2)
    stack.publish_all()
    block = stack.aps[0].serve_proof_block("cp", toks[0].interval)
    assert len(block.proofs) == 2


STATES = st.sampled_from([TokenState.FRESH, TokenState.ESCROWED, TokenState.SPENT])
ORDER = {TokenState.FRESH: 0, TokenState.ESCROWED: 1, TokenState.SPENT: 2}


@given(st.lists(STATES, max_size=20))
def test_spent_cache_never_regresses(updates):
    cache = SpentCache()
    prev = TokenState.FRESH
    for state in updates:
        cache.update(b"t", state)
        now = cache.state(b"t")
        assert ORDER[now] >= ORDER[prev]
        prev = now
    if TokenState.SPENT in updates:
        assert cache.state(b"t") is TokenState.SPENT
