import dataclasses
import pytest

from tokenfare import blindsig
from tokenfare.errors import Discrepancy, DoubleSpend, NotFound, ParameterError
from tokenfare.ledger import ProofRecord, TokenState
from tokenfare.wallet import TokenStatus


def tid(t):
    return bytes.fromhex(t.token_id)


def test_acquire_rejects_bad_count(stack):
    w = stack.wallet()
    for n in (0, -1):
        with pytest.raises(ParameterError):
            w.acquire_tokens(stack.cp_client(), n)
    assert w.tokens == {}


def test_acquire_stores_verified_credentials(stack):
    w = stack.wallet()
    toks = w.acquire_tokens(stack.cp_client(), 3)
    assert len(toks) == 3 and w.balance() == 3
    for t in toks:
        assert t.state is TokenStatus.ISSUED
        assert blindsig.verify(w.key_for(t), t.message, t.credential)


def test_tampered_proof_stores_nothing(stack, monkeypatch):
    w = stack.wallet()
    real = stack.cp.complete_issuance

    def tamper(session, es):
        proofs = real(session, es)
        return [dataclasses.replace(proofs[0], s1=(proofs[0].s1 + 1) % stack.params.q)] + proofs[1:]

    monkeypatch.setattr(stack.cp, "complete_issuance", tamper)
    with pytest.raises(blindsig.InvalidProof):
        w.acquire_tokens(stack.cp_client(), 2)
    assert w.tokens == {}


def test_untrusted_issuer_key(stack):
    w = stack.wallet(trusted_fingerprints={"00" * 32})
    with pytest.raises(Discrepancy):
        w.acquire_tokens(stack.cp_client(), 1)
    assert w.tokens == {}


def test_anonymity_set(stack):
    wallets = [stack.wallet() for _ in range(4)]
    mine = [w.acquire_tokens(stack.cp_client(), 2)[0] for w in wallets]
    stack.publish_all()
    m = wallets[0].verify_anonymity_set(mine[0], stack.ap_client())
    assert m == 8
    assert mine[0].state is TokenStatus.VERIFIED and mine[0].anonymity_set == 8


def test_anonymity_set_unpublished(stack):
    w = stack.wallet()
    (t,) = w.acquire_tokens(stack.cp_client(), 1)
    with pytest.raises(NotFound):
        w.verify_anonymity_set(t, stack.ap_client())


def _doctor(stack, token, change):
    ref = (token.issuer, token.interval)
    block = stack.ledger._blocks[ref]
    stack.ledger._blocks[ref] = dataclasses.replace(block, proofs=change(block.proofs))


def test_anonymity_set_missing_own_proof(stack):
    a, b = stack.wallet(), stack.wallet()
    (mine,) = a.acquire_tokens(stack.cp_client(), 1)
    b.acquire_tokens(stack.cp_client(), 2)
    stack.publish_all()
    _doctor(stack, mine, lambda ps: tuple(p for p in ps if p.transcript != mine.transcript))
    with pytest.raises(Discrepancy, match="missing"):
        a.verify_anonymity_set(mine, stack.ap_client())
    assert mine.state is TokenStatus.ISSUED


def test_anonymity_set_injected_entries(stack):
    w = stack.wallet()
    (mine,) = w.acquire_tokens(stack.cp_client(), 1)
    stack.publish_all()
    good = stack.ledger._blocks[(mine.issuer, mine.interval)].proofs

    # a padded entry that claims the right key but does not verify under it
    t = mine.transcript
    fake = ProofRecord(good[0].key_fingerprint, dataclasses.replace(t, rnd=b"x" * len(t.rnd)))
    _doctor(stack, mine, lambda ps: ps + (fake,))
    with pytest.raises(Discrepancy, match="does not verify"):
        w.verify_anonymity_set(mine, stack.ap_client())

    # an entry from a different signing key
    foreign = ProofRecord(b"\x01" * 32, t)
    _doctor(stack, mine, lambda ps: good + (foreign,))
    with pytest.raises(Discrepancy, match="mixes"):
        w.verify_anonymity_set(mine, stack.ap_client())


def test_journey_with_rebate(make_stack):
    s = make_stack(fare=1, max_fare=2, required_units=2)
    w = s.wallet()
    toks = w.acquire_tokens(s.cp_client(), 2)
    s.publish_all()
    ticket = w.enter(s.service_client(), s.ap_client(), toks, "A")
    assert all(t.state is TokenStatus.ESCROWED for t in toks)
    assert all(t.anonymity_set == 2 for t in toks)
    rebates = w.exit(s.service_client(), s.ap_client(), ticket, "B")
    assert len(rebates) == 1 and rebates[0].issuer == "rebate:svc"
    assert w.balance() == 1
    assert all(s.ledger.query_token_state(tid(t)) is TokenState.SPENT for t in toks)
    with pytest.raises(DoubleSpend):
        w.exit(s.service_client(), s.ap_client(), ticket, "B")


def test_rebate_tokens_are_spendable(make_stack):
    s = make_stack(fare=1, max_fare=2)
    w = s.wallet(verify_after_entry=False)
    (tok,) = w.acquire_tokens(s.cp_client(), 1)
    ticket = w.enter(s.service_client(), s.ap_client(), [tok], "A")
    (rebate,) = w.exit(s.service_client(), s.ap_client(), ticket, "B")
    ticket = w.enter(s.service_client(), s.ap_client(), [rebate], "B")
    assert len(w.exit(s.service_client(), s.ap_client(), ticket, "C")) == 1
    assert s.ledger.query_token_state(tid(rebate)) is TokenState.SPENT


def test_spent_token_refused_before_network(stack):
    w = stack.wallet()
    (tok,) = w.acquire_tokens(stack.cp_client(), 1)
    w.enter(stack.service_client(), stack.ap_client(), [tok], "A")
    calls = []
    svc = stack.service_client(observer=calls.append)
    ap = stack.ap_client(observer=calls.append)
    with pytest.raises(ParameterError, match="(?i)escrowed"):
        w.enter(svc, ap, [tok], "A")
    assert calls == []


def test_only_presented_tokens_change_state(stack):
    w = stack.wallet(verify_after_entry=False)
    toks = w.acquire_tokens(stack.cp_client(), 4)
    w.enter(stack.service_client(), stack.ap_client(), toks[:1], "A")
    assert [t.state for t in toks] == [TokenStatus.ESCROWED] + [TokenStatus.ISSUED] * 3
    for t in toks[1:]:
        assert stack.ledger.query_token_state(tid(t)) is TokenState.FRESH


def test_wallet_matches_ledger(stack):
    w = stack.wallet(verify_after_entry=False)
    toks = w.acquire_tokens(stack.cp_client(), 3)
    t1 = w.enter(stack.service_client(), stack.ap_client(), toks[:1], "A")
    w.enter(stack.service_client(), stack.ap_client(), toks[1:2], "A")
    w.exit(stack.service_client(), stack.ap_client(), t1, "B")
    expect = {TokenStatus.SPENT: TokenState.SPENT, TokenStatus.ESCROWED: TokenState.ESCROWED,
              TokenStatus.ISSUED: TokenState.FRESH}
    for t in toks:
        assert stack.ledger.query_token_state(tid(t)) is expect[t.state]


def test_state_never_regresses(stack):
    w = stack.wallet()
    (t,) = w.acquire_tokens(stack.cp_client(), 1)
    t.advance(TokenStatus.SPENT)
    with pytest.raises(ParameterError):
        t.advance(TokenStatus.ESCROWED)


def test_persistence(stack, tmp_path):
    path = tmp_path / "w.jsonl"
    w = stack.wallet(path)
    toks = w.acquire_tokens(stack.cp_client(), 2)
    ticket = w.enter(stack.service_client(), stack.ap_client(), toks[:1], "A")

    again = stack.wallet(path)
    assert {t.token_id: t.state for t in again.tokens.values()} == {t.token_id: t.state for t in toks}
    assert again.key_for(toks[0]) == w.key_for(toks[0])
    assert again.tokens[toks[1].token_id].ownership == toks[1].ownership
    again.exit(stack.service_client(), stack.ap_client(), again.tickets[ticket.ticket_id], "B")

    again.compact()
    lines = path.read_text().splitlines()
    assert len(lines) == 2 + 1 + 1  # tokens, ticket, key
    assert stack.wallet(path).tickets[ticket.ticket_id].closed


def test_secrets_stay_on_device(stack, monkeypatch):
    sessions = []
    real = blindsig.user_blind

    def spy(*a, **kw):
        s, e = real(*a, **kw)
        sessions.append(s)
        return s, e

    monkeypatch.setattr(blindsig, "user_blind", spy)
    bodies = []
    obs = lambda ex: bodies.append(ex.request_body.decode())
    w = stack.wallet()
    toks = w.acquire_tokens(stack.cp_client(observer=obs), 2)
    ticket = w.enter(stack.service_client(observer=obs), stack.ap_client(observer=obs), toks, "A")
    w.exit(stack.service_client(observer=obs), stack.ap_client(observer=obs), ticket, "B")

    secret = [t.ownership.x_star for t in toks]
    for s in sessions:
        secret += [s.gamma, s.tau, *s.t]
    blob = "\n".join(bodies)
    assert bodies and sessions
    for v in secret:
        assert format(v, "x") not in blob
