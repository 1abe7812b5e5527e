import random

import pytest

from tokenfare import blindsig
from tokenfare.errors import Denied, DoubleSpend, ParameterError
from tokenfare.fareservice import Direction, FareService, FareTable, JourneyState, session_tag
from tokenfare.ledger import Ledger


def test_flat_table_rebates():
    t = FareTable.flat(["A", "B"], 1, 3)
    assert t.fare("A", "B") == 1
    assert t.rebate("A", "B") == 2


def test_table_validation():
    with pytest.raises(ParameterError, match="not total"):
        FareTable({("A", "B"): 1}, 2).validate()
    with pytest.raises(ParameterError, match="outside"):
        FareTable.flat(["A"], 3, 2)
    with pytest.raises(ParameterError):
        FareTable.flat(["A"], 1, 1).fare("A", "Z")


def test_csv_table(tmp_path):
    p = tmp_path / "fares.csv"
    p.write_text("entry,exit,fare\nA,A,0\nA,B,2\nB,A,2\nB,B,0\n")
    t = FareTable.load_csv(p, 2)
    assert t.rebate("A", "A") == 2 and t.rebate("A", "B") == 0
    p.write_text("from,to,price\nA,B,1\n")
    with pytest.raises(ParameterError, match="header"):
        FareTable.load_csv(p, 2)
    p.write_text("entry,exit,fare\nA,B,x\n")
    with pytest.raises(ParameterError, match=":2:"):
        FareTable.load_csv(p, 2)


@pytest.fixture
def svc(params64):
    rng = random.Random(3)
    ap_key = blindsig.keygen(params64, rng)
    service = FareService("svc", FareTable.flat(["A", "B"], 1, 2), {"ap0": ap_key.public},
                          Ledger(), params64, rng=rng)
    return service, ap_key


def test_nonce_rules(svc):
    service, _ = svc
    with pytest.raises(ParameterError):
        service.issue_nonce(Direction.ENTRY, "Z")
    with pytest.raises(ValueError):
        service.issue_nonce("SIDEWAYS", "A")
    y = service.issue_nonce(Direction.ENTRY, "A")
    assert len(y.nonce) == 32 and service.is_pending(y.nonce)
    assert service.issue_nonce(Direction.ENTRY, "A").nonce != y.nonce


def test_admit_consumes_nonce_and_checks_ap(svc):
    service, ap_key = svc
    y = service.issue_nonce(Direction.ENTRY, "A")
    bogus = blindsig.sign_blind(blindsig.keygen(ap_key.params, random.Random(9)), y.nonce)
    with pytest.raises(Denied, match="trusted"):
        service.admit_entry("ap0", bogus, y.nonce)
    # the nonce is gone even though the signature failed
    with pytest.raises(Denied, match="nonce"):
        service.admit_entry("ap0", blindsig.sign_blind(ap_key, y.nonce), y.nonce)
    z = service.issue_nonce(Direction.EXIT, "A")
    with pytest.raises(Denied, match="nonce"):
        service.admit_entry("ap0", blindsig.sign_blind(ap_key, z.nonce), z.nonce)


def test_journey_lifecycle(svc):
    service, ap_key = svc
    y = service.issue_nonce(Direction.ENTRY, "A")
    sig_y = blindsig.sign_blind(ap_key, y.nonce)
    session = service.admit_entry("ap0", sig_y, y.nonce)
    assert session.state is JourneyState.OPEN and session.entry_tag == session_tag(sig_y)

    z, rebate, amount = service.finish(sig_y, "B")
    assert amount == 1 and len(rebate.challenges) == 1
    with pytest.raises(DoubleSpend):
        service.finish(sig_y, "B")

    sig_z = blindsig.sign_blind(ap_key, z.nonce)
    with pytest.raises(ParameterError, match="expected 1"):
        service.settle_exit("ap0", sig_z, z.nonce, [])
    sess, e = blindsig.user_blind(service.rebates.public_key(rebate.interval), b"r", rebate.challenges[0])
    (proof,) = service.settle_exit("ap0", sig_z, z.nonce, [e])
    assert blindsig.verify(service.rebates.public_key(rebate.interval), b"r", blindsig.user_unblind(sess, proof))
    assert service.journey(session.entry_tag).state is JourneyState.CLOSED
    with pytest.raises(Denied):
        service.settle_exit("ap0", sig_z, z.nonce, [e])


def test_finish_unknown_journey(svc):
    service, ap_key = svc
    with pytest.raises(Denied, match="no journey"):
        service.finish(blindsig.sign_blind(ap_key, b"never entered"), "A")


def test_full_fare_has_no_rebate(params64):
    rng = random.Random(4)
    key = blindsig.keygen(params64, rng)
    service = FareService("svc", FareTable.flat(["A"], 2, 2), {"ap0": key.public}, Ledger(), params64, rng=rng)
    y = service.issue_nonce(Direction.ENTRY, "A")
    sig_y = blindsig.sign_blind(key, y.nonce)
    service.admit_entry("ap0", sig_y, y.nonce)
    z, rebate, amount = service.finish(sig_y, "A")
    assert rebate is None and amount == 0
    assert service.settle_exit("ap0", blindsig.sign_blind(key, z.nonce), z.nonce, []) == []


def test_expiry(svc):
    service, ap_key = svc
    now = [0.0]
    service.clock = lambda: now[0]
    y = service.issue_nonce(Direction.ENTRY, "A")
    sig_y = blindsig.sign_blind(ap_key, y.nonce)
    service.admit_entry("ap0", sig_y, y.nonce)
    assert service.expire_journeys() == 0
    now[0] = service.journey_timeout + 1
    assert service.expire_journeys() == 1
    with pytest.raises(DoubleSpend):
        service.finish(sig_y, "A")
