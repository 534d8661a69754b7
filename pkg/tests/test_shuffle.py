import numpy as np
import pytest

from harness import make_ctxs, run_parties
from mpso import dealer, gf
from mpso.dealer import LANE_FIELD, LANE_RING
from mpso.prg import Prg
from mpso.shuffle import mshuffle


def _composed(stores, m, idx, code, n):
    perm = np.arange(n)
    for i in range(1, m + 1):
        perm = perm[stores[i].pools[(dealer.SHUFFLE, idx, code)][f"perm{i}"].astype(np.int64)]
    return perm


@pytest.mark.parametrize("m", [2, 3, 5])
@pytest.mark.parametrize("code", [LANE_FIELD, LANE_RING])
def test_shuffle_permutes_secret(m, code):
    n, k = 50, 64
    plan = dealer.Plan(m, k)
    plan.shuffle(n, (code,))
    ctxs, net, stores = make_ctxs(m, plan, k=k)
    lane = gf.Lane(gf.field(k) if code == LANE_FIELD else None)
    g = Prg(m, "shuffle-test")
    shares = [lane.rand(g, n) for _ in range(m)]
    secret = lane.zeros(n)
    for s in shares:
        secret = lane.add(secret, s)

    out = run_parties(ctxs, net, lambda c: mshuffle(c, shares[c.pid - 1], c.store.take_shuffle(0, code), lane, code))
    got = lane.zeros(n)
    for s in out:
        got = lane.add(got, s)
    perm = _composed(stores, m, 0, code, n)
    assert (got == secret[perm]).all()
    assert not (perm == np.arange(n)).all()
    # every output share is fresh
    for before, after in zip(shares, out):
        assert not (before == after).all()


def test_two_lanes_share_one_permutation():
    m, n = 3, 40
    plan = dealer.Plan(m, 64)
    plan.shuffle(n, (LANE_FIELD, LANE_RING))
    _, _, stores = make_ctxs(m, plan)
    assert (_composed(stores, m, 0, LANE_FIELD, n) == _composed(stores, m, 0, LANE_RING, n)).all()


def test_rounds_and_traffic():
    m, n = 3, 20
    plan = dealer.Plan(m, 64)
    plan.shuffle(n)
    ctxs, net, _ = make_ctxs(m, plan)
    F = gf.field(64)
    run_parties(ctxs, net, lambda c: mshuffle(c, F.zeros(n), c.store.take_shuffle(0, LANE_FIELD), gf.Lane(F)))
    for c in ctxs:
        sent = [e for e in c.net.log if e[0] == "S"]
        # one message per round in which this party is not the permuter
        assert [e[3] for e in sent] == [i for i in range(1, m + 1) if i != c.pid]
