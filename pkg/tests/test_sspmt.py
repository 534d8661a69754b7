import numpy as np
import pytest

from harness import make_ctxs, run_parties, tables
from mpso import dealer
from mpso.formula import num_bins
from mpso.sspmt import and_tree, bsspmt_receiver, bsspmt_sender, sspeqt, sspeqt_budget, words_to_bits


def _truth(cuckoo, simple):
    return np.array([item is not None and item in simple.bins[b] for b, item in enumerate(cuckoo.bins)])


@pytest.mark.parametrize("oprf", ["group", "ideal"])
def test_bsspmt_matches_membership(oprf):
    n, gamma = 128, 48
    plan = dealer.Plan(2, 64)
    plan.bits(1, 2, sspeqt_budget(num_bins(n), gamma))
    ctxs, net, _ = make_ctxs(2, plan, n=n, oprf=oprf)
    X = list(range(0, 2 * n, 2))  # receiver (party 2)
    Y = list(range(0, 3 * n // 2, 3))  # sender (party 1)
    cuckoo, simple = tables(ctxs, [Y, X], pivots=[2])

    def body(ctx):
        if ctx.pid == 1:
            return bsspmt_sender(ctx, 2, simple[1], gamma)
        return bsspmt_receiver(ctx, 1, cuckoo[2], gamma)

    e_s, e_r = run_parties(ctxs, net, body)
    got = (e_s ^ e_r).astype(bool)
    want = _truth(cuckoo[2], simple[1])
    assert (got == want).all()
    assert want.sum() == len(set(X) & set(Y))
    # no bin is reported for an empty receiver bin
    occupied = np.array(cuckoo[2].occupied())
    assert not got[~occupied].any()


def test_and_tree_odd_widths():
    rng = np.random.default_rng(7)
    for w in (1, 2, 3, 5, 8, 13):
        rows = 40
        plan = dealer.Plan(2, 64)
        plan.bits(1, 2, rows * max(w - 1, 0) or 1)
        ctxs, net, _ = make_ctxs(2, plan)
        x = rng.integers(0, 2, (rows, w)).astype(np.uint8)
        x[:5] = 1  # ensure some all-ones rows
        s1 = rng.integers(0, 2, (rows, w)).astype(np.uint8)
        s2 = x ^ s1

        def body(ctx):
            t = ctx.store.take_bits(1, 2, rows * (w - 1)) if w > 1 else (None, None, None)
            return and_tree(ctx, 3 - ctx.pid, ctx.pid == 1, s1 if ctx.pid == 1 else s2, t)

        a, b = run_parties(ctxs, net, body)
        assert ((a ^ b).astype(bool) == x.all(axis=1)).all()


def test_sspeqt_equal_and_unequal():
    rows, gamma = 64, 20
    rng = np.random.default_rng(1)
    t = rng.integers(0, 1 << gamma, (rows, 1)).astype(np.uint64)
    f = t.copy()
    f[::3] ^= np.uint64(1 << 7)
    plan = dealer.Plan(2, 64)
    plan.bits(1, 2, sspeqt_budget(rows, gamma))
    ctxs, net, _ = make_ctxs(2, plan)

    def body(ctx):
        tr = ctx.store.take_bits(1, 2, sspeqt_budget(rows, gamma))
        return sspeqt(ctx, 3 - ctx.pid, ctx.pid == 1, t if ctx.pid == 1 else f, gamma, tr)

    a, b = run_parties(ctxs, net, body)
    assert ((a ^ b).astype(bool) == (t == f)[:, 0]).all()
    # rounds: one per tree layer
    layers = {e[3] for e in ctxs[0].net.log if e[2] == "GMW"}
    assert len(layers) == (gamma - 1).bit_length()


def test_words_to_bits():
    arr = np.array([[0b1011, 1 << 63]], dtype=np.uint64)
    bits = words_to_bits(arr, 128)
    assert bits[0, :4].tolist() == [1, 1, 0, 1]
    assert bits[0, 127] == 1 and bits[0].sum() == 4
    assert words_to_bits(arr, 3).shape == (1, 3)
