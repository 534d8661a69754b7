import numpy as np
import pytest
from scipy.stats import chi2_contingency

from harness import element, make_ctxs, run_parties, tables, xor_all
from mpso import dealer
from mpso.errors import ConfigError
from mpso.formula import In, NotIn, Or, num_bins
from mpso.mzs import bmzs, bpmzs, bpmzsp, bpnmzs
from mpso.sspmt import sspeqt_budget

N = 96
GAMMA = 48
SETS = [set(range(0, 96)), set(range(0, 192, 2)), set(range(0, 288, 3))]


def _pivot_items(cuckoo):
    return [None if it is None else int.from_bytes(it[:-1], "big") for it in cuckoo.bins]


def _zero_rows(F, v):
    return F.is_zero(v)


def test_bpmzs_all_members():
    B = num_bins(N)
    plan = dealer.Plan(3, 64)
    plan.beaver([1, 2, 3], B, rand=True)
    ctxs, net, _ = make_ctxs(3, plan, n=N)
    cuckoo, simple = tables(ctxs, [sorted(s) for s in SETS], pivots=[1])

    shares = run_parties(ctxs, net, lambda c: bpmzs(c, 1, cuckoo.get(c.pid), simple[c.pid]))
    F = ctxs[0].gf
    got = _zero_rows(F, xor_all(shares))
    want = [x is not None and x in SETS[1] and x in SETS[2] for x in _pivot_items(cuckoo[1])]
    assert got.tolist() == want
    assert sum(want) == len(SETS[0] & SETS[1] & SETS[2])


def test_bpnmzs_in_none():
    B = num_bins(N)
    plan = dealer.Plan(3, 64)
    for i in (1, 2):
        plan.bits(i, 3, sspeqt_budget(B, GAMMA))
        plan.rot(i, 3, B)
    plan.beaver([1, 2, 3], B, rand=True)
    ctxs, net, _ = make_ctxs(3, plan, n=N)
    cuckoo, simple = tables(ctxs, [sorted(s) for s in SETS], pivots=[3])

    shares = run_parties(ctxs, net, lambda c: bpnmzs(c, 3, cuckoo.get(c.pid), simple[c.pid], GAMMA))
    got = _zero_rows(ctxs[0].gf, xor_all(shares))
    # empty pivot bins hold a dummy that is in nobody's set
    want = [x is None or (x not in SETS[0] and x not in SETS[1]) for x in _pivot_items(cuckoo[3])]
    assert got.tolist() == want


def test_bmzs_or_formula_and_uninvolved_party():
    B = num_bins(N)
    m = 4
    plan = dealer.Plan(m, 64)
    plan.bits(3, 1, sspeqt_budget(B, GAMMA))
    plan.rot(3, 1, B)
    plan.beaver([1, 2, 3], B)
    plan.beaver([1, 2, 3], B, rand=True)
    ctxs, net, _ = make_ctxs(m, plan, n=N)
    sets = [sorted(s) for s in SETS] + [[1, 2, 3]]
    cuckoo, simple = tables(ctxs, sets, pivots=[1])
    q = Or((In(2), NotIn(3)))

    shares = run_parties(ctxs, net, lambda c: bmzs(c, q, 1, [1, 2, 3], cuckoo.get(c.pid), simple[c.pid], GAMMA))
    F = ctxs[0].gf
    assert F.is_zero(shares[3]).all()
    got = _zero_rows(F, xor_all(shares))
    # an empty bin holds a dummy that is in no set, so the NotIn branch holds there
    want = [x in SETS[1] or x not in SETS[2] for x in _pivot_items(cuckoo[1])]
    assert got.tolist() == want
    # party 4 takes part in no exchange
    assert ctxs[3].net.log == []


def test_bpmzsp_payload_sum():
    sets = [[5, 10, 11], [5, 10, 12], [5, 13, 14]]
    pay = {2: {5: 3, 10: 100, 12: 1}, 3: {5: 4, 13: 9, 14: 9}}
    n = 3
    B = num_bins(n)
    plan = dealer.Plan(3, 128)
    plan.beaver([1, 2, 3], B, rand=True)
    ctxs, net, _ = make_ctxs(3, plan, k=128, n=n)
    cuckoo, simple = tables(ctxs, sets, pivots=[1])

    def body(c):
        payload = {element(x): v for x, v in pay.get(c.pid, {}).items()}
        return bpmzsp(c, 1, cuckoo.get(c.pid), simple[c.pid], payload)

    out = run_parties(ctxs, net, body)
    F = ctxs[0].gf
    s = xor_all([o[0] for o in out])
    w = sum(o[1] for o in out)  # uint64 wraps mod 2^64
    items = _pivot_items(cuckoo[1])
    b5 = items.index(5)
    assert F.is_zero(s).tolist() == [x == 5 for x in items]
    assert int(w[b5]) == 7


def test_field_check_in_strict_mode():
    B = num_bins(N)
    plan = dealer.Plan(3, 16)
    plan.beaver([1, 2, 3], B, rand=True)
    ctxs, net, _ = make_ctxs(3, plan, k=16, n=N, strict=True)
    cuckoo, simple = tables(ctxs, [sorted(s) for s in SETS], pivots=[1])
    with pytest.raises(ConfigError, match="too small"):
        run_parties(ctxs, net, lambda c: bpmzs(c, 1, cuckoo.get(c.pid), simple[c.pid]))


def test_single_share_independent_of_membership():
    """In GF(2^16), party 2's share nibbles look the same whether or not the bin is a match."""
    n = 1024
    B = num_bins(n)
    plan = dealer.Plan(3, 16)
    plan.beaver([1, 2, 3], B, rand=True)
    ctxs, net, _ = make_ctxs(3, plan, k=16, n=n)
    sets = [list(range(n)), list(range(n // 2, n + n // 2)), list(range(n // 4, n + n // 4))]
    cuckoo, simple = tables(ctxs, sets, pivots=[1])
    shares = run_parties(ctxs, net, lambda c: bpmzs(c, 1, cuckoo.get(c.pid), simple[c.pid]))
    member = _zero_rows(ctxs[0].gf, xor_all(shares))
    nib = (shares[1][:, 0] & np.uint64(0xF)).astype(int)
    table = np.array([np.bincount(nib[member], minlength=16), np.bincount(nib[~member], minlength=16)])
    assert table[0].sum() > 100 and table[1].sum() > 100
    assert chi2_contingency(table)[1] > 0.001
