import random

import numpy as np
import pytest

from mpso.errors import ProtocolError
from mpso.oprf import (L, P, OprfKey, PrfValues, blinding_pair, clamp, h2, hash_to_group,
                       ideal_value, opprf_program, opprf_receive, oprf_blind, oprf_eval_direct,
                       oprf_finalize, oprf_respond, receiver_blind, receiver_finalize, sender_respond,
                       sender_values)
from mpso.okvs import words_to_ints
from mpso.prg import Prg

A = 486662


def rfc_clamp(raw: bytes) -> int:
    s = int.from_bytes(raw, "little")
    s &= ~7
    s &= (1 << 255) - 1
    return s | (1 << 254)


def test_x25519_known_vector():
    sk = bytes.fromhex("77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a")
    pk = bytes.fromhex("8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a")
    assert OprfKey(rfc_clamp(sk)).mul((9).to_bytes(32, "little")) == pk


def test_hash_to_group_lands_on_curve():
    for i in range(200):
        u = int.from_bytes(hash_to_group(i.to_bytes(4, "little")), "little")
        assert 0 < u < P
        rhs = (u * u * u + A * u * u + u) % P
        # Euler's criterion: on the curve means rhs is a square
        assert pow(rhs, (P - 1) // 2, P) in (0, 1)


def test_blinding_pair_inverts():
    prg = Prg(1)
    for _ in range(20):
        r, rinv = blinding_pair(prg)
        assert (r.scalar * rinv.scalar) % L == 1


def test_blinded_equals_direct():
    prg = Prg(2)
    key = OprfKey.generate(prg)
    for i in range(30):
        x = i.to_bytes(8, "big")
        r, rinv = blinding_pair(prg)
        b = oprf_respond(key, oprf_blind(x, 7, r))
        assert oprf_finalize(x, 7, rinv, b, 100) == oprf_eval_direct(key, 7, x, 100)


def test_tag_and_key_separate_outputs():
    prg = Prg(3)
    k1, k2 = OprfKey.generate(prg), OprfKey.generate(prg)
    x = b"element!"
    assert oprf_eval_direct(k1, 1, x, 64) != oprf_eval_direct(k1, 2, x, 64)
    assert oprf_eval_direct(k1, 1, x, 64) != oprf_eval_direct(k2, 1, x, 64)
    assert oprf_eval_direct(k1, 1, x, 64) == oprf_eval_direct(k1, 1, x, 64)


def test_h2_domain_separation_and_width():
    pt = bytes(32)
    assert h2(b"a", pt, 64, b"d1") != h2(b"a", pt, 64, b"d2")
    # length-prefixing keeps (domain, data) splits apart
    assert h2(b"bc", pt, 64, b"a") != h2(b"c", pt, 64, b"ab")
    for g in (1, 13, 64, 129):
        assert h2(b"x", pt, g) < 1 << g


def test_clamp_and_key_validation():
    assert clamp(0) == 1 << 254
    with pytest.raises(ValueError):
        OprfKey(5)
    with pytest.raises(ProtocolError):
        oprf_respond(OprfKey(clamp(1)), b"short")


def test_batch_values_match():
    prg = Prg(4)
    key = OprfKey.generate(prg)
    items = [(b, random.Random(b).getrandbits(64).to_bytes(8, "big")) for b in range(40)]
    r, rinv = blinding_pair(prg)
    got = receiver_finalize(items, rinv, sender_respond(key, receiver_blind(items, r)))
    direct = sender_values(key, items)
    assert [e[2] for e in got.entries] == [e[2] for e in direct.entries]
    assert (got.expand(80, b"dom") == direct.expand(80, b"dom")).all()
    assert not (got.expand(80, b"dom") == got.expand(80, b"other")).all()
    with pytest.raises(ProtocolError):
        receiver_finalize(items, rinv, b"\x00" * 64)


def test_ideal_values_deterministic():
    assert ideal_value(b"k", 1, b"x") == ideal_value(b"k", 1, b"x")
    assert ideal_value(b"k", 1, b"x") != ideal_value(b"k", 2, b"x")


def test_opprf_programmed_and_unprogrammed():
    prg = Prg(5)
    key = OprfKey.generate(prg)
    gamma = 50
    sender_items = [(t, t.to_bytes(8, "big")) for t in range(300)]
    targets = np.array([[(t * 7919) % (1 << gamma)] for t in range(300)], dtype=np.uint64)
    hint = opprf_program(sender_values(key, sender_items), targets, gamma, prg, b"inv1")
    # receiver holds half the sender's items plus fresh ones
    queries = sender_items[:150] + [(t, (10**6 + t).to_bytes(8, "big")) for t in range(150)]
    r, rinv = blinding_pair(prg)
    vals = receiver_finalize(queries, rinv, sender_respond(key, receiver_blind(queries, r)))
    out = words_to_ints(opprf_receive(vals, hint, b"inv1"))
    assert out[:150] == [int(v) for v in targets[:150, 0]]
    target_set = {int(v) for v in targets[:, 0]}
    assert not any(o in target_set for o in out[150:])
    # wrong invocation domain gives unrelated outputs
    wrong = words_to_ints(opprf_receive(vals, hint, b"inv2"))
    assert sum(a == b for a, b in zip(wrong[:150], out[:150])) == 0


def test_empty_program():
    hint = opprf_program(PrfValues([]), np.zeros((0, 1), np.uint64), 40, Prg(6))
    assert hint.size > 0
