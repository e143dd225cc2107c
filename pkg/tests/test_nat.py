import itertools

import pytest
from hypothesis import given, settings, strategies as st

from safegpu.nat import (
    NAdd, NDiv, NLit, NMod, NMul, NVar, NatError, Tri,
    divides, evaluate, free_vars, nat_eq, nat_le, normalize, render, subst,
)

n, m, k = NVar("n"), NVar("m"), NVar("k")


def test_constant_folding():
    assert normalize(NAdd(NMul(NLit(2), NLit(4)), NLit(1))) == NLit(9)


def test_like_terms_collect():
    assert normalize(n + n) == normalize(NMul(NLit(2), n))
    assert render(normalize(n + n)) == "2*n"


def test_monomial_order_is_fixed():
    assert normalize(m * n) == normalize(n * m)
    assert render(normalize(n * m)) == "m*n"


@pytest.mark.parametrize("a, b, expected", [
    (n + n, NMul(NLit(2), n), Tri.TRUE),
    (NLit(32), NLit(1024), Tri.FALSE),
    (n, m, Tri.UNKNOWN),
    (NDiv(NMul(NLit(64), n), NLit(32)), NMul(NLit(2), n), Tri.TRUE),
])
def test_nat_eq(a, b, expected):
    assert nat_eq(a, b) is expected


@pytest.mark.parametrize("d, x, expected", [
    (8, 32, Tri.TRUE),
    (NLit(8), NMul(k, NLit(8)), Tri.TRUE),
    (3, 32, Tri.FALSE),
    (k, n, Tri.UNKNOWN),
    (k, NMul(k, n), Tri.TRUE),
])
def test_divides(d, x, expected):
    assert divides(d, x) is expected


def test_divides_rejects_zero():
    with pytest.raises(NatError):
        divides(0, 32)


@pytest.mark.parametrize("a, b, expected", [
    (32, 64, Tri.TRUE),
    (64, 32, Tri.FALSE),
    (k, n, Tri.UNKNOWN),
    (n, n + 1, Tri.TRUE),
])
def test_nat_le(a, b, expected):
    assert nat_le(a, b) is expected


def test_subst():
    assert subst(NDiv(n, NLit(32)), {"n": 1024}) == NLit(32)
    assert render(subst(n + m, {"n": 2})) == "m + 2"
    assert subst(NLit(5), {"n": 9}) == NLit(5)


def test_opaque_division_stays_symbolic():
    q = normalize(NDiv(n, NLit(3)))
    assert isinstance(q, NDiv)
    assert free_vars(q) == {"n"}
    assert normalize(NMod(NMul(NLit(6), n), NLit(3))) == NLit(0)


def test_division_by_literal_zero():
    with pytest.raises(NatError):
        normalize(NDiv(n, NLit(0)))


# random expressions over a few variables ---------------------------------

VARS = ["a", "b", "c"]
leaves = st.one_of(st.integers(0, 6).map(NLit), st.sampled_from(VARS).map(NVar))
exprs = st.recursive(
    leaves,
    lambda sub: st.one_of(
        st.builds(NAdd, sub, sub),
        st.builds(NMul, sub, sub),
        st.builds(NDiv, sub, st.integers(1, 4).map(NLit)),
    ),
    max_leaves=8,
)


@given(exprs)
def test_normalize_idempotent(e):
    once = normalize(e)
    assert normalize(once) == once


@given(exprs)
def test_normalize_preserves_value(e):
    for vals in itertools.product([0, 1, 3], repeat=3):
        env = dict(zip(VARS, vals))
        assert evaluate(normalize(e), env) == evaluate(e, env)


@settings(max_examples=200)
@given(exprs, exprs)
def test_nat_eq_sound(a, b):
    verdict = nat_eq(a, b)
    if verdict is Tri.UNKNOWN:
        return
    for vals in itertools.product([0, 1, 2, 5], repeat=3):
        env = dict(zip(VARS, vals))
        same = evaluate(a, env) == evaluate(b, env)
        if verdict is Tri.TRUE:
            assert same
        else:
            assert not same


poly_exprs = st.recursive(
    leaves, lambda sub: st.one_of(st.builds(NAdd, sub, sub), st.builds(NMul, sub, sub)),
    max_leaves=6,
)


@settings(max_examples=200)
@given(st.one_of(st.integers(1, 8).map(NLit), st.sampled_from(VARS).map(NVar)), poly_exprs)
def test_divides_sound(d, e):
    if divides(d, e) is not Tri.TRUE:
        return
    for vals in itertools.product(range(1, 17), repeat=3):
        env = dict(zip(VARS, vals))
        assert evaluate(e, env) % evaluate(d, env) == 0


@settings(max_examples=200)
@given(poly_exprs, poly_exprs)
def test_nat_le_sound(a, b):
    verdict = nat_le(a, b)
    if verdict is Tri.UNKNOWN:
        return
    for vals in itertools.product([0, 1, 4], repeat=3):
        env = dict(zip(VARS, vals))
        assert (evaluate(a, env) <= evaluate(b, env)) == (verdict is Tri.TRUE)
