import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safegpu.exec_model import ExecResource
from safegpu.interpreter import Pair, SimError, place_offsets, view_permutation
from safegpu.lowering import (
    BinIx, Const, LoweringError, Sym, add, evaluate_index, evaluate_over, lower_place, mul,
    render_c, sub, symbols,
)
from safegpu.nat import NLit
from safegpu.syntax import parse_dim, parse_place
from safegpu.syntax.ast import PlaceExpr, ViewApp, ViewInst


def vi(name, *args, inner=()):
    return ViewInst(name, tuple(NLit(a) for a in args), tuple(inner))


def block_threads(n):
    block = ExecResource.grid(parse_dim("X<1>"), parse_dim(f"X<{n}>")).forall("X")
    return {"block": block, "thread": block.forall("X")}


def test_identity_select():
    e, rest = lower_place(parse_place("block_part[[thread]]"), [32], block_threads(32))
    assert render_c(e) == "threadIdx.x" and rest == ()


def test_reverse_select():
    e, _ = lower_place(parse_place("arr.rev[[thread]]"), [4], block_threads(4))
    assert render_c(e) == "3 - threadIdx.x"
    assert evaluate_over(e, {"threadIdx.x": 4}).tolist() == [3, 2, 1, 0]


def test_loop_variable_and_symbolic_index():
    e, _ = lower_place(parse_place("a.group::<4>[[thread]][i]"), [16], block_threads(4))
    assert render_c(e) == "threadIdx.x * 4 + i"
    assert symbols(e) == ["threadIdx.x", "i"]


def test_remaining_dimensions_become_outputs():
    e, rest = lower_place(parse_place("x.group::<4>.transpose"), [8])
    assert rest == (4, 2)
    assert render_c(e) == "o1 * 4 + o0"


def test_pair_is_rejected():
    with pytest.raises(LoweringError):
        lower_place(parse_place("x.split::<3>"), [8])


def test_deref_is_skipped_at_the_root():
    a, _ = lower_place(parse_place("(*x).reverse"), [4])
    b, _ = lower_place(parse_place("x.reverse"), [4])
    assert a == b


@pytest.mark.parametrize("expr, text", [
    (mul(add(Sym("a"), Sym("b")), Const(32)), "(a + b) * 32"),
    (add(mul(Sym("a"), Const(32)), Sym("b")), "a * 32 + b"),
    (sub(Sym("a"), add(Sym("b"), Sym("c"))), "a - (b + c)"),
    (add(Sym("a"), add(Sym("b"), Sym("c"))), "a + b + c"),
    (BinIx("/", Sym("a"), BinIx("*", Sym("b"), Sym("c"))), "a / (b * c)"),
    (BinIx("%", BinIx("+", Sym("a"), Sym("b")), Const(4)), "(a + b) % 4"),
])
def test_render_parenthesization(expr, text):
    assert render_c(expr) == text


def test_smart_constructors_fold():
    assert add(Const(2), Const(3)) == Const(5)
    assert mul(Sym("a"), Const(1)) == Sym("a")
    assert add(Sym("a"), Const(0)) == Sym("a")
    assert mul(Sym("a"), Const(0)) == Const(0)


@settings(max_examples=200, deadline=None)
@given(st.recursive(
    st.one_of(st.sampled_from(["a", "b"]).map(Sym), st.integers(0, 9).map(Const)),
    lambda inner: st.tuples(st.sampled_from(["+", "-", "*"]), inner, inner)
    .map(lambda t: BinIx(*t)), max_leaves=10),
    st.integers(0, 20), st.integers(0, 20))
def test_rendering_preserves_value(expr, a, b):
    env = {"a": a, "b": b}
    assert eval(render_c(expr), {}, env) == evaluate_index(expr, env)


# ---------------------------------------------------------------------------
# equivalence with the oracle on random chains

UNITS = ([(vi("split", k), ViewInst(w)) for k in (1, 3, 4) for w in ("fst", "snd")]
         + [(vi("group", k),) for k in (2, 4)]
         + [(vi("transpose"),), (vi("reverse"),)])
UNITS += [(ViewInst("map", (), u),) for u in UNITS]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(UNITS), min_size=1, max_size=4),
       st.sampled_from([(8,), (16,), (4, 8), (8, 4)]))
def test_lowering_matches_view_permutation(units, shape):
    chain = [v for u in units for v in u]
    try:
        table = view_permutation(chain, shape)
    except SimError:
        return
    if isinstance(table, Pair):
        return
    e, rest = lower_place(PlaceExpr("x", tuple(ViewApp(v) for v in chain)), shape)
    got = evaluate_over(e, {f"o{i}": n for i, n in enumerate(rest)})
    assert got.shape == table.shape
    assert np.array_equal(got, table)


@pytest.mark.parametrize("place", [
    "x.group::<4>[[block]][[thread]]",
    "x.group::<4>[[block]].rev[[thread]]",
    "x.reverse.group::<8>.map(group::<4>)[[block]].transpose[[thread]][1]",
    "x.group::<8>.map(reverse)[[block]].group::<2>[[thread]][1]",
])
def test_selects_match_oracle(place):
    base = ExecResource.grid(parse_dim("X<2>"), parse_dim("X<4>"))
    execs = {"block": base.forall("X"), "thread": base.forall("X").forall("X")}
    p = parse_place(place)
    e, rest = lower_place(p, [16], execs)
    assert rest == ()
    bx, tx = np.meshgrid(np.arange(2), np.arange(4), indexing="ij")
    want = place_offsets(p, [16], execs, {"X": bx}, {"X": tx})
    got = evaluate_index(e, {"blockIdx.x": bx, "threadIdx.x": tx})
    assert np.array_equal(np.broadcast_to(got, want.shape), want)


def test_split_select_subtracts_offset():
    block = ExecResource.grid(parse_dim("X<1>"), parse_dim("X<8>")).forall("X")
    _, hi = block.split("X", 4)
    execs = {"t": hi.forall("X")}
    e, _ = lower_place(parse_place("x.split::<4>.snd[[t]]"), [8], execs)
    assert render_c(e) == "threadIdx.x"
    e, _ = lower_place(parse_place("x.group::<2>[[t]][0]"), [8], execs)
    assert render_c(e) == "(threadIdx.x - 4) * 2"
