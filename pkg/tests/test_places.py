import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safegpu.exec_model import ExecResource, Relation, relation
from safegpu.interpreter import SimError, place_index_map, view_permutation
from safegpu.nat import NLit, evaluate
from safegpu.places import (
    PlaceError, chain_type, expand_chain, expand_place, places_overlap, view_shape, view_type,
)
from safegpu.syntax import parse, parse_dim, parse_place, parse_type, type_str
from safegpu.syntax.ast import ViewApp, ViewInst


def vi(name, *args, inner=()):
    return ViewInst(name, tuple(NLit(a) for a in args), tuple(inner))


@pytest.mark.parametrize("ty, view, expected", [
    ("[[f64; 32]]", vi("group", 8), "[[[[f64; 8]]; 4]]"),
    ("[[f64; 64]]", vi("split", 32), "([[f64; 32]], [[f64; 32]])"),
    ("[[[[i32; 4]]; 8]]", vi("transpose"), "[[[[i32; 8]]; 4]]"),
    ("[[f64; 5]]", vi("reverse"), "[[f64; 5]]"),
    ("[[[[i32; 4]]; 8]]", vi("map", inner=[vi("reverse")]), "[[[[i32; 4]]; 8]]"),
    ("[[i32; 4*n]]", vi("group", 4), "[[[[i32; 4]]; n]]"),
])
def test_view_type(ty, view, expected):
    assert type_str(view_type(parse_type(ty), view)) == expected


@pytest.mark.parametrize("ty, view, code", [
    ("[[f64; 32]]", vi("transpose"), "E_TYPE"),
    ("[[f64; 30]]", vi("group", 8), "E_SIZE"),
    ("[[f64; 16]]", vi("split", 17), "E_SIZE"),
    ("f64", vi("reverse"), "E_TYPE"),
])
def test_view_type_errors(ty, view, code):
    with pytest.raises(PlaceError) as e:
        view_type(parse_type(ty), view)
    assert e.value.code == code


VIEWS = parse("""
view group_by_row<row_size: nat, num_rows: nat> = group::<row_size/num_rows>.map(transpose);
view tiles<n: nat> = group::<n>.map(group_by_row::<n, 4>);
view loop_a = loop_b;
view loop_b = loop_a;
""").views


def test_expand_user_view():
    chain = expand_chain([ViewInst("group_by_row", (NLit(32), NLit(4)))], VIEWS)
    assert chain == (vi("group", 8), vi("map", inner=[vi("transpose")]))


def test_nested_aliases_expand_to_basic_views():
    chain = expand_chain([ViewInst("tiles", (NLit(8),))], VIEWS)
    names = []

    def walk(c):
        for v in c:
            names.append(v.name)
            walk(v.inner)

    walk(chain)
    assert set(names) <= {"group", "map", "transpose"}


@pytest.mark.parametrize("view", [
    ViewInst("group_by_row", (NLit(32),)),
    ViewInst("nope"),
    ViewInst("loop_a"),
    vi("group"),
])
def test_expand_errors(view):
    with pytest.raises(PlaceError):
        expand_chain([view], VIEWS)


@pytest.mark.parametrize("p, q, overlap", [
    ("x.split::<32>.fst", "x.split::<32>.snd", False),
    ("x.split::<32>.fst", "x", True),
    ("x", "y", False),
    ("x[0]", "x[1]", False),
    ("x[0]", "x[0]", True),
    ("x.reverse", "x.group::<2>", True),
    ("x.group::<32>[[block]]", "x.group::<32>[[other]]", True),
])
def test_places_overlap(p, q, overlap):
    assert places_overlap(parse_place(p), parse_place(q)) is overlap


def test_selects_by_split_halves_may_alias():
    # both halves index relative to their own range, so lo#0 and hi#0 meet
    block = ExecResource.grid(parse_dim("X<1>"), parse_dim("X<8>")).forall("X")
    lo, hi = block.split("X", 4)
    execs = {"lo": lo.forall("X"), "hi": hi.forall("X")}
    a, b = parse_place("x[[lo]]"), parse_place("x[[hi]]")
    assert relation(execs["lo"], execs["hi"]) is Relation.DISJOINT
    assert place_index_map(a, [4], execs, {"X": 0}, {"X": 0}) == {0}
    assert place_index_map(b, [4], execs, {"X": 0}, {"X": 4}) == {0}
    assert places_overlap(a, b)


def thread_execs(n: int):
    return {"thread": ExecResource.grid(parse_dim("X<1>"), parse_dim(f"X<{n}>"))
            .forall("X").forall("X")}


@pytest.mark.parametrize("i", range(8))
@pytest.mark.parametrize("j", range(4))
def test_index_map_group_transpose(i, j):
    got = place_index_map(parse_place(f"arr.group::<8>.transpose[[thread]][{j}]"), [32],
                          thread_execs(8), {"X": 0}, {"X": i})
    assert got == {j * 8 + i}


@pytest.mark.parametrize("i", range(4))
def test_index_map_reverse(i):
    got = place_index_map(parse_place("arr.reverse[[thread]]"), [4], thread_execs(4),
                          {"X": 0}, {"X": i})
    assert got == {3 - i}


def test_index_map_whole_split():
    got = place_index_map(parse_place("arr.split::<32>.fst"), [64], {}, {}, {})
    assert got == set(range(32))


def test_view_permutation_examples():
    assert view_permutation([vi("reverse")], 4).tolist() == [3, 2, 1, 0]
    assert view_permutation([vi("group", 2), vi("transpose")], 4).tolist() == [[0, 2], [1, 3]]


# cardinality of the reachable elements matches the output type
CHAINS = [
    [vi("group", 4)],
    [vi("group", 4), vi("transpose")],
    [vi("group", 2), vi("map", inner=[vi("reverse")]), vi("transpose")],
    [vi("split", 3), ViewInst("snd")],
    [vi("reverse"), vi("group", 8)],
]


@pytest.mark.parametrize("chain", CHAINS, ids=lambda c: ".".join(v.name for v in c))
def test_type_matches_cardinality(chain):
    t = chain_type(parse_type("[[i32; 16]]"), chain)
    n = int(np.prod([evaluate(e) for e in view_shape(t)]))
    ps = parse_place("arr").extend(*(ViewApp(v) for v in chain))
    assert len(place_index_map(ps, [16], {}, {}, {})) == n


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(["fst", "snd", "0", "1", "2"]), min_size=1, max_size=3),
       st.lists(st.sampled_from(["fst", "snd", "0", "1", "2"]), min_size=1, max_size=3))
def test_disjoint_places_have_disjoint_indices(a, b):
    def place(steps):
        text = "x"
        for s in steps:
            text += f".split::<4>.{s}" if s in ("fst", "snd") else f".group::<2>[{s}]"
        return parse_place(text)

    p, q = place(a), place(b)
    try:
        sp = place_index_map(p, [16], {}, {}, {})
        sq = place_index_map(q, [16], {}, {}, {})
    except SimError:
        return  # ill-shaped chain
    if not places_overlap(p, q):
        assert not sp & sq


def test_expand_place_keeps_other_steps():
    p = expand_place(parse_place("x[[block]].group_by_row::<32, 4>[1]"), VIEWS)
    assert [type(s).__name__ for s in p.steps] == ["Select", "ViewApp", "ViewApp", "Index"]


def test_selected_block_tiles_cover_array():
    execs = {"b": ExecResource.grid(parse_dim("X<4>"), parse_dim("X<1>")).forall("X")}
    seen = set()
    for b in range(4):
        got = place_index_map(parse_place("x.group::<4>[[b]]"), [16], execs, {"X": b}, {})
        assert not got & seen
        seen |= got
    assert seen == set(range(16))


@pytest.mark.parametrize("n, k", list(itertools.product([8, 16], [2, 4])))
def test_group_then_flatten_is_identity(n, k):
    table = view_permutation([vi("group", k)], n)
    assert table.reshape(-1).tolist() == list(range(n))
