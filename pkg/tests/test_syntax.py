import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from helpers import ACCEPTED, CORPUS, REJECTED, load, source
from safegpu.nat import NLit
from safegpu.syntax import (
    ParseFailure, SyntaxDiagnostic, parse, parse_place, parse_term, parse_type, place_str,
    pretty_print, tokenize, type_str,
)
from safegpu.syntax.printer import term_lines
from safegpu.syntax.ast import (
    BinOp, ForNat, Let, Lit, PlaceTerm, Sched, Span, Sync, desugar_sched,
)

ALL = ACCEPTED + list(REJECTED)


def nodes(x):
    """Every dataclass node reachable from ``x``."""
    if dataclasses.is_dataclass(x) and not isinstance(x, type):
        yield x
        for f in dataclasses.fields(x):
            yield from nodes(getattr(x, f.name))
    elif isinstance(x, (tuple, list)):
        for e in x:
            yield from nodes(e)


def test_transpose_structure():
    fn = load("transpose").functions["transpose"]
    found = list(nodes(fn.body))
    scheds = [n for n in found if isinstance(n, Sched)]
    assert [(s.axes, s.binder, s.exec_name) for s in scheds] == [
        (("Y", "X"), "block", "grid"), (("Y", "X"), "thread", "block")]
    assert sum(isinstance(n, Sync) for n in found) == 1
    assert sum(isinstance(n, ForNat) for n in found) == 2


def test_missing_exec_annotation():
    with pytest.raises(ParseFailure) as e:
        parse("fn f() -> () { () }")
    d = e.value.diagnostics[0]
    assert d.span.line == 1 and d.span.start > 0


def test_duplicate_definition():
    src = "fn f() -[t: cpu.thread]-> () { () }\nfn f() -[t: cpu.thread]-> () { () }"
    with pytest.raises(ParseFailure) as e:
        parse(src)
    assert "duplicate" in e.value.diagnostics[0].message
    assert e.value.diagnostics[0].span.line == 2


def test_lexical_error_has_span():
    with pytest.raises((ParseFailure, SyntaxDiagnostic)) as e:
        parse("fn f() -[t: cpu.thread]-> () {\n  let x = $;\n}")
    err = e.value.diagnostics[0] if isinstance(e.value, ParseFailure) else e.value
    assert (err.span.line, err.span.col) == (2, 11)


@pytest.mark.parametrize("name", ALL)
def test_round_trip(name):
    prog = load(name)
    text = pretty_print(prog)
    assert parse(text) == prog
    assert pretty_print(parse(text)) == text


@pytest.mark.parametrize("name", ALL)
def test_every_node_has_span_inside_input(name):
    src = source(name)
    for n in nodes(load(name)):
        sp = getattr(n, "span", "absent")
        if sp == "absent" or isinstance(n, Span):
            continue
        assert sp is not None, type(n).__name__
        assert 0 <= sp.start <= sp.end <= len(src)


def test_print_let():
    fn = parse("fn f() -[t: cpu.thread]-> () { let x: i32 = 0; () }").functions["f"]
    assert isinstance(fn.body.terms[0], Let)
    assert term_lines(fn.body.terms[0], 0) == ["let x: i32 = 0"]


def test_rev_is_reverse():
    assert parse_place("a.rev") == parse_place("a.reverse")


def test_print_sched():
    text = pretty_print(load("transpose"))
    assert "sched(Y,X) block in grid {" in text


def test_sched_desugars_to_nested_single_axis():
    outer = load("transpose").functions["transpose"].body.terms[0]
    d = desugar_sched(outer)
    assert d.axes == ("Y",)
    inner = d.body.terms[0]
    assert inner.axes == ("X",) and inner.binder == "block"
    assert inner.exec_name == d.binder


@pytest.mark.parametrize("text", [
    "[[f64; 32]]", "&uniq gpu.global [f64; n*16]", "(i32, bool)", "[i32; 4] @ cpu.mem",
    "&shrd m [[i32; 4]; 8]",
])
def test_type_round_trip(text):
    assert type_str(parse_type(text)) == text


@pytest.mark.parametrize("text", [
    "x.group::<8>.transpose[[thread]][3]", "*arr", "x.split::<4>.snd", "(*a).reverse[[t]]",
    "x.map(map(group::<2>))",
])
def test_place_round_trip(text):
    assert place_str(parse_place(text)) == text


def test_precedence():
    t = parse_term("a + b * c - d")
    assert isinstance(t, BinOp) and t.op == "-"
    assert t.lhs.op == "+" and t.lhs.rhs.op == "*"


def test_trailing_semicolon_discards_value():
    fn = parse("fn f() -[t: cpu.thread]-> () { 1 + 2; }").functions["f"]
    assert isinstance(fn.body.terms[-1], Lit) and fn.body.terms[-1].kind == "unit"


def test_comments_are_skipped():
    toks = tokenize("a // note\n+ 1")
    assert [t.text for t in toks if t.kind != "eof"] == ["a", "+", "1"]


_names = st.sampled_from(["a", "b", "x"])
_exprs = st.recursive(
    st.one_of(_names.map(lambda n: n), st.integers(0, 99).map(str)),
    lambda inner: st.tuples(inner, st.sampled_from(["+", "-", "*", "/", "%", "<", "=="]),
                            inner).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
    max_leaves=8)


@settings(max_examples=150, deadline=None)
@given(_exprs)
def test_expression_print_parse_fixpoint(text):
    term = parse_term(text)
    src = f"fn f() -[t: cpu.thread]-> () {{ let v = {text}; () }}"
    prog = parse(src)
    again = parse(pretty_print(prog))
    assert again == prog
    assert isinstance(term, (BinOp, PlaceTerm, Lit))


def test_corpus_files_exist():
    assert sorted(p.stem for p in CORPUS.glob("*.desc")) == sorted(ALL)


def test_dim_literal():
    fn = load("transpose").functions["transpose"]
    assert fn.exec_level.blocks.extents == (NLit(64), NLit(64))
