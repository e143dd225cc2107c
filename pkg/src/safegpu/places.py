"""Views and place expressions: typing, alias expansion and overlap."""

from __future__ import annotations

from typing import Iterable, Mapping, Optional, Tuple

from .nat import Nat, NatError, Tri, divides, nat_eq, nat_le, normalize, render, subst
from .syntax.ast import (
    DataType, Deref, Index, PlaceExpr, Proj, Select, TupleTy, ViewApp,
    ViewDef, ViewInst, ViewTy, is_arraylike,
)

# nat argument count of each built-in view
VIEW_ARITY = {"split": 1, "group": 1, "transpose": 0, "reverse": 0, "map": 0,
              "fst": 0, "snd": 0}


class PlaceError(Exception):
    def __init__(self, code: str, message: str, span=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.span = span


# ---------------------------------------------------------------------------
# alias expansion

def expand_chain(chain: Iterable[ViewInst], defs: Mapping[str, ViewDef],
                 _active: Tuple[str, ...] = ()) -> Tuple[ViewInst, ...]:
    """Replace user-defined views by the built-in views they stand for."""
    out = []
    for v in chain:
        if v.name in VIEW_ARITY:
            if len(v.nat_args) != VIEW_ARITY[v.name]:
                raise PlaceError("E_TYPE", f"view `{v.name}` takes {VIEW_ARITY[v.name]} "
                                           f"size argument(s), got {len(v.nat_args)}", v.span)
            inner = expand_chain(v.inner, defs, _active) if v.name == "map" else ()
            if v.name == "map" and not inner:
                raise PlaceError("E_TYPE", "`map` needs a view argument", v.span)
            out.append(ViewInst(v.name, tuple(normalize(a) for a in v.nat_args), inner,
                                span=v.span))
            continue
        d = defs.get(v.name)
        if d is None:
            raise PlaceError("E_TYPE", f"unknown view `{v.name}`", v.span)
        if v.name in _active:
            raise PlaceError("E_TYPE", f"view `{v.name}` is defined in terms of itself", v.span)
        if len(v.nat_args) != len(d.params):
            raise PlaceError("E_TYPE", f"view `{v.name}` takes {len(d.params)} size "
                                       f"argument(s), got {len(v.nat_args)}", v.span)
        binds = {name: a for (name, _), a in zip(d.params, v.nat_args)}
        body = tuple(_subst_view(b, binds, v.span) for b in d.body)
        out.extend(expand_chain(body, defs, _active + (v.name,)))
    return tuple(out)


def _subst_view(v: ViewInst, binds, span) -> ViewInst:
    return ViewInst(v.name, tuple(subst(a, binds) for a in v.nat_args),
                    tuple(_subst_view(i, binds, span) for i in v.inner), span=span)


def expand_place(p: PlaceExpr, defs: Mapping[str, ViewDef]) -> PlaceExpr:
    steps = []
    for s in p.steps:
        if isinstance(s, ViewApp):
            steps.extend(ViewApp(v) for v in expand_chain((s.view,), defs))
        else:
            steps.append(s)
    return PlaceExpr(p.root, tuple(steps), span=p.span)


# ---------------------------------------------------------------------------
# view typing

def _elems(t: DataType, what: str, span) -> Tuple[DataType, Nat]:
    if not is_arraylike(t):
        raise PlaceError("E_TYPE", f"{what} expects an array, found `{t}`", span)
    return t.elem, t.size


def view_type(t: DataType, v: ViewInst) -> DataType:
    """Type of viewing a value of type ``t`` through the built-in view ``v``."""
    sp = v.span
    if v.name in ("fst", "snd"):
        if not isinstance(t, TupleTy) or len(t.elems) != 2:
            raise PlaceError("E_TYPE", f"`.{v.name}` expects a pair, found `{t}`", sp)
        return t.elems[0 if v.name == "fst" else 1]
    elem, n = _elems(t, f"view `{v.name}`", sp)
    if v.name == "split":
        k = v.nat_args[0]
        if nat_le(k, n) is not Tri.TRUE:
            raise PlaceError("E_SIZE", f"cannot split an array of {render(n)} elements "
                                       f"at position {render(k)}", sp)
        return TupleTy((ViewTy(elem, k), ViewTy(elem, normalize(n - k))))
    if v.name == "group":
        k = v.nat_args[0]
        try:
            ok = divides(k, n)
        except NatError:
            ok = Tri.FALSE
        if ok is not Tri.TRUE:
            raise PlaceError("E_SIZE", f"group size {render(k)} does not divide the array "
                                       f"length {render(n)}", sp)
        return ViewTy(ViewTy(elem, k), normalize(n // k))
    if v.name == "transpose":
        inner, m = _elems(elem, "view `transpose` on the elements", sp)
        return ViewTy(ViewTy(inner, n), m)
    if v.name == "reverse":
        return ViewTy(elem, n)
    if v.name == "map":
        out = elem
        for iv in v.inner:
            out = view_type(out, iv)
        return ViewTy(out, n)
    raise PlaceError("E_TYPE", f"unknown view `{v.name}`", sp)


def chain_type(t: DataType, chain: Iterable[ViewInst]) -> DataType:
    for v in chain:
        t = view_type(t, v)
    return t


def view_shape(t: DataType) -> Tuple[Nat, ...]:
    """Sizes of the nested array dimensions of ``t``, outermost first."""
    out = []
    while is_arraylike(t):
        out.append(t.size)
        t = t.elem
    return tuple(out)


# ---------------------------------------------------------------------------
# overlap of places

def _steps_disjoint(a, b) -> Optional[bool]:
    """True if two differing steps at the same position address disjoint parts."""
    if isinstance(a, Proj) and isinstance(b, Proj):
        return a.which != b.which
    if isinstance(a, Index) and isinstance(b, Index):
        return nat_eq(a.index, b.index) is Tri.FALSE
    if isinstance(a, ViewApp) and isinstance(b, ViewApp):
        va, vb = a.view, b.view
        if va.name in ("fst", "snd") and vb.name in ("fst", "snd"):
            return va.name != vb.name
    # Selects with different resources index relative to each resource's own
    # range, so the same position can be reached through both.
    return False


def places_overlap(p: PlaceExpr, q: PlaceExpr) -> bool:
    """Conservative: False only when the two places are certainly disjoint."""
    if p.root != q.root:
        return False
    for a, b in zip(p.steps, q.steps):
        if a == b:
            continue
        return not _steps_disjoint(a, b)
    return True


def common_prefix(p: PlaceExpr, q: PlaceExpr) -> Tuple:
    out = []
    if p.root != q.root:
        return ()
    for a, b in zip(p.steps, q.steps):
        if a != b:
            break
        out.append(a)
    return tuple(out)


def selects_in(steps) -> Tuple[str, ...]:
    return tuple(s.exec_name for s in steps if isinstance(s, Select))


def has_deref(p: PlaceExpr) -> bool:
    return any(isinstance(s, Deref) for s in p.steps)
