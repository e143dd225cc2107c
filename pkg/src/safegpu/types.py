"""Data type utilities: equality up to size arithmetic, copyability, substitution
and first-order unification used to infer generic arguments at call sites."""

from __future__ import annotations

from typing import Dict, Mapping, Optional, Tuple

from .nat import NLit, NMul, NVar, Nat, Tri, evaluate, free_vars, is_ground, nat_eq, normalize, subst
from .syntax.ast import (
    ArrayTy, BoxTy, DataType, Dim, Memory, RefTy, Scalar, TupleTy, TyVar, ViewTy,
)

ERROR_TY = TyVar("{error}")


def types_eq(a: DataType, b: DataType) -> Tri:
    """Structural equality; sizes compared with three-valued arithmetic."""
    if type(a) is not type(b):
        return Tri.FALSE
    if isinstance(a, Scalar):
        return Tri.of(a.name == b.name)
    if isinstance(a, TyVar):
        return Tri.of(a.name == b.name)
    if isinstance(a, TupleTy):
        if len(a.elems) != len(b.elems):
            return Tri.FALSE
        return _all(types_eq(x, y) for x, y in zip(a.elems, b.elems))
    if isinstance(a, (ArrayTy, ViewTy)):
        return _all([types_eq(a.elem, b.elem), nat_eq(a.size, b.size)])
    if isinstance(a, RefTy):
        if a.uniq != b.uniq or a.mem != b.mem:
            return Tri.FALSE
        return types_eq(a.target, b.target)
    if isinstance(a, BoxTy):
        if a.mem != b.mem:
            return Tri.FALSE
        return types_eq(a.target, b.target)
    return Tri.FALSE


def _all(verdicts) -> Tri:
    out = Tri.TRUE
    for v in verdicts:
        if v is Tri.FALSE:
            return Tri.FALSE
        if v is Tri.UNKNOWN:
            out = Tri.UNKNOWN
    return out


def is_copyable(t: DataType) -> bool:
    if isinstance(t, Scalar):
        return True
    if isinstance(t, TupleTy):
        return all(is_copyable(e) for e in t.elems)
    if isinstance(t, RefTy):
        return not t.uniq
    return False


def subst_type(t: DataType, nats: Mapping[str, Nat], mems: Mapping[str, Memory] = {},
               dts: Mapping[str, DataType] = {}) -> DataType:
    if isinstance(t, Scalar):
        return t
    if isinstance(t, TyVar):
        return dts.get(t.name, t)
    if isinstance(t, TupleTy):
        return TupleTy(tuple(subst_type(e, nats, mems, dts) for e in t.elems))
    if isinstance(t, ArrayTy):
        return ArrayTy(subst_type(t.elem, nats, mems, dts), subst(t.size, nats))
    if isinstance(t, ViewTy):
        return ViewTy(subst_type(t.elem, nats, mems, dts), subst(t.size, nats))
    if isinstance(t, RefTy):
        return RefTy(t.uniq, mems.get(t.mem.name, t.mem), subst_type(t.target, nats, mems, dts))
    if isinstance(t, BoxTy):
        return BoxTy(subst_type(t.target, nats, mems, dts), mems.get(t.mem.name, t.mem))
    return t


def subst_dim(d: Dim, nats: Mapping[str, Nat]) -> Dim:
    return Dim(d.axes, tuple(subst(e, nats) for e in d.extents))


def contains_error(t: DataType) -> bool:
    if t == ERROR_TY:
        return True
    if isinstance(t, TupleTy):
        return any(contains_error(e) for e in t.elems)
    if isinstance(t, (ArrayTy, ViewTy)):
        return contains_error(t.elem)
    if isinstance(t, (RefTy, BoxTy)):
        return contains_error(t.target)
    return False


# ---------------------------------------------------------------------------
# unification for generic argument inference

class Unifier:
    """Solves generic parameters of a callee from concrete argument data.

    Only the unknowns in ``params`` are solved. A size is solved when it is a
    bare variable, or a constant or known factor times a single unknown.
    """

    def __init__(self, params: Dict[str, str]):
        self.kinds = dict(params)
        self.nats: Dict[str, Nat] = {}
        self.mems: Dict[str, Memory] = {}
        self.dts: Dict[str, DataType] = {}
        self._pending = []

    def unknown(self, name: str) -> bool:
        return name in self.kinds and name not in self.nats and name not in self.mems \
            and name not in self.dts

    def nat(self, pattern: Nat, actual: Nat):
        self._pending.append((pattern, actual))
        self._solve()

    def _solve(self):
        progress = True
        while progress:
            progress = False
            rest = []
            for pattern, actual in self._pending:
                if self._solve_one(subst(pattern, self.nats), actual):
                    progress = True
                else:
                    rest.append((pattern, actual))
            self._pending = rest

    def _solve_one(self, pat: Nat, actual: Nat) -> bool:
        unknowns = [v for v in free_vars(pat) if self.unknown(v)]
        if not unknowns:
            return True
        if len(unknowns) != 1:
            return False
        v = unknowns[0]
        pat = normalize(pat)
        if isinstance(pat, NVar):
            self.nats[v] = normalize(actual)
            return True
        if isinstance(pat, NMul) and is_ground(actual):
            coef = normalize(subst(pat, {v: NLit(1)}))
            if is_ground(coef):
                c, a = evaluate(coef), evaluate(actual)
                if c > 0 and a % c == 0:
                    self.nats[v] = NLit(a // c)
                    return True
        return False

    def mem(self, pattern: Memory, actual: Memory):
        if self.unknown(pattern.name) and self.kinds.get(pattern.name) == "mem":
            self.mems[pattern.name] = actual

    def dtype(self, pattern: DataType, actual: DataType):
        if isinstance(pattern, TyVar):
            if self.unknown(pattern.name) and self.kinds.get(pattern.name) == "dt":
                self.dts[pattern.name] = actual
            return
        if type(pattern) is not type(actual):
            return
        if isinstance(pattern, TupleTy) and len(pattern.elems) == len(actual.elems):
            for p, a in zip(pattern.elems, actual.elems):
                self.dtype(p, a)
        elif isinstance(pattern, (ArrayTy, ViewTy)):
            self.dtype(pattern.elem, actual.elem)
            self.nat(pattern.size, actual.size)
        elif isinstance(pattern, RefTy):
            self.mem(pattern.mem, actual.mem)
            self.dtype(pattern.target, actual.target)
        elif isinstance(pattern, BoxTy):
            self.mem(pattern.mem, actual.mem)
            self.dtype(pattern.target, actual.target)

    def dim(self, pattern: Dim, actual: Dim) -> bool:
        if pattern.axes != actual.axes:
            return False
        for p, a in zip(pattern.extents, actual.extents):
            self.nat(p, a)
        return True

    def missing(self) -> Tuple[str, ...]:
        return tuple(n for n in self.kinds if self.unknown(n))

    def apply(self, t: DataType) -> DataType:
        return subst_type(t, self.nats, self.mems, self.dts)


def first_mismatch(expected: DataType, found: DataType) -> Optional[Tuple[DataType, DataType]]:
    """The innermost pair of differing sub-types, for diagnostics."""
    if types_eq(expected, found) is Tri.TRUE:
        return None
    if type(expected) is type(found):
        if isinstance(expected, (RefTy, BoxTy)) and getattr(expected, "mem") == getattr(found, "mem") \
                and getattr(expected, "uniq", None) == getattr(found, "uniq", None):
            return first_mismatch(expected.target, found.target) or (expected, found)
    return expected, found
