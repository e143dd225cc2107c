"""Symbolic natural-number size expressions.

Sizes appear in array types, grid dimensions, split positions and view
arguments.  They are kept as small expression trees and compared through a
canonical sum-of-monomials normal form.  All decision procedures are
three-valued: when free variables prevent an answer they return
``Tri.UNKNOWN`` and the caller decides whether that is an error.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple, Union


class NatError(ValueError):
    """Malformed size expression (e.g. division by literal zero)."""


class Tri(enum.Enum):
    TRUE = "true"
    FALSE = "false"
    UNKNOWN = "unknown"

    @classmethod
    def of(cls, b: bool) -> "Tri":
        return cls.TRUE if b else cls.FALSE


class Nat:
    """Base class of size expressions.  Supports ``+``, ``*``, ``//`` and ``%``."""

    __slots__ = ()

    def __add__(self, other):
        return NAdd(self, as_nat(other))

    def __radd__(self, other):
        return NAdd(as_nat(other), self)

    def __mul__(self, other):
        return NMul(self, as_nat(other))

    def __rmul__(self, other):
        return NMul(as_nat(other), self)

    def __floordiv__(self, other):
        return NDiv(self, as_nat(other))

    def __mod__(self, other):
        return NMod(self, as_nat(other))

    def __sub__(self, other):
        return NSub(self, as_nat(other))

    def __str__(self) -> str:
        return render(self)


@dataclass(frozen=True, eq=True, repr=False)
class NLit(Nat):
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise NatError(f"negative size literal {self.value}")

    def __repr__(self):
        return f"NLit({self.value})"


@dataclass(frozen=True, eq=True, repr=False)
class NVar(Nat):
    name: str

    def __repr__(self):
        return f"NVar({self.name!r})"


@dataclass(frozen=True, eq=True, repr=False)
class NAdd(Nat):
    lhs: Nat
    rhs: Nat

    def __repr__(self):
        return f"NAdd({self.lhs!r}, {self.rhs!r})"


@dataclass(frozen=True, eq=True, repr=False)
class NSub(Nat):
    # only built internally (split's remainder); callers prove lhs >= rhs first
    lhs: Nat
    rhs: Nat

    def __repr__(self):
        return f"NSub({self.lhs!r}, {self.rhs!r})"


@dataclass(frozen=True, eq=True, repr=False)
class NMul(Nat):
    lhs: Nat
    rhs: Nat

    def __repr__(self):
        return f"NMul({self.lhs!r}, {self.rhs!r})"


@dataclass(frozen=True, eq=True, repr=False)
class NDiv(Nat):
    lhs: Nat
    rhs: Nat

    def __repr__(self):
        return f"NDiv({self.lhs!r}, {self.rhs!r})"


@dataclass(frozen=True, eq=True, repr=False)
class NMod(Nat):
    lhs: Nat
    rhs: Nat

    def __repr__(self):
        return f"NMod({self.lhs!r}, {self.rhs!r})"


NatLike = Union[Nat, int, str]


def as_nat(x: NatLike) -> Nat:
    if isinstance(x, Nat):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not a size")
    if isinstance(x, int):
        return NLit(x)
    if isinstance(x, str):
        return NVar(x)
    raise TypeError(f"cannot convert {x!r} to a size expression")


# ---------------------------------------------------------------------------
# polynomial normal form
#
# A polynomial maps a monomial (sorted tuple of atoms) to an integer
# coefficient.  Atoms are NVar nodes or opaque, already-normalized NDiv/NMod
# nodes.  Coefficients may go negative transiently (subtraction).

Atom = Nat
Monomial = Tuple[Atom, ...]
Poly = Dict[Monomial, int]


def _atom_key(a: Atom) -> Tuple[int, str]:
    return (0, a.name) if isinstance(a, NVar) else (1, render(a))


def _mono_key(m: Monomial):
    return tuple(_atom_key(a) for a in m)


def _clean(p: Poly) -> Poly:
    return {m: c for m, c in p.items() if c != 0}


def _padd(a: Poly, b: Poly, sign: int = 1) -> Poly:
    out = dict(a)
    for m, c in b.items():
        out[m] = out.get(m, 0) + sign * c
    return _clean(out)


def _pmul(a: Poly, b: Poly) -> Poly:
    out: Poly = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = tuple(sorted(ma + mb, key=_atom_key))
            out[m] = out.get(m, 0) + ca * cb
    return _clean(out)


def _const(p: Poly):
    """The integer value of a ground polynomial, else None."""
    if not p:
        return 0
    if set(p) == {()}:
        return p[()]
    return None


def _remove_factor(m: Monomial, f: Monomial):
    rest = list(m)
    for a in f:
        if a in rest:
            rest.remove(a)
        else:
            return None
    return tuple(rest)


def _pdiv_exact(p: Poly, d: Poly):
    """p / d when d is a single monomial dividing every monomial of p, else None."""
    if len(d) != 1:
        return None
    (dm, dc), = d.items()
    if dc <= 0:
        return None
    out: Poly = {}
    for m, c in p.items():
        if c % dc:
            return None
        rest = _remove_factor(m, dm)
        if rest is None:
            return None
        out[rest] = out.get(rest, 0) + c // dc
    return _clean(out)


def _to_poly(n: Nat) -> Poly:
    if isinstance(n, NLit):
        return _clean({(): n.value})
    if isinstance(n, NVar):
        return {(n,): 1}
    if isinstance(n, NAdd):
        return _padd(_to_poly(n.lhs), _to_poly(n.rhs))
    if isinstance(n, NSub):
        return _padd(_to_poly(n.lhs), _to_poly(n.rhs), -1)
    if isinstance(n, NMul):
        return _pmul(_to_poly(n.lhs), _to_poly(n.rhs))
    if isinstance(n, (NDiv, NMod)):
        num, den = _to_poly(n.lhs), _to_poly(n.rhs)
        dc = _const(den)
        if dc == 0:
            raise NatError(f"division by zero in `{render(n)}`")
        nc = _const(num)
        if nc is not None and dc is not None:
            if nc < 0:
                raise NatError(f"negative size in `{render(n)}`")
            return _clean({(): nc // dc if isinstance(n, NDiv) else nc % dc})
        q = _pdiv_exact(num, den)
        if q is not None:
            return q if isinstance(n, NDiv) else {}
        atom = type(n)(_from_poly(num), _from_poly(den))
        return {(atom,): 1}
    raise TypeError(f"not a size expression: {n!r}")


def _mono_tree(m: Monomial, c: int) -> Nat:
    if not m:
        return NLit(c)
    tree: Nat = m[0] if c == 1 else NMul(NLit(c), m[0])
    for a in m[1:]:
        tree = NMul(tree, a)
    return tree


def _from_poly(p: Poly) -> Nat:
    if not p:
        return NLit(0)
    monos = sorted((m for m in p if m), key=_mono_key)
    ordered = monos + ([()] if () in p else [])
    pos = [(m, p[m]) for m in ordered if p[m] > 0]
    neg = [(m, -p[m]) for m in ordered if p[m] < 0]
    tree: Nat | None = None
    for m, c in pos:
        t = _mono_tree(m, c)
        tree = t if tree is None else NAdd(tree, t)
    if tree is None:
        tree = NLit(0)
    for m, c in neg:
        tree = NSub(tree, _mono_tree(m, c))
    return tree


def normalize(n: NatLike) -> Nat:
    """Canonical sum-of-monomials form; idempotent, constant-folded."""
    return _from_poly(_to_poly(as_nat(n)))


def free_vars(n: NatLike) -> frozenset:
    n = as_nat(n)
    if isinstance(n, NVar):
        return frozenset({n.name})
    if isinstance(n, NLit):
        return frozenset()
    return free_vars(n.lhs) | free_vars(n.rhs)


def is_ground(n: NatLike) -> bool:
    return not free_vars(n)


def evaluate(n: NatLike, env: Mapping[str, int] | None = None) -> int:
    """Evaluate with floor division; raises KeyError on an unbound variable."""
    n = as_nat(n)
    env = env or {}
    if isinstance(n, NLit):
        return n.value
    if isinstance(n, NVar):
        return int(env[n.name])
    a, b = evaluate(n.lhs, env), evaluate(n.rhs, env)
    if isinstance(n, NAdd):
        return a + b
    if isinstance(n, NSub):
        return a - b
    if isinstance(n, NMul):
        return a * b
    if b == 0:
        raise NatError(f"division by zero in `{render(n)}`")
    return a // b if isinstance(n, NDiv) else a % b


def as_int(n: NatLike):
    """The value of a ground size, or None."""
    p = _to_poly(as_nat(n))
    return _const(p)


def nat_eq(a: NatLike, b: NatLike) -> Tri:
    pa, pb = _to_poly(as_nat(a)), _to_poly(as_nat(b))
    if pa == pb:
        return Tri.TRUE
    ca, cb = _const(pa), _const(pb)
    if ca is not None and cb is not None:
        return Tri.FALSE
    return Tri.UNKNOWN


def divides(k: NatLike, n: NatLike) -> Tri:
    pk = _to_poly(as_nat(k))
    if _const(pk) == 0:
        raise NatError("view parameter must not be zero")
    pn = _to_poly(as_nat(n))
    ck, cn = _const(pk), _const(pn)
    if ck is not None and cn is not None:
        return Tri.of(cn % ck == 0)
    if _pdiv_exact(pn, pk) is not None:
        return Tri.TRUE
    return Tri.UNKNOWN


def nat_le(a: NatLike, b: NatLike) -> Tri:
    """a <= b.  Variables range over naturals, so a difference whose
    coefficients are all non-negative decides the question."""
    diff = _padd(_to_poly(as_nat(b)), _to_poly(as_nat(a)), -1)
    if all(c >= 0 for c in diff.values()):
        return Tri.TRUE
    if all(c <= 0 for c in diff.values()) and diff.get((), 0) < 0:
        return Tri.FALSE
    return Tri.UNKNOWN


def nat_lt(a: NatLike, b: NatLike) -> Tri:
    return nat_le(NAdd(as_nat(a), NLit(1)), b)


def subst(n: NatLike, bindings: Mapping[str, NatLike]) -> Nat:
    """Replace variables, then normalize.  Bindings are applied in one pass."""
    return normalize(_subst(as_nat(n), {k: as_nat(v) for k, v in bindings.items()}))


def _subst(n: Nat, b: Mapping[str, Nat]) -> Nat:
    if isinstance(n, NVar):
        return b.get(n.name, n)
    if isinstance(n, NLit):
        return n
    return type(n)(_subst(n.lhs, b), _subst(n.rhs, b))


def subst_raw(n: NatLike, bindings: Mapping[str, NatLike]) -> Nat:
    """Substitution without normalizing (keeps user-written shape)."""
    return _subst(as_nat(n), {k: as_nat(v) for k, v in bindings.items()})


_PREC = {NAdd: 1, NSub: 1, NMul: 2, NDiv: 2, NMod: 2}
_OPS = {NAdd: "+", NSub: "-", NMul: "*", NDiv: "/", NMod: "%"}


def render(n: Nat, compact: bool = False) -> str:
    """Concrete syntax of a size; accepted back by the parser."""
    if isinstance(n, NLit):
        return str(n.value)
    if isinstance(n, NVar):
        return n.name
    prec = _PREC[type(n)]
    lhs = render(n.lhs, compact)
    if _PREC.get(type(n.lhs), 3) < prec:
        lhs = f"({lhs})"
    rhs = render(n.rhs, compact)
    rp = _PREC.get(type(n.rhs), 3)
    if rp < prec or (rp == prec and not isinstance(n, (NAdd, NMul))):
        rhs = f"({rhs})"
    op = _OPS[type(n)]
    if prec == 1 and not compact:
        return f"{lhs} {op} {rhs}"
    return f"{lhs}{op}{rhs}"


def nat_sum(xs: Iterable[NatLike]) -> Nat:
    total: Nat = NLit(0)
    for x in xs:
        total = NAdd(total, as_nat(x))
    return normalize(total)


def nat_prod(xs: Iterable[NatLike]) -> Nat:
    total: Nat = NLit(1)
    for x in xs:
        total = NMul(total, as_nat(x))
    return normalize(total)
