"""Compiling places to flat index expressions.

A place is compiled back to front: starting from one coordinate per
dimension of the final view, each view (the last applied first) rewrites the
coordinate list into the coordinates of its input, until the coordinates of
the root array remain. They are then flattened row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exec_model import BLOCK, ExecResource
from .nat import NAdd, NDiv, NLit, NMod, NMul, NSub, NVar, Nat, evaluate, normalize
from .places import expand_place
from .syntax.ast import Deref, Index, PlaceExpr, Proj, Select, ViewApp, ViewInst


class LoweringError(Exception):
    pass


# ---------------------------------------------------------------------------
# index expressions

class IndexExpr:
    """Integer expression over CUDA index symbols, loop variables and constants."""

    __slots__ = ()
    prec = 3

    def __add__(self, o):
        return add(self, _ix(o))

    def __radd__(self, o):
        return add(_ix(o), self)

    def __sub__(self, o):
        return sub(self, _ix(o))

    def __rsub__(self, o):
        return sub(_ix(o), self)

    def __mul__(self, o):
        return mul(self, _ix(o))

    def __rmul__(self, o):
        return mul(_ix(o), self)

    def __str__(self):
        return render_c(self)


@dataclass(frozen=True)
class Const(IndexExpr):
    value: int


@dataclass(frozen=True)
class Sym(IndexExpr):
    name: str


@dataclass(frozen=True)
class BinIx(IndexExpr):
    op: str  # + - * / %
    lhs: IndexExpr
    rhs: IndexExpr

    @property
    def prec(self):
        return 1 if self.op in "+-" else 2


def _ix(x) -> IndexExpr:
    if isinstance(x, IndexExpr):
        return x
    if isinstance(x, int):
        return Const(x)
    raise TypeError(f"not an index expression: {x!r}")


def _offset(e: IndexExpr) -> Tuple[IndexExpr, int]:
    """Split ``x + c`` or ``x - c`` into ``(x, ±c)``."""
    if isinstance(e, BinIx) and e.op in "+-" and isinstance(e.rhs, Const):
        return e.lhs, e.rhs.value if e.op == "+" else -e.rhs.value
    return e, 0


def _shift(a: IndexExpr, c: int) -> IndexExpr:
    base, k = _offset(a)
    k += c
    if k == 0:
        return base
    return BinIx("+", base, Const(k)) if k > 0 else BinIx("-", base, Const(-k))


def add(a: IndexExpr, b: IndexExpr) -> IndexExpr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Const):
        return _shift(a, b.value)
    if isinstance(a, Const) and a.value == 0:
        return b
    return BinIx("+", a, b)


def sub(a: IndexExpr, b: IndexExpr) -> IndexExpr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if isinstance(b, Const):
        return _shift(a, -b.value)
    return BinIx("-", a, b)


def mul(a: IndexExpr, b: IndexExpr) -> IndexExpr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    for x, y in ((a, b), (b, a)):
        if isinstance(x, Const):
            if x.value == 0:
                return Const(0)
            if x.value == 1:
                return y
    return BinIx("*", a, b)


def div(a: IndexExpr, b: IndexExpr) -> IndexExpr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value // b.value)
    if isinstance(b, Const) and b.value == 1:
        return a
    return BinIx("/", a, b)


def mod(a: IndexExpr, b: IndexExpr) -> IndexExpr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value % b.value)
    if isinstance(b, Const) and b.value == 1:
        return Const(0)
    return BinIx("%", a, b)


_OPS = {"+": add, "-": sub, "*": mul, "/": div, "%": mod}


def render_c(e: IndexExpr) -> str:
    """C source with the fewest parentheses that keep the meaning.

    ``+`` and ``*`` are treated as associative, which holds for the
    non-negative in-range values indices take.
    """
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Sym):
        return e.name
    lhs, rhs = render_c(e.lhs), render_c(e.rhs)
    if e.lhs.prec < e.prec:
        lhs = f"({lhs})"
    if e.rhs.prec < e.prec or (e.rhs.prec == e.prec and not (
            e.op == e.rhs.op and e.op in "+*")):
        rhs = f"({rhs})"
    return f"{lhs} {e.op} {rhs}"


def evaluate_index(e: IndexExpr, env: Mapping[str, object]):
    """Evaluate with numpy broadcasting; ``env`` maps symbols to ints or arrays."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Sym):
        try:
            return env[e.name]
        except KeyError:
            raise LoweringError(f"no value for `{e.name}`") from None
    a, b = evaluate_index(e.lhs, env), evaluate_index(e.rhs, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return a // b
    return a % b


def symbols(e: IndexExpr) -> List[str]:
    if isinstance(e, Sym):
        return [e.name]
    if isinstance(e, BinIx):
        out = symbols(e.lhs)
        out += [s for s in symbols(e.rhs) if s not in out]
        return out
    return []


def from_nat(n: Nat, env: Mapping[str, int] | None = None) -> IndexExpr:
    """Ground variables in ``env`` become constants; others stay symbols."""
    env = env or {}
    if isinstance(n, NLit):
        return Const(n.value)
    if isinstance(n, NVar):
        return Const(int(env[n.name])) if n.name in env else Sym(n.name)
    op = {NAdd: "+", NSub: "-", NMul: "*", NDiv: "/", NMod: "%"}[type(n)]
    return _OPS[op](from_nat(n.lhs, env), from_nat(n.rhs, env))


def axis_symbol(stage: str, axis: str) -> str:
    return f"{'blockIdx' if stage == BLOCK else 'threadIdx'}.{axis.lower()}"


# ---------------------------------------------------------------------------
# shapes during the forward pass

@dataclass(frozen=True)
class _PairShape:
    depth: int
    fst: "_Shape"
    snd: "_Shape"


_Shape = Union[Tuple[int, ...], _PairShape]


def _dims(s: _Shape, ax: int) -> int:
    while isinstance(s, _PairShape):
        if ax >= s.depth:
            raise LoweringError("an array operation applied to a pair")
        s = s.fst
    if ax >= len(s):
        raise LoweringError("an array operation applied to a scalar")
    return s[ax]


def _reshape(s: _Shape, ax: int, f, ddepth: int = 0) -> _Shape:
    if isinstance(s, _PairShape):
        if ax >= s.depth:
            raise LoweringError("an array operation applied to a pair")
        return _PairShape(s.depth + ddepth, _reshape(s.fst, ax, f, ddepth),
                          _reshape(s.snd, ax, f, ddepth))
    return f(s)


def _split_shape(s: _Shape, ax: int, k: int) -> _PairShape:
    if isinstance(s, _PairShape):
        if ax >= s.depth:
            raise LoweringError("an array operation applied to a pair")
        a, b = _split_shape(s.fst, ax, k), _split_shape(s.snd, ax, k)
        return _PairShape(ax, _PairShape(s.depth, a.fst, b.fst),
                          _PairShape(s.depth, a.snd, b.snd))
    n = _dims(s, ax)
    if not 0 <= k <= n:
        raise LoweringError(f"cannot split {n} elements at {k}")
    return _PairShape(ax, s[:ax] + (k,) + s[ax + 1:], s[:ax] + (n - k,) + s[ax + 1:])


def _project_shape(s: _Shape, ax: int, which: str) -> _Shape:
    if not isinstance(s, _PairShape) or s.depth > ax:
        raise LoweringError(f"`.{which}` applied to an array")
    if s.depth == ax:
        return s.fst if which == "fst" else s.snd
    return _PairShape(s.depth, _project_shape(s.fst, ax, which),
                      _project_shape(s.snd, ax, which))


# ---------------------------------------------------------------------------
# lowering

def _forward(steps, shape: Tuple[int, ...], execs, env) -> Tuple[List[tuple], _Shape]:
    """Flatten place steps into coordinate operations, tracking the shape."""
    ops: List[tuple] = []
    s: _Shape = tuple(shape)

    def view(v: ViewInst, ax: int):
        nonlocal s
        args = [evaluate(a, env) for a in v.nat_args]
        if v.name == "map":
            for inner in v.inner:
                view(inner, ax + 1)
        elif v.name in ("fst", "snd"):
            s = _project_shape(s, ax, v.name)
            ops.append(("proj", ax, v.name))
        elif v.name == "split":
            s = _split_shape(s, ax, args[0])
            ops.append(("split", ax, args[0]))
        elif v.name == "group":
            k = args[0]
            n = _dims(s, ax)
            if k <= 0 or n % k:
                raise LoweringError(f"group size {k} does not divide {n}")
            s = _reshape(s, ax, lambda t: t[:ax] + (n // k, k) + t[ax + 1:], 1)
            ops.append(("group", ax, k))
        elif v.name == "transpose":
            _dims(s, ax + 1)
            s = _reshape(s, ax, lambda t: t[:ax] + (t[ax + 1], t[ax]) + t[ax + 2:])
            ops.append(("transpose", ax))
        elif v.name in ("reverse", "rev"):
            ops.append(("reverse", ax, _dims(s, ax)))
        else:
            raise LoweringError(f"unknown view `{v.name}`")

    def pick(e: IndexExpr):
        nonlocal s
        _dims(s, 0)
        s = _reshape(s, 0, lambda t: t[1:], -1)
        ops.append(("index", 0, e))

    for st in steps:
        if isinstance(st, Select):
            r = execs[st.exec_name]
            for _, d in r.run():
                pick(sub(Sym(axis_symbol(d.stage, d.axis)), from_nat(normalize(d.lo), env)))
        elif isinstance(st, Index):
            pick(from_nat(st.index, env))
        elif isinstance(st, ViewApp):
            view(st.view, 0)
        elif isinstance(st, Proj):
            s = _project_shape(s, 0, st.which)
            ops.append(("proj", 0, st.which))
        elif isinstance(st, Deref):
            raise LoweringError("a dereference inside a place cannot be lowered")
    return ops, s


def lower_place(place: PlaceExpr, shape: Sequence[int],
                execs: Mapping[str, ExecResource] | None = None,
                env: Mapping[str, int] | None = None, views: Mapping | None = None,
                outputs: Optional[Sequence[str]] = None) -> Tuple[IndexExpr, Tuple[int, ...]]:
    """Flat offset into the root array of ``place``.

    ``shape`` is the root array's ground shape. When the place still denotes
    an array, its coordinates are the symbols ``outputs`` (default ``o0``,
    ``o1``, ...); the second result is that remaining shape.
    """
    env = dict(env or {})
    steps = expand_place(place, views or {}).steps
    if steps and isinstance(steps[0], Deref):
        steps = steps[1:]
    ops, final = _forward(steps, shape, execs or {}, env)
    if isinstance(final, _PairShape):
        raise LoweringError(f"`{place}` denotes a pair of views; project it first")
    names = list(outputs) if outputs is not None else [f"o{i}" for i in range(len(final))]
    if len(names) != len(final):
        raise LoweringError(f"{len(final)} output coordinates needed, got {len(names)}")
    coords: List[IndexExpr] = [Sym(n) for n in names]
    pending: List[Tuple[int, str]] = []  # projections awaiting their split
    for op in reversed(ops):
        kind, ax = op[0], op[1]
        if kind == "index":
            coords.insert(ax, op[2])
            pending = [(d + 1 if d >= ax else d, w) for d, w in pending]
        elif kind == "group":
            a, b = coords[ax], coords[ax + 1]
            coords[ax:ax + 2] = [add(mul(a, Const(op[2])), b)]
            pending = [(d - 1 if d > ax else d, w) for d, w in pending]
        elif kind == "transpose":
            coords[ax], coords[ax + 1] = coords[ax + 1], coords[ax]
        elif kind == "reverse":
            coords[ax] = sub(Const(op[2] - 1), coords[ax])
        elif kind == "proj":
            pending.append((ax, op[2]))
        elif kind == "split":
            for i in range(len(pending) - 1, -1, -1):
                if pending[i][0] == ax:
                    which = pending.pop(i)[1]
                    break
            else:
                raise LoweringError("a split without a projection")
            if which == "snd":
                coords[ax] = add(coords[ax], Const(op[2]))
    if len(coords) != len(shape):
        raise LoweringError("coordinate count does not match the root array")
    flat: IndexExpr = Const(0)
    for c, n in zip(coords, shape):
        flat = add(mul(flat, Const(n)), c)
    return flat, tuple(final)


def evaluate_over(expr: IndexExpr, ranges: Mapping[str, int]) -> np.ndarray:
    """Evaluate on the full grid of symbol values; axes follow ``ranges`` order."""
    names = list(ranges)
    grids = np.meshgrid(*[np.arange(ranges[n]) for n in names], indexing="ij")
    env: Dict[str, object] = dict(zip(names, grids))
    out = evaluate_index(expr, env)
    return np.broadcast_to(np.asarray(out), tuple(ranges[n] for n in names))
