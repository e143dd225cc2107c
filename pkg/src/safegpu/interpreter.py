"""Sequential simulator of grid execution with element-level access logging.

The simulator is the ground truth for races, barrier divergence and view
semantics. Views are evaluated on tables of flat offsets (numpy arrays),
built directly from the definition of each view rather than from the index
arithmetic used by code generation.

Threads run one block at a time, in row-major order with X fastest. Inside a
block every thread runs until its next barrier; a round ends when all of
them have arrived. Races are found from the log, not from the schedule, so
the sequential order is not a claim about real interleavings.
"""

from __future__ import annotations

import itertools
from collections import ChainMap, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .exec_model import BLOCK, ExecResource
from .nat import Nat, NatError, evaluate
from .places import expand_place
from .syntax.ast import (
    App, ArrayLit, ArrayRepeat, ArrayTy, Assign, BinOp, Block, Borrow, BoxTy,
    DataType, Deref, Dim, ExecLevel, ForEach, ForNat, FunctionDef, Index, Let, Lit,
    Memory, PlaceExpr, PlaceTerm, Program, Proj, RefTy, Scalar, Sched, Select,
    SplitExec, Sync, UnOp, ViewApp, ViewInst, ViewTy, desugar_sched,
)
from .types import Unifier, subst_type


class SimError(Exception):
    """The simulated program did something with no defined meaning."""


class BarrierDivergence(SimError):
    def __init__(self, block: Tuple[int, ...], arrived: int, total: int):
        super().__init__(f"block {block}: {arrived} of {total} threads reached a barrier, "
                         "the others finished")
        self.block = block
        self.arrived = arrived
        self.total = total


class OutOfBounds(SimError):
    pass


# ---------------------------------------------------------------------------
# ground view semantics

@dataclass(frozen=True)
class Pair:
    """A view whose elements at nesting ``depth`` are pairs.

    Stored as two offset tables that share their first ``depth`` dimensions.
    """
    depth: int
    fst: "OffsetView"
    snd: "OffsetView"


OffsetView = Union[np.ndarray, Pair]


def _lift(v: OffsetView, ax: int, fn, delta: int = 0) -> OffsetView:
    if isinstance(v, Pair):
        if ax >= v.depth:
            raise SimError("an array view applied to a pair")
        return Pair(v.depth + delta, _lift(v.fst, ax, fn, delta), _lift(v.snd, ax, fn, delta))
    if v.ndim <= ax:
        raise SimError("a view applied to a scalar")
    return fn(v)


def take(v: OffsetView, ax: int, i: int) -> OffsetView:
    def pick(a):
        if not 0 <= i < a.shape[ax]:
            raise OutOfBounds(f"index {i} out of range for length {a.shape[ax]}")
        return np.take(a, i, axis=ax)
    return _lift(v, ax, pick, -1)


def _group(v, ax, k):
    def go(a):
        n = a.shape[ax]
        if k <= 0 or n % k:
            raise SimError(f"group size {k} does not divide {n}")
        return a.reshape(a.shape[:ax] + (n // k, k) + a.shape[ax + 1:])
    return _lift(v, ax, go, 1)


def _transpose(v, ax):
    def go(a):
        if a.ndim < ax + 2:
            raise SimError("transpose needs two dimensions")
        return np.swapaxes(a, ax, ax + 1)
    return _lift(v, ax, go)


def _reverse(v, ax):
    return _lift(v, ax, lambda a: np.flip(a, axis=ax))


def _split(v: OffsetView, ax: int, k: int) -> Pair:
    if isinstance(v, Pair):
        if ax >= v.depth:
            raise SimError("an array view applied to a pair")
        f, s = _split(v.fst, ax, k), _split(v.snd, ax, k)
        return Pair(ax, Pair(v.depth, f.fst, s.fst), Pair(v.depth, f.snd, s.snd))
    if v.ndim <= ax:
        raise SimError("a view applied to a scalar")
    n = v.shape[ax]
    if not 0 <= k <= n:
        raise SimError(f"cannot split {n} elements at {k}")
    idx = np.arange(n)
    return Pair(ax, np.take(v, idx[:k], axis=ax), np.take(v, idx[k:], axis=ax))


def project(v: OffsetView, which: str, ax: int = 0) -> OffsetView:
    if not isinstance(v, Pair) or v.depth > ax:
        raise SimError(f"`.{which}` applied to an array")
    if v.depth == ax:
        return v.fst if which == "fst" else v.snd
    return Pair(v.depth, project(v.fst, which, ax), project(v.snd, which, ax))


def apply_view(v: OffsetView, inst: ViewInst, env: Mapping[str, int] | None = None,
               ax: int = 0) -> OffsetView:
    """Apply one built-in view at nesting depth ``ax``."""
    args = [evaluate(a, env) for a in inst.nat_args]
    name = inst.name
    if name == "map":
        for inner in inst.inner:
            v = apply_view(v, inner, env, ax + 1)
        return v
    if name in ("fst", "snd"):
        return project(v, name, ax)
    if name == "split":
        return _split(v, ax, args[0])
    if name == "group":
        return _group(v, ax, args[0])
    if name == "transpose":
        return _transpose(v, ax)
    if name in ("reverse", "rev"):
        return _reverse(v, ax)
    raise SimError(f"unknown view `{name}`")


def view_permutation(chain: Sequence[ViewInst], shape: Union[int, Sequence[int]],
                     env: Mapping[str, int] | None = None) -> OffsetView:
    """Flat input offset for every coordinate of the viewed array.

    The result has the shape of the view (a ``Pair`` when the chain ends in
    an unprojected split).
    """
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    v: OffsetView = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    for inst in chain:
        v = apply_view(v, inst, env)
    return v


# ---------------------------------------------------------------------------
# memory and logs

DTYPES = {"i32": np.int32, "f32": np.float32, "f64": np.float64, "bool": np.bool_}


@dataclass(eq=False)
class Buffer:
    id: int
    name: str
    mem: str
    shape: Tuple[int, ...]
    data: np.ndarray  # flat
    elem: str = "i32"
    logged: bool = True
    _full: Optional[np.ndarray] = field(default=None, repr=False)

    def full(self) -> np.ndarray:
        if self._full is None:
            self._full = np.arange(self.data.size, dtype=np.int64).reshape(self.shape)
        return self._full

    def value(self) -> np.ndarray:
        return self.data.reshape(self.shape).copy()


@dataclass(frozen=True, eq=False)
class Ref:
    buf: Buffer
    offs: OffsetView


@dataclass(eq=False)
class Slot:
    value: object


class Access(NamedTuple):
    thread: Tuple[Tuple[int, ...], Tuple[int, ...]]  # (block coords, thread coords)
    buffer: int
    offset: int
    kind: str  # "read" | "write"
    epoch: int


@dataclass
class AccessLog:
    kernel: str = ""
    records: List[Access] = field(default_factory=list)
    buffers: Dict[int, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.records)


class Race(NamedTuple):
    first: Access
    second: Access


def detect_races(log: AccessLog) -> List[Race]:
    """All pairs of accesses to one location by different threads that no barrier
    orders and of which at least one writes.

    Barriers order threads of one block only, so accesses from different
    blocks conflict whatever their epochs.
    """
    by_loc: Dict[Tuple[int, int], List[Access]] = defaultdict(list)
    for r in log.records:
        by_loc[(r.buffer, r.offset)].append(r)
    races = []
    for loc in sorted(by_loc):
        recs = by_loc[loc]
        if all(r.kind == "read" for r in recs):
            continue
        for i, a in enumerate(recs):
            for b in recs[i + 1:]:
                if a.kind == "read" and b.kind == "read":
                    continue
                if a.thread == b.thread:
                    continue
                if a.thread[0] == b.thread[0] and a.epoch != b.epoch:
                    continue
                races.append(Race(a, b))
    return races


# ---------------------------------------------------------------------------
# configuration and results

@dataclass
class SimConfig:
    """Ground launch configuration for :func:`run_kernel` and :func:`run_function`.

    ``blocks`` and ``threads`` list extents in the axis order of the kernel's
    grid type; left out, they follow from ``nats``. Size parameters missing
    from ``nats`` are inferred from the extents and the input shapes. An
    input is an array or one of ``arange``, ``zeros`` and ``ones``; missing
    inputs default to ``arange``.
    """
    blocks: Optional[Tuple[int, ...]] = None
    threads: Optional[Tuple[int, ...]] = None
    nats: Dict[str, int] = field(default_factory=dict)
    inputs: Dict[str, object] = field(default_factory=dict)
    max_threads: int = 64


@dataclass
class SimResult:
    memory: Dict[str, object]
    logs: List[AccessLog]
    nats: Dict[str, int] = field(default_factory=dict)

    @property
    def log(self) -> AccessLog:
        out = AccessLog("+".join(l.kernel for l in self.logs))
        for l in self.logs:
            out.records.extend(l.records)
            out.buffers.update(l.buffers)
        return out

    def races(self) -> List[Race]:
        return [r for l in self.logs for r in detect_races(l)]

    def report(self, max_races: int = 10) -> dict:
        launches = []
        for l in self.logs:
            races = detect_races(l)
            launches.append({
                "kernel": l.kernel, "accesses": len(l.records), "race_count": len(races),
                "races": [_race_json(r, l) for r in races[:max_races]],
            })
        memory = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                  for k, v in sorted(self.memory.items())}
        return {"nats": dict(sorted(self.nats.items())), "launches": launches,
                "memory": memory, "divergence": None}


def _race_json(r: Race, log: AccessLog) -> dict:
    def one(a: Access):
        return {"block": list(a.thread[0]), "thread": list(a.thread[1]), "kind": a.kind,
                "epoch": a.epoch}
    return {"buffer": log.buffers.get(r.first.buffer, str(r.first.buffer)),
            "offset": r.first.offset, "first": one(r.first), "second": one(r.second)}


# ---------------------------------------------------------------------------
# the simulator

_SYNC = "sync"
INTRINSICS = ("CpuHeap::new", "GpuGlobal::alloc_copy", "alloc", "copy_mem_to_host",
              "copy_mem_to_gpu")


class Loc(NamedTuple):
    buf: Buffer
    offs: OffsetView


@dataclass
class _Ctx:
    vars: ChainMap
    execs: ChainMap
    cur: ExecResource
    nats: ChainMap

    def child(self, **kw) -> "_Ctx":
        execs = self.execs.new_child(kw.pop("execs")) if "execs" in kw else self.execs
        nats = self.nats.new_child(kw.pop("nats")) if "nats" in kw else self.nats
        return _Ctx(self.vars.new_child(), execs, kw.get("cur", self.cur), nats)


@dataclass
class _ThreadState:
    block: Dict[str, int]
    thread: Dict[str, int]
    ident: Tuple[Tuple[int, ...], Tuple[int, ...]]
    epoch: int = 0
    allocs: Dict[int, int] = field(default_factory=lambda: defaultdict(int))


def _coords(d: Dim) -> List[Tuple[Dict[str, int], Tuple[int, ...]]]:
    exts = [e.value for e in d.extents]
    out = []
    for combo in itertools.product(*[range(e) for e in reversed(exts)]):
        c = tuple(reversed(combo))
        out.append((dict(zip(d.axes, c)), c))
    return out


def _ground_dim(d: Dim, env: Mapping[str, int]) -> Dim:
    from .nat import NLit
    return Dim(d.axes, tuple(NLit(evaluate(e, env)) for e in d.extents))


def _wrap_i32(x: int) -> int:
    return (x + 2 ** 31) % 2 ** 32 - 2 ** 31


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _arith(op: str, a, b):
    if op in ("==", "!="):
        return (a == b) == (op == "==")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    ints = _is_int(a) and _is_int(b)
    if op in ("/", "%") and b == 0:
        if ints:
            raise SimError("integer division by zero")
        return float("nan") if a == 0 or op == "%" else float("inf") * (1 if a > 0 else -1)
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    elif op == "/":
        r = (abs(a) // abs(b)) * (1 if (a < 0) == (b < 0) else -1) if ints else a / b
    elif op == "%":
        r = a - b * ((abs(a) // abs(b)) * (1 if (a < 0) == (b < 0) else -1)) if ints \
            else float(np.fmod(a, b))
    else:
        raise SimError(f"unknown operator `{op}`")
    return _wrap_i32(r) if ints else r


class Simulator:
    """Runs functions of one program; keeps the access log of every launch."""

    def __init__(self, prog: Program, max_threads: int = 64):
        self.prog = prog
        self.functions = prog.functions
        self.views = prog.views
        self.max_threads = max_threads
        self.logs: List[AccessLog] = []
        self._log: Optional[AccessLog] = None
        self._th: Optional[_ThreadState] = None
        self._shared: Dict = {}
        self._ids = itertools.count()
        self._steps: Dict[int, Tuple] = {}
        self._scheds: Dict[int, Sched] = {}
        self._runs: Dict[ExecResource, List[Tuple[str, str, int]]] = {}
        self._bounds: Dict[ExecResource, Dict] = {}
        self._derived: Dict[Tuple, object] = {}

    # -- buffers -------------------------------------------------------------------
    def new_buffer(self, name: str, mem: str, value, elem: Optional[str] = None,
                   logged: bool = True) -> Buffer:
        arr = np.asarray(value)
        if elem is None:
            elem = {np.dtype(np.bool_): "bool", np.dtype(np.float32): "f32"}.get(
                arr.dtype, "f64" if arr.dtype.kind == "f" else "i32")
        data = np.array(arr, dtype=DTYPES[elem]).reshape(-1)
        return Buffer(next(self._ids), name, mem, tuple(arr.shape), data, elem, logged)

    def _record(self, buf: Buffer, offs: np.ndarray, kind: str):
        if self._log is None or not buf.logged:
            return
        self._log.buffers.setdefault(buf.id, buf.name)
        th = self._th
        for o in np.asarray(offs).reshape(-1).tolist():
            self._log.records.append(Access(th.ident, buf.id, o, kind, th.epoch))

    # -- exec resources (cached, all ground) -------------------------------------------
    def _forall(self, r: ExecResource, axis: str) -> ExecResource:
        key = ("forall", r, axis)
        if key not in self._derived:
            self._derived[key] = r.forall(axis)
        return self._derived[key]

    def _split_res(self, r: ExecResource, axis: str, pos: int):
        key = ("split", r, axis, pos)
        if key not in self._derived:
            self._derived[key] = r.split(axis, pos)
        return self._derived[key]

    def _select_coords(self, r: ExecResource) -> List[int]:
        run = self._runs.get(r)
        if run is None:
            run = [(d.stage, d.axis, evaluate(d.lo)) for _, d in r.run()]
            self._runs[r] = run
        th = self._th
        return [(th.block if stage == BLOCK else th.thread)[axis] - lo
                for stage, axis, lo in run]

    def _contains(self, r: ExecResource) -> bool:
        bounds = self._bounds.get(r)
        if bounds is None:
            bounds = self._bounds[r] = r.split_bounds()
        th = self._th
        for (stage, axis), (lo, hi) in bounds.items():
            if not lo <= (th.block if stage == BLOCK else th.thread).get(axis, 0) < hi:
                return False
        return True

    # -- places ------------------------------------------------------------------
    def _expanded(self, p: PlaceExpr) -> Tuple:
        steps = self._steps.get(id(p))
        if steps is None:
            steps = expand_place(p, self.views).steps
            self._steps[id(p)] = steps
            self._steps[id(p), "keep"] = p  # keep the id stable
        return steps

    def resolve(self, p: PlaceExpr, ctx: _Ctx) -> Union[Slot, Loc]:
        steps = self._expanded(p)
        b = ctx.vars.get(p.root)
        if b is None:
            if p.root in ctx.nats and not steps:
                return Slot(ctx.nats[p.root])
            raise SimError(f"unbound variable `{p.root}`")
        if isinstance(b, Slot):
            if not steps:
                return b
            v = b.value
            if isinstance(v, Ref):
                buf, offs = v.buf, v.offs
            elif isinstance(v, Buffer):
                buf, offs = v, v.full()
            else:
                raise SimError(f"`{p.root}` is not an array or reference")
        else:
            if not steps:
                return Slot(b)
            buf, offs = b, b.full()
        start = 1 if steps and isinstance(steps[0], Deref) else 0
        for s in steps[start:]:
            if isinstance(s, Select):
                for c in self._select_coords(ctx.execs[s.exec_name]):
                    offs = take(offs, 0, c)
            elif isinstance(s, Index):
                offs = take(offs, 0, evaluate(s.index, ctx.nats))
            elif isinstance(s, ViewApp):
                offs = apply_view(offs, s.view, ctx.nats)
            elif isinstance(s, Proj):
                offs = project(offs, s.which)
            else:
                raise SimError("dereferencing a reference stored in memory is not supported")
        return Loc(buf, offs)

    def read_loc(self, loc: Loc):
        if isinstance(loc.offs, Pair):
            raise SimError("cannot read a pair of views as a value")
        self._record(loc.buf, loc.offs, "read")
        if loc.offs.ndim == 0:
            return loc.buf.data[int(loc.offs)].item()
        return loc.buf.data[loc.offs].copy()

    def write_loc(self, loc: Loc, value):
        if isinstance(loc.offs, Pair):
            raise SimError("cannot assign to a pair of views")
        if loc.offs.ndim == 0:
            if _is_int(value) and loc.buf.elem == "i32":
                value = _wrap_i32(value)
            loc.buf.data[int(loc.offs)] = value
        else:
            value = np.asarray(value)
            if value.shape != loc.offs.shape:
                raise SimError(f"cannot assign shape {value.shape} to {loc.offs.shape}")
            loc.buf.data[loc.offs] = value
        self._record(loc.buf, loc.offs, "write")

    # -- terms (generators: a barrier suspends the running thread) -------------------
    def _block(self, b: Block, ctx: _Ctx):
        inner = ctx.child()
        val = None
        for t in b.terms:
            val = yield from self._term(t, inner)
        return val

    def _term(self, t, ctx: _Ctx):
        if isinstance(t, Lit):
            return None if t.kind == "unit" else t.value
        if isinstance(t, PlaceTerm):
            r = self.resolve(t.place, ctx)
            return r.value if isinstance(r, Slot) else self.read_loc(r)
        if isinstance(t, Borrow):
            r = self.resolve(t.place, ctx)
            if isinstance(r, Slot):
                if isinstance(r.value, Buffer):
                    return Ref(r.value, r.value.full())
                if isinstance(r.value, Ref):
                    return r.value
                raise SimError(f"cannot borrow the local value `{t.place}`")
            return Ref(r.buf, r.offs)
        if isinstance(t, Let):
            v = yield from self._term(t.value, ctx)
            if isinstance(v, np.ndarray):
                v = self.new_buffer(t.name, "private", v, logged=False)
            ctx.vars[t.name] = v if isinstance(v, Buffer) else Slot(v)
            return None
        if isinstance(t, Assign):
            v = yield from self._term(t.value, ctx)
            r = self.resolve(t.place, ctx)
            if isinstance(r, Slot):
                if isinstance(r.value, (Buffer, Ref)) and isinstance(v, np.ndarray):
                    raise SimError(f"cannot assign an array to `{t.place}`")
                r.value = v
            else:
                self.write_loc(r, v)
            return None
        if isinstance(t, Block):
            return (yield from self._block(t, ctx))
        if isinstance(t, BinOp):
            a = yield from self._term(t.lhs, ctx)
            if t.op == "&&":
                return bool(a) and bool((yield from self._term(t.rhs, ctx)))
            if t.op == "||":
                return bool(a) or bool((yield from self._term(t.rhs, ctx)))
            b = yield from self._term(t.rhs, ctx)
            return _arith(t.op, a, b)
        if isinstance(t, UnOp):
            v = yield from self._term(t.operand, ctx)
            if t.op == "!":
                return not v
            return _wrap_i32(-v) if _is_int(v) else -v
        if isinstance(t, ArrayLit):
            vals = []
            for e in t.elems:
                vals.append((yield from self._term(e, ctx)))
            return np.array(vals)
        if isinstance(t, ArrayRepeat):
            v = yield from self._term(t.value, ctx)
            n = evaluate(t.count, ctx.nats)
            return np.stack([np.asarray(v)] * n) if n else np.zeros((0,))
        if isinstance(t, App):
            return (yield from self._call(t, ctx))
        if isinstance(t, Sched):
            return (yield from self._sched(t, ctx))
        if isinstance(t, SplitExec):
            r = ctx.execs[t.exec_name]
            fst, snd = self._split_res(r, t.axis, evaluate(t.pos, ctx.nats))
            if self._contains(fst):
                sub = ctx.child(execs={t.fst_binder: fst}, cur=fst)
                return (yield from self._block(t.fst_body, sub))
            sub = ctx.child(execs={t.snd_binder: snd}, cur=snd)
            return (yield from self._block(t.snd_body, sub))
        if isinstance(t, Sync):
            if not ctx.cur.on_gpu:
                raise SimError("`sync` executed on the CPU")
            yield _SYNC
            self._th.epoch += 1
            return None
        if isinstance(t, ForNat):
            for i in range(evaluate(t.lo, ctx.nats), evaluate(t.hi, ctx.nats)):
                sub = ctx.child(nats={t.var: i})
                sub.vars[t.var] = Slot(i)
                yield from self._block(t.body, sub)
            return None
        if isinstance(t, ForEach):
            if not isinstance(t.coll, PlaceTerm):
                raise SimError("can only iterate over a place")
            loc = self.resolve(t.coll.place, ctx)
            if not isinstance(loc, Loc) or isinstance(loc.offs, Pair) or loc.offs.ndim == 0:
                raise SimError(f"cannot iterate over `{t.coll.place}`")
            for i in range(loc.offs.shape[0]):
                sub = ctx.child()
                sub.vars[t.var] = Slot(self.read_loc(Loc(loc.buf, loc.offs[i])))
                yield from self._block(t.body, sub)
            return None
        raise SimError(f"cannot simulate {type(t).__name__}")

    def _sched(self, t: Sched, ctx: _Ctx):
        d = self._scheds.get(id(t))
        if d is None:
            d = self._scheds[id(t)] = desugar_sched(t)
            self._scheds[id(t), "keep"] = t
        r = ctx.execs[d.exec_name]
        if d.axes:
            axis = d.axes[0]
        else:
            remaining = r.remaining_axes()
            if len(remaining) != 1:
                raise SimError(f"`sched` over `{d.exec_name}` must name its axes")
            axis = remaining[0]
        new = self._forall(r, axis)
        sub = ctx.child(execs={d.binder: new}, cur=new)
        return (yield from self._block(d.body, sub))

    # -- calls -------------------------------------------------------------------
    def _arg_type(self, v) -> Optional[DataType]:
        if isinstance(v, Ref) and isinstance(v.offs, np.ndarray):
            from .nat import NLit
            ty: DataType = Scalar(v.buf.elem)
            for n in reversed(v.offs.shape):
                ty = ArrayTy(ty, NLit(n))
            return RefTy(False, Memory(v.buf.mem), ty)
        return None

    def callee_nats(self, callee: FunctionDef, generics, args, nats: Mapping[str, int],
                    launch: Optional[Tuple[Dim, Dim]] = None) -> Dict[str, int]:
        from .nat import NLit
        u = Unifier(dict(callee.type_params))
        for (name, kind), g in zip(callee.type_params, generics):
            if kind == "nat":
                u.nats[name] = NLit(evaluate(g, nats))
            elif kind == "mem":
                u.mems[name] = g if isinstance(g, Memory) else Memory(str(g))
        if launch is not None:
            lv = callee.exec_level
            u.dim(lv.blocks, _ground_dim(launch[0], nats))
            u.dim(lv.threads, _ground_dim(launch[1], nats))
        for (_, pty), a in zip(callee.params, args):
            at = self._arg_type(a)
            if at is not None:
                u.dtype(pty, at)
        missing = [n for n, k in callee.type_params if k == "nat" and n not in u.nats]
        if missing:
            raise SimError(f"cannot determine size `{missing[0]}` of `{callee.name}`")
        return {n: evaluate(u.nats[n]) for n, k in callee.type_params if k == "nat"}

    def _call(self, t: App, ctx: _Ctx):
        if t.fn in INTRINSICS:
            return (yield from self._intrinsic(t, ctx))
        callee = self.functions.get(t.fn)
        if callee is None:
            raise SimError(f"unknown function `{t.fn}`")
        args = []
        for a in t.args:
            args.append((yield from self._term(a, ctx)))
        nats = self.callee_nats(callee, t.generics, args, ctx.nats, t.launch)
        if callee.exec_level.kind == ExecLevel.GRID:
            if t.launch is None or ctx.cur.on_gpu:
                raise SimError(f"`{t.fn}` must be launched from the CPU")
            dims = tuple(tuple(evaluate(e, ctx.nats) for e in d.extents) for d in t.launch)
            self.launch(callee, nats, args, *dims)
            return None
        frame = _Ctx(ChainMap({n: Slot(a) for (n, _), a in zip(callee.params, args)}),
                     ChainMap({callee.exec_binder: ctx.cur}), ctx.cur, ChainMap(dict(nats)))
        return (yield from self._block(callee.body, frame))

    def _intrinsic(self, t: App, ctx: _Ctx):
        args = []
        for a in t.args:
            args.append((yield from self._term(a, ctx)))
        if t.fn == "alloc":
            if not ctx.cur.on_gpu:
                raise SimError("shared memory is allocated on the GPU")
            ty = subst_type(t.generics[1], {k: _lit(v) for k, v in ctx.nats.items()})
            shape, elem = _shape_of(ty)
            th = self._th
            n = th.allocs[id(t)]
            th.allocs[id(t)] += 1
            key = (id(t), n)
            if key not in self._shared:
                self._shared[key] = self.new_buffer(
                    "shared", "gpu.shared", np.zeros(shape, dtype=DTYPES[elem]), elem)
            return self._shared[key]
        if t.fn == "CpuHeap::new":
            v = args[0]
            if isinstance(v, Buffer):
                return v
            return self.new_buffer("heap", "cpu.mem", v)
        if t.fn == "GpuGlobal::alloc_copy":
            src = _as_ref(args[0])
            return self.new_buffer("global", "gpu.global", src.buf.data[src.offs],
                                   src.buf.elem)
        src, dst = (args[0], args[1]) if t.fn == "copy_mem_to_host" else (args[1], args[0])
        src, dst = _as_ref(src), _as_ref(dst)
        if src.offs.shape != dst.offs.shape:
            raise SimError(f"copy between shapes {src.offs.shape} and {dst.offs.shape}")
        dst.buf.data[dst.offs] = src.buf.data[src.offs]
        return None

    # -- grid execution -------------------------------------------------------------
    def launch(self, fn: FunctionDef, nats: Mapping[str, int], args: Sequence,
               blocks: Optional[Tuple[int, ...]] = None,
               threads: Optional[Tuple[int, ...]] = None) -> AccessLog:
        """Run every thread of one kernel launch; returns its access log."""
        lv = fn.exec_level
        bdim, tdim = _ground_dim(lv.blocks, nats), _ground_dim(lv.threads, nats)
        for want, got in ((bdim, blocks), (tdim, threads)):
            if got is not None and tuple(e.value for e in want.extents) != tuple(got):
                raise SimError(f"launch with {tuple(got)} does not match `{want}`")
        total = int(np.prod([e.value for e in bdim.extents + tdim.extents]))
        if total > self.max_threads:
            raise SimError(f"launch of {total} threads exceeds the limit of "
                           f"{self.max_threads}")
        base = ExecResource.grid(bdim, tdim)
        log = AccessLog(fn.name)
        self.logs.append(log)
        saved = (self._log, self._th, self._shared)
        self._log = log
        try:
            for bcoords, bid in _coords(bdim):
                self._shared = {}
                active = []
                for tcoords, tid in _coords(tdim):
                    st = _ThreadState(bcoords, tcoords, (bid, tid))
                    active.append((st, self._thread_main(fn, base, nats, args)))
                total_in_block = len(active)
                while active:
                    arrived, finished = [], 0
                    for st, gen in active:
                        self._th = st
                        try:
                            next(gen)
                            arrived.append((st, gen))
                        except StopIteration:
                            finished += 1
                    if arrived and finished:
                        raise BarrierDivergence(bid, len(arrived), total_in_block)
                    active = arrived
        finally:
            self._log, self._th, self._shared = saved
        return log

    def _thread_main(self, fn: FunctionDef, base: ExecResource, nats, args):
        ctx = _Ctx(ChainMap({n: Slot(a) for (n, _), a in zip(fn.params, args)}),
                   ChainMap({fn.exec_binder: base}), base, ChainMap(dict(nats)))
        return (yield from self._block(fn.body, ctx))

    def run_host(self, fn: FunctionDef, nats: Mapping[str, int], args: Sequence):
        saved = self._th
        self._th = _ThreadState({}, {}, ((), ()))
        try:
            gen = self._thread_main(fn, ExecResource.cpu(), nats, args)
            try:
                next(gen)
            except StopIteration as stop:
                return stop.value
            raise SimError("`sync` executed on the CPU")
        finally:
            self._th = saved


def _lit(v: int):
    from .nat import NLit
    return NLit(v)


def _as_ref(v) -> Ref:
    if isinstance(v, Buffer):
        return Ref(v, v.full())
    if not isinstance(v, Ref) or isinstance(v.offs, Pair):
        raise SimError("expected a reference to an array")
    return v


def _shape_of(ty: DataType) -> Tuple[Tuple[int, ...], str]:
    shape = []
    while isinstance(ty, (ArrayTy, ViewTy)):
        shape.append(evaluate(ty.size))
        ty = ty.elem
    if isinstance(ty, BoxTy):
        return _shape_of(ty.target)
    if not isinstance(ty, Scalar) or ty.name not in DTYPES:
        raise SimError(f"cannot allocate a buffer of `{ty}`")
    return tuple(shape), ty.name


# ---------------------------------------------------------------------------
# entry points

def _infer_nats(fn: FunctionDef, cfg: SimConfig) -> Dict[str, int]:
    from .nat import NLit
    u = Unifier(dict(fn.type_params))
    for k, v in cfg.nats.items():
        u.nats[k] = NLit(int(v))
    lv = fn.exec_level
    if lv.kind == ExecLevel.GRID:
        for pat, got in ((lv.blocks, cfg.blocks), (lv.threads, cfg.threads)):
            if got is not None:
                if len(got) != len(pat.axes):
                    raise SimError(f"`{pat}` needs {len(pat.axes)} extents, got {len(got)}")
                u.dim(pat, Dim(pat.axes, tuple(NLit(int(g)) for g in got)))
    for name, pty in fn.params:
        if name in cfg.inputs and not isinstance(cfg.inputs[name], str):
            target = pty.target if isinstance(pty, RefTy) else pty
            arr = np.asarray(cfg.inputs[name])
            actual: DataType = Scalar("i32")
            for n in reversed(arr.shape):
                actual = ArrayTy(actual, NLit(n))
            if isinstance(target, ArrayTy):
                u.dtype(_strip_elem(target), actual)
    missing = [n for n, k in fn.type_params if k == "nat" and n not in u.nats]
    if missing:
        raise SimError(f"cannot determine size `{missing[0]}` of `{fn.name}`; pass it "
                       "explicitly")
    return {n: evaluate(u.nats[n]) for n, k in fn.type_params if k == "nat"}


def _strip_elem(t: DataType) -> DataType:
    if isinstance(t, (ArrayTy, ViewTy)):
        return ArrayTy(_strip_elem(t.elem), t.size)
    return Scalar("i32")


def _make_args(sim: Simulator, fn: FunctionDef, nats: Mapping[str, int], cfg: SimConfig,
               on_gpu: bool):
    env = {k: _lit(v) for k, v in nats.items()}
    args, buffers = [], {}
    for name, pty in fn.params:
        ty = subst_type(pty, env)
        if isinstance(ty, RefTy):
            shape, elem = _shape_of(ty.target)
            mem = ty.mem.name if not ty.mem.is_var else ("gpu.global" if on_gpu else "cpu.mem")
            if isinstance(cfg.inputs.get(name), str):
                init = _named_init(cfg.inputs[name], shape)
            elif name in cfg.inputs:
                init = np.asarray(cfg.inputs[name])
                if init.shape != shape:
                    raise SimError(f"input `{name}` has shape {init.shape}, expected {shape}")
            else:
                init = np.arange(int(np.prod(shape))).reshape(shape)
            buf = sim.new_buffer(name, mem, init.astype(DTYPES[elem]), elem)
            buffers[name] = buf
            args.append(Ref(buf, buf.full()))
        else:
            args.append(cfg.inputs.get(name, 0))
    return args, buffers


INITIALIZERS = ("arange", "zeros", "ones")


def _named_init(kind: str, shape: Tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape))
    if kind == "arange":
        return np.arange(n).reshape(shape)
    if kind == "zeros":
        return np.zeros(shape)
    if kind == "ones":
        return np.ones(shape)
    raise SimError(f"unknown initializer `{kind}`; expected one of {', '.join(INITIALIZERS)}")


def run_kernel(prog: Program, name: str, cfg: SimConfig) -> SimResult:
    """Simulate one launch of the grid function ``name``.

    Raises :class:`BarrierDivergence` when only part of a block reaches a barrier.
    """
    fn = prog.functions.get(name)
    if fn is None:
        raise SimError(f"unknown function `{name}`")
    if fn.exec_level.kind != ExecLevel.GRID:
        raise SimError(f"`{name}` is not a grid function")
    nats = _infer_nats(fn, cfg)
    sim = Simulator(prog, cfg.max_threads)
    args, buffers = _make_args(sim, fn, nats, cfg, on_gpu=True)
    sim.launch(fn, nats, args, cfg.blocks, cfg.threads)
    return SimResult({k: b.value() for k, b in buffers.items()}, sim.logs, nats)


def run_function(prog: Program, name: str, cfg: SimConfig) -> SimResult:
    """Simulate a CPU function (with the kernels it launches) or a grid function."""
    fn = prog.functions.get(name)
    if fn is None:
        raise SimError(f"unknown function `{name}`")
    if fn.exec_level.kind == ExecLevel.GRID:
        return run_kernel(prog, name, cfg)
    if fn.exec_level.kind != ExecLevel.CPU_THREAD:
        raise SimError(f"`{name}` runs inside a block or thread; call it from a kernel")
    nats = _infer_nats(fn, cfg)
    sim = Simulator(prog, cfg.max_threads)
    args, buffers = _make_args(sim, fn, nats, cfg, on_gpu=False)
    sim.run_host(fn, nats, args)
    return SimResult({k: b.value() for k, b in buffers.items()}, sim.logs, nats)


def place_index_map(place: PlaceExpr, shape: Sequence[int], execs: Mapping[str, ExecResource],
                    block: Mapping[str, int], thread: Mapping[str, int],
                    nats: Mapping[str, int] | None = None,
                    views: Mapping[str, object] | None = None) -> frozenset:
    """Flat offsets of the root array denoted by ``place`` for one thread."""
    sim = Simulator(Program(tuple(views.values()) if views else ()))
    sim._th = _ThreadState(dict(block), dict(thread), ((), ()))
    root = sim.new_buffer(place.root, "gpu.global", np.zeros(tuple(shape)), "i32")
    ctx = _Ctx(ChainMap({place.root: root}), ChainMap(dict(execs)),
               next(iter(execs.values())) if execs else ExecResource.cpu(),
               ChainMap(dict(nats or {})))
    loc = sim.resolve(place, ctx)
    if isinstance(loc, Slot):
        return frozenset(range(root.data.size))
    return frozenset(_flatten_offsets(loc.offs))


def _flatten_offsets(v: OffsetView) -> List[int]:
    if isinstance(v, Pair):
        return _flatten_offsets(v.fst) + _flatten_offsets(v.snd)
    return np.asarray(v).reshape(-1).tolist()


def sweep_configs(fn: FunctionDef, extents: Sequence[int] = (1, 2, 4), max_threads: int = 64):
    """Every launch of ``fn`` whose grid extents all lie in ``extents``.

    Yields ``SimConfig`` objects; size parameters are solved from the extents
    and configurations whose extents disagree with the solution are skipped.
    """
    lv = fn.exec_level
    axes = len(lv.blocks.axes) + len(lv.threads.axes)
    seen = set()
    for combo in itertools.product(extents, repeat=axes):
        if int(np.prod(combo)) > max_threads:
            continue
        nb = len(lv.blocks.axes)
        cfg = SimConfig(blocks=combo[:nb], threads=combo[nb:], max_threads=max_threads)
        try:
            nats = _infer_nats(fn, cfg)
            bdim, tdim = _ground_dim(lv.blocks, nats), _ground_dim(lv.threads, nats)
        except (SimError, NatError, KeyError):
            continue
        if (tuple(e.value for e in bdim.extents) != cfg.blocks
                or tuple(e.value for e in tdim.extents) != cfg.threads):
            continue
        key = tuple(sorted(nats.items()))
        if key in seen:
            continue
        seen.add(key)
        cfg.nats = nats
        yield cfg


def _nat_vec(n: Nat, env: Mapping[str, object]):
    from .nat import NAdd, NDiv, NLit, NMul, NSub, NVar
    if isinstance(n, NLit):
        return n.value
    if isinstance(n, NVar):
        return env[n.name]
    a, b = _nat_vec(n.lhs, env), _nat_vec(n.rhs, env)
    if isinstance(n, NAdd):
        return a + b
    if isinstance(n, NSub):
        return a - b
    if isinstance(n, NMul):
        return a * b
    return a // b if isinstance(n, NDiv) else a % b


def place_offsets(place: PlaceExpr, shape: Sequence[int], execs: Mapping[str, ExecResource],
                  block: Mapping[str, object], thread: Mapping[str, object],
                  nats: Mapping[str, object] | None = None,
                  views: Mapping[str, object] | None = None) -> np.ndarray:
    """:func:`place_index_map` for many threads at once, for places denoting one element.

    Coordinates and loop variables may be numpy arrays; they broadcast.
    Views after a select act on the remaining dimensions of the whole table,
    which is the same as acting on the selected part.
    """
    nats = dict(nats or {})
    ground = {k: v for k, v in nats.items() if isinstance(v, int)}
    steps = expand_place(place, views or {}).steps
    if steps and isinstance(steps[0], Deref):
        steps = steps[1:]
    table: OffsetView = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(tuple(shape))
    picks = []
    for s in steps:
        if isinstance(s, Select):
            for _, d in execs[s.exec_name].run():
                coords = block if d.stage == BLOCK else thread
                picks.append(np.asarray(coords[d.axis]) - evaluate(d.lo))
        elif isinstance(s, Index):
            picks.append(np.asarray(_nat_vec(s.index, nats)))
        elif isinstance(s, ViewApp):
            table = apply_view(table, s.view, ground, len(picks))
        elif isinstance(s, Proj):
            table = project(table, s.which, len(picks))
        else:
            raise SimError("dereferencing a reference stored in memory is not supported")
    if isinstance(table, Pair) or table.ndim != len(picks):
        raise SimError(f"`{place}` does not denote a single element")
    for ax, p in enumerate(picks):
        if np.any(p < 0) or np.any(p >= table.shape[ax]):
            raise OutOfBounds(f"coordinate out of range in `{place}`")
    return table[tuple(picks)]
