"""Ownership, borrow, narrowing, synchronization, memory-space and launch checking.

Each function body is checked flow-sensitively under its execution resource.
The access map ``A`` records which resource accessed which place; every
memory access is vetted by :meth:`FnChecker.access` in three steps
(narrowing, conflicts with earlier accesses, borrow rules).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .diagnostics import Diagnostic
from .exec_model import ExecError, ExecResource, synthetic_base
from .nat import NVar, Nat, Tri, free_vars, nat_le, nat_lt, normalize, render
from .places import PlaceError, common_prefix, expand_chain, places_overlap, view_type
from .syntax.ast import (
    BOOL, CPU_MEM, F32, F64, GPU_GLOBAL, GPU_SHARED, I32, UNIT, App, ArrayLit,
    ArrayRepeat, ArrayTy, Assign, BinOp, Block, Borrow, BoxTy, DataType, Deref,
    ExecLevel, ForEach, ForNat, FunctionDef, Index, Let, Lit, Memory, PlaceExpr,
    PlaceTerm, Program, Proj, RefTy, Scalar, Sched, Select, SplitExec, Sync,
    TupleTy, TyVar, UnOp, ViewApp, ViewTy, desugar_sched, is_arraylike,
)
from .syntax.printer import place_str
from .types import ERROR_TY, Unifier, contains_error, first_mismatch, is_copyable, subst_type, types_eq

INTRINSICS = ("CpuHeap::new", "GpuGlobal::alloc_copy", "alloc", "copy_mem_to_host",
              "copy_mem_to_gpu")


class _Fail(Exception):
    def __init__(self, code, message, span=None, label="", related=()):
        super().__init__(message)
        self.diag = Diagnostic(code, message, span, label, list(related))


class _Silent(Exception):
    """Follow-up failure of an earlier error; not reported again."""


@dataclass
class VarInfo:
    name: str
    ty: DataType
    owner: ExecResource
    depth: int
    referent: Optional[PlaceExpr] = None  # for references created by a borrow here
    referent_owner: Optional[ExecResource] = None
    ref_uniq: bool = False
    via: Tuple[str, ...] = ()
    moved: bool = False
    shrd_path: bool = False
    span: object = None


@dataclass
class Loan:
    uniq: bool
    place: PlaceExpr
    exec: ExecResource
    owner: ExecResource
    span: object
    synced: bool = False


@dataclass
class PlaceInfo:
    source: PlaceExpr
    resolved: PlaceExpr
    ty: DataType
    owner: ExecResource
    via: Tuple[str, ...]
    through_shrd: bool
    derefs: List[Tuple[Memory, str, int]]  # memory, displayed pointer, step index
    n_steps: int


@dataclass
class Val:
    ty: DataType
    referent: Optional[PlaceExpr] = None
    referent_owner: Optional[ExecResource] = None
    via: Tuple[str, ...] = ()
    uniq: bool = False
    shrd_path: bool = False


@dataclass
class CheckResult:
    diagnostics: List[Diagnostic]
    let_types: Dict[int, DataType] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.diagnostics


def _level_name(lv: ExecLevel) -> str:
    return {ExecLevel.CPU_THREAD: "cpu.Thread", ExecLevel.GRID: "gpu.Grid",
            ExecLevel.BLOCK: "gpu.Block", ExecLevel.GPU_THREAD: "gpu.Thread"}[lv.kind]


def _mem_ok(mem: Memory, exec_: ExecResource) -> bool:
    if mem.is_var:
        return True
    return mem.on_gpu == exec_.on_gpu


class FnChecker:
    def __init__(self, checker: "Checker", fn: FunctionDef):
        self.c = checker
        self.fn = fn
        self.base = synthetic_base(fn.exec_level)
        self.exec = self.base
        self.execs: Dict[str, ExecResource] = {fn.exec_binder: self.base}
        self.exec_spans: Dict[str, object] = {str(self.base): fn.span}
        self.resources: Dict[str, ExecResource] = {str(self.base): self.base}
        self.split_spans: Dict[str, Tuple[object, str]] = {}
        self.kinds: Dict[str, str] = dict(fn.type_params)
        self.nat_vars: Set[str] = {n for n, k in fn.type_params if k == "nat"}
        self.scopes: List[Dict[str, VarInfo]] = [{}]
        self.A: List[Loan] = []
        self.theta: List[Loan] = []

    # -- environment ----------------------------------------------------------
    def report(self, d: Diagnostic):
        self.c.diagnostics.append(d)

    def lookup(self, name: str) -> Optional[VarInfo]:
        for s in reversed(self.scopes):
            if name in s:
                return s[name]
        return None

    def bind(self, name: str, ty: DataType, span=None, **kw) -> VarInfo:
        v = VarInfo(name, ty, self.exec, len(self.scopes) - 1, span=span, **kw)
        self.scopes[-1][name] = v
        return v

    def push(self):
        self.scopes.append({})

    def pop(self):
        gone = self.scopes.pop()
        self.A = [l for l in self.A if l.place.root not in gone or self.lookup(l.place.root)]
        return gone

    def all_vars(self):
        seen = set()
        for s in reversed(self.scopes):
            for n, v in s.items():
                if n not in seen:
                    seen.add(n)
                    yield v

    def check_nat(self, n: Nat, span):
        for v in free_vars(n):
            if v not in self.nat_vars:
                raise _Fail("E_TYPE", f"unknown size variable `{v}`", span, "not in scope")

    # -- entry ----------------------------------------------------------------
    def run(self):
        for name, ty in self.fn.params:
            self.bind(name, ty, self.fn.span)
        try:
            val = self.block(self.fn.body)
        except _Fail as f:
            self.report(f.diag)
            return
        except _Silent:
            return
        if contains_error(val.ty) or contains_error(self.fn.ret):
            return
        if types_eq(val.ty, self.fn.ret) is not Tri.TRUE:
            self.report(Diagnostic("E_TYPE", "mismatched types", self.fn.body.span,
                                   f"expected `{self.fn.ret}`, found `{val.ty}`"))

    # -- places -----------------------------------------------------------------
    def expand_steps(self, p: PlaceExpr):
        out = []
        for s in p.steps:
            if isinstance(s, ViewApp):
                try:
                    chain = expand_chain((s.view,), self.c.views)
                except PlaceError as e:
                    raise _Fail(e.code, e.message, e.span or p.span, "in this view")
                out.extend(ViewApp(v) for v in chain)
            else:
                out.append(s)
        return out

    def place(self, p: PlaceExpr, borrow: bool = False) -> PlaceInfo:
        var = self.lookup(p.root)
        if var is None:
            if p.root in self.nat_vars and not p.steps:
                raise _Fail("E_TYPE", f"size `{p.root}` is not a place", p.span)
            raise _Fail("E_TYPE", f"cannot find value `{p.root}` in this scope", p.span,
                        "not found")
        if var.moved:
            raise _Fail("E_MOVE", f"use of moved value `{p.root}`", p.span,
                        "value used here after move")
        if contains_error(var.ty):
            raise _Silent()
        ty = var.ty
        resolved = PlaceExpr(p.root, (), span=p.span)
        owner = var.owner
        via: Tuple[str, ...] = ()
        through_shrd = False
        derefs = []
        shown = PlaceExpr(p.root, ())
        steps = self.expand_steps(p)

        def deref():
            nonlocal ty, resolved, owner, via, through_shrd, shown
            shown = PlaceExpr(shown.root, shown.steps + (Deref(),))
            if isinstance(ty, RefTy):
                derefs.append((ty.mem, place_str(shown), len(resolved.steps)))
                root_var = self.lookup(resolved.root)
                if not resolved.steps and root_var is not None and root_var.referent is not None:
                    resolved = PlaceExpr(root_var.referent.root, root_var.referent.steps,
                                         span=p.span)
                    owner = root_var.referent_owner
                    via = via + (root_var.name,) + root_var.via
                    through_shrd = through_shrd or not root_var.ref_uniq or root_var.shrd_path
                else:
                    resolved = resolved.extend(Deref())
                    through_shrd = through_shrd or not ty.uniq
                ty = ty.target
            elif isinstance(ty, BoxTy):
                derefs.append((ty.mem, place_str(shown), len(resolved.steps)))
                resolved = resolved.extend(Deref())
                ty = ty.target
            else:
                raise _Fail("E_TYPE", f"type `{ty}` cannot be dereferenced", p.span)

        for step in steps:
            if isinstance(step, Deref):
                deref()
                continue
            if isinstance(ty, (RefTy, BoxTy)):
                deref()
            shown = PlaceExpr(shown.root, shown.steps + (step,))
            if isinstance(step, Proj):
                if not isinstance(ty, TupleTy) or len(ty.elems) != 2:
                    raise _Fail("E_TYPE", f"no field `{step.which}` on type `{ty}`", p.span)
                ty = ty.elems[0 if step.which == "fst" else 1]
                resolved = resolved.extend(step)
            elif isinstance(step, Index):
                if not is_arraylike(ty):
                    raise _Fail("E_TYPE", f"cannot index into a value of type `{ty}`", p.span)
                self.check_nat(step.index, p.span)
                idx = normalize(step.index)
                if nat_lt(idx, ty.size) is Tri.FALSE:
                    raise _Fail("E_SIZE", f"index {render(idx)} out of bounds for length "
                                          f"{render(ty.size)}", p.span, "index out of bounds")
                ty = ty.elem
                resolved = resolved.extend(Index(idx))
            elif isinstance(step, Select):
                ty = self.select_type(ty, step, p)
                r = self.execs[step.exec_name]
                resolved = resolved.extend(Select(str(r)))
            elif isinstance(step, ViewApp):
                try:
                    ty = view_type(ty, step.view)
                except PlaceError as e:
                    raise _Fail(e.code, e.message, p.span, f"view `{step.view.name}` applied here")
                resolved = resolved.extend(step)
        if borrow and isinstance(ty, BoxTy):
            deref()
        return PlaceInfo(p, resolved, ty, owner, via, through_shrd, derefs, len(resolved.steps))

    def select_type(self, ty: DataType, step: Select, p: PlaceExpr) -> DataType:
        r = self.execs.get(step.exec_name)
        if r is None:
            raise _Fail("E_TYPE", f"cannot find execution resource `{step.exec_name}`",
                        p.span, "not found")
        if not r.is_prefix_of(self.exec):
            raise _Fail("E_TYPE", f"`{step.exec_name}` does not execute this code", p.span)
        run = r.run()
        if not run:
            raise _Fail("E_TYPE", f"cannot select with `{step.exec_name}`: it is not "
                                  "a family of blocks or threads", p.span)
        for _, d in run:
            if not is_arraylike(ty):
                raise _Fail("E_SIZE", f"cannot select with `{step.exec_name}` from `{ty}`",
                            p.span, "needs one array dimension per scheduled axis")
            if types_eq(ArrayTy(UNIT, ty.size), ArrayTy(UNIT, d.extent)) is not Tri.TRUE:
                raise _Fail("E_SIZE", f"cannot select with `{step.exec_name}`: array has "
                                      f"{render(ty.size)} elements but there are "
                                      f"{render(d.extent)} along {d.axis}", p.span,
                            "size mismatch")
            ty = ty.elem
        return ty

    # -- the three-step access check ----------------------------------------------
    def covered(self, steps) -> Set[int]:
        out: Set[int] = set()
        for s in steps:
            if isinstance(s, Select):
                out.update(i for i, _ in self.resources[s.exec_name].run())
        return out

    def positions_beyond(self, owner: ExecResource, upto: Optional[int] = None) -> Set[int]:
        n = len(owner.path) if owner.is_prefix_of(self.exec) else 0
        return {i for i in self.exec.forall_positions()
                if i >= n and (upto is None or i < upto)}

    def check_memory(self, info: PlaceInfo, span, borrow: bool):
        for k, (mem, shown, at) in enumerate(info.derefs):
            if borrow and k == len(info.derefs) - 1 and at == info.n_steps - 1:
                continue
            if not _mem_ok(mem, self.exec):
                lv = _level_name(self.exec.level())
                rel = []
                sp = self.exec_spans.get(str(self.exec))
                if sp is not None:
                    rel.append((sp, f"executed by `{lv}`"))
                raise _Fail("E_MEM", f"cannot dereference `{shown}` pointing to `{mem}`", span,
                            f"dereferencing pointer in `{mem}` memory", rel)

    def access(self, info: PlaceInfo, uniq: bool, span, borrow: bool = False,
               record: bool = True) -> Loan:
        self.check_memory(info, span, borrow)
        p = info.resolved
        if info.derefs and not borrow and not self.exec.is_thread():
            raise _Fail("E_TYPE", "memory can only be read or written by a single thread",
                        span, f"executed by `{_level_name(self.exec.level())}`")
        # 1. narrowing
        if uniq:
            need = self.positions_beyond(info.owner)
            missing = need - self.covered(p.steps)
            if missing:
                i = min(missing)
                fam = self.exec.prefix(i + 1)
                name = self._name_of(fam)
                raise _Fail("E_NARROW", f"narrowing violated: every `{name}` would gain "
                                        f"unique access to `{place_str(info.source)}`", span,
                            f"not narrowed to `{name}`; select with `[[{name}]]`")
            if info.through_shrd:
                raise _Fail("E_BORROW", "cannot write through a `shrd` reference", span,
                            "behind a `shrd` reference")
        # 2. conflicts with earlier accesses
        for l in self.A:
            if not (uniq or l.uniq) or not places_overlap(l.place, p):
                continue
            if self._loan_compatible(l, p, info.owner):
                continue
            raise _Fail("E_CONFLICT", "conflicting memory access", span,
                        "cannot select memory because of",
                        [(l.span, "a conflicting prior selection here")])
        # 3. borrow rules
        for l in self.theta:
            if (uniq or l.uniq) and places_overlap(l.place, p):
                raise _Fail("E_BORROW", f"cannot borrow `{place_str(p)}` while it is "
                                        "already borrowed in this statement", span,
                            "second borrow here", [(l.span, "first borrow here")])
        for v in self.all_vars():
            if v.referent is None or v.moved or v.name in info.via:
                continue
            if (uniq or v.ref_uniq) and places_overlap(v.referent, p):
                raise _Fail("E_BORROW", f"cannot access `{place_str(p)}` because it is "
                                        f"borrowed by `{v.name}`", span, "access here",
                            [(v.span, f"`{v.name}` borrows it here")])
        loan = Loan(uniq, p, self.exec, info.owner, span)
        if record and info.owner != self.exec:
            self.A.append(loan)
        return loan

    def _loan_compatible(self, l: Loan, p: PlaceExpr, owner: ExecResource) -> bool:
        prefix = common_prefix(l.place, p)
        if l.synced:
            bp = self.exec.block_prefix_len()
            if bp is None:
                return False
            if len(owner.path) >= bp and owner.is_prefix_of(self.exec):
                return True  # block-private memory
            return self.positions_beyond(owner, bp) <= self.covered(prefix)
        if l.exec == self.exec:
            return self.positions_beyond(owner) <= self.covered(prefix)
        return False

    def _name_of(self, r: ExecResource) -> str:
        for n, x in self.execs.items():
            if x == r and "#" not in n:
                return n
        for n, x in self.execs.items():
            if x == r:
                return n.split("#")[0]
        return str(r)

    # -- terms --------------------------------------------------------------------
    def block(self, b: Block) -> Val:
        self.push()
        val = Val(UNIT)
        failed = False
        for t in b.terms:
            self.theta = []
            try:
                val = self.term(t)
            except _Fail as f:
                self.report(f.diag)
                val, failed = Val(ERROR_TY), True
            except _Silent:
                val, failed = Val(ERROR_TY), True
        self.theta = []
        gone = self.pop()
        if failed and b.terms and val.ty == ERROR_TY:
            raise _Silent()
        if val.referent is not None and val.referent.root in gone:
            raise _Fail("E_BORROW", f"`{val.referent.root}` does not live long enough",
                        b.span, "borrowed value dropped at the end of this block")
        return val

    def term(self, t, expected: Optional[DataType] = None) -> Val:
        if isinstance(t, Let):
            return self.let(t)
        if isinstance(t, Assign):
            return self.assign(t)
        if isinstance(t, Block):
            return self.block(t)
        if isinstance(t, Sched):
            return self.sched(t)
        if isinstance(t, SplitExec):
            return self.split(t)
        if isinstance(t, Sync):
            return self.sync(t)
        if isinstance(t, ForNat):
            return self.for_nat(t)
        if isinstance(t, ForEach):
            return self.for_each(t)
        if isinstance(t, PlaceTerm):
            return self.read(t)
        if isinstance(t, Borrow):
            return self.borrow(t)
        if isinstance(t, Lit):
            return Val(self.lit_type(t, expected))
        if isinstance(t, BinOp):
            return self.binop(t, expected)
        if isinstance(t, UnOp):
            v = self.term(t.operand, expected)
            want = BOOL if t.op == "!" else None
            if want is not None and v.ty != BOOL or want is None and v.ty not in (I32, F32, F64):
                raise _Fail("E_TYPE", f"cannot apply `{t.op}` to `{v.ty}`", t.span)
            return Val(v.ty)
        if isinstance(t, ArrayLit):
            elem_exp = expected.elem if isinstance(expected, ArrayTy) else None
            tys = [self.term(e, elem_exp).ty for e in t.elems]
            for x in tys[1:]:
                if types_eq(x, tys[0]) is not Tri.TRUE:
                    raise _Fail("E_TYPE", "array elements have different types", t.span)
            return Val(ArrayTy(tys[0], normalize(len(tys))))
        if isinstance(t, ArrayRepeat):
            self.check_nat(t.count, t.span)
            elem_exp = expected.elem if isinstance(expected, ArrayTy) else None
            v = self.term(t.value, elem_exp)
            if not is_copyable(v.ty):
                raise _Fail("E_MOVE", f"cannot repeat a value of type `{v.ty}`", t.span)
            return Val(ArrayTy(v.ty, normalize(t.count)))
        if isinstance(t, App):
            return self.call(t, expected)
        raise _Fail("E_TYPE", f"unsupported term {type(t).__name__}", getattr(t, "span", None))

    def lit_type(self, t: Lit, expected) -> DataType:
        if t.kind == "int":
            return I32
        if t.kind == "float":
            return F32 if expected == F32 else F64
        if t.kind == "bool":
            return BOOL
        return UNIT

    def binop(self, t: BinOp, expected) -> Val:
        arith = t.op in ("+", "-", "*", "/", "%")
        hint = expected if arith else None
        lhs = self.term(t.lhs, hint).ty
        rhs = self.term(t.rhs, lhs if lhs in (F32, F64) else hint).ty
        if lhs in (F32, F64) and rhs in (F32, F64) and lhs != rhs:
            if isinstance(t.lhs, Lit):
                lhs = rhs
            elif isinstance(t.rhs, Lit):
                rhs = lhs
        if ERROR_TY in (lhs, rhs):
            raise _Silent()
        if t.op in ("&&", "||"):
            if lhs != BOOL or rhs != BOOL:
                raise _Fail("E_TYPE", f"`{t.op}` expects booleans, found `{lhs}` and `{rhs}`",
                            t.span)
            return Val(BOOL)
        if lhs != rhs or not isinstance(lhs, Scalar) or lhs in (UNIT,) or \
                (arith and lhs == BOOL):
            raise _Fail("E_TYPE", f"cannot apply `{t.op}` to `{lhs}` and `{rhs}`", t.span,
                        "mismatched operand types")
        return Val(lhs if arith else BOOL)

    def read(self, t: PlaceTerm) -> Val:
        p = t.place
        if not p.steps and self.lookup(p.root) is None and p.root in self.nat_vars:
            return Val(I32)
        info = self.place(p)
        if is_copyable(info.ty):
            self.access(info, False, t.span)
            v = self.lookup(p.root)
            if isinstance(info.ty, RefTy) and not p.steps and v.referent is not None:
                return Val(info.ty, v.referent, v.referent_owner, (v.name,) + v.via, False,
                           v.shrd_path)
            return Val(info.ty)
        if p.steps:
            raise _Fail("E_MOVE", f"cannot move out of `{place_str(p)}`", t.span,
                        f"value of type `{info.ty}` is not copyable")
        self.access(info, True, t.span, record=False)
        var = self.lookup(p.root)
        var.moved = True
        return Val(info.ty, var.referent, var.referent_owner, var.via, var.ref_uniq,
                   var.shrd_path)

    def borrow(self, t: Borrow) -> Val:
        info = self.place(t.place, borrow=True)
        loan = self.access(info, t.uniq, t.span, borrow=True, record=False)
        if info.derefs and info.derefs[-1][2] == info.n_steps - 1:
            mem = info.derefs[-1][0]
        elif info.derefs:
            mem = info.derefs[-1][0]
        elif self.exec.on_gpu:
            raise _Fail("E_MEM", f"cannot borrow local variable `{t.place.root}` on the GPU",
                        t.span, "only memory behind references or allocations can be borrowed")
        else:
            mem = CPU_MEM
        self.theta.append(loan)
        return Val(RefTy(t.uniq, mem, info.ty), info.resolved, info.owner, info.via, t.uniq,
                   info.through_shrd)

    def let(self, t: Let) -> Val:
        if t.ty is not None:
            self.check_type(t.ty, t.span)
        try:
            v = self.term(t.value, t.ty)
        except (_Fail, _Silent):
            self.bind(t.name, t.ty or ERROR_TY, t.span)
            raise
        ty = v.ty
        if t.ty is not None and not contains_error(ty):
            if types_eq(t.ty, ty) is not Tri.TRUE:
                self.bind(t.name, t.ty, t.span)
                raise _Fail("E_TYPE", "mismatched types", t.value.span or t.span,
                            f"expected `{t.ty}`, found `{ty}`")
            ty = t.ty
        self.c.let_types[id(t)] = ty
        self.bind(t.name, ty, t.span, referent=v.referent if isinstance(ty, RefTy) else None,
                  referent_owner=v.referent_owner, ref_uniq=v.uniq, via=v.via,
                  shrd_path=v.shrd_path)
        return Val(UNIT)

    def assign(self, t: Assign) -> Val:
        probe = self.lookup(t.place.root)
        hint = None
        if probe is not None and not t.place.steps and not probe.moved:
            hint = probe.ty
        v = self.term(t.value, hint)
        if probe is not None and probe.moved and not t.place.steps:
            probe.moved = False
        info = self.place(t.place)
        if contains_error(v.ty):
            raise _Silent()
        if types_eq(info.ty, v.ty) is not Tri.TRUE:
            raise _Fail("E_TYPE", "mismatched types", t.value.span or t.span,
                        f"expected `{info.ty}`, found `{v.ty}`")
        self.access(info, True, t.place.span or t.span)
        return Val(UNIT)

    def check_type(self, ty: DataType, span):
        if isinstance(ty, (ArrayTy, ViewTy)):
            self.check_nat(ty.size, span)
            self.check_type(ty.elem, span)
        elif isinstance(ty, TupleTy):
            for e in ty.elems:
                self.check_type(e, span)
        elif isinstance(ty, (RefTy, BoxTy)):
            self.check_type(ty.target, span)
        elif isinstance(ty, TyVar) and self.kinds.get(ty.name) != "dt" and ty != ERROR_TY:
            raise _Fail("E_TYPE", f"cannot find type `{ty.name}` in this scope", span)

    # -- execution resources -----------------------------------------------------
    def resource(self, name: str, span) -> ExecResource:
        r = self.execs.get(name)
        if r is None:
            raise _Fail("E_TYPE", f"cannot find execution resource `{name}`", span)
        if r != self.exec:
            raise _Fail("E_TYPE", f"`{name}` is not the resource executing this code", span,
                        f"code here is executed by `{self._name_of(self.exec)}`")
        return r

    def sched(self, t: Sched) -> Val:
        r = self.resource(t.exec_name, t.span)
        if not r.on_gpu:
            raise _Fail("E_TYPE", "cannot schedule a cpu.thread", t.span)
        axes = t.axes
        if not axes:
            rem = r.remaining_axes()
            if len(rem) != 1:
                raise _Fail("E_SIZE", f"`sched` without axes needs exactly one axis left, "
                                      f"`{t.exec_name}` has {len(rem)}", t.span)
            axes = (rem[0],)
        t = desugar_sched(Sched(axes, t.binder, t.exec_name, t.body, span=t.span))
        return self._sched1(t)

    def _sched1(self, t: Sched) -> Val:
        r = self.execs[t.exec_name]
        try:
            child = r.forall(t.axes[0])
        except ExecError as e:
            raise _Fail(e.code, e.message, t.span, "cannot schedule here")
        saved = (self.exec, dict(self.execs))
        self.exec = child
        self.execs[t.binder] = child
        self.resources[str(child)] = child
        self.exec_spans.setdefault(str(child), t.span)
        try:
            if len(t.body.terms) == 1 and isinstance(t.body.terms[0], Sched) and \
                    t.body.terms[0].exec_name == t.binder and "#" in t.binder:
                self._sched1(t.body.terms[0])
            else:
                v = self.block(t.body)
                if not contains_error(v.ty) and v.ty != UNIT:
                    raise _Fail("E_TYPE", "the body of `sched` must have type `()`",
                                t.body.span)
        finally:
            self.exec, self.execs = saved
        return Val(UNIT)

    def split(self, t: SplitExec) -> Val:
        r = self.resource(t.exec_name, t.span)
        if not r.on_gpu:
            raise _Fail("E_TYPE", "cannot split a cpu.thread", t.span)
        self.check_nat(t.pos, t.span)
        if t.axis not in r.remaining_axes():
            raise _Fail("E_SIZE", f"cannot split `{t.exec_name}` along {t.axis}", t.span,
                        "axis not available")
        try:
            fst, snd = r.split(t.axis, t.pos)
        except ExecError as e:
            raise _Fail(e.code, e.message, t.span, "cannot split here")
        head = t.span
        for child, binder, body in ((fst, t.fst_binder, t.fst_body),
                                    (snd, t.snd_binder, t.snd_body)):
            self.resources[str(child)] = child
            self.split_spans[str(child)] = (head, t.exec_name)
            self.exec_spans.setdefault(str(child), head)
            saved = (self.exec, dict(self.execs))
            self.exec = child
            self.execs[binder] = child
            try:
                self.block(body)
            except _Fail as f:
                self.report(f.diag)
            except _Silent:
                pass
            finally:
                self.exec, self.execs = saved
        return Val(UNIT)

    def _split_below_block(self) -> Optional[Tuple[object, str]]:
        bp = self.exec.block_prefix_len()
        if bp is None:
            return None
        for i in range(bp, len(self.exec.path)):
            if not hasattr(self.exec.path[i], "which"):
                continue
            return self.split_spans.get(str(self.exec.prefix(i + 1)), (None, "block"))
        return None

    def sync(self, t: Sync) -> Val:
        lv = self.exec.level()
        if lv.kind != ExecLevel.GPU_THREAD:
            where = {ExecLevel.GRID: "blocks of a grid cannot synchronize; only the end of a "
                                     "kernel orders them",
                     ExecLevel.BLOCK: "`sync` must be performed by single threads of a block",
                     ExecLevel.CPU_THREAD: "`sync` is only available on the GPU"}[lv.kind]
            raise _Fail("E_SYNC", "barrier not allowed here", t.span, where)
        split = self._split_below_block()
        if split is not None:
            sp, name = split
            raise _Fail("E_SYNC", "barrier not allowed here", t.span,
                        "`sync` not performed by all threads in the block",
                        [(sp, f"`{name}` is split here")] if sp is not None else [])
        block = self.exec.prefix(self.exec.block_prefix_len())
        for l in self.A:
            if block.is_prefix_of(l.exec):
                l.synced = True
        return Val(UNIT)

    def for_nat(self, t: ForNat) -> Val:
        self.check_nat(t.lo, t.span)
        self.check_nat(t.hi, t.span)
        if nat_le(t.lo, t.hi) is Tri.FALSE:
            raise _Fail("E_SIZE", "empty or reversed loop range", t.span)
        shadow = t.var in self.nat_vars
        self.nat_vars.add(t.var)
        try:
            v = self.block(t.body)
        finally:
            if not shadow:
                self.nat_vars.discard(t.var)
        if not contains_error(v.ty) and v.ty != UNIT:
            raise _Fail("E_TYPE", "loop bodies must have type `()`", t.body.span)
        return Val(UNIT)

    def for_each(self, t: ForEach) -> Val:
        if not self.exec.is_thread():
            raise _Fail("E_TYPE", "`for` over a collection runs sequentially in one thread",
                        t.span)
        if not isinstance(t.coll, PlaceTerm):
            raise _Fail("E_TYPE", "can only iterate over a place", t.span)
        info = self.place(t.coll.place)
        ty = info.ty
        if not is_arraylike(ty) or not is_copyable(ty.elem):
            raise _Fail("E_TYPE", f"cannot iterate over `{ty}` by copy", t.span)
        self.access(info, False, t.coll.span)
        self.push()
        self.bind(t.var, ty.elem, t.span)
        try:
            self.block(t.body)
        finally:
            self.pop()
        return Val(UNIT)

    # -- calls ----------------------------------------------------------------------
    def call(self, t: App, expected) -> Val:
        if t.fn in INTRINSICS:
            return self.intrinsic(t, expected)
        callee = self.c.functions.get(t.fn)
        if callee is None:
            raise _Fail("E_TYPE", f"cannot find function `{t.fn}`", t.span, "not found")
        lv = callee.exec_level
        here = self.exec.level()
        if lv.kind == ExecLevel.GRID:
            if t.launch is None:
                raise _Fail("E_LAUNCH", f"`{t.fn}` runs on a GPU grid and must be launched "
                                        "with `<<<blocks, threads>>>`", t.span)
            if here.kind != ExecLevel.CPU_THREAD:
                raise _Fail("E_LAUNCH", "kernels can only be launched from the CPU", t.span)
        elif t.launch is not None:
            raise _Fail("E_LAUNCH", f"`{t.fn}` is not a grid function and cannot be launched",
                        t.span)
        elif lv.kind == ExecLevel.CPU_THREAD and here.kind != ExecLevel.CPU_THREAD:
            raise _Fail("E_TYPE", f"`{t.fn}` must be called by a cpu.Thread", t.span,
                        f"called by `{_level_name(here)}`")
        elif lv.kind == ExecLevel.GPU_THREAD and here.kind != ExecLevel.GPU_THREAD:
            raise _Fail("E_TYPE", f"`{t.fn}` must be called by a gpu.Thread", t.span,
                        f"called by `{_level_name(here)}`")
        elif lv.kind == ExecLevel.BLOCK:
            if here.kind != ExecLevel.BLOCK:
                raise _Fail("E_TYPE", f"`{t.fn}` must be called by a gpu.Block", t.span,
                            f"called by `{_level_name(here)}`")
            if self._split_below_block() is not None:
                raise _Fail("E_SYNC", f"cannot call block-level `{t.fn}` from part of a block",
                            t.span, "the callee may synchronize all threads of the block")

        u = Unifier(dict(callee.type_params))
        if len(t.generics) > len(callee.type_params):
            raise _Fail("E_TYPE", f"`{t.fn}` takes {len(callee.type_params)} generic "
                                  f"arguments, got {len(t.generics)}", t.span)
        for (name, kind), g in zip(callee.type_params, t.generics):
            self.bind_generic(u, name, kind, g, t.span)
        if lv.kind == ExecLevel.BLOCK:
            u.dim(lv.threads, here.threads)
        if t.launch is not None:
            for pat, act in ((lv.blocks, t.launch[0]), (lv.threads, t.launch[1])):
                for e in act.extents:
                    self.check_nat(e, t.span)
                if not u.dim(pat, act):
                    raise _Fail("E_LAUNCH", "mismatched launch configuration", t.span,
                                f"expected `{pat}`, found `{act}`")
        if len(t.args) != len(callee.params):
            raise _Fail("E_TYPE", f"`{t.fn}` takes {len(callee.params)} arguments, got "
                                  f"{len(t.args)}", t.span)
        vals = []
        for (pname, pty), arg in zip(callee.params, t.args):
            v = self.term(arg, u.apply(pty))
            if contains_error(v.ty):
                raise _Silent()
            u.dtype(pty, v.ty)
            vals.append(v)
        missing = u.missing()
        if missing:
            raise _Fail("E_TYPE", f"cannot infer generic argument `{missing[0]}` of `{t.fn}`",
                        t.span, "specify it with `::<...>`")
        if t.launch is not None:
            for pat, act in ((lv.blocks, t.launch[0]), (lv.threads, t.launch[1])):
                for pe, ae in zip(pat.extents, act.extents):
                    if types_eq(ArrayTy(UNIT, u.apply(ArrayTy(UNIT, pe)).size),
                                ArrayTy(UNIT, ae)) is not Tri.TRUE:
                        raise _Fail("E_LAUNCH", "mismatched launch configuration", t.span,
                                    f"expected `{subst_type(ArrayTy(UNIT, pe), u.nats).size}`"
                                    f" for {''.join(pat.axes)}, found `{render(ae)}`")
        code = "E_LAUNCH" if t.launch is not None else "E_TYPE"
        for (pname, pty), arg, v in zip(callee.params, t.args, vals):
            want = u.apply(pty)
            if t.launch is not None and isinstance(v.ty, RefTy) and v.ty.mem == CPU_MEM:
                raise _Fail("E_MEM", "cannot pass a reference to `cpu.mem` to a GPU function",
                            arg.span, "GPU threads cannot access CPU memory")
            self.expect_arg(want, v.ty, arg, code)
        loans = list(self.theta)
        if self.exec.on_gpu:
            for l in loans:
                if l.owner != self.exec:
                    self.A.append(Loan(l.uniq, l.place, self.exec, l.owner, l.span))
        return Val(u.apply(callee.ret))

    def bind_generic(self, u: Unifier, name: str, kind: str, g, span):
        if kind == "nat":
            if not isinstance(g, Nat):
                raise _Fail("E_TYPE", f"expected a size for `{name}`, found `{g}`", span)
            self.check_nat(g, span)
            u.nats[name] = normalize(g)
        elif kind == "mem":
            if isinstance(g, NVar):
                g = Memory(g.name)
            if not isinstance(g, Memory):
                raise _Fail("E_TYPE", f"expected a memory for `{name}`, found `{g}`", span)
            u.mems[name] = g
        else:
            if isinstance(g, NVar):
                g = TyVar(g.name)
            if isinstance(g, (Nat, Memory)):
                raise _Fail("E_TYPE", f"expected a data type for `{name}`, found `{g}`", span)
            self.check_type(g, span)
            u.dts[name] = g

    def expect_arg(self, want: DataType, got: DataType, arg, code: str):
        if types_eq(want, got) is Tri.TRUE:
            return
        if isinstance(want, RefTy) and isinstance(got, RefTy):
            if want.mem != got.mem:
                raise _Fail("E_MEM", "mismatched types", arg.span,
                            f"expected reference to `{want.mem}`, found reference to "
                            f"`{got.mem}`")
            if want.uniq and not got.uniq:
                raise _Fail("E_BORROW", "mismatched types", arg.span,
                            "expected a `uniq` reference, found a `shrd` reference")
            if not want.uniq and got.uniq and types_eq(want.target, got.target) is Tri.TRUE:
                return  # a unique reference may be used where a shared one is expected
        exp, found = first_mismatch(want, got) or (want, got)
        raise _Fail(code, "mismatched types", arg.span, f"expected `{exp}`, found `{found}`")

    def intrinsic(self, t: App, expected) -> Val:
        here = self.exec.level().kind
        name = t.fn
        if name == "alloc":
            if len(t.generics) != 2 or t.args:
                raise _Fail("E_TYPE", "usage: alloc::<gpu.shared, T>()", t.span)
            mem, ty = t.generics
            if isinstance(ty, NVar):
                ty = TyVar(ty.name)
            if mem != GPU_SHARED:
                raise _Fail("E_MEM", f"`alloc` allocates `gpu.shared` memory, not `{mem}`",
                            t.span)
            if here != ExecLevel.BLOCK:
                raise _Fail("E_MEM", "shared memory can only be allocated by a gpu.Block",
                            t.span, f"executed by `{_level_name(self.exec.level())}`")
            self.check_type(ty, t.span)
            return Val(BoxTy(ty, GPU_SHARED))
        if here != ExecLevel.CPU_THREAD:
            raise _Fail("E_MEM", f"`{name}` can only be called by a cpu.Thread", t.span,
                        f"executed by `{_level_name(self.exec.level())}`")
        if name == "CpuHeap::new":
            if len(t.args) != 1:
                raise _Fail("E_TYPE", "usage: CpuHeap::new(value)", t.span)
            exp = expected.target if isinstance(expected, BoxTy) else None
            v = self.term(t.args[0], exp)
            return Val(BoxTy(v.ty, CPU_MEM))
        vals = [self.term(a) for a in t.args]
        if any(contains_error(v.ty) for v in vals):
            raise _Silent()
        if name == "GpuGlobal::alloc_copy":
            if len(vals) != 1:
                raise _Fail("E_TYPE", "usage: GpuGlobal::alloc_copy(&host_value)", t.span)
            got = vals[0].ty
            if not isinstance(got, RefTy):
                raise _Fail("E_TYPE", "mismatched types", t.args[0].span,
                            f"expected a reference, found `{got}`")
            self.expect_arg(RefTy(False, CPU_MEM, got.target), got, t.args[0], "E_TYPE")
            return Val(BoxTy(got.target, GPU_GLOBAL))
        if len(vals) != 2:
            raise _Fail("E_TYPE", f"`{name}` takes 2 arguments", t.span)
        # copy_mem_to_host(src, dst) and copy_mem_to_gpu(dst, src)
        src_i = 0 if name == "copy_mem_to_host" else 1
        src_mem, dst_mem = (GPU_GLOBAL, CPU_MEM) if src_i == 0 else (CPU_MEM, GPU_GLOBAL)
        for i in (0, 1):
            if not isinstance(vals[i].ty, RefTy):
                raise _Fail("E_TYPE", "mismatched types", t.args[i].span,
                            f"expected a reference, found `{vals[i].ty}`")
        src = vals[src_i].ty
        for i in (0, 1):
            got = vals[i].ty
            if i == src_i:
                want = RefTy(got.uniq, src_mem, got.target)
            else:
                want = RefTy(True, dst_mem, src.target if src.mem == src_mem else got.target)
            self.expect_arg(want, got, t.args[i], "E_TYPE")
        return Val(UNIT)


class Checker:
    def __init__(self, prog: Program):
        self.prog = prog
        self.functions = prog.functions
        self.views = prog.views
        self.diagnostics: List[Diagnostic] = []
        self.let_types: Dict[int, DataType] = {}

    def run(self, only: Optional[List[str]] = None) -> CheckResult:
        for v in self.views.values():
            try:
                expand_chain(v.body, self.views, (v.name,))
            except PlaceError as e:
                self.diagnostics.append(Diagnostic(e.code, e.message, v.span, "in this view"))
        for f in self.prog.items:
            if not isinstance(f, FunctionDef) or (only is not None and f.name not in only):
                continue
            self._check_signature(f)
            FnChecker(self, f).run()
        return CheckResult(self.diagnostics, self.let_types)

    def _check_signature(self, f: FunctionDef):
        kinds = dict(f.type_params)
        lv = f.exec_level
        dims = [d for d in (lv.blocks, lv.threads) if d is not None]
        for d in dims:
            for e in d.extents:
                bad = [v for v in free_vars(e) if kinds.get(v) != "nat"]
                if bad:
                    self.diagnostics.append(Diagnostic(
                        "E_TYPE", f"unknown size variable `{bad[0]}`", f.span))


def check_program(prog: Program, only: Optional[List[str]] = None) -> CheckResult:
    """Type-check every function; returns all diagnostics found."""
    return Checker(prog).run(only)
