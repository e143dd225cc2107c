"""CUDA C++ generation for checked programs.

Programs are first monomorphized: every reachable function is specialized
for the sizes it is called with. Grid functions become ``__global__``
kernels and CPU functions become host functions; block and thread functions
are inlined where they are called. Places are compiled to flat indices by
:func:`safegpu.lowering.lower_place`.
"""

from __future__ import annotations

import dataclasses
from collections import ChainMap
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .exec_model import ExecResource
from .lowering import IndexExpr, LoweringError, axis_symbol, lower_place, render_c
from .nat import NLit, Nat, NatError, as_int, normalize, subst
from .syntax.ast import (
    App, ArrayLit, ArrayRepeat, ArrayTy, Assign, BinOp, Block, Borrow, BoxTy, DataType,
    Deref, Dim, ExecLevel, ForEach, ForNat, FunctionDef, Let, Lit, Memory, PlaceExpr,
    PlaceTerm, Program, RefTy, Scalar, Sched, Select, SplitExec, Sync, TyVar, UnOp,
    ViewDef, ViewTy, desugar_sched,
)
from .typechecker import INTRINSICS, check_program
from .types import Unifier

C_TYPES = {"i32": "int", "f32": "float", "f64": "double", "bool": "bool"}


class CodegenError(Exception):
    pass


# ---------------------------------------------------------------------------
# generic AST rewriting

def transform(node, fn: Callable):
    """Rebuild ``node`` bottom-up, passing every rebuilt sub-node through ``fn``.

    Spans are kept. Size expressions are passed to ``fn`` too.
    """
    if isinstance(node, tuple):
        return tuple(transform(x, fn) for x in node)
    if isinstance(node, Nat):
        return fn(node)
    if dataclasses.is_dataclass(node) and not isinstance(node, type):
        changes = {}
        for f in dataclasses.fields(node):
            if f.name == "span":
                continue
            old = getattr(node, f.name)
            new = transform(old, fn)
            if new is not old:
                changes[f.name] = new
        if changes:
            node = dataclasses.replace(node, **changes)
        return fn(node)
    return node


def subst_node(node, nats: Mapping[str, Nat], mems: Mapping[str, Memory] = {},
               dts: Mapping[str, DataType] = {}):
    """Substitute generic parameters everywhere inside an AST node."""
    def f(n):
        if isinstance(n, Nat):
            return normalize(subst(n, nats)) if nats else n
        if isinstance(n, Memory) and n.name in mems:
            return mems[n.name]
        if isinstance(n, TyVar) and n.name in dts:
            return dts[n.name]
        return n
    return transform(node, f)


def mangle(name: str, nat_args: Sequence[int]) -> str:
    return name if not nat_args else name + "_" + "_".join(str(v) for v in nat_args)


# ---------------------------------------------------------------------------
# monomorphization

def _ground(n: Nat, what: str) -> int:
    v = as_int(n)
    if v is None:
        raise CodegenError(f"size `{n}` of {what} is not known after specialization")
    return v


def monomorphize(prog: Program, instances: Optional[Mapping[str, Mapping[str, int]]] = None
                 ) -> Program:
    """Specialize every function reachable from the roots.

    Roots are the non-generic CPU and grid functions, plus each function in
    ``instances`` with the given size arguments.
    """
    fns = prog.functions
    work: List[Tuple[str, Tuple[int, ...]]] = []
    for f in prog.items:
        if (isinstance(f, FunctionDef) and not f.type_params
                and f.exec_level.kind in (ExecLevel.GRID, ExecLevel.CPU_THREAD)):
            work.append((f.name, ()))
    for name, nats in (instances or {}).items():
        f = fns.get(name)
        if f is None:
            raise CodegenError(f"unknown function `{name}`")
        missing = [p for p, k in f.type_params if k == "nat" and p not in nats]
        if missing or any(k != "nat" for _, k in f.type_params):
            raise CodegenError(f"`{name}` needs values for {', '.join(missing) or 'its generics'}")
        work.append((name, tuple(int(nats[p]) for p, _ in f.type_params)))
    done: Dict[Tuple[str, Tuple[int, ...]], FunctionDef] = {}
    while work:
        key = work.pop(0)
        if key in done:
            continue
        name, args = key
        f = fns[name]
        env = {p: NLit(v) for (p, _), v in zip(f.type_params, args)}
        spec = subst_node(f, env)
        calls: List[Tuple[str, Tuple[int, ...]]] = []

        def rewrite(n):
            if isinstance(n, App) and n.fn not in INTRINSICS:
                callee = fns.get(n.fn)
                if callee is None:
                    raise CodegenError(f"unknown function `{n.fn}`")
                cargs = _call_instance(callee, n)
                calls.append((n.fn, cargs))
                return dataclasses.replace(n, fn=mangle(n.fn, cargs), generics=())
            return n

        body = transform(spec.body, rewrite)
        done[key] = dataclasses.replace(spec, name=mangle(name, args), type_params=(),
                                        body=body)
        work.extend(calls)
    views = tuple(i for i in prog.items if isinstance(i, ViewDef))
    return Program(views + tuple(done.values()))


def _call_instance(callee: FunctionDef, call: App) -> Tuple[int, ...]:
    u = Unifier(dict(callee.type_params))
    for (p, kind), g in zip(callee.type_params, call.generics):
        if kind != "nat":
            raise CodegenError(f"`{callee.name}`: only size generics can be specialized")
        u.nats[p] = NLit(_ground(g, f"the call to `{callee.name}`"))
    if call.launch is not None:
        lv = callee.exec_level
        u.dim(lv.blocks, call.launch[0])
        u.dim(lv.threads, call.launch[1])
    out = []
    for p, _ in callee.type_params:
        if p not in u.nats:
            raise CodegenError(f"cannot determine `{p}` for `{callee.name}`; "
                               "give it with `::<...>`")
        out.append(_ground(u.nats[p], f"the call to `{callee.name}`"))
    return tuple(out)


# ---------------------------------------------------------------------------
# emission

@dataclass
class IndexSite:
    """One compiled memory access, kept so tests can check it against the oracle."""
    function: str
    place: PlaceExpr
    root: str
    shape: Tuple[int, ...]
    expr: IndexExpr
    execs: Dict[str, ExecResource]
    loops: List[Tuple[str, int, int]]
    grid: Optional[Tuple[Dim, Dim]]

    @property
    def text(self) -> str:
        return render_c(self.expr)


@dataclass
class EmitResult:
    source: str
    sites: List[IndexSite] = field(default_factory=list)
    program: Optional[Program] = None


@dataclass
class _Buf:
    cname: str
    shape: Tuple[int, ...]
    elem: str
    mem: str

    @property
    def size(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n

    @property
    def ctype(self) -> str:
        return C_TYPES[self.elem]


@dataclass
class _Alias:
    buf: _Buf
    steps: tuple  # selects renamed to stable names


@dataclass
class _Scalar:
    cname: str


@dataclass
class _Scope:
    vars: ChainMap
    execs: ChainMap
    cur: ExecResource
    loops: List[Tuple[str, int, int]]

    def child(self, execs: Optional[dict] = None, cur: Optional[ExecResource] = None,
              loop: Optional[Tuple[str, int, int]] = None) -> "_Scope":
        return _Scope(self.vars.new_child(),
                      self.execs.new_child(execs) if execs else self.execs,
                      cur or self.cur, self.loops + ([loop] if loop else []))


def _shape_elem(ty: DataType, what: str) -> Tuple[Tuple[int, ...], str]:
    shape = []
    while isinstance(ty, (ArrayTy, ViewTy)):
        shape.append(_ground(ty.size, what))
        ty = ty.elem
    if isinstance(ty, BoxTy):
        return _shape_elem(ty.target, what)
    if not isinstance(ty, Scalar) or ty.name not in C_TYPES:
        raise CodegenError(f"{what}: cannot store `{ty}` in a C array")
    return tuple(shape), ty.name


def _dim3(d: Dim) -> str:
    vals = {a: _ground(e, "a launch") for a, e in zip(d.axes, d.extents)}
    last = max("XYZ".index(a) for a in d.axes)
    return "dim3(" + ", ".join(str(vals.get(a, 1)) for a in "XYZ"[:last + 1]) + ")"


_C_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4,
           "+": 5, "-": 5, "*": 6, "/": 6, "%": 6}


class CudaEmitter:
    def __init__(self, prog: Program, let_types: Mapping[int, DataType]):
        self.prog = prog
        self.views = prog.views
        self.functions = prog.functions
        self.let_types = let_types
        self.lines: List[str] = []
        self.depth = 0
        self.sites: List[IndexSite] = []
        self.stable: Dict[str, ExecResource] = {}
        self._stable_names: Dict[ExecResource, str] = {}
        self.fn: Optional[FunctionDef] = None
        self.grid: Optional[Tuple[Dim, Dim]] = None
        self.cleanup: List[str] = []
        self._inline_stack: List[str] = []

    def line(self, s: str = ""):
        self.lines.append(("  " * self.depth + s) if s else "")

    # -- program ------------------------------------------------------------------
    def emit(self) -> str:
        fns = [f for f in self.prog.items if isinstance(f, FunctionDef)]
        kernels = [f for f in fns if f.exec_level.kind == ExecLevel.GRID]
        hosts = [f for f in fns if f.exec_level.kind == ExecLevel.CPU_THREAD]
        self.line("// Generated by safegpu. Do not edit.")
        self.line("#include <algorithm>")
        self.line("#include <cuda_runtime.h>")
        for f in kernels:
            self.line()
            self.function(f)
        if len(hosts) > 1:
            self.line()
            for f in hosts:
                self.line(self.signature(f) + ";")
        for f in hosts:
            self.line()
            self.function(f)
        return "\n".join(self.lines) + "\n"

    def signature(self, f: FunctionDef) -> str:
        kernel = f.exec_level.kind == ExecLevel.GRID
        params = []
        for name, ty in f.params:
            if isinstance(ty, RefTy):
                _, elem = _shape_elem(ty.target, f"parameter `{name}`")
                const = "" if ty.uniq else "const "
                restrict = " __restrict__" if kernel else ""
                params.append(f"{const}{C_TYPES[elem]}*{restrict} {name}")
            elif isinstance(ty, Scalar) and ty.name in C_TYPES:
                params.append(f"{C_TYPES[ty.name]} {name}")
            else:
                raise CodegenError(f"parameter `{name}` of `{f.name}` has type `{ty}`, "
                                   "which has no C counterpart")
        ret = "void"
        if not kernel and isinstance(f.ret, Scalar) and f.ret.name in C_TYPES:
            ret = C_TYPES[f.ret.name]
        head = "__global__ void" if kernel else ret
        return f"{head} {f.name}({', '.join(params)})"

    def function(self, f: FunctionDef):
        self.fn = f
        lv = f.exec_level
        if lv.kind == ExecLevel.GRID:
            self.grid = (lv.blocks, lv.threads)
            base = ExecResource.grid(lv.blocks, lv.threads)
        else:
            self.grid = None
            base = ExecResource.cpu()
        vars_: Dict[str, object] = {}
        for name, ty in f.params:
            if isinstance(ty, RefTy):
                shape, elem = _shape_elem(ty.target, f"parameter `{name}`")
                vars_[name] = _Buf(name, shape, elem, ty.mem.name)
            else:
                vars_[name] = _Scalar(name)
        scope = _Scope(ChainMap(vars_), ChainMap({f.exec_binder: base}), base, [])
        self.cleanup = []
        self.line(self.signature(f) + " {")
        self.depth += 1
        value = self.block_body(f.body, scope, want_value=f.ret != Scalar("unit"))
        for c in reversed(self.cleanup):
            self.line(c)
        if value is not None:
            self.line(f"return {value};")
        self.depth -= 1
        self.line("}")

    # -- places -------------------------------------------------------------------
    def stable_name(self, r: ExecResource) -> str:
        name = self._stable_names.get(r)
        if name is None:
            name = f"%{len(self._stable_names)}"
            self._stable_names[r] = name
            self.stable[name] = r
        return name

    def resolve(self, p: PlaceExpr, scope: _Scope) -> Tuple[_Buf, PlaceExpr]:
        """The buffer behind ``p`` and the place relative to it.

        Selects are renamed to names that stay valid outside their scope, so
        the place can be stored in an alias.
        """
        b = scope.vars.get(p.root)
        if b is None:
            raise CodegenError(f"unknown variable `{p.root}`")
        steps = p.steps
        if steps and isinstance(steps[0], Deref):
            steps = steps[1:]
        renamed = tuple(Select(self.stable_name(scope.execs[s.exec_name]))
                        if isinstance(s, Select) else s for s in steps)
        if isinstance(b, _Alias):
            return b.buf, PlaceExpr(b.buf.cname, b.steps + renamed, span=p.span)
        if not isinstance(b, _Buf):
            raise CodegenError(f"`{p}` is not in memory")
        return b, PlaceExpr(b.cname, renamed, span=p.span)

    def lower(self, p: PlaceExpr, scope: _Scope, outputs: Optional[Sequence[str]] = None
              ) -> Tuple[_Buf, IndexExpr, Tuple[int, ...]]:
        b, rel = self.resolve(p, scope)
        try:
            expr, rest = lower_place(rel, b.shape, ChainMap(self.stable), {}, self.views,
                                     outputs)
        except (LoweringError, NatError, KeyError) as e:
            raise CodegenError(f"cannot compile `{p}`: {e}") from None
        if rest and outputs is None:
            raise CodegenError(f"`{p}` denotes an array, not an element")
        self.sites.append(IndexSite(self.fn.name, rel, b.cname, b.shape, expr,
                                    dict(self.stable), list(scope.loops), self.grid))
        return b, expr, rest

    def pointer(self, t, scope: _Scope) -> _Buf:
        """A whole-buffer argument: `&x`, `&*x`, or a reference variable."""
        p = t.place if isinstance(t, (Borrow, PlaceTerm)) else None
        if p is None:
            raise CodegenError("expected a reference to an array")
        b, rel = self.resolve(p, scope)
        if rel.steps:
            raise CodegenError(f"`{p}` must refer to a whole array to be passed here")
        return b

    # -- statements -----------------------------------------------------------------
    def block_body(self, b: Block, scope: _Scope, want_value: bool = False) -> Optional[str]:
        terms = list(b.terms)
        value = None
        for i, t in enumerate(terms):
            last = i + 1 == len(terms)
            if last and want_value and not isinstance(t, (Let, Assign, Sched, SplitExec,
                                                          ForNat, ForEach, Sync, Block)):
                value = self.expr(t, scope)
            else:
                self.stmt(t, scope)
        return value

    def braced(self, head: str, b: Block, scope: _Scope):
        self.line(head + " {" if head else "{")
        self.depth += 1
        self.block_body(b, scope)
        self.depth -= 1
        self.line("}")

    def stmt(self, t, scope: _Scope):
        if isinstance(t, Let):
            return self.let(t, scope)
        if isinstance(t, Assign):
            b = scope.vars.get(t.place.root)
            if isinstance(b, _Scalar) and not t.place.steps:
                self.line(f"{b.cname} = {self.expr(t.value, scope)};")
                return
            value = self.expr(t.value, scope)
            buf, ix, _ = self.lower(t.place, scope)
            self.line(f"{buf.cname}[{render_c(ix)}] = {value};")
            return
        if isinstance(t, Block):
            return self.braced("", t, scope.child())
        if isinstance(t, Sched):
            d = desugar_sched(t)
            return self.sched(d, scope)
        if isinstance(t, SplitExec):
            return self.split(t, scope)
        if isinstance(t, Sync):
            self.line("__syncthreads();")
            return
        if isinstance(t, ForNat):
            lo, hi = _ground(t.lo, "a loop bound"), _ground(t.hi, "a loop bound")
            inner = scope.child(loop=(t.var, lo, hi))
            inner.vars[t.var] = _Scalar(t.var)
            return self.braced(f"for (int {t.var} = {lo}; {t.var} < {hi}; {t.var}++)",
                               t.body, inner)
        if isinstance(t, ForEach):
            return self.for_each(t, scope)
        if isinstance(t, App):
            return self.call_stmt(t, scope)
        if isinstance(t, Lit) and t.kind == "unit":
            return
        self.line(f"(void)({self.expr(t, scope)});")

    def sched(self, t: Sched, scope: _Scope):
        r = scope.execs[t.exec_name]
        axis = t.axes[0] if t.axes else r.remaining_axes()[0]
        new = r.forall(axis)
        inner = scope.child(execs={t.binder: new}, cur=new)
        if "#" in t.binder:
            # the outer half of a multi-axis sched opens no scope of its own
            return self.block_body(t.body, inner)
        self.braced("", t.body, inner)

    def split(self, t: SplitExec, scope: _Scope):
        r = scope.execs[t.exec_name]
        pos = _ground(t.pos, "a split position")
        fst, snd = r.split(t.axis, pos)
        stage = fst.stage_of(len(fst.path) - 1)
        _, mid = fst.split_bounds()[(stage, t.axis)]
        self.braced(f"if ({axis_symbol(stage, t.axis)} < {mid})", t.fst_body,
                    scope.child(execs={t.fst_binder: fst}, cur=fst))
        if t.snd_body.terms:
            self.lines[-1] += " else {"
            self.depth += 1
            self.block_body(t.snd_body, scope.child(execs={t.snd_binder: snd}, cur=snd))
            self.depth -= 1
            self.line("}")

    def for_each(self, t: ForEach, scope: _Scope):
        if not isinstance(t.coll, PlaceTerm):
            raise CodegenError("can only iterate over a place")
        k = f"{t.var}_i"
        buf, ix, rest = self.lower(t.coll.place, scope, outputs=[k])
        inner = scope.child(loop=(k, 0, rest[0]))
        inner.vars[t.var] = _Scalar(t.var)
        self.line(f"for (int {k} = 0; {k} < {rest[0]}; {k}++) {{")
        self.depth += 1
        self.line(f"{buf.ctype} {t.var} = {buf.cname}[{render_c(ix)}];")
        self.block_body(t.body, inner)
        self.depth -= 1
        self.line("}")

    def let(self, t: Let, scope: _Scope):
        v = t.value
        if isinstance(v, Borrow):
            b, rel = self.resolve(v.place, scope)
            scope.vars[t.name] = _Alias(b, rel.steps)
            return
        if isinstance(v, PlaceTerm) and not v.place.steps:
            b = scope.vars.get(v.place.root)
            if isinstance(b, (_Buf, _Alias)):
                scope.vars[t.name] = b  # a move of a buffer or a reference
                return
        if isinstance(v, App) and v.fn in ("alloc", "GpuGlobal::alloc_copy", "CpuHeap::new"):
            scope.vars[t.name] = self.allocation(t.name, v, scope)
            return
        ty = self.let_types.get(id(t))
        if isinstance(ty, RefTy) and isinstance(v, (PlaceTerm, App)):
            raise CodegenError(f"cannot compile the reference `{t.name}`")
        if isinstance(ty, (ArrayTy, ViewTy)):
            shape, elem = _shape_elem(ty, f"`{t.name}`")
            init = self.array_init(v, scope)
            buf = _Buf(t.name, shape, elem, "local")
            self.line(f"{buf.ctype} {t.name}[{buf.size}] = {init};")
            scope.vars[t.name] = buf
            return
        if not isinstance(ty, Scalar) or ty.name not in C_TYPES:
            raise CodegenError(f"`{t.name}` has type `{ty}`, which has no C counterpart")
        self.line(f"{C_TYPES[ty.name]} {t.name} = {self.expr(v, scope)};")
        scope.vars[t.name] = _Scalar(t.name)

    def array_init(self, v, scope: _Scope) -> str:
        if isinstance(v, ArrayLit):
            return "{" + ", ".join(self.expr(e, scope) for e in v.elems) + "}"
        if isinstance(v, ArrayRepeat):
            n = _ground(v.count, "an array length")
            return "{" + ", ".join([self.expr(v.value, scope)] * n) + "}"
        raise CodegenError("arrays can only be initialized from literals")

    def allocation(self, name: str, v: App, scope: _Scope) -> _Buf:
        if v.fn == "alloc":
            shape, elem = _shape_elem(v.generics[1], f"shared array `{name}`")
            buf = _Buf(name, shape, elem, "gpu.shared")
            self.line(f"__shared__ {buf.ctype} {name}[{buf.size}];")
            return buf
        if v.fn == "GpuGlobal::alloc_copy":
            src = self.pointer(v.args[0], scope)
            buf = _Buf(name, src.shape, src.elem, "gpu.global")
            bytes_ = f"{buf.size} * sizeof({buf.ctype})"
            self.line(f"{buf.ctype}* {name};")
            self.line(f"cudaMalloc(&{name}, {bytes_});")
            self.line(f"cudaMemcpy({name}, {src.cname}, {bytes_}, cudaMemcpyHostToDevice);")
            self.cleanup.append(f"cudaFree({name});")
            return buf
        init = v.args[0]
        if isinstance(init, ArrayRepeat):
            n = _ground(init.count, "an array length")
            elem = self._scalar_elem(init.value)
            buf = _Buf(name, (n,), elem, "cpu.mem")
            self.line(f"{buf.ctype}* {name} = new {buf.ctype}[{n}];")
            self.line(f"std::fill_n({name}, {n}, {self.expr(init.value, scope)});")
        elif isinstance(init, ArrayLit):
            elem = self._scalar_elem(init.elems[0]) if init.elems else "i32"
            buf = _Buf(name, (len(init.elems),), elem, "cpu.mem")
            self.line(f"{buf.ctype}* {name} = new {buf.ctype}[{len(init.elems)}]"
                      f"{self.array_init(init, scope)};")
        else:
            raise CodegenError("`CpuHeap::new` needs an array literal")
        self.cleanup.append(f"delete[] {name};")
        return buf

    @staticmethod
    def _scalar_elem(t) -> str:
        if isinstance(t, Lit):
            return {"int": "i32", "float": "f64", "bool": "bool"}.get(t.kind, "i32")
        return "i32"

    def call_stmt(self, t: App, scope: _Scope):
        if t.fn in ("copy_mem_to_host", "copy_mem_to_gpu"):
            if t.fn == "copy_mem_to_host":
                src, dst = self.pointer(t.args[0], scope), self.pointer(t.args[1], scope)
                kind = "cudaMemcpyDeviceToHost"
            else:
                dst, src = self.pointer(t.args[0], scope), self.pointer(t.args[1], scope)
                kind = "cudaMemcpyHostToDevice"
            self.line(f"cudaMemcpy({dst.cname}, {src.cname}, {src.size} * sizeof({src.ctype}),"
                      f" {kind});")
            return
        if t.fn in INTRINSICS:
            raise CodegenError(f"the result of `{t.fn}` must be bound with `let`")
        callee = self.functions.get(t.fn)
        if callee is None:
            raise CodegenError(f"unknown function `{t.fn}`")
        kind = callee.exec_level.kind
        if kind == ExecLevel.GRID:
            args = ", ".join(self.arg(a, ty, scope) for a, (_, ty) in zip(t.args, callee.params))
            self.line(f"{t.fn}<<<{_dim3(t.launch[0])}, {_dim3(t.launch[1])}>>>({args});")
            return
        if kind == ExecLevel.CPU_THREAD:
            args = ", ".join(self.arg(a, ty, scope) for a, (_, ty) in zip(t.args, callee.params))
            self.line(f"{t.fn}({args});")
            return
        self.inline(callee, t, scope)

    def arg(self, a, ty: DataType, scope: _Scope) -> str:
        if isinstance(ty, RefTy):
            return self.pointer(a, scope).cname
        return self.expr(a, scope)

    def inline(self, callee: FunctionDef, t: App, scope: _Scope):
        if callee.name in self._inline_stack:
            raise CodegenError(f"`{callee.name}` calls itself and cannot be inlined")
        self._inline_stack.append(callee.name)
        inner = _Scope(ChainMap({}), ChainMap({callee.exec_binder: scope.cur}), scope.cur,
                       list(scope.loops))
        self.line(f"{{  // {callee.name}")
        self.depth += 1
        for (pname, pty), a in zip(callee.params, t.args):
            if isinstance(pty, RefTy):
                if not isinstance(a, (Borrow, PlaceTerm)):
                    raise CodegenError(f"argument for `{pname}` must be a place")
                b, rel = self.resolve(a.place, scope)
                inner.vars[pname] = _Alias(b, rel.steps)
            else:
                if not isinstance(pty, Scalar) or pty.name not in C_TYPES:
                    raise CodegenError(f"parameter `{pname}` has no C counterpart")
                self.line(f"const {C_TYPES[pty.name]} {pname} = {self.expr(a, scope)};")
                inner.vars[pname] = _Scalar(pname)
        self.block_body(callee.body, inner)
        self.depth -= 1
        self.line("}")
        self._inline_stack.pop()

    # -- expressions ----------------------------------------------------------------
    def expr(self, t, scope: _Scope, parent: int = 0, right: bool = False) -> str:
        if isinstance(t, Lit):
            if t.kind == "bool":
                return "true" if t.value else "false"
            if t.kind == "float":
                return repr(float(t.value))
            if t.kind == "unit":
                raise CodegenError("`()` has no C value")
            return str(t.value)
        if isinstance(t, PlaceTerm):
            b = scope.vars.get(t.place.root)
            if isinstance(b, _Scalar) and not t.place.steps:
                return b.cname
            buf, ix, _ = self.lower(t.place, scope)
            return f"{buf.cname}[{render_c(ix)}]"
        if isinstance(t, BinOp):
            p = _C_PREC[t.op]
            out = (f"{self.expr(t.lhs, scope, p)} {t.op} "
                   f"{self.expr(t.rhs, scope, p, right=True)}")
            return f"({out})" if p < parent or (p == parent and right) else out
        if isinstance(t, UnOp):
            inner = self.expr(t.operand, scope, 7)
            return f"{t.op}{inner}"
        if isinstance(t, App):
            raise CodegenError(f"the call to `{t.fn}` cannot be used as a value")
        raise CodegenError(f"cannot compile {type(t).__name__} as an expression")


def emit_cuda(prog: Program, instances: Optional[Mapping[str, Mapping[str, int]]] = None
              ) -> EmitResult:
    """CUDA source for an accepted program.

    Raises :class:`CodegenError` if the program or its specialization does not check, or
    uses something without a CUDA counterpart.
    """
    result = check_program(prog)
    if not result.ok:
        d = result.diagnostics[0]
        raise CodegenError(f"program does not check: {d.code}: {d.message}")
    mono = monomorphize(prog, instances)
    result = check_program(mono)
    if not result.ok:
        d = result.diagnostics[0]
        raise CodegenError(f"specialized program does not check: {d.code}: {d.message}")
    em = CudaEmitter(mono, result.let_types)
    try:
        source = em.emit()
    except (NatError, KeyError) as e:
        raise CodegenError(str(e)) from None
    return EmitResult(source, em.sites, mono)
