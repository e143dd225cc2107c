"""Pretty printer producing source text that parses back to an equal AST."""

from __future__ import annotations

from typing import List

from ..nat import Nat, render
from .ast import (
    App, ArrayLit, ArrayRepeat, ArrayTy, Assign, BinOp, Block, Borrow, BoxTy,
    Deref, Dim, ExecLevel, ForEach, ForNat, FunctionDef, Index, Let, Lit, Memory,
    PlaceExpr, PlaceTerm, Program, Proj, RefTy, Scalar, Sched, Select, SplitExec,
    Sync, TupleTy, TyVar, UnOp, ViewApp, ViewDef, ViewInst, ViewTy,
)

INDENT = "    "


def nat_str(n: Nat) -> str:
    return render(n)


def type_str(t) -> str:
    if isinstance(t, Scalar):
        return "()" if t.name == "unit" else t.name
    if isinstance(t, TyVar):
        return t.name
    if isinstance(t, TupleTy):
        inner = ", ".join(type_str(e) for e in t.elems)
        return f"({inner},)" if len(t.elems) == 1 else f"({inner})"
    if isinstance(t, ArrayTy):
        return f"[{type_str(t.elem)}; {nat_str(t.size)}]"
    if isinstance(t, ViewTy):
        return f"[[{type_str(t.elem)}; {nat_str(t.size)}]]"
    if isinstance(t, RefTy):
        mode = "uniq" if t.uniq else "shrd"
        target = type_str(t.target)
        if isinstance(t.target, BoxTy):
            target = f"({target})"
        return f"&{mode} {t.mem} {target}"
    if isinstance(t, BoxTy):
        return f"{type_str(t.target)} @ {t.mem}"
    raise TypeError(f"not a data type: {t!r}")


def dim_str(d: Dim) -> str:
    return "".join(d.axes) + "<" + ", ".join(nat_str(e) for e in d.extents) + ">"


def level_str(lv: ExecLevel) -> str:
    if lv.kind == ExecLevel.GRID:
        return f"gpu.grid<{dim_str(lv.blocks)}, {dim_str(lv.threads)}>"
    if lv.kind == ExecLevel.BLOCK:
        return f"gpu.Block<{dim_str(lv.threads)}>"
    if lv.kind == ExecLevel.GPU_THREAD:
        return "gpu.Thread"
    return "cpu.thread"


def view_str(v: ViewInst) -> str:
    if v.name == "map":
        return "map(" + chain_str(v.inner) + ")"
    if v.nat_args:
        return f"{v.name}::<" + ", ".join(nat_str(a) for a in v.nat_args) + ">"
    return v.name


def chain_str(chain) -> str:
    return ".".join(view_str(v) for v in chain)


def place_str(p: PlaceExpr) -> str:
    out = p.root
    for i, step in enumerate(p.steps):
        if isinstance(step, Deref):
            out = f"*{out}"
            if i + 1 < len(p.steps):
                out = f"({out})"
        elif isinstance(step, Proj):
            out += f".{step.which}"
        elif isinstance(step, Index):
            out += f"[{nat_str(step.index)}]"
        elif isinstance(step, Select):
            out += f"[[{step.exec_name}]]"
        elif isinstance(step, ViewApp):
            out += "." + view_str(step.view)
    return out


def generic_str(g) -> str:
    if isinstance(g, Memory):
        return g.name
    if isinstance(g, Nat):
        return nat_str(g)
    return type_str(g)


_PREC = {"||": 0, "&&": 1, "==": 2, "!=": 2, "<": 2, "<=": 2, ">": 2, ">=": 2,
         "+": 3, "-": 3, "*": 4, "/": 4, "%": 4}


def expr_str(t, depth: int = 0) -> str:
    if isinstance(t, PlaceTerm):
        return place_str(t.place)
    if isinstance(t, Lit):
        if t.kind == "unit":
            return "()"
        if t.kind == "bool":
            return "true" if t.value else "false"
        if t.kind == "float":
            return repr(float(t.value))
        return str(t.value)
    if isinstance(t, Borrow):
        return ("&uniq " if t.uniq else "&shrd ") + place_str(t.place)
    if isinstance(t, BinOp):
        p = _PREC[t.op]
        lhs = expr_str(t.lhs, depth)
        if isinstance(t.lhs, BinOp) and _PREC[t.lhs.op] < p:
            lhs = f"({lhs})"
        rhs = expr_str(t.rhs, depth)
        if isinstance(t.rhs, BinOp) and _PREC[t.rhs.op] <= p:
            rhs = f"({rhs})"
        return f"{lhs} {t.op} {rhs}"
    if isinstance(t, UnOp):
        inner = expr_str(t.operand, depth)
        if isinstance(t.operand, BinOp):
            inner = f"({inner})"
        return f"{t.op}{inner}"
    if isinstance(t, ArrayLit):
        return "[" + ", ".join(expr_str(e, depth) for e in t.elems) + "]"
    if isinstance(t, ArrayRepeat):
        return f"[{expr_str(t.value, depth)}; {nat_str(t.count)}]"
    if isinstance(t, App):
        out = t.fn
        if t.generics:
            out += "::<" + ", ".join(generic_str(g) for g in t.generics) + ">"
        if t.launch is not None:
            if not t.generics:
                out += "::"
            out += f"<<<{dim_str(t.launch[0])}, {dim_str(t.launch[1])}>>>"
        return out + "(" + ", ".join(expr_str(a, depth) for a in t.args) + ")"
    return "\n".join(term_lines(t, depth)).lstrip()


def block_lines(b: Block, depth: int) -> List[str]:
    terms = list(b.terms)
    discard = (len(terms) > 1 and isinstance(terms[-1], Lit) and terms[-1].kind == "unit"
               and not isinstance(terms[-2], (Let, Assign, Block, Sched, SplitExec, ForNat,
                                              ForEach, Sync)))
    if discard:
        terms.pop()
    lines = []
    for i, t in enumerate(terms):
        sub = term_lines(t, depth + 1)
        if i + 1 < len(terms) or discard:
            sub[-1] += ";"
        lines.extend(sub)
    return lines


def _braced(head: str, b: Block, depth: int) -> List[str]:
    pad = INDENT * depth
    return [pad + head + " {"] + block_lines(b, depth) + [pad + "}"]


def term_lines(t, depth: int) -> List[str]:
    pad = INDENT * depth
    if isinstance(t, Let):
        ann = f": {type_str(t.ty)}" if t.ty is not None else ""
        sub = term_lines(t.value, depth)
        sub[0] = f"{pad}let {t.name}{ann} = " + sub[0].lstrip()
        return sub
    if isinstance(t, Assign):
        sub = term_lines(t.value, depth)
        sub[0] = f"{pad}{place_str(t.place)} = " + sub[0].lstrip()
        return sub
    if isinstance(t, Block):
        return [pad + "{"] + block_lines(t, depth) + [pad + "}"]
    if isinstance(t, Sched):
        axes = "(" + ",".join(t.axes) + ")" if t.axes else ""
        return _braced(f"sched{axes} {t.binder} in {t.exec_name}", t.body, depth)
    if isinstance(t, SplitExec):
        head = [f"{pad}split({t.axis}) {t.exec_name} at {nat_str(t.pos)} {{"]
        arm1 = _braced(f"{t.fst_binder} =>", t.fst_body, depth + 1)
        arm1[-1] += ","
        arm2 = _braced(f"{t.snd_binder} =>", t.snd_body, depth + 1)
        return head + arm1 + arm2 + [pad + "}"]
    if isinstance(t, ForNat):
        return _braced(f"for {t.var} in [{nat_str(t.lo)}..{nat_str(t.hi)}]",
                       t.body, depth)
    if isinstance(t, ForEach):
        return _braced(f"for {t.var} in {expr_str(t.coll, depth)}", t.body, depth)
    if isinstance(t, Sync):
        return [pad + "sync"]
    return [pad + expr_str(t, depth)]


def function_str(f: FunctionDef) -> str:
    tp = ""
    if f.type_params:
        tp = "<" + ", ".join(f"{n}: {k}" for n, k in f.type_params) + ">"
    params = ", ".join(f"{n}: {type_str(t)}" for n, t in f.params)
    head = (f"fn {f.name}{tp}({params}) -[{f.exec_binder}: {level_str(f.exec_level)}]-> "
            f"{type_str(f.ret)}")
    return "\n".join(_braced(head, f.body, 0))


def viewdef_str(v: ViewDef) -> str:
    tp = ""
    if v.params:
        tp = "<" + ", ".join(f"{n}: {k}" for n, k in v.params) + ">"
    return f"view {v.name}{tp} = {chain_str(v.body)};"


def pretty_print(prog: Program) -> str:
    parts = []
    for item in prog.items:
        parts.append(viewdef_str(item) if isinstance(item, ViewDef) else function_str(item))
    return "\n\n".join(parts) + "\n"
