"""Hand-written recursive descent parser for ``.desc`` sources."""

from __future__ import annotations

from typing import List, Optional, Tuple

from ..nat import NAdd, NDiv, NLit, NMod, NMul, NSub, NVar, Nat
from .ast import (
    AXES, DIM_FORMS, KINDS, SCALARS, App, ArrayLit, ArrayRepeat, ArrayTy, Assign,
    BinOp, Block, Borrow, BoxTy, DataType, Deref, Dim, ExecLevel, ForEach, ForNat,
    FunctionDef, Index, Let, Lit, Memory, PlaceExpr, PlaceTerm, Program, Proj,
    RefTy, Scalar, Sched, Select, Span, SplitExec, Sync, Term, TupleTy, TyVar,
    UnOp, ViewApp, ViewDef, ViewInst, ViewTy,
)
from .lexer import SyntaxDiagnostic, Token, tokenize

MEMORIES = {"cpu.mem", "gpu.global", "gpu.shared"}
VIEW_ALIASES = {"rev": "reverse"}

_BINARY_PREC = [
    ("||",),
    ("&&",),
    ("==", "!=", "<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/", "%"),
]


_STATEMENTS = (Let, Assign, Block, Sched, SplitExec, ForNat, ForEach, Sync)


class ParseFailure(Exception):
    """Raised by :func:`parse` with every diagnostic collected."""

    def __init__(self, diagnostics: List[SyntaxDiagnostic]):
        super().__init__("; ".join(d.message for d in diagnostics))
        self.diagnostics = diagnostics


class Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0

    # -- token helpers ----------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.is_(text)

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            return self.advance()
        return None

    def error(self, msg: str, tok: Optional[Token] = None, label: str = ""):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else f"`{tok.text}`"
        raise SyntaxDiagnostic(f"{msg}, found {found}", tok.span, label or "unexpected here")

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected `{text}`")
        return self.advance()

    def ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            self.error(f"expected {what}")
        return self.advance()

    def span_from(self, start: Token) -> Span:
        prev = self.toks[self.i - 1] if self.i > 0 else start
        return Span(start.span.start, max(prev.span.end, start.span.end),
                    start.span.line, start.span.col)

    # -- program ----------------------------------------------------------
    def program(self) -> Program:
        items = []
        diags: List[SyntaxDiagnostic] = []
        seen = {}
        while self.tok.kind != "eof":
            try:
                if self.at("fn"):
                    item = self.function()
                elif self.at("view"):
                    item = self.view_def()
                else:
                    self.error("expected `fn` or `view`")
            except SyntaxDiagnostic as d:
                diags.append(d)
                self._recover()
                continue
            if item.name in seen:
                diags.append(SyntaxDiagnostic(
                    f"duplicate definition of `{item.name}`", item.span,
                    "already defined"))
            seen[item.name] = item
            items.append(item)
        if diags:
            raise ParseFailure(diags)
        return Program(tuple(items))

    def _recover(self):
        self.advance()
        while self.tok.kind != "eof" and not (self.at("fn") or self.at("view")):
            self.advance()

    def kinded_params(self) -> Tuple[Tuple[str, str], ...]:
        out = []
        if self.accept("<"):
            while not self.at(">"):
                name = self.ident("type parameter").text
                self.expect(":")
                kind = self.ident("kind")
                if kind.text not in KINDS:
                    self.error("expected kind `nat`, `mem` or `dt`", kind)
                out.append((name, kind.text))
                if not self.accept(","):
                    break
            self.expect(">")
        return tuple(out)

    def function(self) -> FunctionDef:
        start = self.expect("fn")
        name = self.ident("function name").text
        tparams = self.kinded_params()
        self.expect("(")
        params = []
        while not self.at(")"):
            pname = self.ident("parameter name").text
            self.expect(":")
            params.append((pname, self.dtype()))
            if not self.accept(","):
                break
        self.expect(")")
        if not self.at("-") or not self.peek().is_("["):
            self.error("expected execution resource annotation `-[name: level]->`",
                       label="functions must state who executes them")
        self.advance()
        self.advance()
        binder = self.ident("execution resource name").text
        self.expect(":")
        level = self.exec_level()
        self.expect("]")
        self.expect("->")
        ret = self.dtype()
        body = self.block()
        return FunctionDef(name, tparams, tuple(params), binder, level, ret, body,
                           span=self.span_from(start))

    def view_def(self) -> ViewDef:
        start = self.expect("view")
        name = self.ident("view name").text
        params = self.kinded_params()
        self.expect("=")
        chain = self.view_chain()
        self.accept(";")
        return ViewDef(name, params, chain, span=self.span_from(start))

    # -- sizes, memories, levels, types -------------------------------------
    def nat(self) -> Nat:
        lhs = self.nat_product()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            rhs = self.nat_product()
            lhs = NAdd(lhs, rhs) if op == "+" else NSub(lhs, rhs)
        return lhs

    def nat_product(self) -> Nat:
        lhs = self.nat_atom()
        while self.at("*") or self.at("/") or self.at("%"):
            op = self.advance().text
            rhs = self.nat_atom()
            lhs = {"*": NMul, "/": NDiv, "%": NMod}[op](lhs, rhs)
        return lhs

    def nat_atom(self) -> Nat:
        if self.tok.kind == "int":
            return NLit(int(self.advance().text))
        if self.tok.kind == "ident":
            return NVar(self.advance().text)
        if self.accept("("):
            n = self.nat()
            self.expect(")")
            return n
        self.error("expected a size expression")

    def _dotted(self) -> Optional[str]:
        """Two-part names like ``gpu.global`` at the cursor, without consuming."""
        if self.tok.kind == "ident" and self.peek().is_(".") and self.peek(2).kind == "ident":
            return f"{self.tok.text}.{self.peek(2).text}"
        return None

    def memory(self) -> Memory:
        d = self._dotted()
        if d in MEMORIES:
            self.i += 3
            return Memory(d)
        if self.tok.kind == "ident" and d is None:
            return Memory(self.advance().text)
        self.error("expected a memory space")

    def dim(self) -> Dim:
        tok = self.ident("dimension (e.g. `X<32>`)")
        if tok.text not in DIM_FORMS:
            self.error("expected one of XYZ, XY, XZ, YZ, X, Y, Z", tok)
        self.expect("<")
        extents = [self.nat()]
        while self.accept(","):
            extents.append(self.nat())
        self.expect(">")
        if len(extents) != len(tok.text):
            raise SyntaxDiagnostic(
                f"dimension `{tok.text}` expects {len(tok.text)} extents, got {len(extents)}",
                tok.span, "wrong number of extents")
        return Dim(tuple(tok.text), tuple(extents))

    def exec_level(self) -> ExecLevel:
        d = self._dotted()
        if d is None:
            self.error("expected an execution level")
        start = self.tok
        self.i += 3
        low = d.lower()
        if low == "cpu.thread":
            return ExecLevel(ExecLevel.CPU_THREAD)
        if low == "gpu.thread":
            return ExecLevel(ExecLevel.GPU_THREAD)
        if low == "gpu.grid":
            self.expect("<")
            b = self.dim()
            self.expect(",")
            t = self.dim()
            self.expect(">")
            return ExecLevel(ExecLevel.GRID, b, t)
        if low == "gpu.block":
            self.expect("<")
            t = self.dim()
            self.expect(">")
            return ExecLevel(ExecLevel.BLOCK, None, t)
        self.error("expected cpu.thread, gpu.grid, gpu.block or gpu.thread", start)

    def dtype(self) -> DataType:
        t = self.dtype_base()
        while self.accept("@"):
            t = BoxTy(t, self.memory())
        return t

    def dtype_base(self) -> DataType:
        if self.accept("&"):
            uniq = False
            if self.accept("uniq"):
                uniq = True
            else:
                self.accept("shrd")
            mem = self.memory()
            return RefTy(uniq, mem, self.dtype_base())
        if self.accept("("):
            elems = []
            trailing = False
            while not self.at(")"):
                elems.append(self.dtype())
                trailing = bool(self.accept(","))
                if not trailing:
                    break
            self.expect(")")
            if not elems:
                return Scalar("unit")
            if len(elems) == 1 and not trailing:
                return elems[0]
            return TupleTy(tuple(elems))
        if self.at("["):
            save = self.i
            if self.peek().is_("["):
                try:
                    return self._view_type()
                except SyntaxDiagnostic:
                    self.i = save
            self.advance()
            elem = self.dtype()
            self.expect(";")
            size = self.nat()
            self.expect("]")
            return ArrayTy(elem, size)
        if self.tok.kind == "ident":
            name = self.advance().text
            return Scalar(name) if name in SCALARS else TyVar(name)
        self.error("expected a data type")

    def _view_type(self) -> DataType:
        self.expect("[")
        self.expect("[")
        elem = self.dtype()
        self.expect(";")
        size = self.nat()
        self.expect("]")
        self.expect("]")
        return ViewTy(elem, size)

    # -- views --------------------------------------------------------------
    def view_chain(self) -> Tuple[ViewInst, ...]:
        chain = [self.view_inst()]
        while self.at(".") and self._is_name(self.peek()):
            self.advance()
            chain.append(self.view_inst())
        return tuple(chain)

    @staticmethod
    def _is_name(tok: Token) -> bool:
        # `split` is both a keyword and a view name
        return tok.kind == "ident" or tok.is_("split")

    def view_inst(self) -> ViewInst:
        if not self._is_name(self.tok):
            self.error("expected view name")
        tok = self.advance()
        name = VIEW_ALIASES.get(tok.text, tok.text)
        if name == "map":
            self.expect("(")
            inner = self.view_chain()
            self.expect(")")
            return ViewInst("map", (), inner, span=self.span_from(tok))
        args: List[Nat] = []
        if self.at("::") and self.peek().is_("<"):
            self.advance()
            self.advance()
            while not self.at(">"):
                args.append(self.nat())
                if not self.accept(","):
                    break
            self.expect(">")
        return ViewInst(name, tuple(args), span=self.span_from(tok))

    # -- terms ----------------------------------------------------------------
    def block(self) -> Block:
        start = self.expect("{")
        terms = []
        while not self.at("}"):
            t = self.term()
            terms.append(t)
            if self.accept(";"):
                while self.accept(";"):
                    pass
                if self.at("}") and not isinstance(t, _STATEMENTS):
                    # `e;` at the end discards the value of `e`
                    terms.append(Lit(None, "unit", span=self.toks[self.i - 1].span))
                continue
            if self.at("}"):
                break
            if isinstance(t, (Block, Sched, SplitExec, ForNat, ForEach)):
                continue
            self.error("expected `;` or `}`")
        self.expect("}")
        return Block(tuple(terms), span=self.span_from(start))

    def term(self) -> Term:
        tok = self.tok
        if self.at("let"):
            self.advance()
            name = self.ident("variable name").text
            ty = None
            if self.accept(":"):
                ty = self.dtype()
            self.expect("=")
            value = self.expr()
            return Let(name, ty, value, span=self.span_from(tok))
        if self.at("sched"):
            return self.sched()
        if self.at("split"):
            return self.split_exec()
        if self.at("for"):
            return self.for_loop()
        if self.at("sync"):
            self.advance()
            return Sync(span=tok.span)
        if self.at("{"):
            return self.block()
        e = self.expr()
        if self.at("="):
            if not isinstance(e, PlaceTerm):
                self.error("left-hand side of assignment must be a place expression",
                           tok)
            self.advance()
            value = self.expr()
            return Assign(e.place, value, span=self.span_from(tok))
        return e

    def sched(self) -> Sched:
        start = self.expect("sched")
        axes: List[str] = []
        if self.accept("("):
            while True:
                ax = self.ident("axis X, Y or Z")
                if ax.text not in AXES:
                    self.error("expected axis X, Y or Z", ax)
                axes.append(ax.text)
                if not self.accept(","):
                    break
            self.expect(")")
        binder = self.ident("execution resource binder").text
        self.expect("in")
        ename = self.ident("execution resource").text
        body = self.block()
        return Sched(tuple(axes), binder, ename, body, span=self.span_from(start))

    def split_exec(self) -> SplitExec:
        start = self.expect("split")
        self.expect("(")
        ax = self.ident("axis X, Y or Z")
        if ax.text not in AXES:
            self.error("expected axis X, Y or Z", ax)
        self.expect(")")
        ename = self.ident("execution resource").text
        self.expect("at")
        pos = self.nat()
        self.expect("{")
        b1 = self.ident("binder").text
        self.expect("=>")
        body1 = self.block()
        self.accept(",")
        b2 = self.ident("binder").text
        self.expect("=>")
        body2 = self.block()
        self.accept(",")
        self.expect("}")
        return SplitExec(ax.text, pos, ename, b1, body1, b2, body2,
                         span=self.span_from(start))

    def for_loop(self) -> Term:
        start = self.expect("for")
        var = self.ident("loop variable").text
        self.expect("in")
        if self.accept("["):
            lo = self.nat()
            self.expect("..")
            hi = self.nat()
            self.expect("]")
            body = self.block()
            return ForNat(var, lo, hi, body, span=self.span_from(start))
        coll = self.expr()
        body = self.block()
        return ForEach(var, coll, body, span=self.span_from(start))

    # -- expressions ----------------------------------------------------------
    def expr(self, level: int = 0) -> Term:
        if level == len(_BINARY_PREC):
            return self.unary()
        start = self.tok
        lhs = self.expr(level + 1)
        while self.tok.kind == "punct" and self.tok.text in _BINARY_PREC[level]:
            op = self.advance().text
            rhs = self.expr(level + 1)
            lhs = BinOp(op, lhs, rhs, span=self.span_from(start))
        return lhs

    def unary(self) -> Term:
        start = self.tok
        if self.at("-") or self.at("!"):
            op = self.advance().text
            return UnOp(op, self.unary(), span=self.span_from(start))
        if self.at("*"):
            return PlaceTerm(self.place(), span=self.span_from(start))
        if self.at("&"):
            self.advance()
            uniq = False
            if self.accept("uniq"):
                uniq = True
            else:
                self.accept("shrd")
            p = self.place()
            return Borrow(uniq, p, span=self.span_from(start))
        return self.primary()

    def primary(self) -> Term:
        start = self.tok
        if self.tok.kind == "int":
            return Lit(int(self.advance().text), "int", span=start.span)
        if self.tok.kind == "float":
            return Lit(float(self.advance().text), "float", span=start.span)
        if self.at("true") or self.at("false"):
            return Lit(self.advance().text == "true", "bool", span=start.span)
        if self.at("("):
            if self.peek().is_(")"):
                self.advance()
                self.advance()
                return Lit(None, "unit", span=self.span_from(start))
            self.advance()
            inner = self.expr()
            self.expect(")")
            if isinstance(inner, PlaceTerm):
                p = self.place_postfix(inner.place, start)
                return PlaceTerm(p, span=self.span_from(start))
            return inner
        if self.at("["):
            self.advance()
            first = self.expr()
            if self.accept(";"):
                count = self.nat()
                self.expect("]")
                return ArrayRepeat(first, count, span=self.span_from(start))
            elems = [first]
            while self.accept(","):
                if self.at("]"):
                    break
                elems.append(self.expr())
            self.expect("]")
            return ArrayLit(tuple(elems), span=self.span_from(start))
        if self.tok.kind == "ident":
            if self.peek().is_("(") or self.peek().is_("::"):
                return self.call()
            return PlaceTerm(self.place(), span=self.span_from(start))
        self.error("expected an expression")

    def call(self) -> App:
        start = self.tok
        name = self.advance().text
        generics: List = []
        launch = None
        while self.at("::"):
            if self.peek().kind == "ident":
                self.advance()
                name = f"{name}::{self.advance().text}"
                continue
            if all(self.peek(k).is_("<") for k in (1, 2, 3)):
                self.advance()
                launch = self._launch()
                break
            self.expect("::")
            self.expect("<")
            while not self.at(">"):
                generics.append(self.generic_arg())
                if not self.accept(","):
                    break
            self.expect(">")
            if all(self.peek(k).is_("<") for k in (0, 1, 2)):
                launch = self._launch()
            break
        self.expect("(")
        args = []
        while not self.at(")"):
            args.append(self.expr())
            if not self.accept(","):
                break
        self.expect(")")
        return App(name, tuple(generics), tuple(args), launch, span=self.span_from(start))

    def _launch(self):
        for _ in range(3):
            self.expect("<")
        b = self.dim()
        self.expect(",")
        t = self.dim()
        for _ in range(3):
            self.expect(">")
        return (b, t)

    def generic_arg(self):
        d = self._dotted()
        if d in MEMORIES:
            return self.memory()
        if self.at("[") or self.at("&") or self.at("(") and self.peek().is_(")"):
            return self.dtype()
        if self.tok.kind == "ident" and self.tok.text in SCALARS:
            return self.dtype()
        return self.nat()

    # -- places ---------------------------------------------------------------
    def place(self) -> PlaceExpr:
        start = self.tok
        if self.accept("*"):
            inner = self.place()
            base = PlaceExpr(inner.root, inner.steps + (Deref(),), span=self.span_from(start))
            return base
        if self.at("("):
            self.advance()
            inner = self.place()
            self.expect(")")
            return self.place_postfix(inner, start)
        root = self.ident("variable")
        return self.place_postfix(PlaceExpr(root.text, (), span=root.span), start)

    def place_postfix(self, p: PlaceExpr, start: Token) -> PlaceExpr:
        steps = list(p.steps)
        while True:
            if self.at(".") and self._is_name(self.peek()):
                self.advance()
                name = self.tok.text
                if name in ("fst", "snd"):
                    self.advance()
                    steps.append(Proj(name))
                else:
                    steps.append(ViewApp(self.view_inst()))
            elif self.at("[") and self.peek().is_("["):
                self.advance()
                self.advance()
                ename = self.ident("execution resource").text
                self.expect("]")
                self.expect("]")
                steps.append(Select(ename))
            elif self.at("["):
                self.advance()
                idx = self.nat()
                self.expect("]")
                steps.append(Index(idx))
            else:
                break
        return PlaceExpr(p.root, tuple(steps), span=self.span_from(start))


def parse(src: str) -> Program:
    """Parse a whole source file; raises :class:`ParseFailure` on errors."""
    return Parser(src).program()


def parse_place(src: str) -> PlaceExpr:
    p = Parser(src)
    out = p.place()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input")
    return out


def parse_type(src: str) -> DataType:
    p = Parser(src)
    out = p.dtype()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input")
    return out


def parse_nat(src: str) -> Nat:
    p = Parser(src)
    out = p.nat()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input")
    return out


def parse_dim(src: str) -> Dim:
    p = Parser(src)
    out = p.dim()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input")
    return out


def parse_term(src: str) -> Term:
    p = Parser(src)
    out = p.term()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input")
    return out
