"""Abstract syntax: data types, execution levels, places, terms, items.

Every node carries a source ``span`` that is excluded from equality, so a
re-parsed pretty-printed program compares equal to the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

from ..nat import Nat


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    line: int
    col: int

    def cover(self, other: Optional["Span"]) -> "Span":
        if other is None:
            return self
        first = self if self.start <= other.start else other
        return Span(first.start, max(self.end, other.end), first.line, first.col)


def _span():
    return field(default=None, compare=False, repr=False, kw_only=True)


AXES = ("X", "Y", "Z")
DIM_FORMS = ("XYZ", "XY", "XZ", "YZ", "X", "Y", "Z")


# ---------------------------------------------------------------------------
# types

@dataclass(frozen=True)
class Memory:
    name: str

    CPU = "cpu.mem"
    GLOBAL = "gpu.global"
    SHARED = "gpu.shared"

    @property
    def is_var(self) -> bool:
        return self.name not in (self.CPU, self.GLOBAL, self.SHARED)

    @property
    def on_gpu(self) -> bool:
        return self.name in (self.GLOBAL, self.SHARED)

    def __str__(self):
        return self.name


CPU_MEM = Memory(Memory.CPU)
GPU_GLOBAL = Memory(Memory.GLOBAL)
GPU_SHARED = Memory(Memory.SHARED)


class DataType:
    __slots__ = ()

    def __str__(self):
        from .printer import type_str
        return type_str(self)


SCALARS = ("i32", "f32", "f64", "bool", "unit")


@dataclass(frozen=True, eq=True)
class Scalar(DataType):
    name: str


@dataclass(frozen=True, eq=True)
class TupleTy(DataType):
    elems: Tuple[DataType, ...]


@dataclass(frozen=True, eq=True)
class ArrayTy(DataType):
    elem: DataType
    size: Nat


@dataclass(frozen=True, eq=True)
class ViewTy(DataType):
    """Array view: reshaped/reordered access, not contiguous in memory."""
    elem: DataType
    size: Nat


@dataclass(frozen=True, eq=True)
class RefTy(DataType):
    uniq: bool
    mem: Memory
    target: DataType


@dataclass(frozen=True, eq=True)
class BoxTy(DataType):
    target: DataType
    mem: Memory


@dataclass(frozen=True, eq=True)
class TyVar(DataType):
    name: str


UNIT = Scalar("unit")
I32 = Scalar("i32")
F32 = Scalar("f32")
F64 = Scalar("f64")
BOOL = Scalar("bool")


def is_arraylike(t: DataType) -> bool:
    return isinstance(t, (ArrayTy, ViewTy))


@dataclass(frozen=True)
class Dim:
    """A 1-3 dimensional shape, e.g. ``XY<64, 64>``."""
    axes: Tuple[str, ...]
    extents: Tuple[Nat, ...]

    def __post_init__(self):
        if "".join(self.axes) not in DIM_FORMS:
            raise ValueError(f"invalid dimension form {''.join(self.axes)!r}")
        if len(self.axes) != len(self.extents):
            raise ValueError("dimension arity mismatch")

    def extent(self, axis: str) -> Optional[Nat]:
        for a, e in zip(self.axes, self.extents):
            if a == axis:
                return e
        return None

    def __str__(self):
        from .printer import dim_str
        return dim_str(self)


@dataclass(frozen=True)
class ExecLevel:
    kind: str  # "cpu.thread" | "gpu.grid" | "gpu.block" | "gpu.thread"
    blocks: Optional[Dim] = None
    threads: Optional[Dim] = None

    CPU_THREAD = "cpu.thread"
    GRID = "gpu.grid"
    BLOCK = "gpu.block"
    GPU_THREAD = "gpu.thread"

    def __str__(self):
        from .printer import level_str
        return level_str(self)


# ---------------------------------------------------------------------------
# views and places

@dataclass(frozen=True)
class ViewInst:
    name: str
    nat_args: Tuple[Nat, ...] = ()
    inner: Tuple["ViewInst", ...] = ()  # argument chain of map(...)
    span: Optional[Span] = _span()


BASIC_VIEWS = ("split", "group", "transpose", "reverse", "map")


@dataclass(frozen=True)
class Proj:
    which: str  # "fst" | "snd"


@dataclass(frozen=True)
class Deref:
    pass


@dataclass(frozen=True)
class Index:
    index: Nat


@dataclass(frozen=True)
class Select:
    exec_name: str


@dataclass(frozen=True)
class ViewApp:
    view: ViewInst


Step = Union[Proj, Deref, Index, Select, ViewApp]


@dataclass(frozen=True)
class PlaceExpr:
    root: str
    steps: Tuple[Step, ...] = ()
    span: Optional[Span] = _span()

    def extend(self, *steps: Step) -> "PlaceExpr":
        return PlaceExpr(self.root, self.steps + tuple(steps), span=self.span)

    def __str__(self):
        from .printer import place_str
        return place_str(self)


# ---------------------------------------------------------------------------
# terms

class Term:
    __slots__ = ()


@dataclass(frozen=True)
class PlaceTerm(Term):
    place: PlaceExpr
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Let(Term):
    name: str
    ty: Optional[DataType]
    value: Term
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Assign(Term):
    place: PlaceExpr
    value: Term
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Borrow(Term):
    uniq: bool
    place: PlaceExpr
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Block(Term):
    terms: Tuple[Term, ...]
    span: Optional[Span] = _span()


GenericArg = Union[Nat, Memory, DataType]


@dataclass(frozen=True)
class App(Term):
    fn: str
    generics: Tuple[GenericArg, ...] = ()
    args: Tuple[Term, ...] = ()
    launch: Optional[Tuple[Dim, Dim]] = None
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ForEach(Term):
    var: str
    coll: Term
    body: Block
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ForNat(Term):
    var: str
    lo: Nat
    hi: Nat
    body: Block
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Sched(Term):
    axes: Tuple[str, ...]  # empty: the single remaining axis
    binder: str
    exec_name: str
    body: Block
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class SplitExec(Term):
    axis: str
    pos: Nat
    exec_name: str
    fst_binder: str
    fst_body: Block
    snd_binder: str
    snd_body: Block
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Sync(Term):
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Lit(Term):
    value: object
    kind: str  # "int" | "float" | "bool" | "unit"
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class BinOp(Term):
    op: str
    lhs: Term
    rhs: Term
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class UnOp(Term):
    op: str
    operand: Term
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ArrayLit(Term):
    elems: Tuple[Term, ...]
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ArrayRepeat(Term):
    value: Term
    count: Nat
    span: Optional[Span] = _span()


# ---------------------------------------------------------------------------
# items

KINDS = ("nat", "mem", "dt")


@dataclass(frozen=True)
class FunctionDef:
    name: str
    type_params: Tuple[Tuple[str, str], ...]
    params: Tuple[Tuple[str, DataType], ...]
    exec_binder: str
    exec_level: ExecLevel
    ret: DataType
    body: Block
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ViewDef:
    name: str
    params: Tuple[Tuple[str, str], ...]
    body: Tuple[ViewInst, ...]
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Program:
    items: Tuple[Union[FunctionDef, ViewDef], ...]

    @property
    def functions(self):
        return {i.name: i for i in self.items if isinstance(i, FunctionDef)}

    @property
    def views(self):
        return {i.name: i for i in self.items if isinstance(i, ViewDef)}


def desugar_sched(t: Sched) -> Sched:
    """``sched(Y,X) b in e {..}`` is ``sched(Y) _ in e { sched(X) b in _ {..} }``.

    The intermediate binder gets a name no source identifier can have.
    """
    if len(t.axes) <= 1:
        return t
    inner = desugar_sched(Sched(t.axes[1:], t.binder, f"{t.binder}#{t.axes[0]}",
                                t.body, span=t.span))
    return Sched((t.axes[0],), f"{t.binder}#{t.axes[0]}", t.exec_name,
                 Block((inner,), span=t.span), span=t.span)
