"""Execution resources: who runs a piece of code.

A resource is a base (``cpu.thread`` or ``gpu.grid<B, T>``) followed by a
path of ``forall(axis)`` and ``split(axis, pos).fst|snd`` steps. Block axes
are scheduled before thread axes. A split does not schedule its axis; it
narrows the coordinate range along it, so the halves can be scheduled
independently afterwards.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

from .nat import NLit, Nat, Tri, as_nat, evaluate, nat_le, normalize, render
from .syntax.ast import AXES, Dim, ExecLevel

BLOCK, THREAD = "block", "thread"


class ExecError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass(frozen=True)
class ForAll:
    axis: str


@dataclass(frozen=True)
class SplitProj:
    axis: str
    pos: Nat
    which: str  # "fst" | "snd"


PathStep = object  # ForAll | SplitProj


class Relation(enum.Enum):
    IDENTICAL = "identical"
    DISJOINT = "disjoint"
    OVERLAPPING = "overlapping"


@dataclass(frozen=True)
class RunDim:
    """One coordinate a select consumes: ``stage`` axis ``axis`` over [lo, hi)."""
    stage: str
    axis: str
    lo: Nat
    hi: Nat

    @property
    def extent(self) -> Nat:
        return normalize(self.hi - self.lo)


@dataclass
class _State:
    stage: str
    remaining: Dict[str, List[str]]
    ranges: Dict[Tuple[str, str], Tuple[Nat, Nat]]
    step_stages: List[str]
    step_ranges: List[Tuple[Nat, Nat]]


@dataclass(frozen=True)
class ExecResource:
    base: ExecLevel
    path: Tuple[PathStep, ...] = ()

    def __post_init__(self):
        if self.base.kind not in (ExecLevel.CPU_THREAD, ExecLevel.GRID):
            raise ValueError("execution resources start at cpu.thread or gpu.grid")

    # -- construction -------------------------------------------------------
    @classmethod
    def cpu(cls) -> "ExecResource":
        return cls(ExecLevel(ExecLevel.CPU_THREAD))

    @classmethod
    def grid(cls, blocks: Dim, threads: Dim) -> "ExecResource":
        return cls(ExecLevel(ExecLevel.GRID, blocks, threads))

    @property
    def on_gpu(self) -> bool:
        return self.base.kind == ExecLevel.GRID

    def _walk(self) -> _State:
        if not self.on_gpu:
            if self.path:
                raise ExecError("E_TYPE", "cpu.thread cannot be scheduled or split")
            return _State(BLOCK, {BLOCK: [], THREAD: []}, {}, [], [])
        b, t = self.base.blocks, self.base.threads
        remaining = {BLOCK: list(b.axes), THREAD: list(t.axes)}
        ranges = {}
        for stage, d in ((BLOCK, b), (THREAD, t)):
            for a, e in zip(d.axes, d.extents):
                ranges[(stage, a)] = (NLit(0), normalize(e))
        st = _State(BLOCK, remaining, ranges, [], [])
        self._advance_stage(st)
        for step in self.path:
            self._apply(st, step)
        return st

    @staticmethod
    def _advance_stage(st: _State):
        if st.stage == BLOCK and not st.remaining[BLOCK]:
            st.stage = THREAD

    def _apply(self, st: _State, step):
        if st.stage == THREAD and not st.remaining[THREAD]:
            raise ExecError("E_SIZE", f"`{self}` is a single thread and cannot be "
                                      "scheduled or split further")
        key = (st.stage, step.axis)
        if step.axis not in st.remaining[st.stage]:
            raise ExecError("E_SIZE", f"axis {step.axis} is not available at "
                                      f"{st.stage} level of `{self}`")
        lo, hi = st.ranges[key]
        st.step_stages.append(st.stage)
        if isinstance(step, ForAll):
            st.step_ranges.append((lo, hi))
            st.remaining[st.stage].remove(step.axis)
            self._advance_stage(st)
            return
        pos = as_nat(step.pos)
        extent = normalize(hi - lo)
        if nat_le(pos, extent) is not Tri.TRUE:
            raise ExecError("E_SIZE", f"cannot split {render(extent)} "
                                      f"{st.stage}s at position {render(pos)}")
        mid = normalize(lo + pos)
        new = (lo, mid) if step.which == "fst" else (mid, hi)
        st.ranges[key] = new
        st.step_ranges.append(new)

    def forall(self, axis: str) -> "ExecResource":
        out = ExecResource(self.base, self.path + (ForAll(axis),))
        out._walk()
        return out

    def split(self, axis: str, pos) -> Tuple["ExecResource", "ExecResource"]:
        pos = normalize(as_nat(pos))
        fst = ExecResource(self.base, self.path + (SplitProj(axis, pos, "fst"),))
        snd = ExecResource(self.base, self.path + (SplitProj(axis, pos, "snd"),))
        fst._walk()
        snd._walk()
        return fst, snd

    def remaining_axes(self) -> List[str]:
        st = self._walk()
        return list(st.remaining[st.stage])

    # -- queries ----------------------------------------------------------------
    def level(self) -> ExecLevel:
        if not self.on_gpu:
            return self.base
        st = self._walk()

        def dim(stage):
            axes = [a for a in AXES if a in st.remaining[stage]]
            ext = []
            for a in axes:
                lo, hi = st.ranges[(stage, a)]
                ext.append(normalize(hi - lo))
            return Dim(tuple(axes), tuple(ext))

        if st.stage == BLOCK:
            return ExecLevel(ExecLevel.GRID, dim(BLOCK), dim(THREAD))
        if st.remaining[THREAD]:
            return ExecLevel(ExecLevel.BLOCK, None, dim(THREAD))
        return ExecLevel(ExecLevel.GPU_THREAD)

    def is_thread(self) -> bool:
        return self.level().kind in (ExecLevel.GPU_THREAD, ExecLevel.CPU_THREAD)

    def block_prefix_len(self) -> Optional[int]:
        """Length of the path prefix after which every block axis is scheduled."""
        if not self.on_gpu:
            return None
        st = self._walk()
        for i, s in enumerate(st.step_stages):
            if s == THREAD:
                return i
        return len(self.path) if st.stage == THREAD else None

    def forall_positions(self) -> List[int]:
        return [i for i, s in enumerate(self.path) if isinstance(s, ForAll)]

    def stage_of(self, i: int) -> str:
        return self._walk().step_stages[i]

    def run(self) -> List[Tuple[int, RunDim]]:
        """Coordinates consumed when selecting with this resource.

        These are the forall steps of the trailing run of steps taken at the
        same level (block or thread) as the last step, outermost first.
        """
        st = self._walk()
        if not self.path:
            return []
        last = st.step_stages[-1]
        start = len(self.path)
        while start > 0 and st.step_stages[start - 1] == last:
            start -= 1
        out = []
        for i in range(start, len(self.path)):
            step = self.path[i]
            if isinstance(step, ForAll):
                lo, hi = st.step_ranges[i]
                out.append((i, RunDim(last, step.axis, lo, hi)))
        return out

    def is_prefix_of(self, other: "ExecResource") -> bool:
        return (self.base == other.base and len(self.path) <= len(other.path)
                and other.path[:len(self.path)] == self.path)

    def prefix(self, n: int) -> "ExecResource":
        return ExecResource(self.base, self.path[:n])

    # -- concrete evaluation ----------------------------------------------------
    def split_bounds(self, env: Mapping[str, int] | None = None):
        """Concrete [lo, hi) per (stage, axis) after all splits on the path."""
        st = self._walk()
        return {k: (evaluate(lo, env), evaluate(hi, env)) for k, (lo, hi) in st.ranges.items()}

    def contains(self, block: Mapping[str, int], thread: Mapping[str, int],
                 env: Mapping[str, int] | None = None) -> bool:
        coords = {BLOCK: block, THREAD: thread}
        for (stage, axis), (lo, hi) in self.split_bounds(env).items():
            if not lo <= coords[stage].get(axis, 0) < hi:
                return False
        return True

    def select_indices(self, block: Mapping[str, int], thread: Mapping[str, int],
                       env: Mapping[str, int] | None = None) -> List[int]:
        coords = {BLOCK: block, THREAD: thread}
        return [coords[d.stage].get(d.axis, 0) - evaluate(d.lo, env) for _, d in self.run()]

    def __str__(self):
        out = "cpu.thread" if not self.on_gpu else "grid"
        for s in self.path:
            if isinstance(s, ForAll):
                out += f".forall({s.axis})"
            else:
                out += f".split({render(s.pos)}, {s.axis}).{s.which}"
        return out


def relation(a: ExecResource, b: ExecResource) -> Relation:
    if a == b:
        return Relation.IDENTICAL
    if a.base != b.base:
        return Relation.OVERLAPPING
    for x, y in zip(a.path, b.path):
        if x == y:
            continue
        if (isinstance(x, SplitProj) and isinstance(y, SplitProj) and x.axis == y.axis
                and x.pos == y.pos and x.which != y.which):
            return Relation.DISJOINT
        return Relation.OVERLAPPING
    return Relation.OVERLAPPING


def synthetic_base(level: ExecLevel) -> ExecResource:
    """A resource standing in for the caller of a block- or thread-level function."""
    one = Dim(("X",), (NLit(1),))
    if level.kind == ExecLevel.CPU_THREAD:
        return ExecResource.cpu()
    if level.kind == ExecLevel.GRID:
        return ExecResource.grid(level.blocks, level.threads)
    if level.kind == ExecLevel.BLOCK:
        return ExecResource.grid(one, level.threads).forall("X")
    return ExecResource.grid(one, one).forall("X").forall("X")


def enumerate_threads(blocks: Dim, threads: Dim, env: Mapping[str, int] | None = None):
    """Concrete (block coords, thread coords) pairs in row-major launch order."""
    import itertools

    def coords(d: Dim):
        names = list(d.axes)
        exts = [evaluate(e, env) for e in d.extents]
        for combo in itertools.product(*[range(e) for e in reversed(exts)]):
            yield dict(zip(reversed(names), combo))

    return [(b, t) for b in coords(blocks) for t in coords(threads)]
