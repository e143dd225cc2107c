"""Shared test utilities: corpus loading and index checking against the oracle."""

from __future__ import annotations

import ast
import itertools
import re
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from safegpu.exec_model import BLOCK
from safegpu.interpreter import place_offsets
from safegpu.lowering import axis_symbol
from safegpu.nat import evaluate
from safegpu.syntax import parse

CORPUS = Path(__file__).resolve().parents[1] / "src" / "safegpu" / "corpus"
GOLDEN = Path(__file__).resolve().parent / "golden"

ACCEPTED = ["transpose", "reduce", "transpose_bench", "scan", "matmul"]
REJECTED = {
    "reject_rev_per_block": ["E_CONFLICT"],
    "reject_sync_split": ["E_SYNC"],
    "reject_copy_swapped": ["E_MEM"],
    "reject_cpu_deref": ["E_MEM"],
    "reject_launch_size": ["E_LAUNCH"],
    "reject_narrowing": ["E_NARROW", "E_NARROW"],
}
# sizes at which the generic corpus programs are specialized for emission
INSTANCES = {
    "transpose": {},
    "transpose_bench": {"host_transpose": {"nb": 2, "k": 2, "r": 2}},
    "reduce": {"host_reduce": {"nb": 2}},
    "scan": {"scan": {"nb": 2}},
    "matmul": {"host_matmul": {"nb": 2, "t": 2}},
}


def source(name: str) -> str:
    return (CORPUS / f"{name}.desc").read_text()


def load(name: str):
    return parse(source(name))


# ---------------------------------------------------------------------------
# C index expressions

_ACCESS = re.compile(r"\b([A-Za-z_]\w*)\[([^\[\]]+)\]")


def c_accesses(cuda: str) -> List[Tuple[str, str]]:
    """``(array, index text)`` for every subscript outside declarations, in order."""
    out = []
    for line in cuda.splitlines():
        if "__shared__" in line or "new " in line:
            continue
        out.extend(_ACCESS.findall(line))
    return out


def eval_c(text: str, env: Mapping[str, object]):
    """Evaluate a C integer expression over non-negative numpy operands."""
    tree = ast.parse(re.sub(r"(blockIdx|threadIdx)\.([xyz])", r"\1_\2", text), mode="eval")

    def go(n):
        if isinstance(n, ast.Expression):
            return go(n.body)
        if isinstance(n, ast.Constant):
            return n.value
        if isinstance(n, ast.Name):
            return env[n.id.replace("_", ".", 1) if "Idx_" in n.id else n.id]
        if isinstance(n, ast.BinOp):
            a, b = go(n.left), go(n.right)
            ops = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
                   ast.Div: np.floor_divide, ast.Mod: np.mod}
            return ops[type(n.op)](a, b)
        raise ValueError(f"unexpected C syntax: {ast.dump(n)}")

    return go(tree)


# ---------------------------------------------------------------------------
# sites against the oracle

def site_ranges(site) -> Dict[str, Tuple[int, int]]:
    """Value range of every symbol an index site may see."""
    ranges: Dict[str, Tuple[int, int]] = {}
    if site.grid is not None:
        for stage, dim in zip((BLOCK, "thread"), site.grid):
            for axis, ext in zip(dim.axes, dim.extents):
                ranges[axis_symbol(stage, axis)] = (0, evaluate(ext))
    for r in site.execs.values():
        for _, d in r.run():
            sym = axis_symbol(d.stage, d.axis)
            if sym not in ranges:
                continue
            lo, hi = ranges[sym]
            ranges[sym] = (max(lo, evaluate(d.lo)), min(hi, evaluate(d.hi)))
    for var, lo, hi in site.loops:
        ranges[var] = (lo, hi)
    return ranges


def _chunks(ranges: Mapping[str, Tuple[int, int]], limit: int = 1 << 16
            ) -> Iterator[Dict[str, np.ndarray]]:
    """Meshgrids covering ``ranges``, split on the leading symbols to bound memory."""
    names = list(ranges)
    outer: List[str] = []
    size = int(np.prod([hi - lo for lo, hi in ranges.values()] or [1]))
    while size > limit and len(outer) < len(names):
        lo, hi = ranges[names[len(outer)]]
        size //= max(1, hi - lo)
        outer.append(names[len(outer)])
    inner = names[len(outer):]
    for fixed in itertools.product(*[range(*ranges[n]) for n in outer]):
        grids = np.meshgrid(*[np.arange(*ranges[n]) for n in inner], indexing="ij")
        env: Dict[str, object] = dict(zip(outer, fixed))
        env.update(zip(inner, grids))
        yield env


def check_site(site, views, text: str = None) -> int:
    """Number of grid points where the compiled index differs from the oracle.

    ``text`` is C source for the index; by default the site's own rendering.
    """
    text = site.text if text is None else text
    ranges = site_ranges(site)
    bad = 0
    for env in _chunks(ranges):
        block = {s.split(".")[1].upper(): v for s, v in env.items() if s.startswith("blockIdx")}
        thread = {s.split(".")[1].upper(): v for s, v in env.items()
                  if s.startswith("threadIdx")}
        loops = {k: v for k, v in env.items() if "Idx" not in k}
        want = place_offsets(site.place, site.shape, site.execs, block, thread, loops, views)
        got = eval_c(text, env)
        bad += int(np.count_nonzero(np.broadcast_to(got, np.shape(want)) != want))
    return bad
