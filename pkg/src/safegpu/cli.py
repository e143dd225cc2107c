"""Command-line entry point: ``safegpu check|emit-cuda|run|expand-views``.

Exit codes: 0 on success, 1 when the input has diagnostics (or a simulation
finds races, barrier divergence or out-of-bounds accesses, or an expansion
disagrees with the oracle), 2 on usage and I/O errors.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO

import numpy as np

from .codegen import CodegenError, emit_cuda, transform
from .diagnostics import Diagnostic
from .interpreter import (
    INITIALIZERS, BarrierDivergence, OutOfBounds, SimConfig, SimError, place_offsets,
    run_function,
)
from .lowering import LoweringError, evaluate_over, lower_place, render_c
from .nat import NVar, NatError
from .places import PlaceError
from .syntax import ParseFailure, SyntaxDiagnostic, parse, parse_place
from .syntax.ast import App, ExecLevel, Index, Program, Select
from .typechecker import check_program

OK, FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _report(diags: Sequence[Diagnostic], source: str, filename: str, fmt: str,
            err: TextIO) -> None:
    for d in diags:
        if fmt == "json":
            err.write(d.to_json(filename) + "\n")
        else:
            err.write(d.render(source, filename) + "\n\n")


def _from_syntax(d: SyntaxDiagnostic) -> Diagnostic:
    return Diagnostic("E_PARSE", d.message, d.span, d.label)


def _load(path: str):
    try:
        return Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read `{path}`: {e.strerror}") from None


def _frontend(args, err: TextIO, check: bool = True) -> Optional[Program]:
    """Parse (and check) the input; ``None`` after reporting diagnostics."""
    source = _load(args.input)
    try:
        prog = parse(source)
    except ParseFailure as e:
        _report([_from_syntax(d) for d in e.diagnostics], source, args.input, args.format, err)
        return None
    if check:
        result = check_program(prog)
        if not result.ok:
            _report(result.diagnostics, source, args.input, args.format, err)
            return None
    return prog


def _nat_pairs(items: Sequence[str]) -> Dict[str, int]:
    out = {}
    for item in items:
        for part in item.split(","):
            name, sep, value = part.partition("=")
            if not sep or not name.strip():
                raise UsageError(f"expected NAME=VALUE, got `{part}`")
            try:
                out[name.strip()] = int(value)
            except ValueError:
                raise UsageError(f"size `{name.strip()}` must be an integer") from None
    return out


def _extents(text: Optional[str]):
    if text is None:
        return None
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"extents must be comma-separated integers, got `{text}`") from None


def _instances(items: Sequence[str]) -> Dict[str, Dict[str, int]]:
    out: Dict[str, Dict[str, int]] = {}
    for item in items:
        fn, sep, rest = item.partition(":")
        if not sep:
            raise UsageError(f"expected FUNCTION:NAME=VALUE,..., got `{item}`")
        out.setdefault(fn, {}).update(_nat_pairs([rest]))
    return out


def _input_value(text: str):
    if text in INITIALIZERS:
        return text
    if text.startswith("@"):
        try:
            return np.load(text[1:])
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot load `{text[1:]}`: {e}") from None
    try:
        value = json.loads(text if text.startswith("[") else f"[{text}]")
    except json.JSONDecodeError:
        raise UsageError(f"cannot read input values `{text}`") from None
    return np.asarray(value)


def _uninstantiated(prog: Program, instances) -> List[str]:
    """Generic entry points that nothing calls and no instance names."""
    called = set()

    def visit(n):
        if isinstance(n, App):
            called.add(n.fn)
        return n

    for f in prog.functions.values():
        transform(f.body, visit)
    return [f.name for f in prog.functions.values()
            if f.type_params and f.name not in called and f.name not in instances
            and f.exec_level.kind in (ExecLevel.GRID, ExecLevel.CPU_THREAD)]


def _dump(obj, out: TextIO) -> None:
    # keep lists of numbers on one line
    text = json.dumps(obj, indent=2, sort_keys=True)
    text = re.sub(r"\[\s+([-0-9.eE,\s]*?)\s+\]",
                  lambda m: "[" + ", ".join(x.strip() for x in m.group(1).split(",")) + "]",
                  text)
    out.write(text + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_check(args, out: TextIO, err: TextIO) -> int:
    return OK if _frontend(args, err) is not None else FAILED


def cmd_emit(args, out: TextIO, err: TextIO) -> int:
    prog = _frontend(args, err)
    if prog is None:
        return FAILED
    instances = _instances(args.instance)
    try:
        result = emit_cuda(prog, instances)
    except CodegenError as e:
        err.write(f"error: {e}\n")
        return FAILED
    for name in _uninstantiated(prog, instances):
        err.write(f"note: generic `{name}` was not emitted; specialize it with "
                  f"--instance {name}:NAME=VALUE,...\n")
    if args.output in (None, "-"):
        out.write(result.source)
    else:
        try:
            Path(args.output).write_text(result.source)
        except OSError as e:
            raise UsageError(f"cannot write `{args.output}`: {e.strerror}") from None
    return OK


def cmd_run(args, out: TextIO, err: TextIO) -> int:
    prog = _frontend(args, err, check=not args.no_check)
    if prog is None:
        return FAILED
    name = args.function
    if name is None:
        if len(prog.functions) != 1:
            raise UsageError("the file has several functions; choose one with --function")
        name = next(iter(prog.functions))
    inputs = {}
    for item in args.input_value:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"expected NAME=VALUES, got `{item}`")
        inputs[key] = _input_value(value)
    cfg = SimConfig(_extents(args.blocks), _extents(args.threads), _nat_pairs(args.nat),
                    inputs, args.max_threads)
    try:
        result = run_function(prog, name, cfg)
    except BarrierDivergence as e:
        _dump({"divergence": str(e)}, out)
        return FAILED
    except OutOfBounds as e:
        err.write(f"error: {e}\n")
        return FAILED
    except SimError as e:
        raise UsageError(str(e)) from None
    report = result.report(args.max_races)
    _dump(report, out)
    return FAILED if any(l["race_count"] for l in report["launches"]) else OK


def cmd_expand(args, out: TextIO, err: TextIO) -> int:
    prog = _frontend(args, err)
    if prog is None:
        return FAILED
    try:
        place = parse_place(args.place)
    except (ParseFailure, SyntaxDiagnostic) as e:
        raise UsageError(f"cannot parse place `{args.place}`: {e}") from None
    if any(isinstance(s, Select) for s in place.steps):
        raise UsageError("selects need an execution context; expand the views only")
    shape = _extents(args.shape)
    nats = _nat_pairs(args.nat)
    try:
        expr, rest = lower_place(place, shape, env=nats, views=prog.views)
    except (LoweringError, PlaceError, NatError) as e:
        err.write(f"error: {e}\n")
        return FAILED
    names = [f"o{i}" for i in range(len(rest))]
    lowered = evaluate_over(expr, dict(zip(names, rest))).reshape(-1)
    grids = np.meshgrid(*[np.arange(n) for n in rest], indexing="ij")
    env = dict(nats, **dict(zip(names, grids)))
    full = place.extend(*(Index(NVar(n)) for n in names))
    try:
        oracle = np.broadcast_to(place_offsets(full, shape, {}, {}, {}, env, prog.views),
                                 tuple(rest)).reshape(-1)
    except SimError as e:
        err.write(f"error: {e}\n")
        return FAILED
    coords = np.array(np.meshgrid(*[np.arange(n) for n in rest], indexing="ij")
                      ).reshape(len(rest), -1).T if rest else np.zeros((1, 0), dtype=int)
    out.write(f"place:  {args.place}\n")
    out.write(f"shape:  {list(shape)} -> {list(rest)}\n")
    out.write(f"index:  {render_c(expr)}\n")
    rows = [("[" + ", ".join(str(int(c)) for c in cs) + "]", int(a), int(b))
            for cs, a, b in zip(coords, lowered, oracle)]
    width = max(len("coords"), *(len(r[0]) for r in rows))
    out.write(f"{'coords'.ljust(width)}  lowered  oracle\n")
    shown = rows if args.limit is None else rows[:args.limit]
    for c, a, b in shown:
        mark = "" if a == b else "  MISMATCH"
        out.write(f"{c.ljust(width)}  {str(a).rjust(7)}  {str(b).rjust(6)}{mark}\n")
    if len(shown) < len(rows):
        out.write(f"... {len(rows) - len(shown)} more\n")
    bad = sum(a != b for _, a, b in rows)
    out.write(f"{len(rows)} coordinates, {bad} mismatches\n")
    return OK if bad == 0 else FAILED


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safegpu", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("input", help="source file (.desc)")
        p.add_argument("--format", choices=("text", "json"), default="text",
                       help="diagnostic format on standard error")
        return p

    common(sub.add_parser("check", help="type-check a program"))
    p = common(sub.add_parser("emit-cuda", help="compile an accepted program to CUDA"))
    p.add_argument("-o", "--output", help="output .cu file (default: standard output)")
    p.add_argument("--instance", action="append", default=[], metavar="FN:NAME=VALUE,...",
                   help="specialize a generic function at these sizes")
    p = common(sub.add_parser("run", help="simulate a function and report races"))
    p.add_argument("--function", "-f", help="function to run")
    p.add_argument("--blocks", help="grid extents, e.g. 2,2")
    p.add_argument("--threads", help="block extents, e.g. 4,2")
    p.add_argument("--nat", action="append", default=[], metavar="NAME=VALUE",
                   help="size parameter, repeatable or comma-separated")
    p.add_argument("--input", dest="input_value", action="append", default=[],
                   metavar="NAME=VALUES",
                   help="buffer contents: arange, zeros, ones, a JSON list, "
                        "comma-separated numbers or @file.npy")
    p.add_argument("--max-threads", type=int, default=64,
                   help="refuse launches with more simulated threads")
    p.add_argument("--max-races", type=int, default=10, help="races listed per launch")
    p.add_argument("--no-check", action="store_true", help="simulate without type-checking")
    p = common(sub.add_parser("expand-views",
                              help="show a place's lowered index next to the oracle mapping"))
    p.add_argument("place", help="place expression, e.g. 'x.group::<8>.transpose'")
    p.add_argument("--shape", required=True, help="root array shape, e.g. 32 or 8,8")
    p.add_argument("--nat", action="append", default=[], metavar="NAME=VALUE",
                   help="size parameter used by the view arguments")
    p.add_argument("--limit", type=int, default=None, help="rows to print")
    return ap


COMMANDS = {"check": cmd_check, "emit-cuda": cmd_emit, "run": cmd_run,
            "expand-views": cmd_expand}


def main(argv: Optional[List[str]] = None, out: TextIO = None, err: TextIO = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args, out, err)
    except UsageError as e:
        err.write(f"error: {e}\n")
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
