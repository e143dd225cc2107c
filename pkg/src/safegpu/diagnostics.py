"""Compiler diagnostics with source spans, rendered as text or JSON lines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .syntax.ast import Span

CODES = {
    "E_PARSE": "syntax error",
    "E_TYPE": "type error",
    "E_SIZE": "size constraint not provable",
    "E_CONFLICT": "conflicting memory access",
    "E_NARROW": "access not narrowed to the executing resource",
    "E_SYNC": "invalid barrier",
    "E_MEM": "memory space misuse",
    "E_LAUNCH": "kernel launch mismatch",
    "E_MOVE": "use of moved value",
    "E_BORROW": "invalid borrow",
}


@dataclass
class Diagnostic:
    code: str
    message: str
    span: Optional[Span] = None
    label: str = ""
    related: List[Tuple[Span, str]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def to_json(self, filename: str = "<input>") -> str:
        spans = []
        if self.span is not None:
            spans.append(_span_obj(self.span, self.label, True, filename))
        for sp, lab in self.related:
            if sp is not None:
                spans.append(_span_obj(sp, lab, False, filename))
        return json.dumps({"code": self.code, "message": self.message,
                           "spans": spans, "notes": self.notes}, sort_keys=True)

    def render(self, source: str, filename: str = "<input>") -> str:
        out = [f"error[{self.code}]: {self.message}"]
        lines = source.splitlines()
        marks = []
        if self.span is not None:
            marks.append((self.span, self.label, "^"))
        marks += [(sp, lab, "-") for sp, lab in self.related if sp is not None]
        if marks:
            first = self.span or marks[0][0]
            gutter = " " * len(str(max(m[0].line for m in marks)))
            out.append(f"{gutter}--> {filename}:{first.line}:{first.col}")
            out.append(f"{gutter} |")
            shown = None
            for sp, lab, ch in sorted(marks, key=lambda m: (m[0].line, m[0].col)):
                text = lines[sp.line - 1] if 0 < sp.line <= len(lines) else ""
                width = max(1, min(sp.end - sp.start, len(text) - sp.col + 1))
                if sp.line != shown:
                    out.append(f"{str(sp.line).rjust(len(gutter))} | {text}")
                    shown = sp.line
                out.append(f"{gutter} | {' ' * (sp.col - 1)}{ch * width} {lab}".rstrip())
        for n in self.notes:
            out.append(f"  = note: {n}")
        return "\n".join(out)


def _span_obj(sp: Span, label: str, primary: bool, filename: str) -> dict:
    return {"file": filename, "start": sp.start, "end": sp.end, "line": sp.line,
            "col": sp.col, "label": label, "primary": primary}


class CompileError(Exception):
    """Raised when a program has diagnostics; carries all of them."""

    def __init__(self, diagnostics: List[Diagnostic]):
        super().__init__("; ".join(f"{d.code}: {d.message}" for d in diagnostics))
        self.diagnostics = diagnostics
