from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List

from .ast import Span


class SyntaxDiagnostic(Exception):
    def __init__(self, message: str, span: Span, label: str = ""):
        super().__init__(message)
        self.message = message
        self.span = span
        self.label = label


KEYWORDS = {
    "fn", "let", "for", "in", "sched", "split", "at", "sync", "view",
    "uniq", "shrd", "true", "false",
}

PUNCT = [
    "::", "..", "->", "=>", "==", "!=", "<=", ">=", "&&", "||",
    "(", ")", "{", "}", "[", "]", "<", ">", ",", ";", ":", ".", "=",
    "+", "-", "*", "/", "%", "&", "!", "@",
]

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<comment>//[^\n]*)"
    r"|(?P<float>\d+\.\d+)"
    r"|(?P<int>\d+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>" + "|".join(re.escape(p) for p in PUNCT) + ")"
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | kw | int | float | punct | eof
    text: str
    span: Span

    def is_(self, text: str) -> bool:
        return self.kind in ("punct", "kw") and self.text == text


def tokenize(src: str) -> List[Token]:
    toks: List[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            span = Span(pos, pos + 1, line, pos - line_start + 1)
            raise SyntaxDiagnostic(f"unexpected character {src[pos]!r}", span,
                                   "not valid here")
        kind = m.lastgroup
        text = m.group()
        span = Span(pos, m.end(), line, pos - line_start + 1)
        if kind == "ident" and text in KEYWORDS:
            kind = "kw"
        if kind not in ("ws", "comment"):
            toks.append(Token(kind, text, span))
        for i, ch in enumerate(text):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    toks.append(Token("eof", "", Span(pos, pos, line, pos - line_start + 1)))
    return toks
