"""Surface syntax: AST, lexer, parser and printer."""

from .ast import *  # noqa: F401,F403
from .lexer import SyntaxDiagnostic, tokenize
from .parser import ParseFailure, parse, parse_dim, parse_nat, parse_place, parse_term, parse_type
from .printer import pretty_print, place_str, type_str
