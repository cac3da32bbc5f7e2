"""Verilog lexing, syntax checking and structure analysis."""

from .analyzer import Diagnostic, StructureReport, analyze_structure, check_syntax
from .lexer import (
    GATE_PRIMITIVES,
    KEYWORDS,
    KNOWN_OPERATORS,
    Token,
    TokenKind,
    significant,
    tokenize,
)

__all__ = [
    "Diagnostic",
    "StructureReport",
    "analyze_structure",
    "check_syntax",
    "GATE_PRIMITIVES",
    "KEYWORDS",
    "KNOWN_OPERATORS",
    "Token",
    "TokenKind",
    "significant",
    "tokenize",
]
