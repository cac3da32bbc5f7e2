"""Lossless lexer for a Verilog-2005 subset.

The token rules are documented in ``docs/verilog_subset.md``. Two properties
hold for every input, Verilog or not:

* concatenating the ``text`` of all tokens reproduces the input exactly
  (whitespace and comments are tokens, not skipped), and
* spans are non-overlapping, strictly increasing byte offsets.

Unrecognized byte runs are emitted as operator-kind tokens whose text is not
in :data:`KNOWN_OPERATORS`; the syntax checker rejects them, the lexer never
fails.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List


class TokenKind(str, Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    NUMBER = "number"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"
    STRING = "string"
    COMMENT = "comment"
    WHITESPACE = "whitespace"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    span: tuple[int, int]  # (start, end) byte offsets into the UTF-8 source


# IEEE 1364-2005 reserved words. Reserving the full list keeps reserved words
# from ever masquerading as identifiers during structure analysis; the syntax
# checker supports the narrower grammar subset in docs/verilog_subset.md.
KEYWORDS = frozenset("""
    always and assign automatic begin buf bufif0 bufif1 case casex casez cell
    cmos config deassign default defparam design disable edge else end endcase
    endconfig endfunction endgenerate endmodule endprimitive endspecify
    endtable endtask event for force forever fork function generate genvar
    highz0 highz1 if ifnone incdir include initial inout input instance
    integer join large liblist library localparam macromodule medium module
    nand negedge nmos nor noshowcancelled not notif0 notif1 or output
    parameter pmos posedge primitive pull0 pull1 pulldown pullup
    pulsestyle_ondetect pulsestyle_onevent rcmos real realtime reg release
    repeat rnmos rpmos rtran rtranif0 rtranif1 scalared showcancelled signed
    small specify specparam strong0 strong1 supply0 supply1 table task time
    tran tranif0 tranif1 tri tri0 tri1 triand trior trireg unsigned use uwire
    vectored wait wand weak0 weak1 while wire wor xnor xor
""".split())

# Built-in gate and switch primitives (a subset of KEYWORDS); instantiating
# one never counts as an undefined submodule reference.
GATE_PRIMITIVES = frozenset("""
    and or not xor xnor nand nor buf bufif0 bufif1 notif0 notif1
    pullup pulldown cmos rcmos nmos pmos rnmos rpmos
    tran rtran tranif0 tranif1 rtranif0 rtranif1
""".split())

# Operators the syntax checker accepts. The lexer can emit operator tokens
# outside this set (unknown byte runs); those fail the syntax check.
KNOWN_OPERATORS = frozenset([
    "<<<", ">>>", "===", "!==",
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "**",
    "~&", "~|", "~^", "^~", "->", "+:", "-:",
    "+", "-", "*", "/", "%", "&", "|", "^", "~", "!",
    "<", ">", "=", "?", ":", "#", "@", ".",
])

_NUMBER = (
    r"\d[\d_]*'[sS]?[bodhBODH][0-9a-fA-F_xXzZ?]+"     # sized based literal
    r"|'[sS]?[bodhBODH][0-9a-fA-F_xXzZ?]+"            # unsized based literal
    r"|\d[\d_]*\.\d[\d_]*(?:[eE][+-]?\d+)?"           # real
    r"|\d[\d_]*[eE][+-]?\d+"                          # real, exponent form
    r"|\d[\d_]*"                                      # decimal
)

_OPERATOR = (
    r"<<<|>>>|===|!=="
    r"|<<|>>|<=|>=|==|!=|&&|\|\||\*\*|~&|~\||~\^|\^~|->|\+:|-:"
    r"|[-+*/%&|^~!<>=?:#@.]"
)

# Rule table; first match wins. A backtick directive consumes the rest of its
# line and is emitted as a comment-kind token: preserved verbatim, invisible
# to the syntax and structure passes (see docs/verilog_subset.md).
_RULES: list[tuple[re.Pattern[str], TokenKind]] = [
    (re.compile(r"[ \t\r\n\f]+"), TokenKind.WHITESPACE),
    (re.compile(r"//[^\n]*"), TokenKind.COMMENT),
    (re.compile(r"/\*.*?\*/", re.DOTALL), TokenKind.COMMENT),
    (re.compile(r"/\*.*", re.DOTALL), TokenKind.COMMENT),  # unterminated
    (re.compile(r"`[A-Za-z_][^\n]*"), TokenKind.COMMENT),  # compiler directive
    (re.compile(r'"(?:[^"\\\n]|\\.)*"'), TokenKind.STRING),
    (re.compile(r'"[^"\n]*'), TokenKind.STRING),           # unterminated
    (re.compile(_NUMBER), TokenKind.NUMBER),
    (re.compile(r"[A-Za-z_][A-Za-z0-9_$]*"), TokenKind.IDENTIFIER),
    (re.compile(r"\$[A-Za-z_][A-Za-z0-9_$]*"), TokenKind.IDENTIFIER),
    (re.compile(r"\\[^ \t\r\n\f]+"), TokenKind.IDENTIFIER),  # escaped identifier
    (re.compile(_OPERATOR), TokenKind.OPERATOR),
    (re.compile(r"[;,()\[\]{}]"), TokenKind.PUNCTUATION),
    # Unknown byte runs; emitted as not-known operator tokens.
    (re.compile(r"[^\sA-Za-z0-9_;,()\[\]{}\"'/\\`$.+\-*%&|^~!<>=?:#@]+"), TokenKind.OPERATOR),
    (re.compile(r".", re.DOTALL), TokenKind.OPERATOR),
]


def tokenize(source: str) -> List[Token]:
    """Lex arbitrary text into a lossless token stream.

    Total function: malformed input yields degenerate tokens which the syntax
    checker judges later.
    """
    tokens: List[Token] = []
    pos = 0
    byte_pos = 0
    n = len(source)
    while pos < n:
        for pattern, kind in _RULES:
            m = pattern.match(source, pos)
            if m is None:
                continue
            text = m.group(0)
            if kind is TokenKind.IDENTIFIER and text in KEYWORDS:
                kind = TokenKind.KEYWORD
            start = byte_pos
            byte_pos += len(text.encode("utf-8"))
            tokens.append(Token(kind, text, (start, byte_pos)))
            pos = m.end()
            break
    return tokens


def significant(tokens: Iterable[Token]) -> List[Token]:
    """Drop whitespace and comment tokens."""
    return [t for t in tokens
            if t.kind is not TokenKind.WHITESPACE and t.kind is not TokenKind.COMMENT]
