"""Syntax verdicts and structure reports for the documented Verilog subset.

``check_syntax`` is a recursive-descent checker for the grammar in
``docs/verilog_subset.md``; the grammar document is the contract. Both entry
points are total: they never raise on malformed input, they return verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .lexer import (
    GATE_PRIMITIVES,
    KNOWN_OPERATORS,
    Token,
    TokenKind,
    significant,
    tokenize,
)


@dataclass(frozen=True)
class Diagnostic:
    span: tuple[int, int]
    message: str


@dataclass(frozen=True)
class StructureReport:
    syntax_ok: bool
    module_count: int
    declared_modules: tuple[str, ...]
    instantiated_modules: tuple[str, ...]
    undefined_instantiations: tuple[str, ...]
    first_error: Optional[Diagnostic]

    def to_dict(self) -> dict:
        err = None
        if self.first_error is not None:
            err = {"span": list(self.first_error.span), "message": self.first_error.message}
        return {
            "syntax_ok": self.syntax_ok,
            "module_count": self.module_count,
            "declared_modules": list(self.declared_modules),
            "instantiated_modules": list(self.instantiated_modules),
            "undefined_instantiations": list(self.undefined_instantiations),
            "first_error": err,
        }


_DECL_KEYWORDS = frozenset("""
    input output inout wire reg integer real realtime time genvar event
    tri tri0 tri1 triand trior trireg wand wor supply0 supply1 uwire
""".split())
_PARAM_KEYWORDS = frozenset("parameter localparam defparam specparam".split())
_DECL_BODY_KEYWORDS = _DECL_KEYWORDS | _PARAM_KEYWORDS | {"signed", "unsigned"}
_PORT_KEYWORDS = _DECL_BODY_KEYWORDS
_SENS_KEYWORDS = frozenset(("posedge", "negedge", "or"))
_REGION_KEYWORDS = {"generate": "endgenerate", "function": "endfunction", "task": "endtask"}
_BLOCK_PAIRS = {"begin": "end", "case": "endcase", "casex": "endcase", "casez": "endcase",
                "fork": "join"}

_OPENERS = {"(": ")", "[": "]", "{": "}"}
_CLOSERS = frozenset(_OPENERS.values())


class _SyntaxFailure(Exception):
    def __init__(self, span: tuple[int, int], message: str):
        super().__init__(message)
        self.diagnostic = Diagnostic(span, message)


class _Parser:
    """Recursive descent over significant tokens; raises _SyntaxFailure."""

    def __init__(self, tokens: List[Token], end_offset: int):
        self.toks = tokens
        self.i = 0
        self.end_span = (end_offset, end_offset)

    # -- token plumbing ----------------------------------------------------

    def eof(self) -> bool:
        return self.i >= len(self.toks)

    def peek(self) -> Optional[Token]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def advance(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, token: Optional[Token] = None):
        span = token.span if token is not None else self.end_span
        raise _SyntaxFailure(span, message)

    def at_kw(self, *names: str) -> bool:
        t = self.peek()
        return t is not None and t.kind is TokenKind.KEYWORD and t.text in names

    def at_punct(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.kind is TokenKind.PUNCTUATION and t.text == text

    def at_op(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.kind is TokenKind.OPERATOR and t.text == text

    def expect_kw(self, name: str) -> Token:
        if not self.at_kw(name):
            self.fail(f"expected '{name}'", self.peek())
        return self.advance()

    def expect_punct(self, text: str) -> Token:
        if not self.at_punct(text):
            self.fail(f"expected '{text}'", self.peek())
        return self.advance()

    def expect_ident(self, what: str) -> Token:
        t = self.peek()
        if t is None or t.kind is not TokenKind.IDENTIFIER:
            self.fail(f"expected {what}", t)
        return self.advance()

    # -- generic scanners --------------------------------------------------

    def check_leaf(self, t: Token, allowed_kw: frozenset):
        if t.kind is TokenKind.KEYWORD and t.text not in allowed_kw:
            self.fail(f"unexpected keyword '{t.text}'", t)
        if t.kind is TokenKind.OPERATOR and t.text not in KNOWN_OPERATORS:
            self.fail("unrecognized characters", t)

    def scan_balanced(self, opener: Token, allowed_kw: frozenset = frozenset(),
                      allow_semicolon: bool = False):
        """Consume up to and including the closer matching an already-consumed
        opener, checking nesting and leaf-token sanity along the way."""
        stack = [opener.text]
        while stack:
            if self.eof():
                self.fail(f"unclosed '{stack[-1]}'")
            t = self.advance()
            if t.kind is TokenKind.PUNCTUATION:
                if t.text in _OPENERS:
                    stack.append(t.text)
                elif t.text in _CLOSERS:
                    if _OPENERS[stack[-1]] != t.text:
                        self.fail(f"mismatched '{t.text}'", t)
                    stack.pop()
                elif t.text == ";" and not allow_semicolon:
                    self.fail("unexpected ';'", t)
            else:
                self.check_leaf(t, allowed_kw)

    def consume_simple(self, terminator: str = ";", allowed_kw: frozenset = frozenset(),
                       require_op: Optional[str] = None):
        """Consume an expression-ish token run until `terminator` punctuation
        (or ':' operator) at bracket depth zero; the terminator is consumed."""
        stack: list[str] = []
        saw_required = require_op is None
        while True:
            if self.eof():
                self.fail(f"expected '{terminator}'")
            t = self.peek()
            if t.kind is TokenKind.PUNCTUATION:
                if t.text in _OPENERS:
                    stack.append(t.text)
                elif t.text in _CLOSERS:
                    if not stack or _OPENERS[stack[-1]] != t.text:
                        self.fail(f"unbalanced '{t.text}'", t)
                    stack.pop()
                elif t.text == terminator and not stack:
                    if not saw_required:
                        self.fail(f"expected '{require_op}' before '{terminator}'", t)
                    self.advance()
                    return
                elif t.text == ";":
                    self.fail("unexpected ';'", t)
            elif t.kind is TokenKind.OPERATOR and t.text == terminator and not stack:
                if not saw_required:
                    self.fail(f"expected '{require_op}' before '{terminator}'", t)
                self.advance()
                return
            else:
                self.check_leaf(t, allowed_kw)
                if (t.kind is TokenKind.OPERATOR and require_op is not None
                        and t.text == require_op and not stack):
                    saw_required = True
            self.advance()

    def scan_region(self, end_kw: str):
        """Balance-only scan for generate/function/task bodies: bracket pairs
        and begin/end, case/endcase, fork/join must nest; grammar inside is
        not checked further."""
        brackets: list[str] = []
        blocks: list[str] = []
        while True:
            if self.eof():
                self.fail(f"missing '{end_kw}'")
            t = self.advance()
            if t.kind is TokenKind.PUNCTUATION:
                if t.text in _OPENERS:
                    brackets.append(t.text)
                elif t.text in _CLOSERS:
                    if not brackets or _OPENERS[brackets[-1]] != t.text:
                        self.fail(f"unbalanced '{t.text}'", t)
                    brackets.pop()
                continue
            if t.kind is TokenKind.KEYWORD:
                w = t.text
                if w == end_kw:
                    if brackets or blocks:
                        self.fail(f"unexpected '{w}'", t)
                    return
                if w in _BLOCK_PAIRS:
                    blocks.append(_BLOCK_PAIRS[w])
                elif w in ("end", "endcase", "join"):
                    if not blocks or blocks[-1] != w:
                        self.fail(f"unexpected '{w}'", t)
                    blocks.pop()
                elif w in ("module", "macromodule", "endmodule") or w in _REGION_KEYWORDS:
                    self.fail(f"unexpected '{w}'", t)
                continue
            if t.kind is TokenKind.OPERATOR and t.text not in KNOWN_OPERATORS:
                self.fail("unrecognized characters", t)

    # -- grammar -----------------------------------------------------------

    def parse_source(self):
        if self.eof():
            self.fail("expected a module declaration")
        while not self.eof():
            self.parse_module()

    def parse_module(self):
        if not self.at_kw("module", "macromodule"):
            self.fail("expected 'module'", self.peek())
        self.advance()
        self.expect_ident("a module name")
        if self.at_op("#"):
            self.advance()
            opener = self.expect_punct("(")
            self.scan_balanced(opener, allowed_kw=_PORT_KEYWORDS)
        if self.at_punct("("):
            opener = self.advance()
            self.scan_balanced(opener, allowed_kw=_PORT_KEYWORDS)
        self.expect_punct(";")
        while not self.at_kw("endmodule"):
            if self.eof():
                self.fail("missing 'endmodule'")
            self.parse_module_item()
        self.advance()

    def parse_module_item(self):
        t = self.peek()
        if t.kind is TokenKind.KEYWORD:
            w = t.text
            if w in _DECL_KEYWORDS or w in _PARAM_KEYWORDS:
                self.advance()
                self.consume_simple(";", allowed_kw=_DECL_BODY_KEYWORDS)
            elif w == "assign":
                self.advance()
                self.consume_simple(";", require_op="=")
            elif w == "always":
                self.advance()
                self.parse_event_control_opt()
                self.parse_statement()
            elif w == "initial":
                self.advance()
                self.parse_statement()
            elif w in _REGION_KEYWORDS:
                self.advance()
                self.scan_region(_REGION_KEYWORDS[w])
            elif w in GATE_PRIMITIVES:
                self.advance()
                self.parse_gate_instantiation()
            else:
                self.fail(f"unsupported construct '{w}'", t)
        elif t.kind is TokenKind.PUNCTUATION and t.text == ";":
            self.advance()
        elif t.kind is TokenKind.IDENTIFIER:
            self.parse_instantiation()
        else:
            self.fail("expected a module item", t)

    def parse_event_control_opt(self):
        if not self.at_op("@"):
            return
        self.advance()
        t = self.peek()
        if t is None:
            self.fail("expected event expression")
        if t.kind is TokenKind.PUNCTUATION and t.text == "(":
            self.advance()
            self.scan_balanced(t, allowed_kw=_SENS_KEYWORDS)
        elif t.kind is TokenKind.OPERATOR and t.text == "*":
            self.advance()
        elif t.kind is TokenKind.IDENTIFIER:
            self.advance()
        else:
            self.fail("expected event expression", t)

    def parse_statement(self):
        t = self.peek()
        if t is None:
            self.fail("expected a statement")
        if t.kind is TokenKind.KEYWORD:
            w = t.text
            if w == "begin":
                self.advance()
                if self.at_op(":"):
                    self.advance()
                    self.expect_ident("a block name")
                while not self.at_kw("end"):
                    if self.eof():
                        self.fail("missing 'end'")
                    if self.at_kw(*_DECL_KEYWORDS) or self.at_kw(*_PARAM_KEYWORDS):
                        self.advance()
                        self.consume_simple(";", allowed_kw=_DECL_BODY_KEYWORDS)
                    else:
                        self.parse_statement()
                self.advance()
            elif w == "if":
                self.advance()
                opener = self.expect_punct("(")
                self.scan_balanced(opener)
                self.parse_statement()
                if self.at_kw("else"):
                    self.advance()
                    self.parse_statement()
            elif w in ("case", "casex", "casez"):
                self.advance()
                opener = self.expect_punct("(")
                self.scan_balanced(opener)
                if self.at_kw("endcase"):
                    self.fail("empty case statement", self.peek())
                while not self.at_kw("endcase"):
                    if self.eof():
                        self.fail("missing 'endcase'")
                    if self.at_kw("default"):
                        self.advance()
                        if self.at_op(":"):
                            self.advance()
                    else:
                        self.consume_simple(":")
                    self.parse_statement()
                self.advance()
            elif w == "for":
                self.advance()
                opener = self.expect_punct("(")
                self.scan_balanced(opener, allow_semicolon=True)
                self.parse_statement()
            elif w in ("while", "repeat"):
                self.advance()
                opener = self.expect_punct("(")
                self.scan_balanced(opener)
                self.parse_statement()
            elif w == "forever":
                self.advance()
                self.parse_statement()
            else:
                self.fail(f"unsupported statement '{w}'", t)
        elif t.kind is TokenKind.PUNCTUATION and t.text == ";":
            self.advance()
        elif t.kind is TokenKind.OPERATOR and t.text == "#":
            self.advance()
            nxt = self.peek()
            if nxt is not None and nxt.kind is TokenKind.NUMBER:
                self.advance()
            elif nxt is not None and nxt.kind is TokenKind.PUNCTUATION and nxt.text == "(":
                self.advance()
                self.scan_balanced(nxt)
            else:
                self.fail("expected delay value", nxt)
            self.parse_statement()
        elif t.kind is TokenKind.OPERATOR and t.text == "@":
            self.parse_event_control_opt()
            self.parse_statement()
        elif t.kind is TokenKind.IDENTIFIER or (
                t.kind is TokenKind.PUNCTUATION and t.text == "{"):
            self.consume_simple(";")
        else:
            self.fail("expected a statement", t)

    def parse_instantiation(self):
        self.expect_ident("a module type name")
        if self.at_op("#"):
            self.advance()
            opener = self.expect_punct("(")
            self.scan_balanced(opener)
        self.expect_ident("an instance name")
        while True:
            if self.at_punct("["):
                opener = self.advance()
                self.scan_balanced(opener)
            opener = self.expect_punct("(")
            self.scan_balanced(opener)
            if self.at_punct(","):
                self.advance()
                self.expect_ident("an instance name")
                continue
            break
        self.expect_punct(";")

    def parse_gate_instantiation(self):
        if self.at_op("#"):
            self.advance()
            nxt = self.peek()
            if nxt is not None and nxt.kind is TokenKind.NUMBER:
                self.advance()
            elif nxt is not None and nxt.kind is TokenKind.PUNCTUATION and nxt.text == "(":
                self.advance()
                self.scan_balanced(nxt)
            else:
                self.fail("expected delay value", nxt)
        while True:
            if self.peek() is not None and self.peek().kind is TokenKind.IDENTIFIER:
                self.advance()
                if self.at_punct("["):
                    opener = self.advance()
                    self.scan_balanced(opener)
            opener = self.expect_punct("(")
            self.scan_balanced(opener)
            if self.at_punct(","):
                self.advance()
                continue
            break
        self.expect_punct(";")


def _end_offset(source: str) -> int:
    return len(source.encode("utf-8"))


def check_syntax(source: str) -> Tuple[bool, Optional[Diagnostic]]:
    """Deterministic verdict: does `source` conform to the grammar subset?

    Never raises; a failing input yields (False, first diagnostic).
    """
    tokens = significant(tokenize(source))
    parser = _Parser(tokens, _end_offset(source))
    try:
        parser.parse_source()
    except _SyntaxFailure as exc:
        return False, exc.diagnostic
    return True, None


def _skip_balanced(toks: List[Token], i: int) -> int:
    """Index just past the bracket group opening at toks[i]; tolerant scan."""
    depth = 0
    n = len(toks)
    while i < n:
        t = toks[i]
        if t.kind is TokenKind.PUNCTUATION:
            if t.text in _OPENERS:
                depth += 1
            elif t.text in _CLOSERS:
                depth -= 1
                if depth <= 0:
                    return i + 1
        i += 1
    return n


def _skip_region(toks: List[Token], i: int, end_kw: str) -> int:
    n = len(toks)
    while i < n:
        t = toks[i]
        if t.kind is TokenKind.KEYWORD and t.text == end_kw:
            return i + 1
        i += 1
    return n


def analyze_structure(source: str) -> StructureReport:
    """Count module declarations and collect instantiations of modules not
    declared in the same text. Total: works on malformed input too.

    ``declared_modules`` keeps duplicates (module_count counts them);
    ``instantiated_modules`` records one entry per instantiation statement;
    ``undefined_instantiations`` lists each missing type once, in order of
    first appearance. Generate/function/task bodies are not searched for
    instantiations, matching the balance-only treatment in the grammar doc.
    """
    toks = significant(tokenize(source))
    syntax_ok, first_error = check_syntax(source)

    declared: list[str] = []
    instantiated: list[str] = []
    in_module = False
    prev: Optional[Token] = None
    i = 0
    n = len(toks)
    while i < n:
        t = toks[i]
        if t.kind is TokenKind.KEYWORD:
            w = t.text
            if w in ("module", "macromodule"):
                if i + 1 < n and toks[i + 1].kind is TokenKind.IDENTIFIER:
                    declared.append(toks[i + 1].text)
                    prev = toks[i + 1]
                    i += 2
                else:
                    prev = t
                    i += 1
                in_module = True
                continue
            if w == "endmodule":
                in_module = False
            elif w in _REGION_KEYWORDS:
                prev = t
                i = _skip_region(toks, i + 1, _REGION_KEYWORDS[w])
                continue
            prev = t
            i += 1
            continue
        if in_module and t.kind is TokenKind.IDENTIFIER:
            if prev is not None and prev.kind is TokenKind.OPERATOR and prev.text in (":", "."):
                prev = t
                i += 1
                continue
            j = i + 1
            if (j + 1 < n and toks[j].kind is TokenKind.OPERATOR and toks[j].text == "#"
                    and toks[j + 1].kind is TokenKind.PUNCTUATION and toks[j + 1].text == "("):
                j = _skip_balanced(toks, j + 1)
            if j < n and toks[j].kind is TokenKind.IDENTIFIER:
                k = j + 1
                if k < n and toks[k].kind is TokenKind.PUNCTUATION and toks[k].text == "[":
                    k = _skip_balanced(toks, k)
                if k < n and toks[k].kind is TokenKind.PUNCTUATION and toks[k].text == "(":
                    instantiated.append(t.text)
                    prev = toks[k]
                    i = _skip_balanced(toks, k)
                    continue
        prev = t
        i += 1

    declared_set = set(declared)
    undefined: list[str] = []
    for name in instantiated:
        if name not in declared_set and name not in undefined:
            undefined.append(name)

    return StructureReport(
        syntax_ok=syntax_ok,
        module_count=len(declared),
        declared_modules=tuple(declared),
        instantiated_modules=tuple(instantiated),
        undefined_instantiations=tuple(undefined),
        first_error=first_error,
    )
