"""Tokenizer and recursive-descent parser for feature assignment code.

Accepted surface syntax is the pandas-assignment subset exhibited by the
generated feature code this engine consumes: one ``df['name'] = expression``
per logical line, arithmetic and comparisons over column references and
constants, ``where``/``fillna``/``replace`` method chains, ``groupby(...)
[...].transform(...)`` with a fixed aggregate set, the per-group variance
lambda, ``log``/``exp``/``abs``/``sqrt`` calls, and integer ``**`` powers
(desugared to repeated multiplication). Everything else is rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ParseFailure
from ..tabular import TaskSpec
from .nodes import (
    CMP_OPS,
    GROUP_AGGS,
    MAX_PROGRAM_FEATURES,
    MAX_TREE_DEPTH,
    UNARY_FNS,
    BinOp,
    ColumnRef,
    Compare,
    Const,
    Expr,
    Feature,
    FeatureProgram,
    FillNa,
    GroupLambdaVar,
    GroupTransform,
    Replace,
    Unary,
    Where,
    tree_depth,
)

_IDENT_RE = re.compile(r"[A-Za-z_]\w*")
_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_MAX_POWER = 8

# Longest first so '**' wins over '*', '<=' over '<'.
_OPERATORS = (
    "**", "==", "!=", "<=", ">=",
    "+", "-", "*", "/", "<", ">", "=",
    "(", ")", "[", "]", "{", "}", ".", ",", ":",
)


@dataclass(frozen=True)
class _Token:
    kind: str  # NAME | NUMBER | STRING | OP | END
    text: str
    pos: int


def _tokenize(line: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch in " \t":
            i += 1
            continue
        if ch == "#":
            break  # comment to end of line
        if ch in "'\"":
            end = line.find(ch, i + 1)
            if end < 0:
                raise ParseFailure(f"unterminated string at column {i}: {line[i:i+20]!r}")
            tokens.append(_Token("STRING", line[i + 1 : end], i))
            i = end + 1
            continue
        m = _NUMBER_RE.match(line, i)
        if m:
            tokens.append(_Token("NUMBER", m.group(), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(line, i)
        if m:
            tokens.append(_Token("NAME", m.group(), i))
            i = m.end()
            continue
        for op in _OPERATORS:
            if line.startswith(op, i):
                tokens.append(_Token("OP", op, i))
                i += len(op)
                break
        else:
            raise ParseFailure(f"unsupported construct: character {ch!r} at column {i}")
    tokens.append(_Token("END", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], allowed_columns: set[str], line: str):
        self.tokens = tokens
        self.pos = 0
        self.allowed = allowed_columns
        self.line = line

    # -- token plumbing ----------------------------------------------------

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "END":
            self.pos += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind: str, text: str | None = None) -> _Token:
        if not self.at(kind, text):
            tok = self.peek()
            want = text if text is not None else kind
            raise ParseFailure(f"expected {want!r} but found {tok.text or 'end of line'!r}: {self.line}")
        return self.advance()

    def fail_construct(self, what: str) -> ParseFailure:
        return ParseFailure(f"unsupported construct {what!r}: {self.line}")

    # -- grammar -----------------------------------------------------------

    def parse_assignment(self) -> tuple[str, Expr]:
        first = self.peek()
        if not (first.kind == "NAME" and first.text == "df"):
            raise self.fail_construct(first.text or "empty line")
        self.advance()
        self.expect("OP", "[")
        name = self.expect("STRING").text
        self.expect("OP", "]")
        self.expect("OP", "=")
        expr = self.parse_compare()
        self.expect("END")
        return name, expr

    def parse_compare(self) -> Expr:
        lhs = self.parse_additive()
        if self.peek().kind == "OP" and self.peek().text in CMP_OPS:
            op = self.advance().text
            rhs = self.parse_additive()
            return Compare(op, lhs, rhs)
        return lhs

    def parse_additive(self) -> Expr:
        expr = self.parse_multiplicative()
        while self.peek().kind == "OP" and self.peek().text in ("+", "-"):
            op = self.advance().text
            expr = BinOp(op, expr, self.parse_multiplicative())
        return expr

    def parse_multiplicative(self) -> Expr:
        expr = self.parse_factor()
        while self.peek().kind == "OP" and self.peek().text in ("*", "/"):
            op = self.advance().text
            expr = BinOp(op, expr, self.parse_factor())
        return expr

    def parse_factor(self) -> Expr:
        if self.at("OP", "-"):
            self.advance()
            inner = self.parse_factor()
            if isinstance(inner, Const) and isinstance(inner.value, float):
                return Const(-inner.value)
            return BinOp("-", Const(0.0), inner)
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_postfix()
        if self.at("OP", "**"):
            self.advance()
            tok = self.expect("NUMBER")
            exponent = float(tok.text)
            if not exponent.is_integer() or not (0 <= exponent <= _MAX_POWER):
                raise self.fail_construct(f"** {tok.text}")
            k = int(exponent)
            if k == 0:
                return Const(1.0)
            expr = base
            for _ in range(k - 1):
                expr = BinOp("*", expr, base)
            return expr
        return base

    def parse_postfix(self) -> Expr:
        expr = self.parse_primary()
        while self.at("OP", "."):
            self.advance()
            method = self.expect("NAME").text
            if method == "where":
                self.expect("OP", "(")
                condition = self.parse_compare()
                fallback = None
                if self.at("OP", ","):
                    self.advance()
                    fallback = self.parse_compare()
                self.expect("OP", ")")
                expr = Where(expr, condition, fallback)
            elif method == "fillna":
                self.expect("OP", "(")
                expr = FillNa(expr, self.parse_number_literal())
                self.expect("OP", ")")
            elif method == "replace":
                self.expect("OP", "(")
                expr = Replace(expr, self.parse_mapping())
                self.expect("OP", ")")
            else:
                raise self.fail_construct(f".{method}")
        return expr

    def parse_number_literal(self) -> float:
        negative = False
        if self.at("OP", "-"):
            self.advance()
            negative = True
        value = float(self.expect("NUMBER").text)
        return -value if negative else value

    def parse_mapping(self) -> tuple[tuple[float | str, float], ...]:
        self.expect("OP", "{")
        pairs = []
        while True:
            if self.at("STRING"):
                key: float | str = self.advance().text
            else:
                key = self.parse_number_literal()
            self.expect("OP", ":")
            pairs.append((key, self.parse_number_literal()))
            if self.at("OP", ","):
                self.advance()
                continue
            break
        self.expect("OP", "}")
        return tuple(pairs)

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "STRING":
            self.advance()
            return Const(tok.text)
        if self.at("OP", "("):
            self.advance()
            expr = self.parse_compare()
            self.expect("OP", ")")
            return expr
        if tok.kind == "NAME":
            if tok.text == "df":
                return self.parse_df_primary()
            if tok.text in ("np", "numpy"):
                self.advance()
                self.expect("OP", ".")
                fn = self.expect("NAME").text
                return self.parse_unary_call(fn)
            if tok.text in UNARY_FNS:
                self.advance()
                return self.parse_unary_call(tok.text)
            raise self.fail_construct(tok.text)
        raise self.fail_construct(tok.text or "end of line")

    def parse_unary_call(self, fn: str) -> Expr:
        if fn not in UNARY_FNS:
            raise self.fail_construct(fn)
        self.expect("OP", "(")
        arg = self.parse_compare()
        self.expect("OP", ")")
        return Unary(fn, arg)

    def parse_df_primary(self) -> Expr:
        self.expect("NAME", "df")
        if self.at("OP", "["):
            self.advance()
            name = self.expect("STRING").text
            self.expect("OP", "]")
            return ColumnRef(self.check_column(name))
        self.expect("OP", ".")
        method = self.expect("NAME").text
        if method != "groupby":
            raise self.fail_construct(f"df.{method}")
        self.expect("OP", "(")
        keys = self.parse_group_keys()
        self.expect("OP", ")")
        self.expect("OP", "[")
        target = self.check_column(self.expect("STRING").text)
        self.expect("OP", "]")
        self.expect("OP", ".")
        self.expect("NAME", "transform")
        self.expect("OP", "(")
        if self.at("STRING"):
            agg = self.advance().text
            if agg not in GROUP_AGGS:
                raise self.fail_construct(f"transform('{agg}')")
            self.expect("OP", ")")
            return GroupTransform(keys, target, agg)
        self.parse_variance_lambda()
        self.expect("OP", ")")
        return GroupLambdaVar(keys, target)

    def parse_group_keys(self) -> tuple[str, ...]:
        if self.at("STRING"):
            return (self.check_column(self.advance().text),)
        self.expect("OP", "[")
        keys = [self.check_column(self.expect("STRING").text)]
        while self.at("OP", ","):
            self.advance()
            keys.append(self.check_column(self.expect("STRING").text))
        self.expect("OP", "]")
        return tuple(keys)

    def parse_variance_lambda(self) -> None:
        """Match ``lambda x: ((x - x.mean())**2).mean()`` structurally."""
        self.expect("NAME", "lambda")
        var = self.expect("NAME").text
        self.expect("OP", ":")
        self.expect("OP", "(")
        self.expect("OP", "(")
        self.expect("NAME", var)
        self.expect("OP", "-")
        self.expect("NAME", var)
        self.expect("OP", ".")
        self.expect("NAME", "mean")
        self.expect("OP", "(")
        self.expect("OP", ")")
        self.expect("OP", ")")
        self.expect("OP", "**")
        tok = self.expect("NUMBER")
        if tok.text != "2":
            raise self.fail_construct(f"lambda power {tok.text}")
        self.expect("OP", ")")
        self.expect("OP", ".")
        self.expect("NAME", "mean")
        self.expect("OP", "(")
        self.expect("OP", ")")

    def check_column(self, name: str) -> str:
        if name not in self.allowed:
            raise ParseFailure(f"unknown column {name!r}")
        return name


def _paren_balance(line: str) -> int:
    """Net open parens/brackets/braces outside string literals."""
    depth = 0
    quote = None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            break
        elif ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
    return depth


def _logical_lines(code: str) -> list[str]:
    """Join physical lines while parens stay open or a backslash continues."""
    logical: list[str] = []
    buffer = ""
    balance = 0
    for raw in code.splitlines():
        line = raw.rstrip()
        continued = line.endswith("\\")
        if continued:
            line = line[:-1]
        buffer = (buffer + " " + line.strip()) if buffer else line
        balance += _paren_balance(line)
        if balance > 0 or continued:
            continue
        if buffer.strip():
            logical.append(buffer)
        buffer = ""
        balance = 0
    if buffer.strip():
        logical.append(buffer)
    return logical


def allowed_feature_inputs(task: TaskSpec) -> set[str]:
    """Columns feature code may read: every declared column except the label.

    The label never appears in the prompt's variable block, and letting
    generated code read it would leak the target straight into a feature.
    """
    return {c.name for c in task.non_label_columns()}


def parse_expression(text: str, task: TaskSpec) -> Expr:
    """Parse a bare expression (no assignment) against the task schema."""
    parser = _Parser(_tokenize(text), allowed_feature_inputs(task), text)
    expr = parser.parse_compare()
    parser.expect("END")
    return expr


def parse_program(code: str, task: TaskSpec) -> FeatureProgram:
    """Parse feature code into a program of named expressions.

    Every logical line must be a ``df['name'] = expression`` assignment.
    Feature names must be fresh identifiers; expressions may only read
    declared non-label columns; trees deeper than MAX_TREE_DEPTH and
    programs larger than MAX_PROGRAM_FEATURES are rejected.
    """
    if not code.strip():
        raise ParseFailure("empty feature code")
    allowed = allowed_feature_inputs(task)
    taken = set(task.column_names())
    features = []
    for line in _logical_lines(code):
        parser = _Parser(_tokenize(line), allowed, line)
        name, expr = parser.parse_assignment()
        if not _IDENT_RE.fullmatch(name):
            raise ParseFailure(f"feature name {name!r} is not an identifier")
        if name in taken:
            reason = "duplicates an existing column" if name in task.column_names() else "is defined twice"
            raise ParseFailure(f"feature name {name!r} {reason}")
        if tree_depth(expr) > MAX_TREE_DEPTH:
            raise ParseFailure(f"feature {name!r} exceeds the depth limit of {MAX_TREE_DEPTH}")
        taken.add(name)
        features.append(Feature(name, expr, line))
    if not features:
        raise ParseFailure("no feature assignments found")
    if len(features) > MAX_PROGRAM_FEATURES:
        raise ParseFailure(f"{len(features)} features exceed the cap of {MAX_PROGRAM_FEATURES}")
    return FeatureProgram(tuple(features))
