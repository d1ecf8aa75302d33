"""Expression tree nodes and the pretty-printer.

All nodes are frozen dataclasses so trees compare structurally; the printer
emits the same ``df['name'] = ...`` surface syntax the parser accepts, which
gives a parse/print round trip.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

BIN_OPS = ("+", "-", "*", "/")
CMP_OPS = ("==", "!=", "<", "<=", ">", ">=")
GROUP_AGGS = ("sum", "count", "mean", "min", "max")
UNARY_FNS = ("log", "exp", "abs", "sqrt")
MAX_TREE_DEPTH = 32
MAX_PROGRAM_FEATURES = 16


class Expr:
    """Base class for expression nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class ColumnRef(Expr):
    name: str


@dataclass(frozen=True)
class Const(Expr):
    value: Union[float, str]


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Compare(Expr):
    op: str
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class GroupTransform(Expr):
    """Per-group aggregate of a target column, broadcast back to the rows."""

    keys: tuple[str, ...]
    target: str
    agg: str


@dataclass(frozen=True)
class GroupLambdaVar(Expr):
    """Per-group population variance of the target column.

    The dedicated node for the ``transform(lambda x: ((x - x.mean())**2).mean())``
    idiom; kept separate from GroupTransform because it is the one lambda
    shape the language admits.
    """

    keys: tuple[str, ...]
    target: str


@dataclass(frozen=True)
class Where(Expr):
    """Keep source where the condition holds, else the fallback (or missing)."""

    source: Expr
    condition: Expr
    fallback: Expr | None


@dataclass(frozen=True)
class Replace(Expr):
    """Map exact values to numbers; mapping is an ordered (key, value) tuple."""

    source: Expr
    mapping: tuple[tuple[Union[float, str], float], ...]


@dataclass(frozen=True)
class FillNa(Expr):
    source: Expr
    value: float


@dataclass(frozen=True)
class Unary(Expr):
    fn: str
    arg: Expr


@dataclass(frozen=True)
class Feature:
    """One named feature: the assignment target plus its expression."""

    name: str
    expr: Expr
    source_line: str


@dataclass(frozen=True)
class FeatureProgram:
    features: tuple[Feature, ...]

    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def __len__(self) -> int:
        return len(self.features)


def _children(expr: Expr) -> tuple[Expr, ...]:
    if isinstance(expr, (BinOp, Compare)):
        return (expr.lhs, expr.rhs)
    if isinstance(expr, Where):
        return (expr.source, expr.condition) + (() if expr.fallback is None else (expr.fallback,))
    if isinstance(expr, (Replace, FillNa)):
        return (expr.source,)
    if isinstance(expr, Unary):
        return (expr.arg,)
    return ()


def tree_depth(expr: Expr) -> int:
    kids = _children(expr)
    return 1 + (max(map(tree_depth, kids)) if kids else 0)


def column_refs(expr: Expr) -> Iterator[str]:
    """Every dataset column the expression reads, group keys included."""
    if isinstance(expr, ColumnRef):
        yield expr.name
    elif isinstance(expr, (GroupTransform, GroupLambdaVar)):
        yield from expr.keys
        yield expr.target
    for child in _children(expr):
        yield from column_refs(child)


# Precedence levels for minimal-paren printing.
_LEVEL_CMP = 1
_LEVEL_ADD = 2
_LEVEL_MUL = 3
_LEVEL_ATOM = 4


def _level(expr: Expr) -> int:
    if isinstance(expr, Compare):
        return _LEVEL_CMP
    if isinstance(expr, BinOp):
        return _LEVEL_ADD if expr.op in ("+", "-") else _LEVEL_MUL
    return _LEVEL_ATOM


def _const_text(value: Union[float, str]) -> str:
    if isinstance(value, str):
        return f"'{value}'"
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _keys_text(keys: tuple[str, ...]) -> str:
    if len(keys) == 1:
        return f"'{keys[0]}'"
    return "[" + ", ".join(f"'{k}'" for k in keys) + "]"


def _wrap(child: Expr, min_level: int) -> str:
    text = pretty(child)
    return f"({text})" if _level(child) < min_level else text


def pretty(expr: Expr) -> str:
    """Render an expression in the language's surface syntax."""
    if isinstance(expr, ColumnRef):
        return f"df['{expr.name}']"
    if isinstance(expr, Const):
        return _const_text(expr.value)
    if isinstance(expr, BinOp):
        level = _level(expr)
        lhs = _wrap(expr.lhs, level)
        # The grammar is left-associative, so a right operand at the same
        # level must keep its parens for the tree to survive a reparse.
        rhs = _wrap(expr.rhs, level + 1)
        return f"{lhs} {expr.op} {rhs}"
    if isinstance(expr, Compare):
        lhs = _wrap(expr.lhs, _LEVEL_ADD)
        rhs = _wrap(expr.rhs, _LEVEL_ADD)
        return f"{lhs} {expr.op} {rhs}"
    if isinstance(expr, GroupTransform):
        return f"df.groupby({_keys_text(expr.keys)})['{expr.target}'].transform('{expr.agg}')"
    if isinstance(expr, GroupLambdaVar):
        return (
            f"df.groupby({_keys_text(expr.keys)})['{expr.target}']"
            ".transform(lambda x: ((x - x.mean())**2).mean())"
        )
    if isinstance(expr, Where):
        src = _wrap(expr.source, _LEVEL_ATOM)
        cond = pretty(expr.condition)
        if expr.fallback is None:
            return f"{src}.where({cond})"
        return f"{src}.where({cond}, {pretty(expr.fallback)})"
    if isinstance(expr, Replace):
        src = _wrap(expr.source, _LEVEL_ATOM)
        pairs = ", ".join(f"{_const_text(k)}: {_const_text(v)}" for k, v in expr.mapping)
        return f"{src}.replace({{{pairs}}})"
    if isinstance(expr, FillNa):
        src = _wrap(expr.source, _LEVEL_ATOM)
        return f"{src}.fillna({_const_text(expr.value)})"
    if isinstance(expr, Unary):
        return f"{expr.fn}({pretty(expr.arg)})"
    raise TypeError(f"not an expression node: {expr!r}")


def pretty_feature(feature: Feature) -> str:
    return f"df['{feature.name}'] = {pretty(feature.expr)}"


def pretty_program(program: FeatureProgram) -> str:
    return "\n".join(pretty_feature(f) for f in program.features)
