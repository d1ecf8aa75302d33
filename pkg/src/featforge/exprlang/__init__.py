"""A closed expression language for dataframe-style feature assignments.

Feature code of the form ``df['name'] = <expression>`` is parsed into small
immutable trees and interpreted against a Dataset instead of being executed
as Python: same surface syntax, no arbitrary code.
"""

from .nodes import (
    BIN_OPS,
    CMP_OPS,
    GROUP_AGGS,
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
    column_refs,
    pretty,
    tree_depth,
)
from .parser import parse_expression, parse_program
from .interp import evaluate, evaluate_expression

__all__ = [
    "BIN_OPS",
    "CMP_OPS",
    "GROUP_AGGS",
    "MAX_TREE_DEPTH",
    "UNARY_FNS",
    "BinOp",
    "ColumnRef",
    "Compare",
    "Const",
    "Expr",
    "Feature",
    "FeatureProgram",
    "FillNa",
    "GroupLambdaVar",
    "GroupTransform",
    "Replace",
    "Unary",
    "Where",
    "column_refs",
    "pretty",
    "tree_depth",
    "parse_expression",
    "parse_program",
    "evaluate",
    "evaluate_expression",
]
