"""Evaluate parsed feature programs against a Dataset.

Evaluation is total: value-level failures (division by zero, log of a
non-positive, arithmetic on text, unmapped replace keys) become missing
cells instead of raising. The single post-condition check is degeneracy: a
feature that comes out entirely missing or constant raises FeatureDegenerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import FeatureDegenerate
from ..tabular import Column, Dataset
from .nodes import (
    BinOp,
    ColumnRef,
    Compare,
    Const,
    Expr,
    FeatureProgram,
    FillNa,
    GroupLambdaVar,
    GroupTransform,
    Replace,
    Unary,
    Where,
)


@dataclass
class _Vec:
    """Intermediate value: a numeric or text vector with a missing mask."""

    values: np.ndarray
    missing: np.ndarray

    @property
    def is_text(self) -> bool:
        return self.values.dtype.kind not in "fb"


def _numeric(values: np.ndarray, missing: np.ndarray) -> _Vec:
    values = values.astype(np.float64, copy=True)
    missing = missing | ~np.isfinite(values)
    values[missing] = np.nan
    return _Vec(values, missing)


def _all_missing(n: int) -> _Vec:
    return _Vec(np.full(n, np.nan), np.ones(n, dtype=bool))


def _as_numeric(vec: _Vec, n: int) -> _Vec:
    """Coerce into numeric context; text cells have no number and go missing."""
    if vec.is_text:
        return _all_missing(n)
    return vec


def _column_vec(dataset: Dataset, name: str) -> _Vec:
    col = dataset.column(name)
    if col.is_numeric:
        return _Vec(col.values.copy(), col.missing.copy())
    return _Vec(col.values.copy(), col.missing.copy())


def _const_vec(value: float | str, n: int) -> _Vec:
    if isinstance(value, str):
        return _Vec(np.full(n, value, dtype=object), np.zeros(n, dtype=bool))
    return _Vec(np.full(n, float(value)), np.zeros(n, dtype=bool))


def _binop(op: str, lhs: _Vec, rhs: _Vec, n: int) -> _Vec:
    lhs = _as_numeric(lhs, n)
    rhs = _as_numeric(rhs, n)
    with np.errstate(all="ignore"):
        if op == "+":
            out = lhs.values + rhs.values
        elif op == "-":
            out = lhs.values - rhs.values
        elif op == "*":
            out = lhs.values * rhs.values
        else:
            out = lhs.values / rhs.values
    return _numeric(out, lhs.missing | rhs.missing)


def _compare(op: str, lhs: _Vec, rhs: _Vec, n: int) -> _Vec:
    if lhs.is_text != rhs.is_text:
        # Ordering text against numbers has no defined answer here.
        return _all_missing(n)
    missing = lhs.missing | rhs.missing
    if lhs.is_text:
        lv, rv = lhs.values, rhs.values
        table = {
            "==": lv == rv,
            "!=": lv != rv,
            "<": lv < rv,
            "<=": lv <= rv,
            ">": lv > rv,
            ">=": lv >= rv,
        }
        raw = np.asarray(table[op], dtype=bool)
    else:
        with np.errstate(invalid="ignore"):
            table = {
                "==": lhs.values == rhs.values,
                "!=": lhs.values != rhs.values,
                "<": lhs.values < rhs.values,
                "<=": lhs.values <= rhs.values,
                ">": lhs.values > rhs.values,
                ">=": lhs.values >= rhs.values,
            }
        raw = table[op]
    out = raw.astype(np.float64)
    out[missing] = np.nan
    return _Vec(out, missing.copy())


def _where(source: _Vec, condition: _Vec, fallback: _Vec | None, n: int) -> _Vec:
    source = _as_numeric(source, n)
    if condition.is_text:
        truthy = np.zeros(n, dtype=bool)  # text conditions never select the source
    else:
        with np.errstate(invalid="ignore"):
            truthy = (condition.values != 0) & ~condition.missing
    if fallback is None:
        fb = _all_missing(n)
    else:
        fb = _as_numeric(fallback, n)
    out = np.where(truthy, source.values, fb.values)
    missing = np.where(truthy, source.missing, fb.missing)
    return _numeric(out, missing.astype(bool))


def _replace(source: _Vec, mapping, n: int) -> _Vec:
    out = np.full(n, np.nan)
    missing = source.missing.copy()
    if source.is_text:
        text_map = {k: v for k, v in mapping if isinstance(k, str)}
        for i in range(n):
            if missing[i]:
                continue
            mapped = text_map.get(source.values[i])
            if mapped is None:
                missing[i] = True  # unmapped category has no numeric code
            else:
                out[i] = mapped
        return _numeric(out, missing)
    out = source.values.copy()
    for key, value in mapping:
        if isinstance(key, str):
            continue  # text keys cannot match numeric cells
        hit = ~missing & (source.values == key)
        out[hit] = value
    return _numeric(out, missing)


def _fillna(source: _Vec, value: float, n: int) -> _Vec:
    source = _as_numeric(source, n)
    out = source.values.copy()
    out[source.missing] = value
    return _numeric(out, np.zeros(n, dtype=bool))


def _unary(fn: str, arg: _Vec, n: int) -> _Vec:
    arg = _as_numeric(arg, n)
    values = arg.values
    missing = arg.missing.copy()
    with np.errstate(all="ignore"):
        if fn == "log":
            missing |= ~missing & (values <= 0)
            out = np.log(np.where(values > 0, values, 1.0))
        elif fn == "exp":
            out = np.exp(values)
        elif fn == "abs":
            out = np.abs(values)
        else:  # sqrt
            missing |= ~missing & (values < 0)
            out = np.sqrt(np.where(values >= 0, values, 0.0))
    return _numeric(out, missing)


def _group_ids(dataset: Dataset, keys: tuple[str, ...]) -> np.ndarray:
    """Group index per row; rows sharing exact key values (missing counts as
    its own value) share a group."""
    n = dataset.row_count
    codes = np.zeros(n, dtype=np.int64)
    for key in keys:
        col = dataset.column(key)
        if col.is_numeric:
            filled = np.where(col.missing, np.inf, col.values)  # one shared missing bucket
            _, inverse = np.unique(filled, return_inverse=True)
        else:
            labels = np.where(col.missing, "\x00missing", col.values.astype(str))
            _, inverse = np.unique(labels, return_inverse=True)
        codes = codes * (int(inverse.max()) + 1) + inverse
    _, group = np.unique(codes, return_inverse=True)
    return group


def _group_transform(dataset: Dataset, keys, target: str, agg: str) -> _Vec:
    n = dataset.row_count
    group = _group_ids(dataset, keys)
    n_groups = int(group.max()) + 1
    col = dataset.column(target)
    present = ~col.missing
    counts = np.bincount(group, weights=present.astype(np.float64), minlength=n_groups)
    if agg == "count":
        return _numeric(counts[group], np.zeros(n, dtype=bool))
    if not col.is_numeric:
        return _all_missing(n)  # no numeric aggregate over text values
    contrib = np.where(present, col.values, 0.0)
    sums = np.bincount(group, weights=contrib, minlength=n_groups)
    if agg == "sum":
        return _numeric(sums[group], np.zeros(n, dtype=bool))
    if agg == "mean":
        with np.errstate(invalid="ignore"):
            means = sums / counts
        out = means[group]
        return _numeric(out, counts[group] == 0)
    if agg == "min":
        acc = np.full(n_groups, np.inf)
        np.minimum.at(acc, group[present], col.values[present])
    else:  # max
        acc = np.full(n_groups, -np.inf)
        np.maximum.at(acc, group[present], col.values[present])
    out = acc[group]
    return _numeric(out, counts[group] == 0)


def _group_variance(dataset: Dataset, keys, target: str) -> _Vec:
    """Population variance of the target within each group, broadcast back."""
    n = dataset.row_count
    group = _group_ids(dataset, keys)
    n_groups = int(group.max()) + 1
    col = dataset.column(target)
    if not col.is_numeric:
        return _all_missing(n)
    present = ~col.missing
    counts = np.bincount(group, weights=present.astype(np.float64), minlength=n_groups)
    sums = np.bincount(group, weights=np.where(present, col.values, 0.0), minlength=n_groups)
    with np.errstate(invalid="ignore"):
        means = sums / counts
    dev2 = np.where(present, (col.values - means[group]) ** 2, 0.0)
    dev2[~present] = 0.0
    var = np.bincount(group, weights=dev2, minlength=n_groups)
    with np.errstate(invalid="ignore"):
        var = var / counts
    return _numeric(var[group], counts[group] == 0)


def evaluate_expression(expr: Expr, dataset: Dataset) -> _Vec:
    n = dataset.row_count
    if isinstance(expr, ColumnRef):
        return _column_vec(dataset, expr.name)
    if isinstance(expr, Const):
        return _const_vec(expr.value, n)
    if isinstance(expr, BinOp):
        return _binop(expr.op, evaluate_expression(expr.lhs, dataset), evaluate_expression(expr.rhs, dataset), n)
    if isinstance(expr, Compare):
        return _compare(expr.op, evaluate_expression(expr.lhs, dataset), evaluate_expression(expr.rhs, dataset), n)
    if isinstance(expr, Where):
        fallback = None if expr.fallback is None else evaluate_expression(expr.fallback, dataset)
        return _where(evaluate_expression(expr.source, dataset), evaluate_expression(expr.condition, dataset), fallback, n)
    if isinstance(expr, Replace):
        return _replace(evaluate_expression(expr.source, dataset), expr.mapping, n)
    if isinstance(expr, FillNa):
        return _fillna(evaluate_expression(expr.source, dataset), expr.value, n)
    if isinstance(expr, Unary):
        return _unary(expr.fn, evaluate_expression(expr.arg, dataset), n)
    if isinstance(expr, GroupTransform):
        return _group_transform(dataset, expr.keys, expr.target, expr.agg)
    if isinstance(expr, GroupLambdaVar):
        return _group_variance(dataset, expr.keys, expr.target)
    raise TypeError(f"not an expression node: {expr!r}")


def _check_degenerate(name: str, vec: _Vec) -> None:
    live = vec.values[~vec.missing]
    if live.size == 0:
        raise FeatureDegenerate(name, "all values are missing")
    if np.all(live == live[0]):
        raise FeatureDegenerate(name, f"constant value {live[0]!r}")


def evaluate(program: FeatureProgram, dataset: Dataset) -> Dataset:
    """Materialize every feature as a new numeric column.

    Returns a new Dataset (the input is never mutated) whose column count is
    the input's plus the program's feature count, in program order.
    """
    new_columns = []
    for feature in program.features:
        vec = evaluate_expression(feature.expr, dataset)
        vec = _as_numeric(vec, dataset.row_count)
        _check_degenerate(feature.name, vec)
        new_columns.append(Column(feature.name, vec.values, vec.missing))
    return dataset.with_columns(new_columns)
