"""Tabular ingestion: datasets, task metadata, labels, and train/test splits.

A dataset is an immutable bundle of named column vectors with explicit
missing-value masks. Task metadata (domain, task type, per-column
descriptions, the label column) lives in a JSON sidecar next to the CSV
because prompts need descriptions that a bare CSV cannot carry.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

COLUMN_KINDS = ("numeric", "categorical", "binary")
TASK_TYPES = ("classification", "regression")
TRAIN_FRACTION = 0.8
MIN_SPLIT_ROWS = 10


@dataclass(frozen=True)
class ColumnSpec:
    """Declared name, free-text description, and kind of one column."""

    name: str
    description: str
    kind: str

    def __post_init__(self):
        if not self.name:
            raise ConfigError("column name must be nonempty")
        if self.kind not in COLUMN_KINDS:
            raise ConfigError(
                f"column {self.name!r}: kind must be one of {COLUMN_KINDS}, got {self.kind!r}"
            )


@dataclass(frozen=True)
class TaskSpec:
    """The ML problem context: what the data is about and what to predict."""

    domain: str
    task_type: str
    columns: tuple[ColumnSpec, ...]
    problem_statement: str
    label_column: str

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.task_type not in TASK_TYPES:
            raise ConfigError(f"task_type must be one of {TASK_TYPES}, got {self.task_type!r}")
        names = [c.name for c in self.columns]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate column names in task metadata: {dupes}")
        if self.label_column not in names:
            raise ConfigError(f"label column {self.label_column!r} is not a declared column")
        if not self.non_label_columns():
            raise ConfigError("task needs at least one non-label column")

    def non_label_columns(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.name != self.label_column)

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise ConfigError(f"unknown column {name!r}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Column:
    """One column vector plus its missing mask.

    Numeric columns are float64 with NaN at missing positions; text columns
    are object arrays of str with "" at missing positions. The mask is the
    source of truth either way.
    """

    name: str
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        missing = np.array(self.missing, dtype=bool)
        if values.ndim != 1 or missing.shape != values.shape:
            raise ConfigError(f"column {self.name!r}: values and mask must be equal-length vectors")
        if values.dtype.kind in "fiu":
            values = values.astype(np.float64)
            missing = missing | ~np.isfinite(values)
            values = values.copy()
            values[missing] = np.nan
        else:
            values = np.array([("" if m else str(v)) for v, m in zip(values, missing)], dtype=object)
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "missing", _freeze(missing))

    @property
    def is_numeric(self) -> bool:
        return self.values.dtype.kind == "f"

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def equals(self, other: "Column") -> bool:
        if self.name != other.name or self.is_numeric != other.is_numeric:
            return False
        if not np.array_equal(self.missing, other.missing):
            return False
        if self.is_numeric:
            return np.array_equal(self.values, other.values, equal_nan=True)
        return bool(np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class Dataset:
    """An immutable ordered collection of equal-length columns."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise ConfigError("dataset needs at least one column")
        lengths = {len(c) for c in self.columns}
        if len(lengths) != 1:
            raise ConfigError(f"columns have inconsistent lengths: {sorted(lengths)}")
        names = [c.name for c in self.columns]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate dataset columns: {dupes}")
        object.__setattr__(self, "_index", {c.name: i for i, c in enumerate(self.columns)})

    @property
    def row_count(self) -> int:
        return len(self.columns[0])

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def has_column(self, name: str) -> bool:
        return name in self._index

    def column(self, name: str) -> Column:
        try:
            return self.columns[self._index[name]]
        except KeyError:
            raise ConfigError(f"dataset has no column {name!r}") from None

    def with_columns(self, new_columns: Iterable[Column]) -> "Dataset":
        """New dataset with extra columns appended; never mutates the receiver."""
        new_columns = tuple(new_columns)
        for c in new_columns:
            if self.has_column(c.name):
                raise ConfigError(f"column {c.name!r} already exists")
        return Dataset(self.columns + new_columns)

    def equals(self, other: "Dataset") -> bool:
        return len(self.columns) == len(other.columns) and all(
            a.equals(b) for a, b in zip(self.columns, other.columns)
        )


@dataclass(frozen=True)
class SplitPlan:
    """Row indices of one train/test partition at the 8:2 ratio."""

    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    stratified: bool

    def __post_init__(self):
        train = np.asarray(self.train_indices, dtype=np.int64)
        test = np.asarray(self.test_indices, dtype=np.int64)
        if np.intersect1d(train, test).size:
            raise ConfigError("train and test indices overlap")
        object.__setattr__(self, "train_indices", _freeze(train))
        object.__setattr__(self, "test_indices", _freeze(test))


def _parse_float(cell: str) -> float:
    """Numeric-parse fallback: unparseable or non-finite cells become NaN."""
    try:
        v = float(cell)
    except ValueError:
        return np.nan
    return v if np.isfinite(v) else np.nan


def _numeric_column(name: str, cells: list[str]) -> Column:
    missing = np.array([c == "" for c in cells], dtype=bool)
    values = np.array([np.nan if m else _parse_float(c) for c, m in zip(cells, missing)])
    return Column(name, values, missing)


def _text_column(name: str, cells: list[str]) -> Column:
    missing = np.array([c == "" for c in cells], dtype=bool)
    values = np.array(cells, dtype=object)
    return Column(name, values, missing)


def _flexible_column(name: str, cells: list[str]) -> Column:
    """Numeric when every non-empty cell parses to a finite float, else text."""
    nonempty = [c for c in cells if c != ""]
    if nonempty and all(np.isfinite(_parse_float(c)) for c in nonempty):
        return _numeric_column(name, cells)
    return _text_column(name, cells)


def load_taskspec(metadata_path: str | Path) -> TaskSpec:
    """Read the JSON metadata sidecar into a validated TaskSpec."""
    path = Path(metadata_path)
    if not path.exists():
        raise ConfigError(f"metadata file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"metadata file {path} is not valid JSON: {exc}") from exc
    for key in ("domain", "task_type", "problem_statement", "label_column", "columns"):
        if key not in raw:
            raise ConfigError(f"metadata file {path} is missing key {key!r}")
    columns = []
    for entry in raw["columns"]:
        for key in ("name", "description", "kind"):
            if key not in entry:
                raise ConfigError(f"metadata column entry {entry!r} is missing {key!r}")
        columns.append(ColumnSpec(entry["name"], entry["description"], entry["kind"]))
    return TaskSpec(
        domain=raw["domain"],
        task_type=raw["task_type"],
        columns=tuple(columns),
        problem_statement=raw["problem_statement"],
        label_column=raw["label_column"],
    )


def load_dataset(csv_path: str | Path, metadata_path: str | Path) -> tuple[Dataset, TaskSpec]:
    """Load a CSV plus its metadata sidecar.

    Every header column appears in the returned Dataset, in header order.
    Columns declared numeric parse to floats with unparseable cells marked
    missing; categorical columns keep their string codes. Header columns not
    declared in the metadata fall back to numeric-parse-or-text inference.
    """
    task = load_taskspec(metadata_path)
    path = Path(csv_path)
    if not path.exists():
        raise ConfigError(f"CSV file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"CSV file {path} is empty (header row required)") from None
        rows = list(reader)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ConfigError(f"CSV row {i + 2} has {len(row)} cells, header has {len(header)}")
    for spec in task.columns:
        if spec.name not in header:
            raise ConfigError(f"metadata column {spec.name!r} is not present in the CSV header")

    declared = {c.name: c.kind for c in task.columns}
    columns = []
    for j, name in enumerate(header):
        cells = [row[j] for row in rows]
        kind = declared.get(name)
        if kind == "numeric":
            columns.append(_numeric_column(name, cells))
        elif kind == "categorical":
            columns.append(_text_column(name, cells))
        else:  # "binary" and undeclared columns: infer numeric vs text
            columns.append(_flexible_column(name, cells))
    dataset = Dataset(tuple(columns))
    label_vector(dataset, task)  # validate the label early
    return dataset, task


def label_vector(dataset: Dataset, task: TaskSpec) -> np.ndarray:
    """Label column as a model-ready vector.

    Classification labels must have exactly two distinct values and no
    missing cells; they map to {0, 1} by ascending order (numeric value or
    lexicographic for text), so the encoding is independent of row order.
    Regression labels must be numeric with no missing cells.
    """
    col = dataset.column(task.label_column)
    if col.missing.any():
        n_bad = int(col.missing.sum())
        raise ConfigError(f"label column {col.name!r} has {n_bad} missing cells")
    if task.task_type == "regression":
        if not col.is_numeric:
            raise ConfigError(f"regression label {col.name!r} must be numeric")
        return col.values.astype(np.float64)
    distinct = sorted(set(col.values.tolist()))
    if len(distinct) != 2:
        raise ConfigError(
            f"classification label {col.name!r} must be binary, found {len(distinct)} distinct values"
        )
    return np.array([distinct.index(v) for v in col.values.tolist()], dtype=np.int64)


def make_split(dataset: Dataset, task: TaskSpec, seed: int) -> SplitPlan:
    """Deterministic 8:2 split; stratified by class for classification.

    A pure function of (row count, labels, seed): feature values never
    influence the partition. Each class's train count is round(0.8 * n)
    clamped so both partitions see every class.
    """
    n = dataset.row_count
    if n < MIN_SPLIT_ROWS:
        raise ConfigError(f"need at least {MIN_SPLIT_ROWS} rows to split, got {n}")
    rng = np.random.default_rng(seed)
    stratified = task.task_type == "classification"
    if stratified:
        y = label_vector(dataset, task)
        train_parts, test_parts = [], []
        for cls in (0, 1):
            cls_idx = np.flatnonzero(y == cls)
            if cls_idx.size < 2:
                raise ConfigError(
                    f"class {cls} of label {task.label_column!r} has {cls_idx.size} rows; cannot stratify"
                )
            shuffled = cls_idx[rng.permutation(cls_idx.size)]
            n_train = int(round(TRAIN_FRACTION * cls_idx.size))
            n_train = min(max(n_train, 1), cls_idx.size - 1)
            train_parts.append(shuffled[:n_train])
            test_parts.append(shuffled[n_train:])
        train = np.sort(np.concatenate(train_parts))
        test = np.sort(np.concatenate(test_parts))
    else:
        perm = rng.permutation(n)
        n_train = min(max(int(round(TRAIN_FRACTION * n)), 1), n - 1)
        train = np.sort(perm[:n_train])
        test = np.sort(perm[n_train:])
    return SplitPlan(train, test, seed=seed, stratified=stratified)
