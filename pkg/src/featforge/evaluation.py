"""Scoring harness: AUC/MSE metrics and hyperparameter grid evaluation.

The grid covers 72 combinations over depth, learning rate, rounds, row
subsampling, and column subsampling. Ensembles share boosting prefixes, so
each structural combination is trained once to the largest round count and
scored at the smaller checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gbdt
from .errors import MetricError
from .tabular import Dataset, SplitPlan, TaskSpec, label_vector

AUC = "auc"
MSE = "mse"
HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"


@dataclass(frozen=True)
class MetricScore:
    kind: str
    value: float
    direction: str

    def __post_init__(self):
        if self.kind == AUC and not (0.0 <= self.value <= 1.0):
            raise MetricError(f"AUC must lie in [0, 1], got {self.value}")
        if self.kind == MSE and self.value < 0.0:
            raise MetricError(f"MSE must be nonnegative, got {self.value}")

    def better_than(self, other: "MetricScore") -> bool:
        """Strictly better in this metric's direction."""
        if self.kind != other.kind:
            raise MetricError(f"cannot compare {self.kind} against {other.kind}")
        if self.direction == HIGHER_BETTER:
            return self.value > other.value
        return self.value < other.value

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "direction": self.direction}

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricScore":
        return cls(kind=raw["kind"], value=raw["value"], direction=raw["direction"])


def auc_score(value: float) -> MetricScore:
    return MetricScore(AUC, float(value), HIGHER_BETTER)


def mse_score(value: float) -> MetricScore:
    return MetricScore(MSE, float(value), LOWER_BETTER)


def _tied_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> MetricScore:
    """Rank-statistic AUC: concordant positive/negative pairs, ties at half.

    Equals (sum of positive ranks - P(P+1)/2) / (P*N) with average ranks for
    tied scores, which is the pairwise count in closed form.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"bad shapes: scores {scores.shape}, labels {labels.shape}")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(scores.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = _tied_ranks(scores)
    value = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return auc_score(value)


def mse(predictions, targets) -> MetricScore:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or predictions.ndim != 1 or predictions.size == 0:
        raise MetricError(f"bad shapes: predictions {predictions.shape}, targets {targets.shape}")
    return mse_score(float(np.mean((predictions - targets) ** 2)))


def _encode_text(values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Ordinal codes by first appearance; deterministic and recorded in logs."""
    codes = np.full(values.shape[0], np.nan)
    seen: dict[str, int] = {}
    for i, v in enumerate(values):
        if missing[i]:
            continue
        if v not in seen:
            seen[v] = len(seen)
        codes[i] = seen[v]
    return codes


def design_matrix(dataset: Dataset, task: TaskSpec) -> tuple[np.ndarray, tuple[str, ...]]:
    """Feature matrix over every non-label column; NaN marks missing cells."""
    columns = [c for c in dataset.columns if c.name != task.label_column]
    mats = []
    for col in columns:
        if col.is_numeric:
            mats.append(col.values)
        else:
            mats.append(_encode_text(col.values, col.missing))
    X = np.column_stack(mats) if mats else np.empty((dataset.row_count, 0))
    return X, tuple(c.name for c in columns)


def resolve_metric(task: TaskSpec, metric: str | None = None) -> str:
    if metric in (None, "auto"):
        return AUC if task.task_type == "classification" else MSE
    if metric not in (AUC, MSE):
        raise MetricError(f"unknown metric {metric!r}")
    if metric == AUC and task.task_type != "classification":
        raise MetricError("AUC is undefined for regression tasks")
    return metric


def _score_predictions(metric: str, predictions: np.ndarray, y_test: np.ndarray) -> MetricScore:
    if metric == AUC:
        return auc(predictions, y_test)
    return mse(predictions, y_test)


def _objective_for(task: TaskSpec) -> str:
    return "logistic" if task.task_type == "classification" else "squared_error"


def evaluate_params(
    dataset: Dataset,
    task: TaskSpec,
    split: SplitPlan,
    params: gbdt.GbdtParams,
    metric: str | None = None,
) -> MetricScore:
    """Train one configuration on the split's train rows, score its test rows."""
    metric = resolve_metric(task, metric)
    X, _ = design_matrix(dataset, task)
    y = label_vector(dataset, task).astype(np.float64)
    model = gbdt.fit(X[split.train_indices], y[split.train_indices], params)
    predictions = model.predict(X[split.test_indices])
    return _score_predictions(metric, predictions, y[split.test_indices])


def grid_evaluate(
    dataset: Dataset,
    task: TaskSpec,
    split: SplitPlan,
    metric: str | None = None,
    params: gbdt.GbdtParams | None = None,
) -> tuple[MetricScore, gbdt.GbdtParams]:
    """Best test-set score over the hyperparameter grid, with its parameters.

    Ties keep the earlier grid point in enumeration order (max_depth, then
    learning_rate, n_estimators, subsample, colsample_bytree). Passing
    explicit params skips the search and evaluates just that configuration.
    """
    metric = resolve_metric(task, metric)
    if params is not None:
        return evaluate_params(dataset, task, split, params, metric), params

    objective = _objective_for(task)
    X, _ = design_matrix(dataset, task)
    y = label_vector(dataset, task).astype(np.float64)
    X_train, y_train = X[split.train_indices], y[split.train_indices]
    X_test, y_test = X[split.test_indices], y[split.test_indices]

    max_rounds = max(gbdt.GRID_N_ESTIMATORS)
    scored: dict[gbdt.GbdtParams, MetricScore] = {}
    for max_depth in gbdt.GRID_MAX_DEPTH:
        for learning_rate in gbdt.GRID_LEARNING_RATE:
            for subsample in gbdt.GRID_SUBSAMPLE:
                for colsample in gbdt.GRID_COLSAMPLE:
                    full = gbdt.GbdtParams(
                        max_depth=max_depth,
                        learning_rate=learning_rate,
                        n_estimators=max_rounds,
                        subsample=subsample,
                        colsample_bytree=colsample,
                        objective=objective,
                        seed=split.seed,
                    )
                    model = gbdt.fit(X_train, y_train, full)
                    for rounds in gbdt.GRID_N_ESTIMATORS:
                        predictions = model.predict(X_test, n_trees=rounds)
                        key = gbdt.GbdtParams(
                            max_depth=max_depth,
                            learning_rate=learning_rate,
                            n_estimators=rounds,
                            subsample=subsample,
                            colsample_bytree=colsample,
                            objective=objective,
                            seed=split.seed,
                        )
                        scored[key] = _score_predictions(metric, predictions, y_test)

    best: tuple[MetricScore, gbdt.GbdtParams] | None = None
    for candidate in gbdt.iter_param_grid(objective, seed=split.seed):
        score = scored[candidate]
        if best is None or score.better_than(best[0]):
            best = (score, candidate)
    assert best is not None
    return best
