"""Gradient-boosted decision trees on gradient/hessian statistics.

Exact greedy splits (no histogram binning), logistic or squared-error
objectives, per-tree row and column subsampling, and missing values routed
to whichever branch maximizes the split gain. Deterministic for fixed data,
parameters, and seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import TrainError

_EPS = 1e-16
_MIN_GAIN = 1e-12
_PROB_CLIP = 1e-15
_LEAF_CLIP = 100.0

MODEL_DUMP_VERSION = 1

OBJECTIVES = ("logistic", "squared_error")

# Appendix-grid value sets, in enumeration order.
GRID_MAX_DEPTH = (3, 5, 7)
GRID_LEARNING_RATE = (0.01, 0.1)
GRID_N_ESTIMATORS = (50, 100, 200)
GRID_SUBSAMPLE = (0.8, 1.0)
GRID_COLSAMPLE = (0.8, 1.0)


@dataclass(frozen=True)
class GbdtParams:
    max_depth: int = 3
    learning_rate: float = 0.1
    n_estimators: int = 100
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    objective: str = "logistic"
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise TrainError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.max_depth < 1 or self.n_estimators < 0:
            raise TrainError("max_depth must be >= 1 and n_estimators >= 0")
        if not (0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1):
            raise TrainError("subsample and colsample_bytree must lie in (0, 1]")


def iter_param_grid(objective: str, seed: int = 0):
    """All 72 grid combinations, enumerated in the canonical order."""
    for max_depth in GRID_MAX_DEPTH:
        for learning_rate in GRID_LEARNING_RATE:
            for n_estimators in GRID_N_ESTIMATORS:
                for subsample in GRID_SUBSAMPLE:
                    for colsample in GRID_COLSAMPLE:
                        yield GbdtParams(
                            max_depth=max_depth,
                            learning_rate=learning_rate,
                            n_estimators=n_estimators,
                            subsample=subsample,
                            colsample_bytree=colsample,
                            objective=objective,
                            seed=seed,
                        )


@dataclass
class _Node:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    missing_left: bool = True
    value: float = 0.0
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None

    def to_dict(self) -> dict:
        if self.feature < 0:
            return {"leaf": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "missing_left": self.missing_left,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _leaf_value(g_sum: float, h_sum: float, params: GbdtParams) -> float:
    raw = -g_sum / (h_sum + _EPS)
    if params.objective == "logistic":
        # Saturated probabilities drive the hessian to zero; cap the step.
        raw = float(np.clip(raw, -_LEAF_CLIP, _LEAF_CLIP))
    return params.learning_rate * float(raw)


class _TreeBuilder:
    """Grows one tree greedily on the given gradient/hessian statistics."""

    def __init__(self, X: np.ndarray, g: np.ndarray, h: np.ndarray, columns: np.ndarray, params: GbdtParams):
        self.X = X
        self.g = g
        self.h = h
        self.columns = columns
        self.params = params

    def build(self, rows: np.ndarray) -> _Node:
        return self._grow(rows, depth=0)

    def _grow(self, rows: np.ndarray, depth: int) -> _Node:
        g_sum = float(self.g[rows].sum())
        h_sum = float(self.h[rows].sum())
        leaf = _Node(value=_leaf_value(g_sum, h_sum, self.params))
        if depth >= self.params.max_depth or rows.size < 2:
            return leaf
        best = self._best_split(rows, g_sum, h_sum)
        if best is None:
            return leaf
        gain, feature, threshold, missing_left = best
        x = self.X[rows, feature]
        miss = np.isnan(x)
        go_left = np.where(miss, missing_left, x < threshold)
        left_rows = rows[go_left]
        right_rows = rows[~go_left]
        if left_rows.size == 0 or right_rows.size == 0:
            return leaf
        node = _Node(feature=feature, threshold=threshold, missing_left=missing_left)
        node.left = self._grow(left_rows, depth + 1)
        node.right = self._grow(right_rows, depth + 1)
        return node

    def _best_split(self, rows: np.ndarray, g_sum: float, h_sum: float):
        parent_score = g_sum * g_sum / (h_sum + _EPS)
        best = None
        for feature in self.columns:
            x = self.X[rows, feature]
            miss = np.isnan(x)
            xm = x[~miss]
            if xm.size < 2:
                continue
            order = np.argsort(xm, kind="stable")
            xs = xm[order]
            if xs[0] == xs[-1]:
                continue
            gs = self.g[rows][~miss][order]
            hs = self.h[rows][~miss][order]
            g_miss = float(self.g[rows][miss].sum())
            h_miss = float(self.h[rows][miss].sum())
            cg = np.cumsum(gs)
            ch = np.cumsum(hs)
            cuts = np.flatnonzero(xs[:-1] != xs[1:])  # split after position i
            gl = cg[cuts]
            hl = ch[cuts]
            gr = cg[-1] - gl
            hr = ch[-1] - hl
            thresholds = (xs[cuts] + xs[cuts + 1]) / 2.0
            score_left = (gl + g_miss) ** 2 / (hl + h_miss + _EPS) + gr**2 / (hr + _EPS)
            score_right = gl**2 / (hl + _EPS) + (gr + g_miss) ** 2 / (hr + h_miss + _EPS)
            take_left = score_left >= score_right
            scores = np.where(take_left, score_left, score_right)
            i = int(np.argmax(scores))
            gain = 0.5 * (float(scores[i]) - parent_score)
            if gain > _MIN_GAIN and (best is None or gain > best[0]):
                best = (gain, int(feature), float(thresholds[i]), bool(take_left[i]))
        return best


def _tree_predict(node: _Node, X: np.ndarray, out: np.ndarray, rows: np.ndarray) -> None:
    if node.feature < 0:
        out[rows] += node.value
        return
    x = X[rows, node.feature]
    miss = np.isnan(x)
    go_left = np.where(miss, node.missing_left, x < node.threshold)
    _tree_predict(node.left, X, out, rows[go_left])
    _tree_predict(node.right, X, out, rows[~go_left])


@dataclass(frozen=True)
class Model:
    params: GbdtParams
    base_score: float
    trees: tuple[_Node, ...]
    n_features: int
    training_loss: tuple[float, ...] = field(repr=False, default=())

    def predict_raw(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(X.shape[0], self.base_score)
        trees = self.trees if n_trees is None else self.trees[:n_trees]
        all_rows = np.arange(X.shape[0])
        for tree in trees:
            _tree_predict(tree, X, out, all_rows)
        return out

    def predict(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        """Probabilities for the logistic objective, raw values otherwise."""
        raw = self.predict_raw(X, n_trees)
        if self.params.objective == "logistic":
            return _sigmoid(raw)
        return raw

    def to_json_dict(self) -> dict:
        """Debug dump of the fitted ensemble; the format is not stable."""
        return {
            "format_version": MODEL_DUMP_VERSION,
            "objective": self.params.objective,
            "base_score": self.base_score,
            "params": asdict(self.params),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def _loss(objective: str, y: np.ndarray, f: np.ndarray) -> float:
    if objective == "logistic":
        p = np.clip(_sigmoid(f), _PROB_CLIP, 1.0 - _PROB_CLIP)
        return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    return float(np.mean((y - f) ** 2))


def fit(X: np.ndarray, y: np.ndarray, params: GbdtParams) -> Model:
    """Train a boosted ensemble; missing feature values are NaN cells in X.

    The base score is the label mean (log-odds of the positive rate for the
    logistic objective). Each round fits one tree to the gradient/hessian of
    the current predictions, on a row subsample and column subsample drawn
    from the seeded generator, and the training loss over the full training
    set is recorded after every round.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise TrainError(f"bad shapes: X {X.shape}, y {y.shape}")
    n, p = X.shape
    if n < 2:
        raise TrainError(f"need at least 2 training rows, got {n}")
    if params.objective == "logistic":
        classes = set(np.unique(y).tolist())
        if not classes <= {0.0, 1.0}:
            raise TrainError(f"logistic objective needs 0/1 labels, got {sorted(classes)}")
        if len(classes) < 2:
            raise TrainError("logistic objective needs both classes in the training set")
        rate = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
        base = float(np.log(rate / (1.0 - rate)))
    else:
        base = float(y.mean())

    rng = np.random.default_rng(params.seed)
    f = np.full(n, base)
    trees: list[_Node] = []
    losses: list[float] = []
    all_rows = np.arange(n)
    for _ in range(params.n_estimators):
        if params.subsample < 1.0:
            k = min(max(int(round(params.subsample * n)), 1), n)
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = all_rows
        if params.colsample_bytree < 1.0:
            kc = min(max(int(round(params.colsample_bytree * p)), 1), p)
            columns = np.sort(rng.choice(p, size=kc, replace=False))
        else:
            columns = np.arange(p)
        if params.objective == "logistic":
            prob = _sigmoid(f)
            g = prob - y
            h = prob * (1.0 - prob)
        else:
            g = f - y
            h = np.ones(n)
        tree = _TreeBuilder(X, g, h, columns, params).build(rows)
        trees.append(tree)
        _tree_predict(tree, X, f, all_rows)
        losses.append(_loss(params.objective, y, f))
    return Model(
        params=params,
        base_score=base,
        trees=tuple(trees),
        n_features=p,
        training_loss=tuple(losses),
    )
