"""Pick the best-scoring combination of generated features.

Two regimes: up to five features, every nonempty subset is evaluated
(2^k - 1 evaluations); six or more, each singleton plus the full set
(k + 1 evaluations). All evaluations share one split so scores compare.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable

from .errors import FeatForgeError, SearchError
from .evaluation import MetricScore, grid_evaluate
from .exprlang import FeatureProgram, evaluate
from .gbdt import GbdtParams
from .tabular import Dataset, SplitPlan, TaskSpec

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 5

# A scorer maps a feature-name subset to its test score.
SubsetScorer = Callable[[tuple[str, ...]], MetricScore]


@dataclass(frozen=True)
class SubsetResult:
    chosen_features: tuple[str, ...]
    score: MetricScore
    evaluated_count: int


def candidate_subsets(names: tuple[str, ...]) -> list[tuple[str, ...]]:
    """Subsets in evaluation order: smallest first, lexicographic within size.

    That order doubles as the tie-break, so the first incumbent at any score
    is also the preferred one.
    """
    if len(names) <= EXHAUSTIVE_LIMIT:
        subsets = []
        for size in range(1, len(names) + 1):
            subsets.extend(itertools.combinations(sorted(names), size))
        return subsets
    singletons = [(name,) for name in sorted(names)]
    return singletons + [tuple(sorted(names))]


def _default_scorer(
    dataset: Dataset,
    program: FeatureProgram,
    task: TaskSpec,
    split: SplitPlan,
    metric: str | None,
    params: GbdtParams | None,
) -> SubsetScorer:
    augmented = evaluate(program, dataset)

    def score(subset: tuple[str, ...]) -> MetricScore:
        columns = [augmented.column(name) for name in subset]
        candidate = dataset.with_columns(columns)
        best, _ = grid_evaluate(candidate, task, split, metric=metric, params=params)
        return best

    return score


def select_best_subset(
    dataset: Dataset,
    program: FeatureProgram,
    task: TaskSpec,
    split: SplitPlan,
    metric: str | None = None,
    params: GbdtParams | None = None,
    scorer: SubsetScorer | None = None,
) -> SubsetResult:
    """Evaluate the regime's candidate subsets and return the best one.

    Ties go to the smaller subset, then lexicographically smaller feature
    names. A scorer can be injected for testing; the default materializes
    the program once and grid-evaluates each candidate column set.
    """
    names = program.feature_names()
    if not names:
        raise SearchError("empty feature program")
    if scorer is None:
        scorer = _default_scorer(dataset, program, task, split, metric, params)

    best: tuple[tuple[str, ...], MetricScore] | None = None
    evaluated = 0
    failures: list[str] = []
    for subset in candidate_subsets(names):
        evaluated += 1
        try:
            score = scorer(subset)
        except FeatForgeError as exc:
            failures.append(f"{subset}: {exc}")
            logger.warning("subset %s failed: %s", subset, exc)
            continue
        if best is None or score.better_than(best[1]):
            best = (subset, score)
    if best is None:
        raise SearchError("every subset evaluation failed: " + "; ".join(failures))
    return SubsetResult(chosen_features=best[0], score=best[1], evaluated_count=evaluated)
