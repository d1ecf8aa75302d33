"""The feature-discovery loop: dialogue, parse, materialize, score, repeat.

Each experiment owns one split (seeded by its experiment seed), computes its
baseline on that split, then iterates two-stage dialogues until it has
collected the required number of strict improvements or exhausted the
consecutive-stall budget. The evaluation aggregates the per-experiment best
scores into a mean and population standard deviation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .dialogue import (
    PromptContext,
    build_stage1_prompt,
    build_stage2_prompt,
    parse_rationale,
    extract_code_block,
)
from .errors import ConfigError, FeatForgeError, GatewayError
from .evaluation import MetricScore, grid_evaluate, resolve_metric
from .exprlang import parse_program, evaluate
from .exprlang.nodes import pretty_feature
from .gateway import SamplingParams
from .gbdt import GbdtParams
from .runlog import RunRecord
from .subset_search import SubsetResult, select_best_subset
from .tabular import Dataset, SplitPlan, TaskSpec, make_split

logger = logging.getLogger(__name__)

DEFAULT_EXPERIMENTS = 7
DEFAULT_MAX_STALL = 15
DEFAULT_TARGET_IMPROVEMENTS = 3


class ChatClient(Protocol):
    def complete(self, turns, params) -> object: ...


@dataclass(frozen=True)
class LoopParams:
    """Counters of the evaluation protocol plus the root seed.

    n_experiments is the number of independent repeats; target_improvements
    is how many strict improvements end an experiment; max_stall is the run
    of consecutive non-improving iterations that ends it instead.
    """

    n_experiments: int = DEFAULT_EXPERIMENTS
    max_stall: int = DEFAULT_MAX_STALL
    target_improvements: int = DEFAULT_TARGET_IMPROVEMENTS
    metric: str = "auto"
    root_seed: int = 0

    def __post_init__(self):
        if self.n_experiments < 1 or self.max_stall < 1 or self.target_improvements < 1:
            raise ConfigError("loop counters must all be >= 1")
        if self.metric not in ("auto", "auc", "mse"):
            raise ConfigError(f"metric must be auto|auc|mse, got {self.metric!r}")

    def experiment_seed(self, index: int) -> int:
        return self.root_seed + index

    def to_dict(self) -> dict:
        return {
            "n_experiments": self.n_experiments,
            "max_stall": self.max_stall,
            "target_improvements": self.target_improvements,
            "metric": self.metric,
            "root_seed": self.root_seed,
        }


@dataclass
class ExperimentState:
    """Live counters of one experiment: c improvements, t consecutive stalls."""

    improvements: int = 0
    stall: int = 0
    improved_records: list[RunRecord] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None


@dataclass(frozen=True)
class ExperimentResult:
    index: int
    seed: int
    baseline: MetricScore
    state: ExperimentState
    records: tuple[RunRecord, ...]

    @property
    def best(self) -> MetricScore | None:
        """Best improved score, None when the experiment never improved."""
        best: MetricScore | None = None
        for record in self.state.improved_records:
            assert record.score is not None
            if best is None or record.score.better_than(best):
                best = record.score
        return best


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    method: str
    metric: str
    baseline: MetricScore
    baselines: tuple[float, ...]
    maxima: tuple[float, ...]
    mean: float
    std: float
    empty_experiments: tuple[int, ...]
    aborted_experiments: tuple[int, ...]
    loop_params: LoopParams
    records: tuple[RunRecord, ...]

    @property
    def improvement_found(self) -> bool:
        return len(self.empty_experiments) < len(self.maxima)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "metric": self.metric,
            "direction": self.baseline.direction,
            "baseline_mean": self.baseline.value,
            "baselines": list(self.baselines),
            "maxima": list(self.maxima),
            "mean": self.mean,
            "std": self.std,
            "n_experiments": len(self.maxima),
            "empty_experiments": list(self.empty_experiments),
            "aborted_experiments": list(self.aborted_experiments),
            "improvement_found": self.improvement_found,
            "loop_params": self.loop_params.to_dict(),
        }


# Injectable candidate scorer, used by trace-conformance tests.
CandidateScorer = Callable[..., SubsetResult]


def compute_baseline(
    dataset: Dataset,
    task: TaskSpec,
    split: SplitPlan,
    metric: str | None = None,
) -> MetricScore:
    """Grid-evaluate the original columns only."""
    score, _ = grid_evaluate(dataset, task, split, metric=metric)
    return score


def _failure_record(
    experiment: int,
    iteration: int,
    prompt: str,
    baseline: MetricScore,
    reason: str,
    latency_ms: int,
    rationale_raw: str | None = None,
    code_raw: str | None = None,
) -> RunRecord:
    return RunRecord(
        experiment=experiment,
        iteration=iteration,
        prompt=prompt,
        baseline=baseline,
        rationale_raw=rationale_raw,
        code_raw=code_raw,
        improved=False,
        failure_reason=reason,
        latency_ms=latency_ms,
    )


def run_experiment(
    dataset: Dataset,
    task: TaskSpec,
    params: LoopParams,
    client: ChatClient,
    experiment_seed: int,
    experiment_index: int = 0,
    sampling: SamplingParams | None = None,
    reuse_baseline_params: bool = False,
    candidate_scorer: CandidateScorer | None = None,
    baseline_override: MetricScore | None = None,
) -> ExperimentResult:
    """One experiment of the protocol loop.

    Iterates two-stage dialogues until target_improvements strict
    improvements over the experiment baseline or max_stall consecutive
    non-improving iterations. Parse and evaluation failures consume an
    iteration (they count as non-improving); a gateway failure aborts the
    experiment, keeping the records gathered so far.
    """
    sampling = sampling or SamplingParams()
    metric = resolve_metric(task, None if params.metric == "auto" else params.metric)
    split = make_split(dataset, task, experiment_seed)
    if baseline_override is not None:
        baseline, baseline_params = baseline_override, None
    else:
        baseline, baseline_params = grid_evaluate(dataset, task, split, metric=metric)
    subset_params: GbdtParams | None = baseline_params if reuse_baseline_params else None

    ctx = build_stage1_prompt(task)
    prompt = ctx.stage1_user
    state = ExperimentState()
    records: list[RunRecord] = []
    iteration = 0
    while state.improvements < params.target_improvements and state.stall < params.max_stall:
        iteration += 1
        record = _run_iteration(
            dataset,
            task,
            split,
            ctx,
            client,
            sampling,
            metric,
            subset_params,
            baseline,
            experiment_index,
            iteration,
            prompt,
            state,
            candidate_scorer,
        )
        if record is not None:
            records.append(record)
        if state.aborted:
            break
    return ExperimentResult(
        index=experiment_index,
        seed=experiment_seed,
        baseline=baseline,
        state=state,
        records=tuple(records),
    )


def _run_iteration(
    dataset: Dataset,
    task: TaskSpec,
    split: SplitPlan,
    ctx: PromptContext,
    client: ChatClient,
    sampling: SamplingParams,
    metric: str,
    subset_params: GbdtParams | None,
    baseline: MetricScore,
    experiment: int,
    iteration: int,
    prompt: str,
    state: ExperimentState,
    candidate_scorer: CandidateScorer | None,
) -> RunRecord | None:
    # Stage 1: sample and parse the rationale.
    try:
        stage1 = client.complete(ctx.stage1_turns(), sampling)
    except GatewayError as exc:
        state.aborted = True
        state.abort_reason = str(exc)
        return None
    latency = stage1.latency_ms
    try:
        rationale = parse_rationale(stage1.text)
    except FeatForgeError as exc:
        state.stall += 1
        return _failure_record(
            experiment, iteration, prompt, baseline,
            f"rationale parse failed: {exc}", latency, rationale_raw=stage1.text,
        )

    # Stage 2: sample the code given the rationale.
    ctx2 = build_stage2_prompt(ctx, rationale)
    try:
        stage2 = client.complete(ctx2.stage2_turns(), sampling)
    except GatewayError as exc:
        state.aborted = True
        state.abort_reason = str(exc)
        return _failure_record(
            experiment, iteration, prompt, baseline,
            f"aborted mid-iteration: {exc}", latency, rationale_raw=rationale.raw_text,
        )
    latency += stage2.latency_ms

    # Parse, materialize, and score the best feature subset.
    try:
        code = extract_code_block(stage2.text)
        program = parse_program(code, task)
        evaluate(program, dataset)  # degenerate features fail the iteration here
        if candidate_scorer is not None:
            result = candidate_scorer(dataset, program, task, split)
        else:
            result = select_best_subset(
                dataset, program, task, split, metric=metric, params=subset_params
            )
    except FeatForgeError as exc:
        state.stall += 1
        return _failure_record(
            experiment, iteration, prompt, baseline,
            f"candidate evaluation failed: {exc}", latency,
            rationale_raw=rationale.raw_text, code_raw=stage2.text,
        )

    improved = result.score.better_than(baseline)
    record = RunRecord(
        experiment=experiment,
        iteration=iteration,
        prompt=prompt,
        baseline=baseline,
        rationale_raw=rationale.raw_text,
        rationale_items=tuple((i.definition, i.justification) for i in rationale.items),
        code_raw=stage2.text,
        program_lines=tuple(pretty_feature(f) for f in program.features),
        chosen_features=result.chosen_features,
        score=result.score,
        improved=improved,
        latency_ms=latency,
    )
    if improved:
        state.improvements += 1
        state.stall = 0
        state.improved_records.append(record)
    else:
        state.stall += 1
    return record


def run_evaluation(
    dataset: Dataset,
    task: TaskSpec,
    params: LoopParams,
    client: ChatClient,
    dataset_name: str = "dataset",
    method: str = "featforge",
    sampling: SamplingParams | None = None,
    reuse_baseline_params: bool = False,
    max_workers: int = 1,
    candidate_scorer: CandidateScorer | None = None,
    baseline_override: MetricScore | None = None,
) -> EvalReport:
    """Run every experiment and aggregate their best scores.

    Experiments get distinct seeds fanned out from the root seed. An
    experiment that never improved contributes its own baseline as its
    maximum and is flagged in the report.
    """
    metric = resolve_metric(task, None if params.metric == "auto" else params.metric)

    def one(i: int) -> ExperimentResult:
        return run_experiment(
            dataset,
            task,
            params,
            client,
            experiment_seed=params.experiment_seed(i),
            experiment_index=i,
            sampling=sampling,
            reuse_baseline_params=reuse_baseline_params,
            candidate_scorer=candidate_scorer,
            baseline_override=baseline_override,
        )

    indices = range(params.n_experiments)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(i) for i in indices]

    if all(r.state.aborted and not r.records for r in results):
        raise GatewayError("all experiments aborted before producing any record")

    maxima: list[float] = []
    baselines: list[float] = []
    empty: list[int] = []
    aborted: list[int] = []
    records: list[RunRecord] = []
    for result in results:
        baselines.append(result.baseline.value)
        best = result.best
        if best is None:
            empty.append(result.index)
            maxima.append(result.baseline.value)
        else:
            maxima.append(best.value)
        if result.state.aborted:
            aborted.append(result.index)
            logger.warning("experiment %d aborted: %s", result.index, result.state.abort_reason)
        records.extend(result.records)

    direction = results[0].baseline.direction
    baseline_mean = MetricScore(metric, float(np.mean(baselines)), direction)
    return EvalReport(
        dataset=dataset_name,
        method=method,
        metric=metric,
        baseline=baseline_mean,
        baselines=tuple(baselines),
        maxima=tuple(maxima),
        mean=float(np.mean(maxima)),
        std=float(np.std(maxima)),
        empty_experiments=tuple(empty),
        aborted_experiments=tuple(aborted),
        loop_params=params,
        records=tuple(records),
    )
