"""Turn scored discovery runs into preference pairs and export them as JSONL.

Successful runs split into a positive pool (strictly better than baseline)
and a negative pool (everything else). Absolute pairs cross the pools with
the positive side chosen; relative pairs stay within one pool and choose the
better score, dropping exact ties. The DPO objective is provided as a pure
function over pre-computed sequence log-probabilities so pairs can be
validated without touching model weights.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, EmptyPoolError, MathError
from .evaluation import MetricScore
from .runlog import RunRecord

DEFAULT_SAMPLES = 30
DEFAULT_BETA = 0.1

ABSOLUTE = "absolute"
RELATIVE_POS = "relative_pos"
RELATIVE_NEG = "relative_neg"


@dataclass(frozen=True)
class PoolEntry:
    """One successful run: rationale text, feature lines, and its score."""

    rationale: str
    program_lines: tuple[str, ...]
    score: MetricScore
    baseline: MetricScore


@dataclass(frozen=True)
class RunPool:
    prompt: str
    baseline: MetricScore
    positives: tuple[PoolEntry, ...]
    negatives: tuple[PoolEntry, ...]
    dataset: str = ""


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    chosen: str
    rejected: str
    criterion: str
    chosen_score: float
    rejected_score: float
    dataset: str = ""


@dataclass(frozen=True)
class DpoInputs:
    """Summed sequence log-probabilities under the policy and the reference."""

    logp_policy_chosen: float
    logp_ref_chosen: float
    logp_policy_rejected: float
    logp_ref_rejected: float
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        values = (
            self.logp_policy_chosen,
            self.logp_ref_chosen,
            self.logp_policy_rejected,
            self.logp_ref_rejected,
            self.beta,
        )
        if not all(math.isfinite(v) for v in values):
            raise MathError(f"DPO inputs must be finite, got {values}")
        if self.beta <= 0:
            raise MathError(f"beta must be positive, got {self.beta}")
        if any(v > 0 for v in values[:4]):
            raise MathError("log-probabilities cannot exceed 0")


def collect_pool(
    records: list[RunRecord],
    samples: int = DEFAULT_SAMPLES,
    dataset: str = "",
) -> RunPool:
    """Pool the first `samples` successful records, split by strict
    comparison against each record's own baseline. Failed records are
    skipped and do not count toward the sample budget."""
    successful = [r for r in records if r.succeeded and r.rationale_raw is not None]
    if not successful:
        raise EmptyPoolError("run log has no successful records to pool")
    prompts = {r.prompt for r in successful}
    if len(prompts) != 1:
        raise ConfigError(f"run log mixes {len(prompts)} distinct prompts; pool one task at a time")
    successful = successful[:samples]
    positives, negatives = [], []
    for record in successful:
        assert record.score is not None
        entry = PoolEntry(
            rationale=record.rationale_raw,
            program_lines=record.program_lines or (),
            score=record.score,
            baseline=record.baseline,
        )
        if record.score.better_than(record.baseline):
            positives.append(entry)
        else:
            negatives.append(entry)
    return RunPool(
        prompt=successful[0].prompt,
        baseline=successful[0].baseline,
        positives=tuple(positives),
        negatives=tuple(negatives),
        dataset=dataset,
    )


def build_pairs(pool: RunPool) -> list[PreferencePair]:
    """All preference pairs of the pool, in deterministic order.

    Absolute pairs enumerate positives x negatives; relative pairs enumerate
    2-combinations within each pool (chosen = better score, equal scores
    dropped). Pairs whose two rationales are byte-identical carry no signal
    and are dropped too.
    """

    def pair(chosen: PoolEntry, rejected: PoolEntry, criterion: str) -> PreferencePair | None:
        if chosen.rationale == rejected.rationale:
            return None
        return PreferencePair(
            prompt=pool.prompt,
            chosen=chosen.rationale,
            rejected=rejected.rationale,
            criterion=criterion,
            chosen_score=chosen.score.value,
            rejected_score=rejected.score.value,
            dataset=pool.dataset,
        )

    pairs: list[PreferencePair] = []
    for pos, neg in itertools.product(pool.positives, pool.negatives):
        pairs.append(pair(pos, neg, ABSOLUTE))
    for criterion, entries in ((RELATIVE_POS, pool.positives), (RELATIVE_NEG, pool.negatives)):
        for a, b in itertools.combinations(entries, 2):
            if a.score.value == b.score.value:
                continue
            chosen, rejected = (a, b) if a.score.better_than(b.score) else (b, a)
            pairs.append(pair(chosen, rejected, criterion))
    return [p for p in pairs if p is not None]


def dpo_loss(inputs: DpoInputs) -> float:
    """-log sigmoid of the beta-scaled policy/reference log-ratio margin."""
    margin = inputs.beta * (
        (inputs.logp_policy_chosen - inputs.logp_ref_chosen)
        - (inputs.logp_policy_rejected - inputs.logp_ref_rejected)
    )
    # -log(sigmoid(m)) = log(1 + exp(-m)), computed stably on both tails.
    if margin >= 0:
        return math.log1p(math.exp(-margin))
    return -margin + math.log1p(math.exp(margin))


def export_jsonl(pairs: list[PreferencePair], path: str | Path) -> int:
    """One JSON object per pair; returns the number written."""
    if not pairs:
        raise ConfigError("no pairs to export; refusing to write an empty file")
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for p in pairs:
                obj = {
                    "prompt": p.prompt,
                    "chosen": p.chosen,
                    "rejected": p.rejected,
                    "meta": {
                        "criterion": p.criterion,
                        "chosen_Z": p.chosen_score,
                        "rejected_Z": p.rejected_score,
                        "dataset": p.dataset,
                    },
                }
                fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write preference file {path}: {exc}") from exc
    return len(pairs)


def load_jsonl(path: str | Path) -> list[PreferencePair]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"preference file not found: {path}")
    pairs = []
    with path.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} line {i} is not valid JSON: {exc}") from exc
            meta = obj.get("meta", {})
            pairs.append(
                PreferencePair(
                    prompt=obj["prompt"],
                    chosen=obj["chosen"],
                    rejected=obj["rejected"],
                    criterion=meta.get("criterion", ""),
                    chosen_score=meta.get("chosen_Z", float("nan")),
                    rejected_score=meta.get("rejected_Z", float("nan")),
                    dataset=meta.get("dataset", ""),
                )
            )
    return pairs
