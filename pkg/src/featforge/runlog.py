"""Run-log records and their newline-delimited JSON serialization.

One JSON object per discovery iteration plus a final report object. The
schema is versioned and deterministic (sorted keys, no timestamps), which
makes replayed runs byte-identical and lets the preference builder consume
logs from disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .evaluation import MetricScore

SCHEMA_VERSION = 1


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


@dataclass(frozen=True)
class RunRecord:
    """One discovery iteration: prompt, responses, score, and outcome."""

    experiment: int
    iteration: int
    prompt: str
    baseline: MetricScore
    rationale_raw: str | None = None
    rationale_items: tuple[tuple[str, str], ...] | None = None
    code_raw: str | None = None
    program_lines: tuple[str, ...] | None = None
    chosen_features: tuple[str, ...] | None = None
    score: MetricScore | None = None
    improved: bool = False
    failure_reason: str | None = None
    latency_ms: int = 0

    @property
    def succeeded(self) -> bool:
        return self.score is not None and self.failure_reason is None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "record": "run",
            "experiment": self.experiment,
            "iteration": self.iteration,
            "prompt": self.prompt,
            "baseline": self.baseline.to_dict(),
            "rationale_raw": self.rationale_raw,
            "rationale_items": (
                None
                if self.rationale_items is None
                else [list(item) for item in self.rationale_items]
            ),
            "code_raw": self.code_raw,
            "program_lines": None if self.program_lines is None else list(self.program_lines),
            "chosen_features": None if self.chosen_features is None else list(self.chosen_features),
            "score": None if self.score is None else self.score.to_dict(),
            "improved": self.improved,
            "failure_reason": self.failure_reason,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunRecord":
        return cls(
            experiment=raw["experiment"],
            iteration=raw["iteration"],
            prompt=raw["prompt"],
            baseline=MetricScore.from_dict(raw["baseline"]),
            rationale_raw=raw.get("rationale_raw"),
            rationale_items=(
                None
                if raw.get("rationale_items") is None
                else tuple((d, j) for d, j in raw["rationale_items"])
            ),
            code_raw=raw.get("code_raw"),
            program_lines=(
                None if raw.get("program_lines") is None else tuple(raw["program_lines"])
            ),
            chosen_features=(
                None if raw.get("chosen_features") is None else tuple(raw["chosen_features"])
            ),
            score=None if raw.get("score") is None else MetricScore.from_dict(raw["score"]),
            improved=raw.get("improved", False),
            failure_reason=raw.get("failure_reason"),
            latency_ms=raw.get("latency_ms", 0),
        )


def write_run_log(path: str | Path, records: list[RunRecord], report: dict) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(dumps(record.to_dict()) + "\n")
            fh.write(dumps({"schema_version": SCHEMA_VERSION, "record": "report", **report}) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write run log {path}: {exc}") from exc


def read_run_log(path: str | Path) -> tuple[list[RunRecord], dict | None]:
    """Records plus the trailing report object (None when absent)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"run log not found: {path}")
    records: list[RunRecord] = []
    report: dict | None = None
    with path.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"run log {path} line {i} is not valid JSON: {exc}") from exc
            if raw.get("record") == "run":
                records.append(RunRecord.from_dict(raw))
            elif raw.get("record") == "report":
                report = raw
            else:
                raise ConfigError(f"run log {path} line {i} has unknown record type")
    return records, report
