"""Two-stage dialogue construction and response parsing.

Stage one asks for feature ideas given the task context; stage two appends
the assistant's rationale verbatim and asks for the feature code. The
templates live in a versioned resource file so tests can golden-diff them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources

from .errors import ParseFailure
from .tabular import TaskSpec

TEMPLATE_RESOURCE = "prompt_template_v1.txt"

SPEAKERS = ("user", "assistant", "system")

_DEFINITION_RE = re.compile(r"^\s*(?:\d+\s*[.):]\s*)?definition\s*:\s*(.*)$", re.IGNORECASE)
_BULLET_RE = re.compile(r"^\s*[-*•]\s*")
_FENCE_RE = re.compile(r"```[A-Za-z0-9_+-]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class DialogueTurn:
    speaker: str
    text: str

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ParseFailure(f"unknown speaker {self.speaker!r}")
        if not self.text:
            raise ParseFailure("dialogue turn text must be nonempty")


@dataclass(frozen=True)
class RationaleItem:
    definition: str
    justification: str


@dataclass(frozen=True)
class Rationale:
    items: tuple[RationaleItem, ...]
    raw_text: str


@dataclass(frozen=True)
class PromptContext:
    system_instruction: str
    stage1_user: str
    stage2_user: str
    assistant_rationale: str | None = None

    def stage1_turns(self) -> tuple[DialogueTurn, ...]:
        return (
            DialogueTurn("system", self.system_instruction),
            DialogueTurn("user", self.stage1_user),
        )

    def stage2_turns(self) -> tuple[DialogueTurn, ...]:
        if self.assistant_rationale is None:
            raise ParseFailure("stage-2 turns need the assistant rationale")
        return (
            DialogueTurn("system", self.system_instruction),
            DialogueTurn("user", self.stage1_user),
            DialogueTurn("assistant", self.assistant_rationale),
            DialogueTurn("user", self.stage2_user),
        )


@lru_cache(maxsize=1)
def load_template() -> dict[str, str]:
    """Sections of the versioned prompt template resource."""
    text = resources.files("featforge.resources").joinpath(TEMPLATE_RESOURCE).read_text("utf-8")
    sections: dict[str, str] = {}
    current: str | None = None
    lines: list[str] = []
    for line in text.splitlines():
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            if current is not None:
                sections[current] = "\n".join(lines)
            current = m.group(1)
            lines = []
        else:
            lines.append(line)
    if current is not None:
        sections[current] = "\n".join(lines)
    return sections


def build_stage1_prompt(task: TaskSpec) -> PromptContext:
    """Render the idea-eliciting prompt from the task context.

    The variable block lists every non-label column as ``name: description``
    in declaration order; the label never appears (nothing may leak the
    target into generated features).
    """
    template = load_template()
    variables = "\n".join(f"{c.name}: {c.description}" for c in task.non_label_columns())
    stage1 = template["stage1"].format(
        domain=task.domain,
        task_type=task.task_type,
        variables=variables,
        problem_statement=task.problem_statement,
    )
    return PromptContext(
        system_instruction=template["system"],
        stage1_user=stage1,
        stage2_user=template["stage2"],
    )


def build_stage2_prompt(ctx: PromptContext, rationale: Rationale) -> PromptContext:
    """Attach the assistant's rationale verbatim for the code-eliciting turn."""
    if not rationale.items:
        raise ParseFailure("cannot build stage 2 from an empty rationale")
    return replace(ctx, assistant_rationale=rationale.raw_text)


def parse_rationale(text: str) -> Rationale:
    """Split a stage-1 response on its ``definition:`` items.

    Numbering ("1.", "2)") is optional and the marker is matched
    case-insensitively; bullet or free lines following a definition become
    its justification. The raw text is preserved byte-for-byte because it is
    the unit exported into preference pairs.
    """
    items: list[RationaleItem] = []
    definition: str | None = None
    justification: list[str] = []

    def flush():
        if definition is not None:
            items.append(RationaleItem(definition, "\n".join(justification).strip()))

    for line in text.splitlines():
        m = _DEFINITION_RE.match(line)
        if m:
            flush()
            definition = m.group(1).strip()
            justification = []
        elif definition is not None and line.strip():
            justification.append(_BULLET_RE.sub("", line).strip())
    flush()
    if not items:
        raise ParseFailure("no 'definition:' marker found in rationale response")
    return Rationale(items=tuple(items), raw_text=text)


def extract_code_block(text: str) -> str:
    """Isolate feature code from a stage-2 response.

    Fenced code block contents win when present; otherwise every line that
    starts a ``df[`` assignment is kept. Whole-line comments are dropped
    either way.
    """
    m = _FENCE_RE.search(text)
    if m:
        lines = [
            line
            for line in m.group(1).splitlines()
            if line.strip() and not line.lstrip().startswith("#")
        ]
        if lines:
            return "\n".join(lines)
    lines = [
        line
        for line in text.splitlines()
        if line.lstrip().startswith("df[")
    ]
    if not lines:
        raise ParseFailure("no feature code found in response")
    return "\n".join(lines)
