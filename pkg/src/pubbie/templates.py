"""Prompt templates for the pipeline stages.

Templates are data: one UTF-8 text file per stage (a1.txt ... e.txt) whose
body is the system text with {slot} placeholders. An optional line
``%%examples`` may close the file, followed by a JSON array of
[input, output] pairs appended to requests as user/assistant message pairs
(few-shot conditioning). Defaults ship with the package and any directory
can override them.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from .errors import TemplateError
from .llm import ChatMessage, StageId, StageRequest, make_request

SLOT_NAMES = frozenset({"history", "user_prompt", "schema", "context", "labels"})

_STAGE_FILES = {
    StageId.A1: "a1.txt",
    StageId.A2: "a2.txt",
    StageId.B: "b.txt",
    StageId.C: "c.txt",
    StageId.D: "d.txt",
    StageId.E: "e.txt",
}

_EXAMPLES_MARKER = "%%examples"


def _find_slots(text: str) -> frozenset[str]:
    slots = set()
    for _, name, _, _ in string.Formatter().parse(text):
        if name is not None:
            slots.add(name)
    return frozenset(slots)


@dataclass(frozen=True)
class PromptTemplate:
    """System text with declared slots plus optional few-shot examples."""

    stage: StageId
    system_text: str
    few_shot_examples: tuple[tuple[str, str], ...] = ()
    required_slots: frozenset[str] = field(init=False)

    def __post_init__(self):
        slots = _find_slots(self.system_text)
        unknown = slots - SLOT_NAMES
        if unknown:
            raise TemplateError(
                f"template {self.stage.value} uses unknown slots {sorted(unknown)}"
            )
        object.__setattr__(self, "required_slots", slots)

    def render_system(self, bindings: Mapping[str, str]) -> str:
        missing = self.required_slots - set(bindings)
        if missing:
            raise TemplateError(
                f"template {self.stage.value} is missing bindings for {sorted(missing)}"
            )
        return self.system_text.format_map(dict(bindings))

    def build_request(
        self,
        input_text: str,
        bindings: Mapping[str, str] | None = None,
        temperature: Optional[float] = None,
        max_tokens: Optional[int] = None,
    ) -> StageRequest:
        """Render the full chat request: system, few-shot pairs, then the input."""
        messages = [ChatMessage("system", self.render_system(bindings or {}))]
        for example_in, example_out in self.few_shot_examples:
            messages.append(ChatMessage("user", example_in))
            messages.append(ChatMessage("assistant", example_out))
        messages.append(ChatMessage("user", input_text))
        return make_request(self.stage, messages, temperature, max_tokens)


def parse_template_file(stage: StageId, content: str) -> PromptTemplate:
    lines = content.splitlines()
    examples: tuple[tuple[str, str], ...] = ()
    body = content
    for i, line in enumerate(lines):
        if line.strip() == _EXAMPLES_MARKER:
            body = "\n".join(lines[:i])
            raw = "\n".join(lines[i + 1 :]) or "[]"
            try:
                pairs = json.loads(raw)
                examples = tuple((str(pair[0]), str(pair[1])) for pair in pairs)
            except (json.JSONDecodeError, TypeError, IndexError) as exc:
                raise TemplateError(
                    f"bad examples section in template {stage.value}: {exc}"
                ) from None
            break
    return PromptTemplate(stage=stage, system_text=body.strip(), few_shot_examples=examples)


def _default_template_text(stage: StageId) -> str:
    ref = resources.files("pubbie").joinpath("templates_default", _STAGE_FILES[stage])
    return ref.read_text(encoding="utf-8")


class TemplateRegistry:
    """Per-stage templates loaded from a directory, defaulting to the shipped set."""

    def __init__(self, directory: Optional[str] = None):
        self.directory = directory
        self._templates: dict[StageId, PromptTemplate] = {}
        for stage, filename in _STAGE_FILES.items():
            content = None
            if directory:
                path = Path(directory) / filename
                if path.is_file():
                    content = path.read_text(encoding="utf-8")
            if content is None:
                content = _default_template_text(stage)
            self._templates[stage] = parse_template_file(stage, content)

    def get(self, stage: StageId) -> PromptTemplate:
        return self._templates[stage]
