"""Deterministic prompt rendering: few-shot baseline, teacher generation,
and tuned-model conversational framing.

Templates ship as UTF-8 text files with ``{name}`` placeholders under
``modalgate/templates/``. Rendering substitutes only the declared
placeholders (plain ``str.format`` would choke on the JSON braces inside the
few-shot examples).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .schema import InstructionRecord, Modality

TEACHER_MAX_CAPTIONS = 60
DEFAULT_MAX_TURNS = 6

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


class BadArity(ValueError):
    """Raised when teacher-prompt inputs violate the 3-seeds / 1..60-captions contract."""


@dataclass(frozen=True)
class PromptTemplate:
    """A named template body with a declared set of required placeholders."""

    id: str
    body: str
    required_placeholders: frozenset[str]

    def render(self, **bindings: str) -> str:
        missing = self.required_placeholders - set(bindings)
        if missing:
            raise ValueError(f"template {self.id}: unbound placeholders {sorted(missing)}")
        text = self.body
        for name, value in bindings.items():
            text = text.replace("{" + name + "}", value)
        return text


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    body = (resources.files("modalgate") / "templates" / f"{name}.txt").read_text("utf-8")
    placeholders = frozenset(_PLACEHOLDER_RE.findall(body))
    return PromptTemplate(id=name, body=body, required_placeholders=placeholders)


@dataclass(frozen=True)
class ConversationHistory:
    """Ordered (role, text) turns, bounded to the most recent ``max_turns``."""

    turns: tuple[tuple[str, str], ...] = field(default_factory=tuple)
    max_turns: int = DEFAULT_MAX_TURNS

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("max_turns must be positive")
        turns = tuple((self._check_role(r), t) for r, t in self.turns)
        if len(turns) > self.max_turns:
            turns = turns[-self.max_turns :]
        object.__setattr__(self, "turns", turns)

    @staticmethod
    def _check_role(role: str) -> str:
        if role not in ("user", "assistant"):
            raise ValueError(f"role must be user or assistant, got {role!r}")
        return role

    def extend(self, role: str, text: str) -> "ConversationHistory":
        return ConversationHistory(self.turns + ((role, text),), max_turns=self.max_turns)

    def __len__(self) -> int:
        return len(self.turns)


def render_fewshot_prompt(instruction: str) -> str:
    """Render the in-context baseline prompt ending in the given instruction."""
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    return load_template("fewshot").render(instruction=instruction.strip()).rstrip("\n")


def fewshot_preamble() -> str:
    """Everything before the final instruction slot of the few-shot template."""
    body = load_template("fewshot").body
    return body.split("Instruction: {instruction}")[0]


def render_teacher_prompt(
    seeds: list[InstructionRecord],
    captions: list[str],
    target_modality: Modality,
) -> str:
    """Render the bulk instruction-generation prompt for the teacher LLM.

    Exactly 3 seed records are embedded as bracketed caption/instruction
    examples, then 1..60 captions are listed bracketed on their own lines.
    The speech variant is the image template with its modality keywords
    swapped.
    """
    if target_modality is Modality.TEXT:
        raise ValueError("teacher prompts target non-text modalities")
    if len(seeds) != 3:
        raise BadArity(f"exactly 3 seed examples required, got {len(seeds)}")
    if not captions:
        raise BadArity("at least one caption required")
    if len(captions) > TEACHER_MAX_CAPTIONS:
        raise BadArity(f"at most {TEACHER_MAX_CAPTIONS} captions per call, got {len(captions)}")

    seed_blocks = [
        f"[{seed.output.response}]\n\nInstruction: {seed.instruction}" for seed in seeds
    ]
    caption_blocks = [f"[{caption.strip()}]" for caption in captions]
    template = load_template(
        "teacher_image" if target_modality is Modality.IMAGE else "teacher_speech"
    )
    return template.render(
        seed_examples="\n\n".join(seed_blocks),
        captions="\n\n".join(caption_blocks),
    )


def render_tuned_prompt(history: ConversationHistory, instruction: str) -> str:
    """Flat conversational framing for the tuned model.

    With empty history this is the bare instruction; otherwise the truncated
    history is joined as "User:"/"Assistant:" labeled lines followed by the
    new instruction and a generation cue.
    """
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    instruction = instruction.strip()
    if not history.turns:
        return instruction
    labels = {"user": "User", "assistant": "Assistant"}
    lines = [f"{labels[role]}: {text}" for role, text in history.turns]
    lines.append(f"User: {instruction}")
    lines.append("Assistant:")
    return "\n".join(lines)
