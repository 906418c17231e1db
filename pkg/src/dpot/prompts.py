"""Prompt builders for dynamic planning, grounding and the baselines.

Template texts live in ``dpot/templates/*.txt`` so the exact prompts
can be audited without running anything. All builders are pure.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template
from typing import Sequence

from .screen import ScreenMarkup

NONE_PLACEHOLDER = "None"


def _load(name: str) -> str:
    return resources.files("dpot.templates").joinpath(name).read_text(encoding="utf-8")


TEMPLATE_NAMES = (
    "framing.txt",
    "plan_output_format.txt",
    "planning.txt",
    "planning_with_reference.txt",
    "reference_entry.txt",
    "planning_no_history.txt",
    "action_framing.txt",
    "action_output_format.txt",
    "no_planning.txt",
    "static_planning.txt",
    "grounding.txt",
    "react_system.txt",
)
TEMPLATES = {name: _load(name) for name in TEMPLATE_NAMES}

FRAMING = TEMPLATES["framing.txt"].strip()
PLAN_OUTPUT_FORMAT = TEMPLATES["plan_output_format.txt"].strip()
ACTION_FRAMING = TEMPLATES["action_framing.txt"].strip()
ACTION_OUTPUT_FORMAT = TEMPLATES["action_output_format.txt"].strip()


def _fill(name: str, **values: str) -> str:
    return Template(TEMPLATES[name]).substitute(**values).strip()


def export_templates(dest: str | Path) -> list[Path]:
    """Copy the template files into ``dest`` for review."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    out = []
    for name in TEMPLATE_NAMES:
        with resources.as_file(resources.files("dpot.templates").joinpath(name)) as src:
            out.append(Path(shutil.copy(src, dest / name)))
    return out


# --- types -----------------------------------------------------------------


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True, slots=True)
class Message:
    role: Role
    text: str
    image_ref: str | None = None


@dataclass(frozen=True, slots=True)
class StrategyKind:
    """One of np, sp, dp, dpot, dpot-ref, react.

    ``history_len`` applies to react only; ``None`` keeps every round.
    """

    name: str
    history_len: int | None = None

    NAMES = ("np", "sp", "dp", "dpot", "dpot-ref", "react")

    def __post_init__(self) -> None:
        if self.name not in self.NAMES:
            raise ValueError(f"unknown strategy {self.name!r}")
        if self.history_len is not None:
            if self.name != "react":
                raise ValueError("history_len only applies to react")
            if self.history_len < 0:
                raise ValueError("history_len must be >= 0")

    @property
    def label(self) -> str:
        if self.name == "react":
            return "react-inf" if self.history_len is None else f"react-{self.history_len}"
        return self.name

    @classmethod
    def from_label(cls, label: str) -> "StrategyKind":
        if label.startswith("react-"):
            n = label.split("-", 1)[1]
            return cls("react", None if n == "inf" else int(n))
        return cls(label)

    @property
    def plans(self) -> bool:
        return self.name in ("sp", "dp", "dpot", "dpot-ref")


NP = StrategyKind("np")
SP = StrategyKind("sp")
DP = StrategyKind("dp")
DPOT = StrategyKind("dpot")
DPOT_REF = StrategyKind("dpot-ref")


def react(history_len: int | None = None) -> StrategyKind:
    return StrategyKind("react", history_len)


@dataclass(frozen=True, slots=True)
class PromptBundle:
    messages: tuple[Message, ...]
    strategy: StrategyKind
    turn: int

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("empty prompt")

    def text(self) -> str:
        return "\n".join(m.text for m in self.messages)


@dataclass(frozen=True, slots=True)
class ReferenceEntry:
    goal: str
    caption: str
    action_descriptions: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class ReferenceBlock:
    entries: tuple[ReferenceEntry, ...]


@dataclass(frozen=True, slots=True)
class ReActRound:
    observation: str
    thought: str
    action: str


@dataclass(frozen=True)
class BaselineContext:
    frozen_plan: str | None = None
    rounds: Sequence[ReActRound] | None = None
    turn: int = 0
    image_ref: str | None = None


class ContextMismatchError(ValueError):
    pass


# --- rendering helpers -----------------------------------------------------


def history_line(step_idx: int, description: str) -> str:
    return json.dumps({"step_idx": step_idx, "action_description": description}, ensure_ascii=False)


def render_history(lines: Sequence[str], cap: int | None = None) -> str:
    if cap is not None:
        lines = list(lines)[-cap:] if cap > 0 else []
    return "\n".join(lines) if lines else NONE_PLACEHOLDER


def render_steps(steps: Sequence[str], cap: int | None = None) -> str:
    numbered = [f"Step {i}. {s}" for i, s in enumerate(steps, start=1)]
    return render_history(numbered, cap)


_COUNT_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five"}

NO_CAPTION = "(no caption)"


def render_reference_block(refs: ReferenceBlock) -> str:
    parts = []
    for ref in refs.entries:
        lines = [history_line(i, d) for i, d in enumerate(ref.action_descriptions)]
        parts.append(
            _fill(
                "reference_entry.txt",
                goal=ref.goal,
                caption=ref.caption or NO_CAPTION,
                history="\n".join(lines) if lines else NONE_PLACEHOLDER,
            )
        )
    return "\n\n".join(parts)


def _user(text: str, image_ref: str | None) -> Message:
    return Message(Role.USER, text, image_ref)


# --- builders --------------------------------------------------------------


def build_planning_prompt(
    goal: str,
    markup: ScreenMarkup,
    history: Sequence[str],
    prev_steps: Sequence[str],
    *,
    turn: int = 0,
    history_cap: int | None = None,
    image_ref: str | None = None,
    strategy: StrategyKind = DPOT,
    given_plan: str | None = None,
) -> PromptBundle:
    """Planning prompt: goal, current screen, previous actions and steps.

    ``history`` holds already-rendered action lines (one JSON object per
    past turn). ``history_cap`` keeps only the newest lines. A
    ``given_plan`` (externally written) is shown for the model to pick
    its step from.
    """
    if not goal:
        raise ValueError("goal must be non-empty")
    output_format = PLAN_OUTPUT_FORMAT
    if given_plan:
        output_format = f"Plan to follow:\n{given_plan}\n\n{PLAN_OUTPUT_FORMAT}"
    text = _fill(
        "planning.txt",
        framing=FRAMING,
        goal=goal,
        screen=markup.render(),
        history=render_history(history, history_cap),
        steps=render_steps(prev_steps, history_cap),
        output_format=output_format,
    )
    return PromptBundle((_user(text, image_ref),), strategy, turn)


def build_planning_prompt_with_reference(
    goal: str,
    markup: ScreenMarkup,
    history: Sequence[str],
    prev_steps: Sequence[str],
    refs: ReferenceBlock,
    *,
    turn: int = 0,
    history_cap: int | None = None,
    image_ref: str | None = None,
) -> PromptBundle:
    if not goal:
        raise ValueError("goal must be non-empty")
    if not refs.entries:
        raise ValueError("reference block is empty")
    n = len(refs.entries)
    text = _fill(
        "planning_with_reference.txt",
        framing=FRAMING,
        goal=goal,
        count=_COUNT_WORDS.get(n, str(n)),
        examples="example" if n == 1 else "examples",
        references=render_reference_block(refs),
        screen=markup.render(),
        history=render_history(history, history_cap),
        steps=render_steps(prev_steps, history_cap),
        output_format=PLAN_OUTPUT_FORMAT,
    )
    return PromptBundle((_user(text, image_ref),), DPOT_REF, turn)


def build_grounding_prompt(
    step: str,
    markup: ScreenMarkup,
    goal: str,
    *,
    strategy: StrategyKind = DPOT,
    turn: int = 0,
    image_ref: str | None = None,
) -> PromptBundle:
    if not step.strip():
        raise ValueError("step must be non-empty")
    text = _fill(
        "grounding.txt",
        goal=goal,
        step=" ".join(step.split()),
        screen=markup.render(),
        output_format=ACTION_OUTPUT_FORMAT,
    )
    return PromptBundle((_user(text, image_ref),), strategy, turn)


def _react_system(goal: str) -> str:
    return _fill("react_system.txt", framing=ACTION_FRAMING, goal=goal,
                 output_format=ACTION_OUTPUT_FORMAT)


def observation_text(markup: ScreenMarkup) -> str:
    return "Observation:\n" + markup.render()


def build_baseline_prompt(
    kind: StrategyKind,
    goal: str,
    markup: ScreenMarkup,
    context: BaselineContext = BaselineContext(),
) -> PromptBundle:
    """Prompts for the no-plan, static-plan, plan-only and ReAct baselines."""
    if not goal:
        raise ValueError("goal must be non-empty")
    ctx = context
    if kind.name in ("dpot", "dpot-ref"):
        raise ContextMismatchError(f"{kind.label} uses build_planning_prompt")
    if kind.name != "sp" and ctx.frozen_plan is not None:
        raise ContextMismatchError(f"{kind.label} does not take a frozen plan")
    if kind.name != "react" and ctx.rounds is not None:
        raise ContextMismatchError(f"{kind.label} does not take ReAct rounds")
    screen = markup.render()

    if kind.name == "np":
        text = _fill("no_planning.txt", framing=ACTION_FRAMING, goal=goal,
                     screen=screen, output_format=ACTION_OUTPUT_FORMAT)
        return PromptBundle((_user(text, ctx.image_ref),), kind, ctx.turn)

    if kind.name == "sp":
        if not ctx.frozen_plan:
            raise ContextMismatchError("sp needs the plan produced at the first turn")
        text = _fill("static_planning.txt", framing=ACTION_FRAMING, goal=goal,
                     plan=ctx.frozen_plan, screen=screen,
                     output_format=ACTION_OUTPUT_FORMAT)
        return PromptBundle((_user(text, ctx.image_ref),), kind, ctx.turn)

    if kind.name == "dp":
        text = _fill("planning_no_history.txt", framing=FRAMING, goal=goal,
                     screen=screen, output_format=PLAN_OUTPUT_FORMAT)
        return PromptBundle((_user(text, ctx.image_ref),), kind, ctx.turn)

    # react
    if ctx.rounds is None:
        raise ContextMismatchError("react needs its previous rounds (possibly empty)")
    rounds = list(ctx.rounds)
    if kind.history_len is not None:
        rounds = rounds[-kind.history_len:] if kind.history_len > 0 else []
    messages = [Message(Role.SYSTEM, _react_system(goal))]
    for r in rounds:
        messages.append(Message(Role.USER, r.observation))
        messages.append(Message(Role.ASSISTANT, f"Thought: {r.thought}\nAction: {r.action}"))
    messages.append(_user(observation_text(markup), ctx.image_ref))
    return PromptBundle(tuple(messages), kind, ctx.turn)


def build_static_plan_request(goal: str, markup: ScreenMarkup, *, image_ref: str | None = None) -> PromptBundle:
    """First-turn plan request of the static-plan baseline."""
    bundle = build_baseline_prompt(DP, goal, markup, BaselineContext(image_ref=image_ref))
    return PromptBundle(bundle.messages, SP, 0)
