"""Tolerant extraction of plan/step and action objects from model text.

Models answer in loose pseudo-JSON: single-quoted keys, code fences,
a sentence of prose before or after the object. Extraction scans for
balanced ``{...}`` spans, normalizes quotes, and decodes the first span
carrying the keys we need.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator

from .episode import (
    Action,
    Click,
    Direction,
    Navigate,
    NavTarget,
    Point,
    Press,
    Screen,
    Scroll,
    Status,
    Type,
)


class Recovery(str, Enum):
    CODE_FENCE_STRIPPED = "CodeFenceStripped"
    SINGLE_QUOTES_NORMALIZED = "SingleQuotesNormalized"
    TRAILING_PROSE_DROPPED = "TrailingProseDropped"


@dataclass
class ParseDiagnostics:
    recovery_applied: list[Recovery] = field(default_factory=list)
    ok: bool = True
    notes: list[str] = field(default_factory=list)

    def add(self, r: Recovery) -> None:
        if r not in self.recovery_applied:
            self.recovery_applied.append(r)


class PlanParseError(ValueError):
    def __init__(self, message: str, diagnostics: ParseDiagnostics | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or ParseDiagnostics()
        self.diagnostics.ok = False


class ActionParseError(ValueError):
    """Model text did not yield a usable action."""


class UnknownActionError(ActionParseError):
    """``action_type`` outside the closed action set."""


@dataclass(frozen=True, slots=True)
class Plan:
    steps: tuple[str, ...]
    raw: str


@dataclass(frozen=True, slots=True)
class ChosenStep:
    text: str


# --- object extraction -----------------------------------------------------

_FENCE = re.compile(r"```[ \t]*(?:json|JSON|python)?[ \t]*\n?(.*?)(?:```|\Z)", re.DOTALL)
_CLOSERS = frozenset(",:}]")


def _closes_string(text: str, i: int) -> bool:
    """Whether the quote at ``i`` ends a string (vs. an inner apostrophe)."""
    j = i + 1
    n = len(text)
    while j < n and text[j] in " \t\r\n":
        j += 1
    return j >= n or text[j] in _CLOSERS


def _balanced_spans(text: str) -> Iterator[tuple[int, int]]:
    start = text.find("{")
    while start != -1:
        depth = 0
        delim = None
        i = start
        end = -1
        n = len(text)
        while i < n:
            ch = text[i]
            if delim is not None:
                if ch == "\\":
                    i += 2
                    continue
                if ch == delim and _closes_string(text, i):
                    delim = None
            elif ch in "'\"":
                delim = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    end = i + 1
                    break
            i += 1
        if end == -1:
            # unbalanced from here; a later brace may still open a clean object
            start = text.find("{", start + 1)
            continue
        yield start, end
        start = text.find("{", end)


def _to_json(s: str) -> tuple[str, bool]:
    """Rewrite pseudo-JSON with any quote style into double-quoted JSON.

    Also reports whether any string was single-quoted.
    """
    out: list[str] = []
    single = False
    delim = None
    i = 0
    n = len(s)
    while i < n:
        ch = s[i]
        if delim is None:
            if ch in "'\"":
                delim = ch
                single = single or ch == "'"
                out.append('"')
            else:
                out.append(ch)
            i += 1
            continue
        if ch == "\\" and i + 1 < n:
            nxt = s[i + 1]
            out.append("'" if nxt == "'" else ch + nxt)
            i += 2
            continue
        if ch == delim and _closes_string(s, i):
            delim = None
            out.append('"')
        elif ch == '"':
            out.append('\\"')
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        else:
            out.append(ch)
        i += 1
    if delim is not None:
        raise ValueError("unterminated string")
    return re.sub(r",\s*([}\]])", r"\1", "".join(out)), single


def _decode(candidate: str, diag: ParseDiagnostics) -> dict[str, Any] | None:
    try:
        obj = json.loads(candidate)
    except Exception:
        try:
            fixed, single = _to_json(candidate)
            obj = json.loads(fixed)
        except Exception:
            return None
        if single:
            diag.add(Recovery.SINGLE_QUOTES_NORMALIZED)
    return obj if isinstance(obj, dict) else None


def extract_object(
    text: str, required: tuple[str, ...], diag: ParseDiagnostics | None = None
) -> tuple[dict[str, Any] | None, bool]:
    """First decodable object containing all ``required`` keys.

    Returns ``(obj, any_object_seen)``; keys are matched case-insensitively
    and returned lowercased.
    """
    diag = diag if diag is not None else ParseDiagnostics()
    body = text
    m = _FENCE.search(text)
    if m and "{" in m.group(1):
        body = m.group(1)
        diag.add(Recovery.CODE_FENCE_STRIPPED)
    seen = False
    for a, b in _balanced_spans(body):
        scratch = ParseDiagnostics()
        obj = _decode(body[a:b], scratch)
        if obj is None:
            continue
        seen = True
        obj = {str(k).strip().lower(): v for k, v in obj.items()}
        if all(k in obj for k in required):
            for r in scratch.recovery_applied:
                diag.add(r)
            if body[:a].strip() or body[b:].strip():
                diag.add(Recovery.TRAILING_PROSE_DROPPED)
            return obj, True
    return None, seen


# --- plan / step -----------------------------------------------------------

_STEP_MARK = re.compile(r"(?i)(?:^|(?<=\s))(?:step\s*)?\d+\s*[.)](?!\d)\s*")


def split_plan(plan: str) -> list[str]:
    """Split ``"1. A 2. B"`` (or ``"Step 1. A ..."``) into ``["A", "B"]``."""
    if not _STEP_MARK.search(plan):
        return [plan.strip()] if plan.strip() else []
    parts = _STEP_MARK.split(plan)
    return [p.strip() for p in parts if p.strip()]


def _norm(s: str) -> str:
    return " ".join(s.lower().split())


def parse_plan_step(text: str) -> tuple[Plan, ChosenStep, ParseDiagnostics]:
    diag = ParseDiagnostics()
    obj, seen = extract_object(text, ("plan", "step"), diag)
    if obj is None:
        if seen:
            raise PlanParseError("object lacks 'plan' or 'step' key", diag)
        raise PlanParseError("no JSON object found", diag)

    raw_plan = obj["plan"]
    if isinstance(raw_plan, list):
        steps = [s for item in raw_plan for s in split_plan(str(item))]
        raw_plan = "\n".join(str(item) for item in obj["plan"])
    else:
        raw_plan = "" if raw_plan is None else str(raw_plan)
        steps = split_plan(raw_plan)
    if not steps:
        raise PlanParseError("empty plan", diag)

    step = obj["step"]
    step = "" if step is None else str(step)
    if not step.strip():
        raise PlanParseError("empty step", diag)
    # a step missing from its own plan is accepted but noted
    if not any(_norm(step) in _norm(s) or _norm(s) in _norm(step) for s in steps):
        diag.notes.append("chosen step not found in plan")
    return Plan(tuple(steps), raw_plan), ChosenStep(step), diag


def render_plan_step(plan: Plan, step: ChosenStep) -> str:
    """Well-formed model output for ``plan``/``step`` (scripted backends)."""
    numbered = " ".join(f"{i}. {s}" for i, s in enumerate(plan.steps, start=1))
    return json.dumps({"plan": numbered, "step": step.text}, ensure_ascii=False)


# --- actions ---------------------------------------------------------------


def action_from_object(obj: dict[str, Any]) -> Action:
    kind = obj.get("action_type")
    if not isinstance(kind, str):
        raise ActionParseError("action_type is not a string")
    kind = kind.strip().lower()
    if kind == "click":
        idx = obj.get("idx")
        if isinstance(idx, str) and idx.strip().isdigit():
            idx = int(idx.strip())
        if isinstance(idx, float) and idx.is_integer():
            idx = int(idx)
        if isinstance(idx, bool) or not isinstance(idx, int) or idx < 0:
            raise ActionParseError("click requires a non-negative integer idx")
        return Click(idx=idx)
    if kind == "scroll":
        d = obj.get("direction")
        if not isinstance(d, str) or d.strip().lower() not in Direction._value2member_map_:
            raise ActionParseError("scroll requires direction in up/down/left/right")
        return Scroll(Direction(d.strip().lower()))
    if kind == "type":
        t = obj.get("text")
        if not isinstance(t, str):
            raise ActionParseError("type requires text")
        return Type(t)
    if kind == "navigate_home":
        return Navigate(NavTarget.HOME)
    if kind == "navigate_back":
        return Navigate(NavTarget.BACK)
    if kind == "press_enter":
        return Press()
    if kind == "status_complete":
        return Status()
    raise UnknownActionError(f"unknown action_type {kind!r}")


def parse_action(text: str) -> Action:
    """Parse the first ``{'action_type': ...}`` object in ``text``."""
    obj, seen = extract_object(text, ("action_type",))
    if obj is None:
        raise ActionParseError(
            "object lacks 'action_type'" if seen else "no JSON object found"
        )
    return action_from_object(obj)


def split_thought(text: str) -> tuple[str, str]:
    """Split a ReAct answer into ``(thought, action_text)``."""
    m = re.search(r"(?im)^\s*action\s*:", text)
    if m:
        thought, rest = text[: m.start()], text[m.end():]
    else:
        brace = text.find("{")
        thought, rest = (text, "") if brace == -1 else (text[:brace], text[brace:])
    thought = re.sub(r"(?i)^\s*thought\s*:\s*", "", thought).strip()
    return thought, rest.strip()


# --- action descriptions ---------------------------------------------------


def describe_action(a: Action, s: Screen | None = None) -> str:
    if isinstance(a, Click):
        if a.idx is None:
            return f"click [{a.point.x:.3f}, {a.point.y:.3f}]"
        el = s.element(a.idx) if s is not None else None
        if el is not None and el.text:
            return f"click [{el.text}]"
        return f"click [{a.idx}]"
    if isinstance(a, Scroll):
        return f"scroll {a.direction.value}"
    if isinstance(a, Type):
        return "type"
    return a.action_type


_DESC_CLICK = re.compile(r"(?is)^click\s*\[(.*)\]$")
_DESC_SCROLL = re.compile(r"(?i)^scroll\s+(up|down|left|right)$")
_DESC_TYPE = re.compile(r"(?is)^type(?:\s+\[?(.*?)\]?)?$")
_COMPLETE = re.compile(r"(?i)^mark the task as complet")


def action_from_description(desc: str, s: Screen | None = None) -> Action:
    """Parse the action-description grammar back into an action.

    ``click [<label>]`` resolves to the first element whose text equals
    the label when a screen is given. Also accepts ``type <text>`` and
    the completion step phrase of the planning template.
    """
    d = " ".join(desc.strip().rstrip(".").split())
    m = _DESC_CLICK.match(d)
    if m:
        target = m.group(1).strip()
        if target.isdigit():
            return Click(idx=int(target))
        xy = re.fullmatch(r"([0-9.]+)\s*,\s*([0-9.]+)", target)
        if xy:
            try:
                return Click(point=Point(float(xy.group(1)), float(xy.group(2))))
            except ValueError:
                pass
        if s is not None:
            for el in s.elements:
                if el.text and el.text.strip().lower() == target.lower():
                    return Click(idx=el.idx)
        raise ActionParseError(f"cannot resolve click target {target!r}")
    m = _DESC_SCROLL.match(d)
    if m:
        return Scroll(Direction(m.group(1).lower()))
    m = _DESC_TYPE.match(d)
    if m:
        return Type(m.group(1) or "")
    low = d.lower()
    if low in ("navigate_home", "navigate home"):
        return Navigate(NavTarget.HOME)
    if low in ("navigate_back", "navigate back"):
        return Navigate(NavTarget.BACK)
    if low in ("press_enter", "press enter"):
        return Press()
    if low in ("status_complete", "status complete") or _COMPLETE.match(d):
        return Status()
    raise ActionParseError(f"not an action description: {desc!r}")


def description_variant(desc: str) -> str:
    """Action type named by a description, without resolving click labels."""
    d = desc.strip()
    if _DESC_CLICK.match(d):
        return "click"
    return action_from_description(d).action_type
