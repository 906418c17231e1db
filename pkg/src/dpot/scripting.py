"""Canned model responses for scripted runs.

``oracle_responses`` answers every turn with the gold action; ``wrong_responses``
never does (and never claims completion, so runs last the whole episode).
The response sequence matches the calls :func:`dpot.agent.run_episode`
makes for the given strategy and grounding mode.
"""

from __future__ import annotations

import json

from .agent import Grounding
from .episode import (
    Action,
    Click,
    Direction,
    Episode,
    GoldStep,
    Navigate,
    NavTarget,
    Press,
    Scroll,
    Status,
    Type,
)
from .parsing import describe_action
from .prompts import StrategyKind

COMPLETE_PLAN = "1. Mark the task as complete"
COMPLETE_STEP = "Mark the task as complet"


def gold_click_index(step: GoldStep) -> int:
    """Element index of a gold click; point clicks map to the first containing box."""
    a = step.action
    if a.idx is not None:
        return a.idx
    p = step.gesture.touch if step.gesture is not None else a.point
    for el in step.screen.elements:
        if el.bbox.contains(p):
            return el.idx
    return 0


def predicted_for_gold(step: GoldStep) -> Action:
    """The action a perfect agent emits for ``step``."""
    if isinstance(step.action, Click):
        return Click(idx=gold_click_index(step))
    return step.action


def wrong_for_gold(step: GoldStep) -> Action:
    """An action that mismatches ``step`` on action type and is never Status."""
    a = step.action
    if isinstance(a, Click):
        return Scroll(Direction.UP)
    if isinstance(a, Scroll):
        return Navigate(NavTarget.HOME)
    if isinstance(a, Press):
        return Type("wrong")
    if isinstance(a, Status):
        return Click(idx=0)
    return Press()


def _step_text(action: Action) -> str:
    """Step wording that the description grammar grounds back to ``action``."""
    if isinstance(action, Status):
        return COMPLETE_STEP
    if isinstance(action, Type):
        return f"type {action.text}" if action.text else "type"
    return describe_action(action)


def _plan_text(action: Action) -> str:
    if isinstance(action, Status):
        return COMPLETE_PLAN
    return f"1. {_step_text(action)} 2. Continue until the goal is reached"


def _plan_response(action: Action) -> str:
    return json.dumps({"plan": _plan_text(action), "step": _step_text(action)})


def _action_response(action: Action) -> str:
    return json.dumps(action.to_dict())


def _react_response(action: Action, turn: int, goal: str) -> str:
    thought = (
        f"This is turn {turn + 1} of working toward the goal '{goal}'. I look at the "
        f"elements on the current screen, compare them with what I did before, and "
        f"decide that the next thing to do is: {describe_action(action)}."
    )
    return f"Thought: {thought}\nAction: {_action_response(action)}"


def responses_for(
    actions: list[Action],
    strategy: StrategyKind,
    grounding: Grounding | str = Grounding.MODEL,
    goal: str = "",
) -> list[str]:
    """Responses that make a run predict ``actions`` turn by turn."""
    grounding = Grounding(grounding)
    out: list[str] = []
    for turn, action in enumerate(actions):
        if strategy.name in ("dpot", "dpot-ref", "dp"):
            out.append(_plan_response(action))
            if grounding is Grounding.MODEL:
                out.append(_action_response(action))
        elif strategy.name == "sp":
            if turn == 0:
                out.append(json.dumps({"plan": "1. Open the app 2. Find the target 3. Finish",
                                       "step": "Open the app"}))
            out.append(_action_response(action))
        elif strategy.name == "react":
            out.append(_react_response(action, turn, goal))
        else:
            out.append(_action_response(action))
    return out


def oracle_responses(e: Episode, strategy: StrategyKind,
                     grounding: Grounding | str = Grounding.MODEL) -> list[str]:
    return responses_for([predicted_for_gold(s) for s in e.steps], strategy, grounding, e.goal)


def wrong_responses(e: Episode, strategy: StrategyKind,
                    grounding: Grounding | str = Grounding.MODEL) -> list[str]:
    return responses_for([wrong_for_gold(s) for s in e.steps], strategy, grounding, e.goal)
