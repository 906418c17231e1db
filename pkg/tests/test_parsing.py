from __future__ import annotations

import json
import random
import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES, text_el
from dpot.episode import Click, Direction, Navigate, NavTarget, Press, Screen, Scroll, Status, Type
from dpot.parsing import (
    ActionParseError,
    ChosenStep,
    Plan,
    PlanParseError,
    UnknownActionError,
    action_from_description,
    describe_action,
    description_variant,
    parse_action,
    parse_plan_step,
    render_plan_step,
    split_plan,
    split_thought,
)

CORPUS = [json.loads(line) for line in (FIXTURES / "parser_corpus.jsonl").read_text().splitlines() if line]
ERRORS = {"PlanParseError": PlanParseError, "ActionParseError": ActionParseError,
          "UnknownActionError": UnknownActionError}


def run_case(case):
    """Actual outcome of a corpus case, in the corpus's ``expect`` shape."""
    try:
        if case["kind"] == "plan":
            plan, step, diag = parse_plan_step(case["input"])
            out = {"steps": list(plan.steps), "step": step.text,
                   "recovery": [r.value for r in diag.recovery_applied]}
            if "notes" in case["expect"]:
                out["notes"] = diag.notes
            return out
        return {"action": parse_action(case["input"]).to_dict()}
    except (PlanParseError, ActionParseError) as exc:
        return {"error": type(exc).__name__}


def test_corpus_is_large_and_covers_the_noise_kinds():
    assert len(CORPUS) >= 25
    names = {c["name"] for c in CORPUS}
    assert len(names) == len(CORPUS)
    recoveries = {r for c in CORPUS for r in c["expect"].get("recovery", [])}
    assert recoveries == {"CodeFenceStripped", "SingleQuotesNormalized", "TrailingProseDropped"}
    errors = {c["expect"].get("error") for c in CORPUS} - {None}
    assert errors == set(ERRORS)


@pytest.mark.parametrize("case", CORPUS, ids=[c["name"] for c in CORPUS])
def test_corpus_case(case):
    assert run_case(case) == case["expect"]


def test_plan_errors_carry_failed_diagnostics():
    with pytest.raises(PlanParseError) as info:
        parse_plan_step("nothing here")
    assert info.value.diagnostics.ok is False


def test_unknown_action_is_a_parse_error_subclass():
    with pytest.raises(ActionParseError):
        parse_action("{'action_type': 'swipe'}")


@pytest.mark.parametrize("plan,expected", [
    ("1. A 2. B 3. C", ["A", "B", "C"]),
    ("Step 1. Open app Step 2. Tap", ["Open app", "Tap"]),
    ("Step 1: nothing numbered", ["Step 1: nothing numbered"]),
    ("Open the app", ["Open the app"]),
    ("1. Go to page 12. 2. Done", ["Go to page", "Done"]),
])
def test_split_plan(plan, expected):
    assert split_plan(plan) == expected


step_text = st.text(string.ascii_letters + " ,'", min_size=1, max_size=25).filter(lambda s: s.strip())


@given(st.lists(step_text, min_size=1, max_size=6), st.data())
def test_render_then_parse_is_identity(steps, data):
    steps = [" ".join(s.split()) for s in steps]
    chosen = data.draw(st.sampled_from(steps))
    plan, step, _ = parse_plan_step(render_plan_step(Plan(tuple(steps), ""), ChosenStep(chosen)))
    assert list(plan.steps) == steps
    assert step.text == chosen


def test_split_thought():
    t, a = split_thought('Thought: look for the box\nAction: {"action_type": "press_enter"}')
    assert t == "look for the box" and parse_action(a) == Press()
    t, a = split_thought('I think {"action_type": "navigate_back"}')
    assert t == "I think" and parse_action(a) == Navigate(NavTarget.BACK)


# --- descriptions ----------------------------------------------------------


def _screen():
    els = [text_el(i, "", (0, i * 0.1, 0.1, i * 0.1 + 0.05)) for i in range(10)]
    els = [e if e.idx != 5 else text_el(5, "Shopping", (0, 0.5, 0.1, 0.55)) for e in els]
    els = [e if e.idx != 9 else e.__class__(9, "icon", "", e.bbox, "ICON_STAR") for e in els]
    return Screen(tuple(els))


def test_click_descriptions_use_text_or_index():
    s = _screen()
    assert describe_action(Click(idx=9), s) == "click [9]"
    assert describe_action(Click(idx=5), s) == "click [Shopping]"
    assert describe_action(Click(idx=5)) == "click [5]"


@pytest.mark.parametrize("action,desc", [
    (Scroll(Direction.UP), "scroll up"),
    (Type("hello"), "type"),
    (Navigate(NavTarget.HOME), "navigate_home"),
    (Navigate(NavTarget.BACK), "navigate_back"),
    (Press(), "press_enter"),
    (Status(), "status_complete"),
])
def test_other_descriptions(action, desc):
    assert describe_action(action) == desc


ALL_ACTIONS = [Click(idx=5), Click(idx=9), Scroll(Direction.LEFT), Type("q"),
               Navigate(NavTarget.HOME), Navigate(NavTarget.BACK), Press(), Status()]


@pytest.mark.parametrize("action", ALL_ACTIONS, ids=lambda a: a.action_type)
def test_descriptions_reparse_to_same_variant(action):
    s = _screen()
    desc = describe_action(action, s)
    assert description_variant(desc) == action.action_type
    back = action_from_description(desc, s)
    assert type(back) is type(action)
    if isinstance(action, Click):
        assert back == action


def test_description_grammar_extras():
    assert action_from_description("type [nike shoes]") == Type("nike shoes")
    assert action_from_description("Mark the task as complet") == Status()
    assert action_from_description("click [0.250, 0.500]").point.x == 0.25
    with pytest.raises(ActionParseError):
        action_from_description("click [Nowhere]", _screen())
    with pytest.raises(ActionParseError):
        action_from_description("tap the thing")


# --- fuzz ------------------------------------------------------------------

_ALPHABET = string.printable + "{}[]'\"`:,éλ→"


def fuzz_strings(n: int, seed: int = 0):
    rng = random.Random(seed)
    pieces = ["{", "}", "'action_type'", '"action_type"', ":", "'click'", '"idx"', "15", ",",
              "```json\n", "```", "'scroll'", "'direction'", "'up'", "\\", "'", '"', "null", "[", "]"]
    for _ in range(n):
        if rng.random() < 0.5:
            yield "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(0, 40)))
        else:
            yield "".join(rng.choice(pieces) for _ in range(rng.randint(0, 14)))


def test_parse_action_never_crashes_on_random_text():
    for text in fuzz_strings(5000, seed=1):
        try:
            parse_action(text)
        except ActionParseError:
            pass


@given(st.text(max_size=80))
def test_parse_plan_step_only_raises_its_own_error(text):
    try:
        parse_plan_step(text)
    except PlanParseError:
        pass
