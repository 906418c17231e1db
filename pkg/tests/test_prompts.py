from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import text_el
from dpot.episode import Screen
from dpot.gateway import estimate_tokens
from dpot.prompts import (
    DP,
    DPOT,
    NP,
    SP,
    TEMPLATE_NAMES,
    BaselineContext,
    ContextMismatchError,
    ReActRound,
    ReferenceBlock,
    ReferenceEntry,
    Role,
    StrategyKind,
    build_baseline_prompt,
    build_grounding_prompt,
    build_planning_prompt,
    build_planning_prompt_with_reference,
    export_templates,
    history_line,
    react,
)
from dpot.screen import serialize_screen

GOAL = "check out phone information"
# the three-line previous-actions block of the worked prompt example
EXAMPLE_HISTORY = [history_line(0, "scroll up"), history_line(1, "click []"), history_line(2, "scroll up")]


@pytest.fixture
def markup(settings_screen):
    return serialize_screen(settings_screen)


def _ref(goal, n):
    descs = tuple(["click [9]"] * (n - 1) + ["status_complete"])
    return ReferenceEntry(goal, "a phone home screen", descs)


def test_planning_prompt_sections_in_order(markup):
    steps = ["Open Settings", "Scroll to About phone", "Tap About phone"]
    text = build_planning_prompt(GOAL, markup, EXAMPLE_HISTORY, steps).text()
    order = ["Imagine that you are a robot operating a mobile", f"**Your ultimate goal is: {GOAL}.**",
             "The current on-screen input is:\nScreen:", "Previous Actions:", "Previous Steps:",
             "A JSON dictionary strictly following the format"]
    positions = [text.index(s) for s in order]
    assert positions == sorted(positions)
    for line in EXAMPLE_HISTORY:
        assert line in text
    assert '{"step_idx": 1, "action_description": "click []"}' in text
    assert "Step 3. Tap About phone" in text
    assert "'plan'" in text and "'step'" in text


def test_first_turn_uses_none_placeholders(markup):
    text = build_planning_prompt(GOAL, markup, [], []).text()
    assert "Previous Actions:\nNone" in text
    assert "Previous Steps:\nNone" in text


def test_history_cap_drops_oldest(markup):
    lines = [history_line(i, f"click [{i}]") for i in range(5)]
    text = build_planning_prompt(GOAL, markup, lines, [], history_cap=2).text()
    assert "click [0]" not in text and "click [3]" in text and "click [4]" in text
    assert GOAL in text and "Screen:" in text


def test_history_section_grows_one_line_per_turn(markup):
    lines = []
    prev = build_planning_prompt(GOAL, markup, lines, []).text().count("\n")
    for i in range(6):
        lines.append(history_line(i, "scroll up"))
        now = build_planning_prompt(GOAL, markup, lines, []).text().count("\n")
        # the first real line replaces the "None" placeholder
        assert now - prev == (0 if i == 0 else 1)
        prev = now


def test_reference_prompt(markup):
    refs = ReferenceBlock((_ref("turn on wifi", 9), _ref("check battery", 10)))
    text = build_planning_prompt_with_reference(GOAL, markup, [], [], refs).text()
    assert "turn on wifi" in text and "check battery" in text
    assert text.count('"status_complete"') == 2
    assert text.count('"action_description"') == 19
    assert "two similar examples" in text
    assert text.index("Goal: turn on wifi") < text.index("The current on-screen input is:")


def test_single_reference_has_no_placeholder(markup):
    refs = ReferenceBlock((_ref("turn on wifi", 3),))
    text = build_planning_prompt_with_reference(GOAL, markup, [], [], refs).text()
    assert text.count("Goal: ") == 1 and "one similar example " in text


def test_reference_prompt_rejects_empty_block(markup):
    with pytest.raises(ValueError):
        build_planning_prompt_with_reference(GOAL, markup, [], [], ReferenceBlock(()))


def test_missing_caption_renders_fallback(markup):
    refs = ReferenceBlock((ReferenceEntry("x goal", "", ("status_complete",)),))
    assert "Caption: (no caption)" in build_planning_prompt_with_reference(GOAL, markup, [], [], refs).text()


def test_grounding_prompt(markup):
    g = build_grounding_prompt("Tap on the 'Settings' icon", markup, GOAL).text()
    assert '"action_type"' in g
    for t in ("click", "scroll", "type", "navigate_home", "navigate_back", "press_enter", "status_complete"):
        assert t in g
    assert '<p id=1 class="text" alt="Settings">' in g
    plan = build_planning_prompt(GOAL, markup, [], []).text()
    assert estimate_tokens(g) < estimate_tokens(plan)
    with pytest.raises(ValueError):
        build_grounding_prompt("  ", markup, GOAL)


def _rounds(n):
    return tuple(ReActRound(f"Observation:\nScreen {i}", f"thought {i}", f'{{"action_type": "press_enter"}} #{i}')
                 for i in range(1, n + 1))


def test_react_history_two_keeps_last_two_rounds(markup):
    b = build_baseline_prompt(react(2), GOAL, markup, BaselineContext(rounds=_rounds(5), turn=5))
    text = b.text()
    assert "thought 4" in text and "thought 5" in text
    assert "thought 3" not in text and "thought 1" not in text
    roles = [m.role for m in b.messages]
    assert roles == [Role.SYSTEM, Role.USER, Role.ASSISTANT, Role.USER, Role.ASSISTANT, Role.USER]
    assert b.messages[-1].text.startswith("Observation:\nScreen:")


def test_react_unbounded_keeps_everything(markup):
    text = build_baseline_prompt(react(None), GOAL, markup, BaselineContext(rounds=_rounds(5))).text()
    assert all(f"thought {i}" in text for i in range(1, 6))


def test_react_zero_history(markup):
    b = build_baseline_prompt(react(0), GOAL, markup, BaselineContext(rounds=_rounds(3)))
    assert len(b.messages) == 2


def test_react_tokens_non_decreasing_with_turns(markup):
    sizes = [estimate_tokens(build_baseline_prompt(react(None), GOAL, markup,
                                                   BaselineContext(rounds=_rounds(n))).text())
             for n in range(8)]
    assert sizes == sorted(sizes)


def test_static_plan_is_embedded_verbatim(markup, settings_screen):
    plan = "1. Open Settings 2. Tap About phone"
    t2 = build_baseline_prompt(SP, GOAL, markup, BaselineContext(frozen_plan=plan, turn=2)).text()
    t3 = build_baseline_prompt(SP, GOAL, markup, BaselineContext(frozen_plan=plan, turn=3)).text()
    assert plan in t2 and t2 == t3


def test_no_plan_and_plan_only_variants(markup):
    np_text = build_baseline_prompt(NP, GOAL, markup).text()
    assert "'plan'" not in np_text and '"action_type"' in np_text
    dp_text = build_baseline_prompt(DP, GOAL, markup).text()
    assert "'plan'" in dp_text
    # the section headers are absent (the output format itself mentions "Previous Steps")
    assert "Previous Actions:" not in dp_text and "Previous Steps:" not in dp_text


@pytest.mark.parametrize("kind,ctx", [
    (SP, BaselineContext()),                                  # no frozen plan
    (NP, BaselineContext(frozen_plan="1. x")),
    (react(2), BaselineContext()),                            # no rounds
    (DP, BaselineContext(rounds=())),
    (DPOT, BaselineContext()),
])
def test_mismatched_context(markup, kind, ctx):
    with pytest.raises(ContextMismatchError):
        build_baseline_prompt(kind, GOAL, markup, ctx)


def test_image_goes_on_final_user_message(markup):
    b = build_baseline_prompt(react(None), GOAL, markup,
                              BaselineContext(rounds=_rounds(2), image_ref="shot.png"))
    assert [m.image_ref for m in b.messages] == [None] * (len(b.messages) - 1) + ["shot.png"]
    p = build_planning_prompt(GOAL, markup, [], [], image_ref="shot.png")
    assert p.messages[-1].image_ref == "shot.png"


goals = st.text(st.characters(whitelist_categories=("Ll", "Lu", "Nd", "Zs")), min_size=4, max_size=30) \
    .map(lambda s: "goal " + s.strip()).filter(lambda s: len(s) > 6)


@settings(max_examples=40, deadline=None)
@given(goal=goals)
def test_goal_appears_exactly_once_in_every_builder(goal):
    markup = serialize_screen(Screen((text_el(0, "OK", (0, 0, 1, 1)),)))
    refs = ReferenceBlock((ReferenceEntry("ref target one", "c", ("status_complete",)),))
    bundles = [
        build_planning_prompt(goal, markup, ['{"step_idx": 0}'], ["s"]),
        build_planning_prompt_with_reference(goal, markup, [], [], refs),
        build_grounding_prompt("do it", markup, goal),
        build_baseline_prompt(NP, goal, markup),
        build_baseline_prompt(SP, goal, markup, BaselineContext(frozen_plan="1. x")),
        build_baseline_prompt(DP, goal, markup),
        build_baseline_prompt(react(1), goal, markup, BaselineContext(rounds=_rounds(2))),
    ]
    for b in bundles:
        assert b.text().count(goal) == 1
    # builders are pure
    assert build_planning_prompt(goal, markup, [], []) == build_planning_prompt(goal, markup, [], [])


def test_strategy_labels():
    assert react(2).label == "react-2" and react(None).label == "react-inf"
    for label in ("np", "sp", "dp", "dpot", "dpot-ref", "react-0", "react-inf"):
        assert StrategyKind.from_label(label).label == label
    with pytest.raises(ValueError):
        StrategyKind("dpot", 2)
    with pytest.raises(ValueError):
        StrategyKind("cot")


def test_templates_export(tmp_path):
    paths = export_templates(tmp_path)
    assert sorted(p.name for p in paths) == sorted(TEMPLATE_NAMES)
    assert "mark the status as complete" in (tmp_path / "framing.txt").read_text()
