from __future__ import annotations

import json

import pytest

from conftest import icon_el, make_episode, tap, text_el
from dpot.agent import (
    UNKNOWN_ACTION,
    EpisodeRunner,
    ExecutionHistory,
    ExternalPlans,
    Grounding,
    HistoryError,
    PlanRecord,
    RunConfig,
    Termination,
    history_from_trace,
    is_terminal,
    run_episode,
    run_episodes,
    update_history,
)
from dpot.episode import (
    Click,
    Direction,
    GoldGesture,
    GoldStep,
    Point,
    Press,
    Screen,
    Scroll,
    Status,
    Type,
    generate_synthetic,
)
from dpot.evaluation import score_episode
from dpot.gateway import GatewayError, ScriptedBackend, ScriptExhaustedError
from dpot.parsing import ChosenStep
from dpot.prompts import DP, DPOT, DPOT_REF, NP, SP, react
from dpot.retrieval import Retriever
from dpot.scripting import oracle_responses, responses_for, wrong_responses


def _screen():
    return Screen(tuple(
        [text_el(i, f"item {i}", (0.1, 0.05 + i * 0.08, 0.6, 0.1 + i * 0.08)) for i in range(9)]
        + [icon_el(9, "ICON_SETTINGS", (0.7, 0.8, 0.9, 0.9))]
    ))


def five_step_episode(eid="five"):
    s = _screen()
    up = GoldGesture(Point(0.5, 0.8), Point(0.5, 0.2))
    return make_episode(eid, [
        GoldStep(s, Click(idx=9), tap(0.8, 0.85)),
        GoldStep(s, Scroll(Direction.UP), up),
        GoldStep(s, Type("wifi")),
        GoldStep(s, Press()),
        GoldStep(s, Status()),
    ])


# --- history ---------------------------------------------------------------


def test_first_update_matches_prompt_example():
    h = update_history(ExecutionHistory(), 0, Click(idx=9), None, _screen())
    assert h.lines() == ['{"step_idx": 0, "action_description": "click [9]"}']


def test_three_updates_render_the_example_block():
    s = Screen((icon_el(0, "ICON_X", (0, 0, 0.1, 0.1)),))
    h = ExecutionHistory()
    h = update_history(h, 0, Scroll(Direction.UP), ChosenStep("swipe"), s)
    h = update_history(h, 1, Click(idx=0), ChosenStep("tap"), s)
    h = update_history(h, 2, Scroll(Direction.UP), None, s)
    assert h.lines() == [
        '{"step_idx": 0, "action_description": "scroll up"}',
        '{"step_idx": 1, "action_description": "click [0]"}',
        '{"step_idx": 2, "action_description": "scroll up"}',
    ]
    assert h.steps_taken == ("swipe", "tap")


def test_history_prefix_is_preserved():
    h = ExecutionHistory()
    for n in range(1, 12):
        before = h
        h = update_history(h, n - 1, Press() if n % 2 else None, None, None)
        assert len(h) == n and h.entries[:-1] == before.entries
    assert h.entries[1].action_description == UNKNOWN_ACTION


def test_history_turn_mismatch_fails_loudly():
    with pytest.raises(HistoryError):
        update_history(ExecutionHistory(), 1, Press(), None, None)


# --- termination -----------------------------------------------------------


def test_is_terminal_verdicts():
    e = generate_synthetic(1, 1).episodes[0]
    long_e = make_episode("long", [e.steps[0]] * 20)
    assert is_terminal(Status(), 0, e, RunConfig()) is Termination.STATUS_COMPLETE
    assert is_terminal(Press(), 14, long_e, RunConfig(max_turns=15)) is Termination.MAX_TURNS
    assert is_terminal(Press(), 13, long_e, RunConfig(max_turns=15)) is None
    assert is_terminal(Press(), len(e) - 1, e, RunConfig()) is Termination.EPISODE_END
    assert is_terminal(None, len(e) - 2, e, RunConfig()) is None
    # limit and recording end coincide: the recording end is reported
    assert is_terminal(Press(), len(e) - 1, e, RunConfig(max_turns=len(e))) is Termination.EPISODE_END


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(max_turns=0)
    with pytest.raises(ValueError):
        RunConfig(strategy=NP, plan_source=ExternalPlans({}))


# --- runs ------------------------------------------------------------------


@pytest.mark.parametrize("strategy,grounding,calls", [
    (DPOT, "model", 2), (DPOT, "grammar", 1), (DP, "model", 2), (DP, "grammar", 1),
    (NP, "model", 1), (react(2), "model", 1), (react(None), "model", 1),
])
def test_oracle_run_and_calls_per_turn(strategy, grounding, calls):
    e = five_step_episode()
    cfg = RunConfig(strategy=strategy, grounding=grounding)
    backend = ScriptedBackend(oracle_responses(e, strategy, grounding))
    trace = run_episode(e, cfg, backend)
    assert trace.terminated_by is Termination.STATUS_COMPLETE
    assert len(trace.turns) == len(e)
    assert [r.calls for r in trace.turns] == [calls] * len(e)
    assert len(backend) == 0
    assert score_episode(trace, e).score == 100.0
    assert trace.strategy == strategy.label


def test_np_has_no_plans_and_dpot_always_plans():
    e = five_step_episode()
    t_np = run_episode(e, RunConfig(strategy=NP), ScriptedBackend(oracle_responses(e, NP)))
    assert all(r.plan is None and r.step is None for r in t_np.turns)
    t_dp = run_episode(e, RunConfig(), ScriptedBackend(oracle_responses(e, DPOT)))
    assert all(r.plan is not None and r.step is not None for r in t_dp.turns)
    assert t_dp.turns[-1].plan.steps == ("Mark the task as complete",)


def test_static_plan_is_requested_once():
    e = five_step_episode()
    be = ScriptedBackend(oracle_responses(e, SP))
    trace = run_episode(e, RunConfig(strategy=SP), be)
    assert [r.calls for r in trace.turns] == [2, 1, 1, 1, 1]
    plans = {be.calls[i].messages[0].text.split("follow it:\n")[1].split("\nThe current")[0]
             for i in range(1, len(be.calls))}
    assert len(plans) == 1


def test_max_turns_cuts_the_run():
    e = five_step_episode()
    trace = run_episode(e, RunConfig(max_turns=2), ScriptedBackend(oracle_responses(e, DPOT)))
    assert len(trace.turns) == 2 and trace.terminated_by is Termination.MAX_TURNS


def test_wrong_script_runs_to_the_end():
    e = five_step_episode()
    trace = run_episode(e, RunConfig(), ScriptedBackend(wrong_responses(e, DPOT)))
    assert trace.terminated_by is Termination.EPISODE_END
    assert score_episode(trace, e).score == 0.0


def test_early_status_stops_the_run():
    e = five_step_episode()
    responses = responses_for([Click(idx=9), Status()], DPOT)
    trace = run_episode(e, RunConfig(), ScriptedBackend(responses))
    assert len(trace.turns) == 2 and trace.terminated_by is Termination.STATUS_COMPLETE


def test_plan_parse_failure_falls_back_to_direct_action():
    e = five_step_episode()
    rest = oracle_responses(e, DPOT)[2:]
    be = ScriptedBackend(["I cannot plan this.", '{"action_type": "click", "idx": 9}', *rest])
    trace = run_episode(e, RunConfig(), be)
    first = trace.turns[0]
    assert first.plan is None and first.action == Click(idx=9)
    assert first.raw_plan_text == "I cannot plan this."
    assert any("plan parse failed" in d for d in first.diagnostics)
    assert score_episode(trace, e).score == 100.0


def test_unknown_action_is_recorded_not_fatal():
    e = five_step_episode()
    responses = oracle_responses(e, NP)
    responses[0] = "{'action_type': 'swipe'}"
    trace = run_episode(e, RunConfig(strategy=NP), ScriptedBackend(responses))
    assert trace.turns[0].action is None
    assert trace.turns[0].action_error.startswith("UnknownAction")
    assert trace.turns[0].history_entry.action_description == UNKNOWN_ACTION
    assert score_episode(trace, e).correct == 4


def test_gateway_failure_aborts_with_partial_trace():
    class Flaky:
        identity = "flaky"

        def __init__(self, ok):
            self.inner = ScriptedBackend(ok)

        def complete(self, bundle, cfg):
            if len(self.inner) == 0:
                raise GatewayError("service unavailable")
            return self.inner.complete(bundle, cfg)

    e = five_step_episode()
    trace = run_episode(e, RunConfig(strategy=NP), Flaky(oracle_responses(e, NP)[:2]))
    assert trace.aborted and len(trace.turns) == 2 and trace.terminated_by is None
    assert "unavailable" in trace.error


def test_short_script_fails_loudly():
    e = five_step_episode()
    with pytest.raises(ScriptExhaustedError):
        run_episode(e, RunConfig(), ScriptedBackend(oracle_responses(e, DPOT)[:3]))


def test_retriever_only_for_reference_strategy():
    ds = generate_synthetic(4, 15)  # three per subset
    e = ds.episodes[0]
    with pytest.raises(ValueError):
        EpisodeRunner(e, RunConfig(strategy=DPOT_REF), ScriptedBackend([]))
    with pytest.raises(ValueError):
        EpisodeRunner(e, RunConfig(), ScriptedBackend([]), Retriever(ds))
    be = ScriptedBackend(oracle_responses(e, DPOT_REF))
    trace = run_episode(e, RunConfig(strategy=DPOT_REF), be, Retriever(ds))
    assert score_episode(trace, e).score == 100.0
    assert "similar examples as a reference" in be.calls[0].messages[0].text


def test_history_enters_the_next_prompt():
    e = five_step_episode()
    be = ScriptedBackend(oracle_responses(e, DPOT, Grounding.GRAMMAR))
    run_episode(e, RunConfig(grounding=Grounding.GRAMMAR), be)
    third = be.calls[2].messages[0].text
    assert '{"step_idx": 0, "action_description": "click [9]"}' in third
    assert '{"step_idx": 1, "action_description": "scroll up"}' in third
    assert "Step 2. scroll up" in third
    assert "Previous Actions:\nNone" in be.calls[0].messages[0].text


def test_observer_sees_the_growing_history():
    e = five_step_episode()
    seen = []
    run_episode(e, RunConfig(), ScriptedBackend(oracle_responses(e, DPOT)),
                observer=lambda turn, h: seen.append((turn, h)))
    for turn, h in seen:
        assert len(h) == turn + 1
        assert json.loads(h.lines()[turn])["step_idx"] == turn


def test_external_plans(tmp_path):
    e = five_step_episode()
    path = tmp_path / "plans.jsonl"
    path.write_text(
        json.dumps({"episode_id": e.id, "turn": 0, "plan": "1. click [9] 2. scroll up", "step": "click [9]"}) + "\n"
        + json.dumps({"episode_id": e.id, "turn": 1, "plan": "1. scroll up 2. type wifi"}) + "\n"
    )
    plans = ExternalPlans.load(path)
    assert plans.lookup(e.id, 0) == PlanRecord("1. click [9] 2. scroll up", "click [9]")
    assert plans.lookup(e.id, 3) == PlanRecord("1. scroll up 2. type wifi")
    assert plans.lookup("other", 0) is None

    cfg = RunConfig(plan_source=plans, grounding=Grounding.GRAMMAR)
    # turn 0 needs no call; later turns still ask the model for a step
    responses = oracle_responses(e, DPOT, Grounding.GRAMMAR)[1:]
    be = ScriptedBackend(responses)
    trace = run_episode(e, cfg, be)
    assert trace.turns[0].calls == 0 and trace.turns[0].plan.steps == ("click [9]", "scroll up")
    assert trace.turns[1].plan.raw == "1. scroll up 2. type wifi"
    assert "Plan to follow:\n1. scroll up 2. type wifi" in be.calls[0].messages[0].text
    assert score_episode(trace, e).score == 100.0


def test_run_episodes_keeps_input_order_in_parallel():
    ds = generate_synthetic(11, 12)
    got = []
    traces = run_episodes(ds, RunConfig(), lambda e: ScriptedBackend(oracle_responses(e, DPOT)),
                          parallel=4, on_trace=got.append)
    assert [t.episode_id for t in traces] == [e.id for e in ds]
    assert sorted(t.episode_id for t in got) == sorted(e.id for e in ds)


def test_history_from_trace():
    e = five_step_episode()
    trace = run_episode(e, RunConfig(), ScriptedBackend(oracle_responses(e, DPOT)))
    h = history_from_trace(trace)
    assert len(h) == 5 and h.steps_taken[-1] == "Mark the task as complet"


def test_react_thoughts_are_kept_verbatim():
    e = five_step_episode()
    responses = oracle_responses(e, react(None))
    trace = run_episode(e, RunConfig(strategy=react(None)), ScriptedBackend(responses))
    for r, raw in zip(trace.turns, responses):
        assert r.thought == raw.split("\nAction:")[0].removeprefix("Thought: ")
