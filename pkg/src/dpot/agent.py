"""Episode runner: plan, pick a step, ground it, extend the history.

Runs replay an :class:`~dpot.episode.Episode`: at turn ``i`` the agent
sees gold screen ``i`` whatever it predicted before, and predictions are
scored afterwards by :mod:`dpot.evaluation`.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .episode import Action, Episode, Screen, Status
from .gateway import (
    Backend,
    DecodingConfig,
    GatewayError,
    ScriptExhaustedError,
    UsageStats,
    complete,
)
from .parsing import (
    ActionParseError,
    ChosenStep,
    Plan,
    PlanParseError,
    UnknownActionError,
    action_from_description,
    describe_action,
    parse_action,
    parse_plan_step,
    split_plan,
    split_thought,
)
from .prompts import (
    DP,
    DPOT,
    NP,
    SP,
    BaselineContext,
    PromptBundle,
    ReActRound,
    StrategyKind,
    build_baseline_prompt,
    build_grounding_prompt,
    build_planning_prompt,
    build_planning_prompt_with_reference,
    build_static_plan_request,
    history_line,
    observation_text,
)
from .screen import ScreenMarkup, serialize_screen

logger = logging.getLogger(__name__)

UNKNOWN_ACTION = "unknown_action"


class Termination(str, Enum):
    STATUS_COMPLETE = "StatusComplete"
    MAX_TURNS = "MaxTurns"
    EPISODE_END = "EpisodeEnd"


class Grounding(str, Enum):
    MODEL = "model"
    GRAMMAR = "grammar"


# --- history ---------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class HistoryEntry:
    step_idx: int
    action_description: str

    def render(self) -> str:
        return history_line(self.step_idx, self.action_description)


@dataclass(frozen=True, slots=True)
class ExecutionHistory:
    entries: tuple[HistoryEntry, ...] = ()
    steps_taken: tuple[str, ...] = ()

    def lines(self) -> list[str]:
        return [e.render() for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


class HistoryError(RuntimeError):
    pass


def update_history(
    h: ExecutionHistory,
    turn: int,
    a: Action | None,
    step: ChosenStep | None,
    s: Screen | None,
) -> ExecutionHistory:
    """Append this turn's action description (and chosen step, if any)."""
    if turn != len(h.entries):
        raise HistoryError(f"history has {len(h.entries)} entries, cannot append turn {turn}")
    desc = describe_action(a, s) if a is not None else UNKNOWN_ACTION
    steps = h.steps_taken + (step.text,) if step is not None else h.steps_taken
    return ExecutionHistory(h.entries + (HistoryEntry(turn, desc),), steps)


# --- external plans --------------------------------------------------------


@dataclass(frozen=True, slots=True)
class PlanRecord:
    plan: str
    step: str | None = None


class ExternalPlans:
    """Hand-written plans keyed by ``(episode_id, turn)``.

    A turn without its own record reuses the latest earlier plan of the
    same episode; before the first record the model plans as usual.
    """

    def __init__(self, records: Mapping[tuple[str, int], PlanRecord]):
        self._records = dict(records)

    @classmethod
    def load(cls, path: str | Path) -> "ExternalPlans":
        records = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                key = (str(rec["episode_id"]), int(rec["turn"]))
                plan = str(rec["plan"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: need episode_id, turn, plan") from exc
            records[key] = PlanRecord(plan, rec.get("step"))
        return cls(records)

    def lookup(self, episode_id: str, turn: int) -> PlanRecord | None:
        for t in range(turn, -1, -1):
            rec = self._records.get((episode_id, t))
            if rec is not None:
                # an inherited record keeps the plan but not the fixed step
                return rec if t == turn else PlanRecord(rec.plan)
        return None


# --- config / trace types --------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    strategy: StrategyKind = DPOT
    max_turns: int | None = None  # None: the episode length
    decoding: DecodingConfig = field(default_factory=DecodingConfig)
    plan_source: ExternalPlans | None = None  # None: the model plans
    grounding: Grounding = Grounding.MODEL
    store_prompts: bool = False
    history_cap: int | None = None
    multimodal: bool = False

    def __post_init__(self) -> None:
        if self.max_turns is not None and self.max_turns < 1:
            raise ValueError("max_turns must be positive")
        if self.plan_source is not None and not self.strategy.plans:
            raise ValueError(f"external plans need a planning strategy, not {self.strategy.label}")
        object.__setattr__(self, "grounding", Grounding(self.grounding))

    def turn_limit(self, e: Episode) -> int:
        return len(e) if self.max_turns is None else min(self.max_turns, len(e))


@dataclass
class TurnRecord:
    turn: int
    prompt_digest: str
    action: Action | None
    usage: UsageStats
    latency: float
    calls: int
    history_entry: HistoryEntry
    raw_plan_text: str | None = None
    plan: Plan | None = None
    step: ChosenStep | None = None
    raw_action_text: str | None = None
    action_error: str | None = None
    thought: str | None = None
    diagnostics: list[str] = field(default_factory=list)
    prompts: list[str] | None = None

    @property
    def unknown_action(self) -> bool:
        return self.action is None


@dataclass
class EpisodeTrace:
    episode_id: str
    strategy: str
    turns: list[TurnRecord] = field(default_factory=list)
    terminated_by: Termination | None = None
    aborted: bool = False
    error: str | None = None


def is_terminal(a: Action | None, turn: int, e: Episode, cfg: RunConfig) -> Termination | None:
    """Why the run stops after ``turn`` (0-based), or ``None`` to continue.

    When the turn limit and the end of the recording coincide, replay
    exhaustion wins.
    """
    if isinstance(a, Status):
        return Termination.STATUS_COMPLETE
    if turn + 1 >= len(e):
        return Termination.EPISODE_END
    if cfg.max_turns is not None and turn + 1 >= cfg.max_turns:
        return Termination.MAX_TURNS
    return None


# --- runner ----------------------------------------------------------------


def prompt_digest(bundles: Sequence[PromptBundle]) -> str:
    payload = [
        [[m.role.value, m.text, m.image_ref] for m in b.messages] for b in bundles
    ]
    return hashlib.sha256(json.dumps(payload, ensure_ascii=False).encode("utf-8")).hexdigest()


class _Turn:
    """Per-turn accumulator for gateway calls."""

    def __init__(self, backend: Backend, cfg: RunConfig):
        self.backend = backend
        self.cfg = cfg
        self.bundles: list[PromptBundle] = []
        self.usage = UsageStats()
        self.latency = 0.0
        self.notes: list[str] = []

    def call(self, bundle: PromptBundle) -> str:
        self.bundles.append(bundle)
        res = complete(bundle, self.cfg.decoding, self.backend)
        self.usage = self.usage + res.usage
        self.latency += res.latency
        return res.text


def _try_action(parse: Callable[[], Action]) -> tuple[Action | None, str | None]:
    try:
        return parse(), None
    except UnknownActionError as exc:
        return None, f"UnknownAction: {exc}"
    except ActionParseError as exc:
        return None, f"ParseError: {exc}"


@dataclass
class _Outcome:
    action: Action | None = None
    action_error: str | None = None
    raw_plan_text: str | None = None
    plan: Plan | None = None
    step: ChosenStep | None = None
    raw_action_text: str | None = None
    thought: str | None = None


class EpisodeRunner:
    """State for one episode run. Not shared between threads."""

    def __init__(self, e: Episode, cfg: RunConfig, backend: Backend, retriever=None):
        if (cfg.strategy.name == "dpot-ref") != (retriever is not None):
            raise ValueError("a retriever is required for dpot-ref and only for it")
        self.e = e
        self.cfg = cfg
        self.backend = backend
        self.refs = retriever.reference_block(e) if retriever is not None else None
        self.history = ExecutionHistory()
        self.rounds: list[ReActRound] = []
        self.frozen_plan: Plan | None = None

    # each strategy fills an _Outcome for the current turn
    def _direct(self, t: _Turn, markup: ScreenMarkup, turn: int, image: str | None) -> _Outcome:
        raw = t.call(build_baseline_prompt(NP, self.e.goal, markup,
                                           BaselineContext(turn=turn, image_ref=image)))
        action, err = _try_action(lambda: parse_action(raw))
        return _Outcome(action, err, raw_action_text=raw)

    def _ground(self, t: _Turn, out: _Outcome, screen: Screen, markup: ScreenMarkup,
                turn: int, image: str | None) -> _Outcome:
        if self.cfg.grounding is Grounding.GRAMMAR:
            out.action, out.action_error = _try_action(
                lambda: action_from_description(out.step.text, screen))
            return out
        raw = t.call(build_grounding_prompt(out.step.text, markup, self.e.goal,
                                            strategy=self.cfg.strategy, turn=turn,
                                            image_ref=image))
        out.raw_action_text = raw
        out.action, out.action_error = _try_action(lambda: parse_action(raw))
        return out

    def _planning_bundle(self, markup, turn, image, given_plan=None) -> PromptBundle:
        cfg = self.cfg
        if cfg.strategy.name == "dp":
            return build_baseline_prompt(DP, self.e.goal, markup,
                                         BaselineContext(turn=turn, image_ref=image))
        if cfg.strategy.name == "dpot-ref":
            return build_planning_prompt_with_reference(
                self.e.goal, markup, self.history.lines(), self.history.steps_taken,
                self.refs, turn=turn, history_cap=cfg.history_cap, image_ref=image)
        return build_planning_prompt(
            self.e.goal, markup, self.history.lines(), self.history.steps_taken,
            turn=turn, history_cap=cfg.history_cap, image_ref=image,
            strategy=cfg.strategy, given_plan=given_plan)

    def _plan_and_ground(self, t, screen, markup, turn, image) -> _Outcome:
        external = (self.cfg.plan_source.lookup(self.e.id, turn)
                    if self.cfg.plan_source is not None else None)
        if external is not None and external.step:
            out = _Outcome(raw_plan_text=external.plan,
                           plan=Plan(tuple(split_plan(external.plan)), external.plan),
                           step=ChosenStep(external.step))
            t.notes.append("external plan and step")
            return self._ground(t, out, screen, markup, turn, image)

        raw = t.call(self._planning_bundle(markup, turn, image,
                                           external.plan if external else None))
        try:
            plan, step, diag = parse_plan_step(raw)
        except PlanParseError as exc:
            t.notes.append(f"plan parse failed ({exc}); direct action request")
            out = self._direct(t, markup, turn, image)
            out.raw_plan_text = raw
            return out
        t.notes.extend(r.value for r in diag.recovery_applied)
        t.notes.extend(diag.notes)
        if external is not None:
            plan = Plan(tuple(split_plan(external.plan)), external.plan)
            t.notes.append("external plan")
        out = _Outcome(raw_plan_text=raw, plan=plan, step=step)
        return self._ground(t, out, screen, markup, turn, image)

    def _static(self, t, screen, markup, turn, image) -> _Outcome:
        if turn == 0:
            external = (self.cfg.plan_source.lookup(self.e.id, 0)
                        if self.cfg.plan_source is not None else None)
            if external is not None:
                self.frozen_plan = Plan(tuple(split_plan(external.plan)), external.plan)
            else:
                raw = t.call(build_static_plan_request(self.e.goal, markup, image_ref=image))
                try:
                    plan, _, _ = parse_plan_step(raw)
                    self.frozen_plan = plan
                except PlanParseError as exc:
                    t.notes.append(f"static plan parse failed ({exc})")
        if self.frozen_plan is None:
            t.notes.append("no static plan; direct action request")
            return self._direct(t, markup, turn, image)
        raw = t.call(build_baseline_prompt(
            SP, self.e.goal, markup,
            BaselineContext(frozen_plan=self.frozen_plan.raw, turn=turn, image_ref=image)))
        action, err = _try_action(lambda: parse_action(raw))
        return _Outcome(action, err, plan=self.frozen_plan, raw_action_text=raw)

    def _react(self, t, screen, markup, turn, image) -> _Outcome:
        ctx = BaselineContext(rounds=tuple(self.rounds), turn=turn, image_ref=image)
        raw = t.call(build_baseline_prompt(self.cfg.strategy, self.e.goal, markup, ctx))
        thought, action_text = split_thought(raw)
        action, err = _try_action(lambda: parse_action(action_text or raw))
        self.rounds.append(ReActRound(observation_text(markup), thought, action_text or raw))
        return _Outcome(action, err, raw_action_text=raw, thought=thought)

    def step(self, turn: int) -> TurnRecord:
        screen = self.e.steps[turn].screen
        markup = serialize_screen(screen)
        image = screen.image_ref if self.cfg.multimodal else None
        t = _Turn(self.backend, self.cfg)
        name = self.cfg.strategy.name
        if name in ("dpot", "dpot-ref", "dp"):
            out = self._plan_and_ground(t, screen, markup, turn, image)
        elif name == "sp":
            out = self._static(t, screen, markup, turn, image)
        elif name == "react":
            out = self._react(t, screen, markup, turn, image)
        else:
            out = self._direct(t, markup, turn, image)

        self.history = update_history(self.history, turn, out.action, out.step, screen)
        return TurnRecord(
            turn=turn,
            prompt_digest=prompt_digest(t.bundles),
            action=out.action,
            usage=t.usage,
            latency=t.latency,
            calls=len(t.bundles),
            history_entry=self.history.entries[-1],
            raw_plan_text=out.raw_plan_text,
            plan=out.plan,
            step=out.step,
            raw_action_text=out.raw_action_text,
            action_error=out.action_error,
            thought=out.thought,
            diagnostics=t.notes,
            prompts=[b.text() for b in t.bundles] if self.cfg.store_prompts else None,
        )


def run_episode(
    e: Episode,
    cfg: RunConfig,
    gateway: Backend,
    retriever=None,
    observer: Callable[[int, ExecutionHistory], None] | None = None,
) -> EpisodeTrace:
    """Replay ``e`` under ``cfg.strategy``.

    ``observer`` is called after every turn with the updated history.
    Gateway failures (after the backend's retries) end the run with a
    partial trace marked ``aborted``.
    """
    runner = EpisodeRunner(e, cfg, gateway, retriever)
    trace = EpisodeTrace(e.id, cfg.strategy.label)
    for turn in range(cfg.turn_limit(e)):
        try:
            rec = runner.step(turn)
        except ScriptExhaustedError:
            raise
        except GatewayError as exc:
            logger.error("episode %s aborted at turn %d: %s", e.id, turn, exc)
            trace.aborted = True
            trace.error = str(exc)
            return trace
        trace.turns.append(rec)
        if observer is not None:
            observer(turn, runner.history)
        verdict = is_terminal(rec.action, turn, e, cfg)
        if verdict is not None:
            trace.terminated_by = verdict
            break
    return trace


def history_from_trace(trace: EpisodeTrace) -> ExecutionHistory:
    """Rebuild the final execution history from recorded turns."""
    h = ExecutionHistory()
    for rec in trace.turns:
        steps = h.steps_taken + ((rec.step.text,) if rec.step is not None else ())
        h = ExecutionHistory(h.entries + (rec.history_entry,), steps)
    return h


def run_episodes(
    episodes: Iterable[Episode],
    cfg: RunConfig,
    backend_for: Callable[[Episode], Backend],
    retriever=None,
    *,
    parallel: int = 1,
    on_trace: Callable[[EpisodeTrace], None] | None = None,
) -> list[EpisodeTrace]:
    """Run many episodes; results come back in input order.

    ``backend_for`` supplies the backend of each run (one scripted queue
    per episode). ``on_trace`` sees each trace as it finishes.
    """
    episodes = list(episodes)

    def one(e: Episode) -> EpisodeTrace:
        trace = run_episode(e, cfg, backend_for(e), retriever)
        if on_trace is not None:
            on_trace(trace)
        return trace

    if parallel <= 1:
        return [one(e) for e in episodes]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(one, episodes))

