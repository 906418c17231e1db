"""Screen-wise action matching and score aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from .agent import EpisodeTrace, Termination
from .episode import ACTION_TYPES, Action, Click, Episode, GoldStep, Point, Scroll, Screen, Status, Type
from .screen import UnresolvedTargetError, resolve_click_target

CLICK_THRESHOLD = 0.14


class MatchRule(str, Enum):
    TYPE_MATCH = "TypeMatch"
    CLICK_DISTANCE = "ClickDistance"
    CLICK_SAME_BOX = "ClickSameBox"
    SCROLL_DIRECTION = "ScrollDirection"
    TYPE_ONLY_TYPES = "TypeOnlyTypes"
    UNRESOLVED = "Unresolved"
    TYPE_MISMATCH = "TypeMismatch"


@dataclass(frozen=True, slots=True)
class MatchResult:
    verdict: bool
    rule: MatchRule
    distance: float | None = None

    def __bool__(self) -> bool:
        return self.verdict


def _gold_point(gold: GoldStep, screen: Screen) -> Point:
    if gold.gesture is not None:
        return gold.gesture.touch
    a = gold.action
    if a.point is not None:
        return a.point
    return resolve_click_target(screen, a.idx)[0].center


def _click_match(pred: Click, gold: GoldStep, screen: Screen, threshold: float) -> MatchResult:
    target = _gold_point(gold, screen)
    if pred.idx is not None:
        try:
            box, points = resolve_click_target(screen, pred.idx)
        except UnresolvedTargetError:
            return MatchResult(False, MatchRule.UNRESOLVED)
    else:
        box, points = None, [pred.point]

    distance = min(math.hypot(p.x - target.x, p.y - target.y) for p in points)
    if distance <= threshold:
        return MatchResult(True, MatchRule.CLICK_DISTANCE, distance)
    if box is not None and box.contains(target):
        return MatchResult(True, MatchRule.CLICK_SAME_BOX)
    for el in screen.elements:
        if el.bbox.contains(target) and any(el.bbox.contains(p) for p in points):
            return MatchResult(True, MatchRule.CLICK_SAME_BOX)
    return MatchResult(False, MatchRule.CLICK_DISTANCE, distance)


def match_action(
    pred: Action | None,
    gold: GoldStep,
    screen: Screen | None = None,
    *,
    threshold: float = CLICK_THRESHOLD,
    strict_type_text: bool = False,
) -> MatchResult:
    """Does ``pred`` count as the gold action on this screen?

    Clicks match when a sample point of the predicted element lies within
    ``threshold`` (unit-square distance) of the gold touch point, or the
    touch point and a sample point share a detected box. Scrolls compare
    directions; other actions compare action types only.
    """
    screen = gold.screen if screen is None else screen
    if pred is None:
        return MatchResult(False, MatchRule.TYPE_MISMATCH)
    g = gold.action
    if isinstance(pred, Click) and isinstance(g, Click):
        return _click_match(pred, gold, screen, threshold)
    if isinstance(pred, Scroll) and isinstance(g, Scroll):
        implied = gold.gesture.direction() if gold.gesture is not None else None
        return MatchResult(pred.direction == (implied or g.direction), MatchRule.SCROLL_DIRECTION)
    if isinstance(pred, Type) and isinstance(g, Type):
        ok = pred.text == g.text if strict_type_text else True
        return MatchResult(ok, MatchRule.TYPE_ONLY_TYPES)
    if pred.action_type == g.action_type:
        return MatchResult(True, MatchRule.TYPE_MATCH)
    return MatchResult(False, MatchRule.TYPE_MISMATCH)


# --- episode scores --------------------------------------------------------


@dataclass(frozen=True, slots=True)
class EpisodeScore:
    episode_id: str
    correct: int
    total: int

    def __post_init__(self) -> None:
        if not 0 <= self.correct <= self.total:
            raise ValueError("need 0 <= correct <= total")

    @property
    def score(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0


class TraceMismatchError(ValueError):
    pass


def turn_verdicts(trace: EpisodeTrace, e: Episode, **match_kw) -> list[MatchResult]:
    if trace.episode_id != e.id:
        raise TraceMismatchError(f"trace {trace.episode_id!r} is not for episode {e.id!r}")
    if len(trace.turns) > len(e.steps):
        raise TraceMismatchError(f"trace has {len(trace.turns)} turns, episode {len(e.steps)} steps")
    return [match_action(rec.action, e.steps[rec.turn], **match_kw) for rec in trace.turns]


def score_episode(trace: EpisodeTrace, e: Episode, **match_kw) -> EpisodeScore:
    """Correct turns over the full episode length.

    Gold steps the run never reached count as misses, except that after
    an early ``status_complete`` a gold completion step still counts.
    """
    verdicts = turn_verdicts(trace, e, **match_kw)
    correct = sum(v.verdict for v in verdicts)
    if trace.terminated_by is Termination.STATUS_COMPLETE:
        correct += sum(isinstance(st.action, Status) for st in e.steps[len(verdicts):])
    return EpisodeScore(e.id, correct, len(e.steps))


# --- aggregation -----------------------------------------------------------


@dataclass(frozen=True)
class SubsetReport:
    subset_scores: dict[str, float]
    counts: dict[str, int]
    overall: float
    weighted: bool = False


def aggregate(
    scores: Mapping[str, Sequence[EpisodeScore]] | Iterable[tuple[str, EpisodeScore]],
    *,
    weighted: bool = False,
) -> SubsetReport:
    """Per-subset mean scores and their unweighted mean.

    ``weighted=True`` instead averages over all episodes.
    """
    if isinstance(scores, Mapping):
        groups = {k: list(v) for k, v in scores.items()}
    else:
        groups = {}
        for subset, s in scores:
            groups.setdefault(subset, []).append(s)
    if not groups:
        raise ValueError("no scores to aggregate")
    for k, v in groups.items():
        if not v:
            raise ValueError(f"subset {k!r} has no episodes")
    means = {k: fmean(s.score for s in groups[k]) for k in sorted(groups)}
    counts = {k: len(groups[k]) for k in sorted(groups)}
    if weighted:
        overall = fmean(s.score for k in sorted(groups) for s in groups[k])
    else:
        overall = fmean(means.values())
    return SubsetReport(means, counts, overall, weighted)


# --- per-action breakdown --------------------------------------------------

BREAKDOWN_LABELS = {
    "click": "Click",
    "scroll": "Scroll",
    "type": "Type",
    "navigate_home": "Home",
    "navigate_back": "Back",
    "press_enter": "Press",
    "status_complete": "Complete",
}


@dataclass(frozen=True, slots=True)
class ActionBreakdownRow:
    action_type: str
    predicted_ratio: float
    accuracy_ratio: float

    @property
    def label(self) -> str:
        return BREAKDOWN_LABELS[self.action_type]


@dataclass(frozen=True)
class ActionBreakdown:
    rows: tuple[ActionBreakdownRow, ...]
    unparseable_ratio: float
    total_turns: int
    counts: dict[str, tuple[int, int]] = field(default_factory=dict)


def action_breakdown(
    traces: Iterable[EpisodeTrace], episodes: Mapping[str, Episode] | Iterable[Episode], **match_kw
) -> ActionBreakdown:
    """Share of evaluated turns predicting each action type, and predicting it correctly."""
    if not isinstance(episodes, Mapping):
        episodes = {e.id: e for e in episodes}
    predicted = {t: 0 for t in ACTION_TYPES}
    correct = {t: 0 for t in ACTION_TYPES}
    unparseable = 0
    total = 0
    for trace in traces:
        verdicts = turn_verdicts(trace, episodes[trace.episode_id], **match_kw)
        for rec, v in zip(trace.turns, verdicts):
            total += 1
            if rec.action is None:
                unparseable += 1
                continue
            predicted[rec.action.action_type] += 1
            correct[rec.action.action_type] += v.verdict

    def pct(n: int) -> float:
        return 100.0 * n / total if total else 0.0

    rows = tuple(ActionBreakdownRow(t, pct(predicted[t]), pct(correct[t])) for t in ACTION_TYPES)
    return ActionBreakdown(rows, pct(unparseable), total,
                           {t: (predicted[t], correct[t]) for t in ACTION_TYPES})

