"""Episode, screen and action data model plus dataset loading.

Coordinates are fractions of the screen: ``x`` of the width, ``y`` of the
height, both in ``[0, 1]``. Values are not range-checked at construction;
:func:`validate_episode` reports out-of-range data as violations.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence


class DatasetError(ValueError):
    """A dataset file could not be loaded."""


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"


class NavTarget(str, Enum):
    HOME = "home"
    BACK = "back"


@dataclass(frozen=True, slots=True)
class Point:
    x: float
    y: float

    def in_unit_square(self) -> bool:
        return 0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0


@dataclass(frozen=True, slots=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def min(self) -> Point:
        return Point(self.x0, self.y0)

    @property
    def max(self) -> Point:
        return Point(self.x1, self.y1)

    @property
    def center(self) -> Point:
        return Point((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def contains(self, p: Point) -> bool:
        return self.x0 <= p.x <= self.x1 and self.y0 <= p.y <= self.y1

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True, slots=True)
class UiElement:
    idx: int
    kind: str  # "text" or "icon"
    text: str
    bbox: BBox
    cls: str | None = None  # icon class name, e.g. ICON_CLOUD

    @property
    def is_icon(self) -> bool:
        return self.kind == "icon"


@dataclass(frozen=True, slots=True)
class Screen:
    elements: tuple[UiElement, ...] = ()
    caption: str | None = None
    image_ref: str | None = None

    def element(self, idx: int) -> UiElement | None:
        if 0 <= idx < len(self.elements) and self.elements[idx].idx == idx:
            return self.elements[idx]
        for el in self.elements:
            if el.idx == idx:
                return el
        return None


@dataclass(frozen=True, slots=True)
class GoldGesture:
    touch: Point
    lift: Point

    def direction(self) -> Direction | None:
        """Scroll direction implied by the swipe, ``None`` for a tap.

        The finger moving toward the top of the screen is ``UP``; on equal
        horizontal and vertical travel the vertical axis wins.
        """
        dx = self.lift.x - self.touch.x
        dy = self.lift.y - self.touch.y
        if dx == 0 and dy == 0:
            return None
        if abs(dy) >= abs(dx):
            return Direction.UP if dy < 0 else Direction.DOWN
        return Direction.LEFT if dx < 0 else Direction.RIGHT


# --- actions ---------------------------------------------------------------


class Action:
    """Base of the six action variants. ``action_type`` is the wire name."""

    __slots__ = ()

    @property
    def action_type(self) -> str:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        return {"action_type": self.action_type}


@dataclass(frozen=True, slots=True)
class Click(Action):
    idx: int | None = None
    point: Point | None = None

    def __post_init__(self) -> None:
        if (self.idx is None) == (self.point is None):
            raise ValueError("Click needs exactly one of idx or point")

    @property
    def action_type(self) -> str:
        return "click"

    def to_dict(self) -> dict[str, Any]:
        if self.idx is not None:
            return {"action_type": "click", "idx": self.idx}
        return {"action_type": "click", "point": [self.point.x, self.point.y]}


@dataclass(frozen=True, slots=True)
class Scroll(Action):
    direction: Direction

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", Direction(self.direction))

    @property
    def action_type(self) -> str:
        return "scroll"

    def to_dict(self) -> dict[str, Any]:
        return {"action_type": "scroll", "direction": self.direction.value}


@dataclass(frozen=True, slots=True)
class Type(Action):
    text: str

    @property
    def action_type(self) -> str:
        return "type"

    def to_dict(self) -> dict[str, Any]:
        return {"action_type": "type", "text": self.text}


@dataclass(frozen=True, slots=True)
class Navigate(Action):
    dest: NavTarget

    def __post_init__(self) -> None:
        object.__setattr__(self, "dest", NavTarget(self.dest))

    @property
    def action_type(self) -> str:
        return f"navigate_{self.dest.value}"


@dataclass(frozen=True, slots=True)
class Press(Action):
    key: str = "enter"

    @property
    def action_type(self) -> str:
        return "press_enter"


@dataclass(frozen=True, slots=True)
class Status(Action):
    value: str = "complete"

    @property
    def action_type(self) -> str:
        return "status_complete"


ACTION_TYPES: tuple[str, ...] = (
    "click",
    "scroll",
    "type",
    "navigate_home",
    "navigate_back",
    "press_enter",
    "status_complete",
)


def action_from_dict(d: dict[str, Any]) -> Action:
    """Build an action from its wire dict. Raises ``KeyError``/``ValueError``."""
    kind = d["action_type"]
    if kind == "click":
        if d.get("idx") is not None:
            return Click(idx=int(d["idx"]))
        x, y = d["point"]
        return Click(point=Point(float(x), float(y)))
    if kind == "scroll":
        return Scroll(Direction(d["direction"]))
    if kind == "type":
        return Type(str(d["text"]))
    if kind == "navigate_home":
        return Navigate(NavTarget.HOME)
    if kind == "navigate_back":
        return Navigate(NavTarget.BACK)
    if kind == "press_enter":
        return Press()
    if kind == "status_complete":
        return Status()
    raise ValueError(f"unknown action_type {kind!r}")


# --- episodes --------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class GoldStep:
    screen: Screen
    action: Action
    gesture: GoldGesture | None = None


@dataclass(frozen=True, slots=True)
class Episode:
    id: str
    subset: str
    goal: str
    steps: tuple[GoldStep, ...]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Manifest:
    source: str
    loaded_at: str
    counts: dict[str, int]


@dataclass(frozen=True)
class Dataset:
    episodes: tuple[Episode, ...]
    manifest: Manifest = field(compare=False)

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    def by_id(self) -> dict[str, Episode]:
        return {e.id: e for e in self.episodes}

    def subsets(self) -> list[str]:
        return sorted({e.subset for e in self.episodes})


def subset_counts(episodes: Iterable[Episode]) -> dict[str, int]:
    return dict(sorted(Counter(e.subset for e in episodes).items()))


# --- validation ------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Violation:
    step: int | None  # None for episode-level problems
    message: str

    def __str__(self) -> str:
        where = "episode" if self.step is None else f"step {self.step}"
        return f"{where}: {self.message}"


def _check_point(p: Point, label: str, step: int, out: list[Violation]) -> None:
    if not p.in_unit_square():
        out.append(Violation(step, f"{label} ({p.x}, {p.y}) outside unit square"))


def validate_episode(e: Episode) -> list[Violation]:
    """Check every episode invariant; violations ordered by step index."""
    out: list[Violation] = []
    if not e.id:
        out.append(Violation(None, "empty episode id"))
    if not e.goal:
        out.append(Violation(None, "empty goal"))
    if not e.steps:
        out.append(Violation(None, "episode has no steps"))

    for i, step in enumerate(e.steps):
        for pos, el in enumerate(step.screen.elements):
            if el.idx != pos:
                out.append(Violation(i, f"element at position {pos} has idx {el.idx}"))
            if el.kind not in ("text", "icon"):
                out.append(Violation(i, f"element {el.idx} has unknown kind {el.kind!r}"))
            elif el.kind == "text" and not el.text:
                out.append(Violation(i, f"text element {el.idx} has empty text"))
            b = el.bbox
            if b.x0 > b.x1 or b.y0 > b.y1:
                out.append(Violation(i, f"element {el.idx} bbox min exceeds max"))
            _check_point(b.min, f"element {el.idx} bbox min", i, out)
            _check_point(b.max, f"element {el.idx} bbox max", i, out)

        a = step.action
        needs_gesture = isinstance(a, (Click, Scroll))
        if needs_gesture and step.gesture is None:
            out.append(Violation(i, f"{a.action_type} gold step without gesture"))
        if not needs_gesture and step.gesture is not None:
            out.append(Violation(i, f"{a.action_type} gold step carries a gesture"))
        if step.gesture is not None:
            _check_point(step.gesture.touch, "gesture touch", i, out)
            _check_point(step.gesture.lift, "gesture lift", i, out)

        if isinstance(a, Click):
            if a.idx is not None and step.screen.element(a.idx) is None:
                out.append(Violation(i, f"click idx {a.idx} not on screen"))
            if a.point is not None:
                _check_point(a.point, "click point", i, out)
        elif isinstance(a, Scroll) and step.gesture is not None:
            implied = step.gesture.direction()
            if implied is None:
                out.append(Violation(i, "scroll gesture has zero displacement"))
            elif implied != a.direction:
                out.append(
                    Violation(
                        i,
                        f"scroll recorded as {a.direction.value} but gesture "
                        f"dominant axis is {implied.value}",
                    )
                )
    return out


# --- serialization ---------------------------------------------------------


def _point_from(v: Any, field_name: str) -> Point:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValueError(f"{field_name}: expected [x, y]")
    return Point(float(v[0]), float(v[1]))


def _gold_action(g: dict[str, Any], where: str) -> Action:
    kind = g.get("action_type")
    if kind not in ACTION_TYPES:
        raise ValueError(f"{where}.action_type: unknown value {kind!r}")
    if kind == "click":
        if g.get("idx") is not None:
            if isinstance(g["idx"], bool) or not isinstance(g["idx"], int):
                raise ValueError(f"{where}.idx: expected integer")
            return Click(idx=g["idx"])
        if "touch" not in g:
            raise ValueError(f"{where}: click needs idx or touch")
        return Click(point=_point_from(g["touch"], f"{where}.touch"))
    if kind == "scroll":
        try:
            return Scroll(Direction(str(g.get("direction", "")).lower()))
        except ValueError:
            raise ValueError(f"{where}.direction: invalid {g.get('direction')!r}") from None
    if kind == "type":
        if not isinstance(g.get("text"), str):
            raise ValueError(f"{where}.text: required for type")
        return Type(g["text"])
    return action_from_dict({"action_type": kind})


def episode_from_record(rec: dict[str, Any]) -> Episode:
    """Parse one line-format record. ``ValueError`` names the offending field."""
    for key, typ in (("id", str), ("subset", str), ("goal", str), ("steps", list)):
        if not isinstance(rec.get(key), typ):
            raise ValueError(f"{key}: missing or not a {typ.__name__}")
    steps = []
    for i, s in enumerate(rec["steps"]):
        where = f"steps[{i}]"
        if not isinstance(s, dict):
            raise ValueError(f"{where}: expected object")
        elements = []
        for j, el in enumerate(s.get("elements", [])):
            ew = f"{where}.elements[{j}]"
            if not isinstance(el, dict):
                raise ValueError(f"{ew}: expected object")
            if "idx" not in el:
                raise ValueError(f"{ew}.idx: missing")
            bbox = el.get("bbox")
            if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
                raise ValueError(f"{ew}.bbox: expected [x0, y0, x1, y1]")
            kind = el.get("kind")
            if kind not in ("text", "icon"):
                raise ValueError(f"{ew}.kind: expected 'text' or 'icon'")
            elements.append(
                UiElement(
                    idx=int(el["idx"]),
                    kind=kind,
                    text=str(el.get("text", "")),
                    bbox=BBox(*(float(v) for v in bbox)),
                    cls=el.get("class"),
                )
            )
        gold = s.get("gold")
        if not isinstance(gold, dict):
            raise ValueError(f"{where}.gold: missing")
        action = _gold_action(gold, f"{where}.gold")
        gesture = None
        if "touch" in gold or "lift" in gold:
            touch = _point_from(gold.get("touch"), f"{where}.gold.touch")
            lift = _point_from(gold.get("lift", gold.get("touch")), f"{where}.gold.lift")
            gesture = GoldGesture(touch, lift)
        screen = Screen(tuple(elements), s.get("caption"), s.get("image_ref"))
        steps.append(GoldStep(screen, action, gesture))
    return Episode(rec["id"], rec["subset"], rec["goal"], tuple(steps))


def episode_to_record(e: Episode) -> dict[str, Any]:
    steps = []
    for st in e.steps:
        elements = []
        for el in st.screen.elements:
            d: dict[str, Any] = {"idx": el.idx, "kind": el.kind}
            if el.cls is not None:
                d["class"] = el.cls
            d["text"] = el.text
            d["bbox"] = el.bbox.as_list()
            elements.append(d)
        gold = st.action.to_dict()
        if isinstance(st.action, Click) and st.action.point is not None:
            gold = {"action_type": "click"}
        if st.gesture is not None:
            gold["touch"] = [st.gesture.touch.x, st.gesture.touch.y]
            gold["lift"] = [st.gesture.lift.x, st.gesture.lift.y]
        elif isinstance(st.action, Click) and st.action.point is not None:
            gold["touch"] = [st.action.point.x, st.action.point.y]
        rec: dict[str, Any] = {"elements": elements}
        if st.screen.caption is not None:
            rec["caption"] = st.screen.caption
        if st.screen.image_ref is not None:
            rec["image_ref"] = st.screen.image_ref
        rec["gold"] = gold
        steps.append(rec)
    return {"id": e.id, "subset": e.subset, "goal": e.goal, "steps": steps}


def dumps_dataset(episodes: Iterable[Episode]) -> str:
    return "".join(
        json.dumps(episode_to_record(e), ensure_ascii=False, sort_keys=False) + "\n"
        for e in episodes
    )


def save_dataset(episodes: Iterable[Episode], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_dataset(episodes), encoding="utf-8")
    return path


def _make_dataset(episodes: Sequence[Episode], source: str) -> Dataset:
    manifest = Manifest(
        source=source,
        loaded_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        counts=subset_counts(episodes),
    )
    return Dataset(tuple(episodes), manifest)


def load_dataset(path: str | Path, subset_filter: Iterable[str] | None = None) -> Dataset:
    """Load line-delimited episode records.

    Every returned episode passes :func:`validate_episode`. Malformed or
    invalid records raise :class:`DatasetError` naming the line and field.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc

    wanted = set(subset_filter) if subset_filter is not None else None
    seen: set[str] = set()
    episodes: list[Episode] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise DatasetError(f"{path}:{lineno}: record is not an object")
        try:
            ep = episode_from_record(rec)
        except (ValueError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if ep.id in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate episode id {ep.id!r}")
        seen.add(ep.id)
        problems = validate_episode(ep)
        if problems:
            raise DatasetError(f"{path}:{lineno}: episode {ep.id!r} invalid: {problems[0]}")
        if wanted is None or ep.subset in wanted:
            episodes.append(ep)
    return _make_dataset(episodes, str(path))


# --- synthetic episodes ----------------------------------------------------

SUBSETS = ("General", "GoogleApps", "Install", "Single", "WebShopping")

_WORDS = (
    "Settings", "Chrome", "Search", "Play Store", "Install", "Open", "Gmail",
    "Maps", "Shopping", "Cart", "Battery", "Display", "Sound", "Storage",
    "Privacy", "Location", "Network", "Wi-Fi", "Bluetooth", "Calendar",
    "Photos", "Weather", "News", "Add to cart", "Checkout", "Sign in",
    "About phone", "Apps", "Notifications", "Accounts", "Reviews", "Price",
)
_ICONS = (
    "ICON_CLOUD", "ICON_CALL", "ICON_CHAT", "ICON_PLAY", "ICON_GOOGLE",
    "ICON_MIC", "ICON_NAV_BAR_RECT", "ICON_NAV_BAR_CIRCLE", "ICON_V_BACKWARD",
    "ICON_SETTINGS", "ICON_MAGNIFYING_GLASS", "ICON_HOME", "ICON_LOCATION",
)
_VERBS = ("check", "open", "find", "search for", "install", "look up", "turn on")
_QUERIES = (
    "weather in Paris", "price of a ladder", "battery usage", "phone information",
    "wifi settings", "new email", "nearby coffee", "calendar events",
    "snow blower price", "translation app", "alarm at 7am", "headphones",
)


@dataclass(frozen=True)
class SyntheticParams:
    """Inclusive size ranges for generated episodes."""

    steps: tuple[int, int] = (3, 8)
    elements: tuple[int, int] = (4, 14)
    subsets: tuple[str, ...] = SUBSETS

    def check(self) -> None:
        for name in ("steps", "elements"):
            lo, hi = getattr(self, name)
            if lo < 1 or lo > hi:
                raise ValueError(f"degenerate {name} range {(lo, hi)}")
        if self.steps[0] < 2:
            raise ValueError("steps range must allow a click and a final status step")
        if not self.subsets:
            raise ValueError("empty subsets")


def _synthetic_screen(rng: random.Random, n: int, caption: str | None) -> Screen:
    # one element per row, stacked top to bottom; rows never overlap
    row_h = 0.9 / n
    elements = []
    for idx in range(n):
        y0 = 0.05 + idx * row_h
        y1 = y0 + row_h * rng.uniform(0.5, 0.9)
        x0 = rng.uniform(0.02, 0.4)
        x1 = x0 + rng.uniform(0.1, 0.55)
        box = BBox(round(x0, 4), round(y0, 4), round(min(x1, 0.98), 4), round(y1, 4))
        if rng.random() < 0.3:
            elements.append(UiElement(idx, "icon", "", box, rng.choice(_ICONS)))
        else:
            elements.append(UiElement(idx, "text", rng.choice(_WORDS), box))
    return Screen(tuple(elements), caption)


_SWIPES = {
    Direction.UP: ((0.5, 0.8), (0.5, 0.2)),
    Direction.DOWN: ((0.5, 0.2), (0.5, 0.8)),
    Direction.LEFT: ((0.8, 0.5), (0.2, 0.5)),
    Direction.RIGHT: ((0.2, 0.5), (0.8, 0.5)),
}


def generate_synthetic(
    seed: int, n_episodes: int, params: SyntheticParams | None = None
) -> Dataset:
    """Deterministic synthetic episodes standing in for recorded data.

    Every episode contains at least one click and ends with a status
    step. Click gestures are taps on the centre of the target element.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    params = params or SyntheticParams()
    params.check()
    rng = random.Random(seed)
    middle_kinds = ("click", "click", "click", "scroll", "type", "navigate_home",
                    "navigate_back", "press_enter")
    episodes = []
    for n in range(n_episodes):
        subset = params.subsets[n % len(params.subsets)]
        goal = f"{rng.choice(_VERBS)} {rng.choice(_QUERIES)}"
        n_steps = rng.randint(*params.steps)
        kinds = [rng.choice(middle_kinds) for _ in range(n_steps - 1)]
        if "click" not in kinds:
            kinds[rng.randrange(len(kinds))] = "click"
        kinds.append("status_complete")

        steps = []
        for i, kind in enumerate(kinds):
            caption = f"A screen of the {subset} task at step {i}." if i == 0 else None
            screen = _synthetic_screen(rng, rng.randint(*params.elements), caption)
            gesture = None
            if kind == "click":
                target = rng.randrange(len(screen.elements))
                c = screen.elements[target].bbox.center
                action: Action = Click(idx=target)
                gesture = GoldGesture(c, c)
            elif kind == "scroll":
                d = rng.choice(list(Direction))
                (tx, ty), (lx, ly) = _SWIPES[d]
                action = Scroll(d)
                gesture = GoldGesture(Point(tx, ty), Point(lx, ly))
            elif kind == "type":
                action = Type(rng.choice(_QUERIES))
            else:
                action = action_from_dict({"action_type": kind})
            steps.append(GoldStep(screen, action, gesture))
        episodes.append(Episode(f"syn-{seed}-{n:04d}", subset, goal, tuple(steps)))
    return _make_dataset(episodes, f"synthetic:seed={seed}")
