from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dpot.episode import BBox, Episode, GoldGesture, GoldStep, Point, Screen, UiElement  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def text_el(idx: int, text: str, box: tuple[float, float, float, float]) -> UiElement:
    return UiElement(idx, "text", text, BBox(*box))


def icon_el(idx: int, cls: str, box: tuple[float, float, float, float]) -> UiElement:
    return UiElement(idx, "icon", "", BBox(*box), cls)


def tap(x: float, y: float) -> GoldGesture:
    return GoldGesture(Point(x, y), Point(x, y))


def make_episode(eid: str, steps: list[GoldStep], goal: str = "open settings",
                 subset: str = "General") -> Episode:
    return Episode(eid, subset, goal, tuple(steps))


@pytest.fixture
def settings_screen() -> Screen:
    """Three stacked elements; idx 2 is an icon with no text."""
    return Screen((
        text_el(0, "Mon, Oct 10", (0.05, 0.02, 0.40, 0.06)),
        text_el(1, "Settings", (0.10, 0.30, 0.50, 0.40)),
        icon_el(2, "ICON_CLOUD", (0.60, 0.70, 0.80, 0.85)),
    ), caption="a home screen with a clock")


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criteria verdicts at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
