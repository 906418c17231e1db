"""Pseudo-HTML screen markup and element geometry."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .episode import BBox, Point, Screen, UiElement

HEADER = "Screen:"

_UNSAFE = str.maketrans({"<": " ", ">": " ", '"': " "})


class UnresolvedTargetError(LookupError):
    """A click names an element index that is not on the screen."""

    def __init__(self, idx: int, n_elements: int):
        super().__init__(f"element {idx} not on screen with {n_elements} elements")
        self.idx = idx


@dataclass(frozen=True, slots=True)
class ScreenMarkup:
    lines: tuple[str, ...]
    header: str = HEADER

    def render(self) -> str:
        return "\n".join((self.header, *self.lines))

    def __str__(self) -> str:
        return self.render()


def sanitize(text: str) -> str:
    # keeps the line grammar unambiguous; also drops embedded newlines
    return " ".join(text.translate(_UNSAFE).splitlines())


def element_line(el: UiElement) -> str:
    if el.is_icon:
        cls = "_".join(sanitize(el.cls or "ICON").split()) or "ICON"
        return f'<img id={el.idx} class={cls} alt=""></p>'
    t = sanitize(el.text)
    return f'<p id={el.idx} class="text" alt="{t}">{t}</p>'


def serialize_screen(s: Screen) -> ScreenMarkup:
    return ScreenMarkup(tuple(element_line(el) for el in sorted(s.elements, key=lambda e: e.idx)))


_TEXT_LINE = re.compile(r'^<p id=(\d+) class="text" alt="([^"<>]*)">([^"<>]*)</p>$')
_ICON_LINE = re.compile(r'^<img id=(\d+) class=(\S+) alt=""></p>$')


def parse_markup_line(line: str) -> tuple[int, str, str | None, str]:
    """Inverse of :func:`element_line`: ``(idx, kind, class, text)``."""
    m = _TEXT_LINE.match(line)
    if m and m.group(2) == m.group(3):
        return int(m.group(1)), "text", None, m.group(2)
    m = _ICON_LINE.match(line)
    if m:
        return int(m.group(1)), "icon", m.group(2), ""
    raise ValueError(f"not a screen markup line: {line!r}")


def element_points(el: UiElement | BBox) -> list[Point]:
    """Sample points TL, TR, BL, BR and centre of an element's box."""
    b = el.bbox if isinstance(el, UiElement) else el
    return [
        Point(b.x0, b.y0),
        Point(b.x1, b.y0),
        Point(b.x0, b.y1),
        Point(b.x1, b.y1),
        b.center,
    ]


def resolve_click_target(s: Screen, idx: int) -> tuple[BBox, list[Point]]:
    el = s.element(idx)
    if el is None:
        raise UnresolvedTargetError(idx, len(s.elements))
    return el.bbox, element_points(el)
