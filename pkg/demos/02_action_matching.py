"""
How a click is judged
=====================

A predicted click names an element. It matches the recorded tap when one
of the element's sample points (its four corners and centre) lies within
0.14 of the tap, or when the tap and the element fall in a common box.
"""

import numpy as np

from dpot import BBox, Click, GoldGesture, GoldStep, Point, Screen, UiElement, match_action

screen = Screen((
    UiElement(0, "text", "Wi-Fi", BBox(0.30, 0.30, 0.50, 0.50)),
    UiElement(1, "text", "Bluetooth", BBox(0.90, 0.90, 0.95, 0.95)),
    UiElement(2, "text", "Battery saver is on", BBox(0.00, 0.55, 0.90, 0.95)),
))


def tap(x, y):
    return GoldGesture(Point(x, y), Point(x, y))


# the bottom-right corner (0.5, 0.5) is the closest sample point in both cases
for x, y in [(0.55, 0.58), (0.60, 0.60)]:
    r = match_action(Click(idx=0), GoldStep(screen, Click(idx=1), tap(x, y)))
    print(f"tap at ({x}, {y}): distance {r.distance:.4f} -> {'match' if r.verdict else 'miss'}")

# a tap inside the predicted box always matches, however far from the sample points
# (0.15, 0.75) is at least 0.25 from every sample point of element 2
r = match_action(Click(idx=2), GoldStep(screen, Click(idx=2), tap(0.15, 0.75)))
print("inside the box:", r.rule.value, r.verdict)

# matching region of element 0 on a grid, at three thresholds
xs = np.linspace(0, 1, 41)
for threshold in (0.05, 0.14, 0.25):
    hits = np.array([[match_action(Click(idx=0), GoldStep(screen, Click(idx=1), tap(x, y)),
                                   threshold=threshold).verdict for x in xs] for y in xs])
    print(f"\nthreshold {threshold}: {hits.mean():.1%} of the screen matches")
    for row in hits[::4]:
        print("  " + "".join("#" if h else "." for h in row))
