"""
Reading untidy model output
===========================

Models wrap JSON in code fences, use Python-style quotes and keep talking
after the object. The parser recovers what it can and says what it did.
"""

from dpot.parsing import ActionParseError, PlanParseError, parse_action, parse_plan_step

replies = [
    '{"plan": "1. Open Settings 2. Tap About phone", "step": "Open Settings"}',
    "```json\n{'plan': '1. Open Chrome 2. Search for hotels', 'step': 'Open Chrome'}\n```",
    '{"plan": "1. Go home 2. Open Play Store", "step": "Go home"} I hope this helps!',
    '{"plan": "1. Scroll down 2. Tap Battery"}',
]
for text in replies:
    try:
        plan, step, diag = parse_plan_step(text)
        fixes = ", ".join(r.value for r in diag.recovery_applied) or "none"
        print(f"steps={list(plan.steps)} step={step.text!r} recovery: {fixes}")
    except PlanParseError as exc:
        print(f"plan error: {exc}")

for text in ['{"action_type": "click", "idx": 4}', "{'action_type': 'scroll', 'direction': 'up'}",
             '{"action_type": "swipe_left"}', "click the blue button"]:
    try:
        print(text, "->", parse_action(text).to_dict())
    except ActionParseError as exc:
        print(text, "->", type(exc).__name__)
