"""
What each strategy costs
========================

Prompt size drives cost. The planner's prompt carries one short line per
past action, while a ReAct prompt carries whole earlier rounds (screen,
thought and action). Token counts below are the byte-based estimate used
when a backend reports no usage.
"""

import numpy as np

from dpot import Grounding, RunConfig, ScriptedBackend, SyntheticParams, cost_summary, generate_synthetic, run_episodes
from dpot.prompts import DP, DPOT, NP, SP, react
from dpot.scripting import oracle_responses

ds = generate_synthetic(seed=3, n_episodes=20, params=SyntheticParams(steps=(6, 6)))

rows = []
for strategy in (NP, SP, DP, DPOT, react(0), react(1), react(2), react(4), react(None)):
    for grounding in (Grounding.GRAMMAR, Grounding.MODEL):
        if grounding is Grounding.MODEL and strategy not in (DP, DPOT):
            continue
        cfg = RunConfig(strategy=strategy, grounding=grounding)
        traces = run_episodes(ds, cfg, lambda e: ScriptedBackend(oracle_responses(e, strategy, grounding)))
        label = strategy.label + ("" if strategy not in (DP, DPOT) else f" ({grounding.value})")
        rows.append((label, cost_summary(traces).tokens_per_episode))

width = max(len(label) for label, _ in rows)
peak = max(t for _, t in rows)
for label, tokens in rows:
    bar = "#" * int(np.round(40 * tokens / peak))
    print(f"{label:<{width}}  {tokens:7.0f}  {bar}")
