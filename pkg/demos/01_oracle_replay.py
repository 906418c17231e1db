"""
Replaying episodes offline
==========================

An agent is evaluated by replay: at turn i it sees the recorded screen i,
whatever it predicted before. Here a scripted backend stands in for the
model, first always agreeing with the gold actions and then never.
"""

from dpot import RunConfig, ScriptedBackend, build_report, generate_synthetic, render_report, run_episodes
from dpot.scripting import oracle_responses, wrong_responses

# a small deterministic dataset: one goal, several screens, one gold action per screen
ds = generate_synthetic(seed=7, n_episodes=10)
e = ds.episodes[0]
print(f"{e.id} [{e.subset}] goal: {e.goal!r}, {len(e)} steps")
for i, step in enumerate(e.steps):
    print(f"  step {i}: {step.action.to_dict()}")

# the default strategy plans every turn, picks one step and grounds it with a second call
cfg = RunConfig()
good = run_episodes(ds, cfg, lambda ep: ScriptedBackend(oracle_responses(ep, cfg.strategy)))
bad = run_episodes(ds, cfg, lambda ep: ScriptedBackend(wrong_responses(ep, cfg.strategy)))

# one turn of the trace, as the planner saw it
turn = good[0].turns[0]
print("\nplan:", turn.plan.steps)
print("chosen step:", turn.step.text)
print("action:", turn.action.to_dict())
print("history line:", turn.history_entry.render())

print()
print(render_report(build_report(good, ds, "oracle")))
print(render_report(build_report(bad, ds, "always-wrong")))
