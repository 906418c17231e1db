"""Dynamic plan-of-thought GUI agents and an offline replay harness.

The usual flow: load (or generate) episodes, run them under a strategy
against a backend, then score and report from the stored traces.

>>> from dpot import generate_synthetic, run_episode, RunConfig, ScriptedBackend
>>> from dpot.scripting import oracle_responses
>>> ds = generate_synthetic(seed=1, n_episodes=1)
>>> e = ds.episodes[0]
>>> cfg = RunConfig()
>>> trace = run_episode(e, cfg, ScriptedBackend(oracle_responses(e, cfg.strategy)))
>>> score_episode(trace, e).score
100.0
"""

from __future__ import annotations

from .agent import (
    EpisodeTrace,
    ExecutionHistory,
    ExternalPlans,
    Grounding,
    HistoryEntry,
    RunConfig,
    Termination,
    TurnRecord,
    is_terminal,
    run_episode,
    run_episodes,
    update_history,
)
from .episode import (
    BBox,
    Click,
    Dataset,
    DatasetError,
    Direction,
    Episode,
    GoldGesture,
    GoldStep,
    Navigate,
    NavTarget,
    Point,
    Press,
    Screen,
    Scroll,
    Status,
    SyntheticParams,
    Type,
    UiElement,
    generate_synthetic,
    load_dataset,
    save_dataset,
    validate_episode,
)
from .evaluation import (
    CLICK_THRESHOLD,
    EpisodeScore,
    MatchResult,
    MatchRule,
    action_breakdown,
    aggregate,
    match_action,
    score_episode,
)
from .gateway import DecodingConfig, HttpBackend, ScriptedBackend, UsageStats
from .parsing import parse_action, parse_plan_step
from .prompts import DP, DPOT, DPOT_REF, NP, SP, StrategyKind, react
from .reporting import build_report, cost_summary, load_traces, render_report, write_report
from .retrieval import Retriever, TrigramEmbedder, top_k_similar
from .screen import serialize_screen

__version__ = "0.1.0"

__all__ = [
    "BBox", "CLICK_THRESHOLD", "Click", "DP", "DPOT", "DPOT_REF", "Dataset", "DatasetError",
    "DecodingConfig", "Direction", "Episode", "EpisodeScore", "EpisodeTrace", "ExecutionHistory",
    "ExternalPlans", "GoldGesture", "GoldStep", "Grounding", "HistoryEntry", "HttpBackend",
    "MatchResult", "MatchRule", "NP", "NavTarget", "Navigate", "Point", "Press", "Retriever",
    "RunConfig", "SP", "Screen", "ScriptedBackend", "Scroll", "Status", "StrategyKind",
    "SyntheticParams", "Termination", "TrigramEmbedder", "TurnRecord", "Type", "UiElement",
    "UsageStats", "action_breakdown", "aggregate", "build_report", "cost_summary",
    "generate_synthetic", "is_terminal", "load_dataset", "load_traces", "match_action",
    "parse_action", "parse_plan_step", "react", "render_report", "run_episode", "run_episodes",
    "save_dataset", "score_episode", "serialize_screen", "top_k_similar", "update_history",
    "validate_episode", "write_report",
]
