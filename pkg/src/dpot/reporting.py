"""Trace persistence, cost summaries and report rendering.

A run directory holds ``manifest.json`` and ``traces.jsonl``. The trace
file is append-only JSON lines: one ``"record": "turn"`` line per turn and
one ``"record": "episode"`` footer per finished episode.
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from statistics import fmean
from typing import Any, Iterable, Sequence

from .agent import EpisodeTrace, HistoryEntry, Termination, TurnRecord
from .episode import Dataset, Episode, action_from_dict
from .evaluation import (
    ActionBreakdown,
    ActionBreakdownRow,
    SubsetReport,
    action_breakdown,
    aggregate,
    score_episode,
)
from .gateway import UsageStats
from .parsing import ChosenStep, Plan

TRACE_FILE = "traces.jsonl"
MANIFEST_FILE = "manifest.json"
VOLATILE_KEYS = ("latency_s", "started_at", "finished_at", "loaded_at")


class RunExistsError(FileExistsError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- record encoding -------------------------------------------------------


def turn_to_record(trace: EpisodeTrace, rec: TurnRecord) -> dict[str, Any]:
    out: dict[str, Any] = {
        "record": "turn",
        "episode_id": trace.episode_id,
        "turn": rec.turn,
        "strategy": trace.strategy,
        "prompt_digest": rec.prompt_digest,
        "calls": rec.calls,
        "raw_plan_text": rec.raw_plan_text,
        "plan": None if rec.plan is None else {"steps": list(rec.plan.steps), "raw": rec.plan.raw},
        "step": None if rec.step is None else rec.step.text,
        "thought": rec.thought,
        "raw_action_text": rec.raw_action_text,
        "action": None if rec.action is None else rec.action.to_dict(),
        "action_error": rec.action_error,
        "history_entry": {
            "step_idx": rec.history_entry.step_idx,
            "action_description": rec.history_entry.action_description,
        },
        "diagnostics": list(rec.diagnostics),
        "usage": asdict(rec.usage),
        "latency_s": rec.latency,
    }
    if rec.prompts is not None:
        out["prompts"] = list(rec.prompts)
    return out


def footer_record(trace: EpisodeTrace) -> dict[str, Any]:
    return {
        "record": "episode",
        "episode_id": trace.episode_id,
        "strategy": trace.strategy,
        "n_turns": len(trace.turns),
        "terminated_by": None if trace.terminated_by is None else trace.terminated_by.value,
        "aborted": trace.aborted,
        "error": trace.error,
    }


def record_to_turn(d: dict[str, Any]) -> TurnRecord:
    plan = d.get("plan")
    return TurnRecord(
        turn=d["turn"],
        prompt_digest=d["prompt_digest"],
        action=None if d.get("action") is None else action_from_dict(d["action"]),
        usage=UsageStats(**d["usage"]),
        latency=d["latency_s"],
        calls=d["calls"],
        history_entry=HistoryEntry(**d["history_entry"]),
        raw_plan_text=d.get("raw_plan_text"),
        plan=None if plan is None else Plan(tuple(plan["steps"]), plan["raw"]),
        step=None if d.get("step") is None else ChosenStep(d["step"]),
        raw_action_text=d.get("raw_action_text"),
        action_error=d.get("action_error"),
        thought=d.get("thought"),
        diagnostics=list(d.get("diagnostics", [])),
        prompts=d.get("prompts"),
    )


# --- run directory ---------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    config: dict[str, Any]
    dataset: dict[str, Any]
    backend: str
    started_at: str = field(default_factory=_now)
    finished_at: str | None = None


class RunWriter:
    """Append-only trace writer for one run; safe to share between threads."""

    def __init__(self, run_dir: Path, manifest: RunManifest):
        self.run_dir = run_dir
        self.manifest = manifest
        self.trace_path = run_dir / TRACE_FILE
        self._lock = threading.Lock()

    def _write_lines(self, records: Iterable[dict[str, Any]]) -> None:
        payload = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
        with self._lock, self.trace_path.open("a", encoding="utf-8") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())

    def append_turn(self, trace: EpisodeTrace, rec: TurnRecord) -> None:
        self._write_lines([turn_to_record(trace, rec)])

    def append_footer(self, trace: EpisodeTrace) -> None:
        self._write_lines([footer_record(trace)])

    def write_trace(self, trace: EpisodeTrace) -> None:
        """All turns plus the footer of a finished episode, in one flush."""
        self._write_lines([*(turn_to_record(trace, r) for r in trace.turns), footer_record(trace)])

    def finish(self) -> None:
        self.manifest.finished_at = _now()
        _write_manifest(self.run_dir, self.manifest)


def _write_manifest(run_dir: Path, manifest: RunManifest) -> None:
    (run_dir / MANIFEST_FILE).write_text(
        json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def init_run(run_dir: str | Path, config: dict[str, Any], dataset: dict[str, Any],
             backend: str) -> RunWriter:
    """Create ``run_dir``; its name is the run id. Refuses to reuse a run."""
    run_dir = Path(run_dir)
    if (run_dir / MANIFEST_FILE).exists() or (run_dir / TRACE_FILE).exists():
        raise RunExistsError(f"run {run_dir.name!r} already exists in {run_dir.parent}")
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(run_dir.name, config, dataset, backend)
    _write_manifest(run_dir, manifest)
    (run_dir / TRACE_FILE).touch()
    return RunWriter(run_dir, manifest)


def read_records(path: str | Path) -> list[dict[str, Any]]:
    """Trace records of a file; a torn final line (crash mid-write) is dropped."""
    path = Path(path)
    if path.is_dir():
        path = path / TRACE_FILE
    lines = path.read_text(encoding="utf-8").split("\n")
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if any(rest.strip() for rest in lines[i + 1:]):
                raise ValueError(f"{path}:{i + 1}: corrupt trace record") from None
    return records


def traces_from_records(records: Iterable[dict[str, Any]]) -> list[EpisodeTrace]:
    """Group records into traces. Episodes lacking a footer come back aborted."""
    traces: dict[str, EpisodeTrace] = {}
    done: set[str] = set()
    for r in records:
        eid = r["episode_id"]
        trace = traces.setdefault(eid, EpisodeTrace(eid, r["strategy"]))
        if r["record"] == "turn":
            trace.turns.append(record_to_turn(r))
        elif r["record"] == "episode":
            trace.terminated_by = None if r["terminated_by"] is None else Termination(r["terminated_by"])
            trace.aborted = r["aborted"]
            trace.error = r.get("error")
            done.add(eid)
    for eid, trace in traces.items():
        if eid not in done:
            trace.aborted = True
            trace.error = trace.error or "incomplete trace"
    return list(traces.values())


def load_traces(path: str | Path) -> list[EpisodeTrace]:
    return traces_from_records(read_records(path))


def canonical_records(records: Iterable[dict[str, Any]]) -> list[dict[str, Any]]:
    """Records with wall-clock fields zeroed, for determinism comparisons."""
    out = []
    for r in records:
        r = dict(r)
        for k in VOLATILE_KEYS:
            if k in r:
                r[k] = 0 if k == "latency_s" else None
        out.append(r)
    return out


def canonical_trace_text(path: str | Path) -> str:
    """Comparable text of a trace file.

    Records are grouped by episode (stable, so turn order is kept) because
    parallel runs append finished episodes in completion order.
    """
    records = sorted(canonical_records(read_records(path)), key=lambda r: r["episode_id"])
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


# --- cost ------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class CostSummary:
    tokens_per_episode: float
    seconds_per_episode: float
    estimated_fraction: float
    episodes: int


def episode_tokens(trace: EpisodeTrace) -> int:
    return sum(r.usage.total for r in trace.turns)


def cost_summary(traces: Sequence[EpisodeTrace]) -> CostSummary:
    if not traces:
        raise ValueError("no traces")
    total = sum(episode_tokens(t) for t in traces)
    estimated = sum(r.usage.total for t in traces for r in t.turns if r.usage.estimated)
    return CostSummary(
        tokens_per_episode=fmean(episode_tokens(t) for t in traces),
        seconds_per_episode=fmean(sum(r.latency for r in t.turns) for t in traces),
        estimated_fraction=estimated / total if total else 0.0,
        episodes=len(traces),
    )


# --- reports ---------------------------------------------------------------


@dataclass(frozen=True)
class RunReport:
    label: str
    subsets: SubsetReport
    breakdown: ActionBreakdown | None = None
    cost: CostSummary | None = None


def build_report(traces: Sequence[EpisodeTrace], episodes: Dataset | Iterable[Episode],
                 label: str | None = None, *, weighted: bool = False) -> RunReport:
    """Score ``traces`` against their episodes (episodes without a trace are skipped)."""
    by_id = {e.id: e for e in episodes}
    scores = []
    for t in traces:
        e = by_id.get(t.episode_id)
        if e is None:
            raise KeyError(f"trace for unknown episode {t.episode_id!r}")
        scores.append((e.subset, score_episode(t, e)))
    if label is None:
        label = traces[0].strategy if traces else "run"
    return RunReport(
        label,
        aggregate(scores, weighted=weighted),
        action_breakdown(traces, by_id),
        cost_summary(traces),
    )


def _f(x: float) -> str:
    return f"{x:.2f}"


def report_to_dict(r: RunReport) -> dict[str, Any]:
    out: dict[str, Any] = {
        "label": r.label,
        "scores": {
            "overall": r.subsets.overall,
            "weighted": r.subsets.weighted,
            "subsets": dict(sorted(r.subsets.subset_scores.items())),
            "episodes": dict(sorted(r.subsets.counts.items())),
        },
    }
    if r.breakdown is not None:
        out["actions"] = {
            "rows": [
                {"action": row.label, "predicted_ratio": row.predicted_ratio,
                 "accuracy_ratio": row.accuracy_ratio}
                for row in r.breakdown.rows
            ],
            "unparseable_ratio": r.breakdown.unparseable_ratio,
            "evaluated_turns": r.breakdown.total_turns,
        }
    if r.cost is not None:
        out["cost"] = asdict(r.cost)
    return out


def _tables(r: RunReport) -> list[tuple[str, list[list[str]]]]:
    subsets = sorted(r.subsets.subset_scores)
    tables = [(
        "scores",
        [["Model", "Overall", *subsets],
         [r.label, _f(r.subsets.overall), *(_f(r.subsets.subset_scores[s]) for s in subsets)]],
    )]
    if r.breakdown is not None:
        rows: list[ActionBreakdownRow] = list(r.breakdown.rows)
        tables.append((
            "actions (predicted / correct, % of evaluated turns)",
            [["Model", *(row.label for row in rows), "Unparseable"],
             [r.label, *(f"{_f(row.predicted_ratio)} / {_f(row.accuracy_ratio)}" for row in rows),
              _f(r.breakdown.unparseable_ratio)]],
        ))
    if r.cost is not None:
        tables.append((
            "cost",
            [["Model", "tokens/ep", "s/ep", "estimated"],
             [r.label, f"{r.cost.tokens_per_episode:.1f}", f"{r.cost.seconds_per_episode:.1f}",
              _f(r.cost.estimated_fraction)]],
        ))
    return tables


def render_report(r: RunReport, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report_to_dict(r), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for i, (title, rows) in enumerate(_tables(r)):
            if i:
                w.writerow([])
            w.writerow([f"# {title}"])
            w.writerows(rows)
        return buf.getvalue()
    if fmt == "text":
        parts = []
        for title, rows in _tables(r):
            widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
            lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
            lines.insert(1, "  ".join("-" * w for w in widths))
            parts.append(f"{title}\n" + "\n".join(lines))
        return "\n\n".join(parts) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def write_report(r: RunReport, path: str | Path, fmt: str = "text") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(r, fmt), encoding="utf-8")
    return path
