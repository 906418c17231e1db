"""Command-line entry point: ``dpot {run,score,report,gen-synthetic,validate}``.

``run`` may talk to a model; ``score`` and ``report`` work from stored
traces alone. Every flag can also come from a JSON ``--config`` file
(keys are flag names without dashes, e.g. ``"max_tokens": 300``);
explicit flags win over the file, the file wins over defaults.
Exit status: 0 on success, 1 on a runtime error, 2 on bad usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .agent import ExternalPlans, Grounding, RunConfig, run_episodes
from .episode import (
    DatasetError,
    SyntheticParams,
    episode_from_record,
    generate_synthetic,
    load_dataset,
    save_dataset,
    validate_episode,
)
from .evaluation import aggregate, score_episode
from .gateway import API_KEY_ENV, DEFAULT_MODEL, DecodingConfig, HttpBackend, ScriptedBackend, load_scripts, save_scripts
from .prompts import StrategyKind
from .reporting import RunExistsError, build_report, init_run, load_traces, render_report
from .retrieval import Retriever
from .scripting import oracle_responses, wrong_responses

logger = logging.getLogger("dpot")


class UsageError(Exception):
    """Flag combination that cannot work; reported with exit status 2."""


# Flag defaults live here (not in argparse) so we can tell "not given"
# apart from "given with the default value" when checking conflicts.
DEFAULTS: dict[str, Any] = {
    "strategy": "dpot",
    "history_len": None,
    "max_turns": None,
    "backend": "scripted",
    "base_url": None,
    "model": DEFAULT_MODEL,
    "max_tokens": 300,
    "temperature": 0.0,
    "reference_k": 2,
    "grounding": "model",
    "plan_file": None,
    "parallel": 1,
    "store_prompts": False,
    "seed": 0,
    "subset": None,
    "scripts": None,
    "multimodal": False,
}


def _add_dataset(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--dataset", required=required, help="episode file, one JSON record per line")
    p.add_argument("--subset", action="append",
                   help="keep only this subset (repeatable; default: all)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpot", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--config", help="JSON file with flag values (flags override it)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    run = sub.add_parser("run", help="replay episodes under a strategy and store traces",
                         argument_default=argparse.SUPPRESS)
    _add_dataset(run, required=False)
    run.add_argument("--strategy", choices=StrategyKind.NAMES,
                     help="np, sp, dp, dpot, dpot-ref or react (default: dpot)")
    run.add_argument("--history-len", type=int,
                     help="react rounds kept in the prompt (default: all)")
    run.add_argument("--max-turns", type=int, help="turn limit (default: episode length)")
    run.add_argument("--backend", choices=("http", "scripted"), help="default: scripted")
    run.add_argument("--scripts", help="scripted responses, one {episode_id, responses} per line")
    run.add_argument("--base-url", help="chat-completions endpoint base; key read from " + API_KEY_ENV)
    run.add_argument("--model", help=f"model name (default: {DEFAULT_MODEL})")
    run.add_argument("--max-tokens", type=int, help="completion cap (default: 300)")
    run.add_argument("--temperature", type=float, help="sampling temperature (default: 0)")
    run.add_argument("--reference-k", type=int,
                     help="reference episodes for dpot-ref (default: 2)")
    run.add_argument("--grounding", choices=[g.value for g in Grounding],
                     help="turn a step into an action by model call or by grammar (default: model)")
    run.add_argument("--plan-file", help="external plans, one {episode_id, turn, plan, step?} per line")
    run.add_argument("--multimodal", action="store_true",
                     help="attach screenshot references to prompts (default: off)")
    run.add_argument("--out", help="run directory; its name is the run id")
    run.add_argument("--parallel", type=int, help="episodes run concurrently (default: 1)")
    run.add_argument("--store-prompts", action="store_true",
                     help="keep full prompt text in traces (default: digests only)")
    run.add_argument("--seed", type=int, help="recorded in the manifest (default: 0)")

    score = sub.add_parser("score", help="screen-wise action matching scores from traces")
    score.add_argument("--traces", required=True, help="run directory or trace file")
    _add_dataset(score)
    score.add_argument("--weighted", action="store_true",
                       help="overall = mean over episodes instead of over subsets")
    score.add_argument("--strict-type-text", action="store_true",
                       help="typed text must match exactly (default: type matches type)")
    score.add_argument("--out", help="write JSON here (default: stdout)")

    report = sub.add_parser("report", help="score, action and cost tables from traces")
    report.add_argument("--traces", required=True, help="run directory or trace file")
    _add_dataset(report)
    report.add_argument("--format", choices=("text", "csv", "json"), default="text",
                        help="default: text")
    report.add_argument("--label", help="row label (default: the strategy)")
    report.add_argument("--weighted", action="store_true")
    report.add_argument("--out", help="output file (default: stdout)")

    gen = sub.add_parser("gen-synthetic", help="write a deterministic synthetic dataset")
    gen.add_argument("--seed", type=int, default=0, help="default: 0")
    gen.add_argument("--n", type=int, default=50, help="episodes (default: 50)")
    gen.add_argument("--out", required=True, help="dataset file to write")
    gen.add_argument("--scripts-out", help="also write scripted responses for every episode")
    gen.add_argument("--script-kind", choices=("oracle", "wrong"), default="oracle",
                     help="responses that always or never match gold (default: oracle)")
    gen.add_argument("--strategy", choices=StrategyKind.NAMES, default="dpot",
                     help="strategy the scripts are shaped for (default: dpot)")
    gen.add_argument("--history-len", type=int)
    gen.add_argument("--grounding", choices=[g.value for g in Grounding], default="model")

    val = sub.add_parser("validate", help="check a dataset file and list every problem")
    val.add_argument("--dataset", required=True)
    return parser


# --- helpers ---------------------------------------------------------------


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    known = set(DEFAULTS) | {"dataset", "out"}
    unknown = sorted(set(k.replace("-", "_") for k in data) - known)
    if unknown:
        raise UsageError(f"config {path}: unknown keys {', '.join(unknown)}")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_run_options(ns: argparse.Namespace) -> tuple[dict[str, Any], set[str]]:
    """Merge defaults < config file < flags. Returns options and the keys set explicitly."""
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose", "config")}
    from_file = _load_config(ns.config)
    opts = {**DEFAULTS, **from_file, **given}
    return opts, set(from_file) | set(given)


def _strategy(name: str, history_len: int | None) -> StrategyKind:
    try:
        return StrategyKind(name, history_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def check_run_options(opts: dict[str, Any], explicit: set[str]) -> StrategyKind:
    if not opts.get("dataset"):
        raise UsageError("run needs --dataset")
    if not opts.get("out"):
        raise UsageError("run needs --out")
    name = opts["strategy"]
    if name not in StrategyKind.NAMES:
        raise UsageError(f"unknown strategy {name!r}")
    if "history_len" in explicit and opts["history_len"] is not None and name != "react":
        raise UsageError("--history-len only applies to --strategy react")
    if "reference_k" in explicit and name != "dpot-ref":
        raise UsageError("--reference-k needs a retrieval strategy (dpot-ref)")
    if opts["reference_k"] < 1:
        raise UsageError("--reference-k must be positive")
    if opts["plan_file"] and not StrategyKind(name).plans:
        raise UsageError(f"--plan-file needs a planning strategy, not {name}")
    if "grounding" in explicit and name not in ("dp", "dpot", "dpot-ref"):
        raise UsageError("--grounding applies to dp, dpot and dpot-ref")
    if opts["backend"] == "scripted":
        if not opts["scripts"]:
            raise UsageError("--backend scripted needs --scripts")
        if opts["base_url"]:
            raise UsageError("--base-url needs --backend http")
    else:
        if opts["scripts"]:
            raise UsageError("--scripts needs --backend scripted")
        if not opts["base_url"]:
            raise UsageError("--backend http needs --base-url")
    if opts["parallel"] < 1:
        raise UsageError("--parallel must be at least 1")
    if opts["max_turns"] is not None and opts["max_turns"] < 1:
        raise UsageError("--max-turns must be positive")
    return _strategy(name, opts["history_len"])


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- commands --------------------------------------------------------------


def cmd_run(ns: argparse.Namespace) -> int:
    opts, explicit = resolve_run_options(ns)
    strategy = check_run_options(opts, explicit)
    dataset = load_dataset(opts["dataset"], opts["subset"])
    if not dataset.episodes:
        raise UsageError("no episodes selected")

    cfg = RunConfig(
        strategy=strategy,
        max_turns=opts["max_turns"],
        decoding=DecodingConfig(opts["model"], opts["max_tokens"], opts["temperature"]),
        plan_source=ExternalPlans.load(opts["plan_file"]) if opts["plan_file"] else None,
        grounding=Grounding(opts["grounding"]),
        store_prompts=bool(opts["store_prompts"]),
        multimodal=bool(opts["multimodal"]),
    )
    retriever = None
    if strategy.name == "dpot-ref":
        # the reference pool is the whole file, not just the selected subsets
        pool = load_dataset(opts["dataset"]) if opts["subset"] else dataset
        retriever = Retriever(pool, k=opts["reference_k"])

    if opts["backend"] == "scripted":
        scripts = load_scripts(opts["scripts"])
        missing = [e.id for e in dataset if e.id not in scripts]
        if missing:
            raise UsageError(f"no scripted responses for {len(missing)} episode(s), e.g. {missing[0]}")

        def backend_for(e):
            return ScriptedBackend(scripts[e.id])
        backend_name = f"scripted:{opts['scripts']}"
    else:
        http = HttpBackend(opts["base_url"])

        def backend_for(e):
            return http
        backend_name = http.identity

    config_snapshot = {k: opts[k] for k in sorted(DEFAULTS)} | {"strategy": strategy.label}
    writer = init_run(opts["out"], config_snapshot,
                      {"source": dataset.manifest.source, "counts": dataset.manifest.counts},
                      backend_name)
    done = threading.Lock()
    finished = [0]

    def on_trace(trace):
        writer.write_trace(trace)
        with done:
            finished[0] += 1
            logger.info("[%d/%d] %s: %d turns, %s", finished[0], len(dataset), trace.episode_id,
                        len(trace.turns), trace.error or trace.terminated_by.value)

    traces = run_episodes(dataset, cfg, backend_for, retriever,
                          parallel=opts["parallel"], on_trace=on_trace)
    writer.finish()
    aborted = sum(t.aborted for t in traces)
    print(f"{len(traces)} episodes ({aborted} aborted), traces in {writer.trace_path}")
    return 1 if aborted else 0


def _score_doc(ns: argparse.Namespace) -> dict[str, Any]:
    dataset = load_dataset(ns.dataset, ns.subset)
    by_id = dataset.by_id()
    traces = [t for t in load_traces(ns.traces) if t.episode_id in by_id]
    if not traces:
        raise UsageError("no traces match the selected episodes")
    kw = {"strict_type_text": ns.strict_type_text}
    scores = {t.episode_id: (by_id[t.episode_id].subset, score_episode(t, by_id[t.episode_id], **kw))
              for t in traces}
    rep = aggregate(list(scores.values()), weighted=ns.weighted)
    return {
        "overall": rep.overall,
        "weighted": rep.weighted,
        "subsets": rep.subset_scores,
        "counts": rep.counts,
        "episodes": {eid: {"subset": sub, "correct": s.correct, "total": s.total, "score": s.score}
                     for eid, (sub, s) in sorted(scores.items())},
        "unscored": sorted(set(by_id) - set(scores)),
    }


def cmd_score(ns: argparse.Namespace) -> int:
    doc = _score_doc(ns)
    _write_or_print(json.dumps(doc, indent=2, sort_keys=True) + "\n", ns.out)
    if ns.out:
        print(f"overall {doc['overall']:.2f} over {len(doc['counts'])} subset(s) -> {ns.out}")
    return 0


def cmd_report(ns: argparse.Namespace) -> int:
    dataset = load_dataset(ns.dataset, ns.subset)
    by_id = dataset.by_id()
    traces = [t for t in load_traces(ns.traces) if t.episode_id in by_id]
    if not traces:
        raise UsageError("no traces match the selected episodes")
    rep = build_report(traces, dataset, ns.label, weighted=ns.weighted)
    _write_or_print(render_report(rep, ns.format), ns.out)
    return 0


def cmd_gen_synthetic(ns: argparse.Namespace) -> int:
    if ns.n < 1:
        raise UsageError("--n must be positive")
    ds = generate_synthetic(ns.seed, ns.n, SyntheticParams())
    save_dataset(ds, ns.out)
    msg = f"{len(ds)} episodes -> {ns.out}"
    if ns.scripts_out:
        strategy = _strategy(ns.strategy, ns.history_len)
        make = oracle_responses if ns.script_kind == "oracle" else wrong_responses
        save_scripts({e.id: make(e, strategy, ns.grounding) for e in ds}, ns.scripts_out)
        msg += f", {ns.script_kind} scripts for {strategy.label} -> {ns.scripts_out}"
    print(msg)
    return 0


def cmd_validate(ns: argparse.Namespace) -> int:
    try:
        lines = Path(ns.dataset).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {ns.dataset}: {exc}") from exc
    problems = 0
    count = 0
    seen: set[str] = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        count += 1
        try:
            e = episode_from_record(json.loads(line))
        except (ValueError, TypeError) as exc:
            print(f"{ns.dataset}:{lineno}: {exc}")
            problems += 1
            continue
        if e.id in seen:
            print(f"{ns.dataset}:{lineno}: duplicate episode id {e.id!r}")
            problems += 1
        seen.add(e.id)
        for v in validate_episode(e):
            print(f"{ns.dataset}:{lineno}: {e.id}: {v}")
            problems += 1
    print(f"{count} record(s), {problems} problem(s)")
    return 1 if problems else 0


COMMANDS = {
    "run": cmd_run,
    "score": cmd_score,
    "report": cmd_report,
    "gen-synthetic": cmd_gen_synthetic,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if ns.command != "run" and ns.config:
        # only run has model-facing flags worth keeping in a file
        parser.error("--config applies to run")
    try:
        return COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(f"dpot {ns.command}: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, RunExistsError, OSError, ValueError, KeyError) as exc:
        print(f"dpot {ns.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
