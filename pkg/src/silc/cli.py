"""Command-line front end: data generation, scenario execution, reporting.

Exit codes are a stable contract: 0 success, 2 configuration error, 3 data
generation error, 4 runtime (phase) failure. ``--override section.key=value``
edits the effective config (and therefore its hash); ``--seed`` only shifts
episode and clustering randomness and never the hash.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

from . import __version__
from .config import apply_overrides, canonical_hash, parse_config
from .errors import ConfigError, ContractViolation, GenerationError
from .harness import (
    GROUP_BWSC,
    GROUP_FWSC,
    build_runtime,
    evaluate_groups,
    metric_rows,
    run_phase,
    write_bundle,
)
from .interface import MODE_FULL, MODE_PASSTHROUGH, MODE_RANDOM_PROBE, InterfaceConfig
from .seeding import stable_seed
from .stageworld import (
    build_datastream,
    datastream_trajectories,
    generate_demos,
    read_trajectories_jsonl,
    write_labels_jsonl,
    write_trajectories_jsonl,
    annotate_pool,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_MODE_FLAG = {"full": MODE_FULL, "passthrough": MODE_PASSTHROUGH, "random": MODE_RANDOM_PROBE}


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _load_effective_config(args):
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    doc = apply_overrides(doc, getattr(args, "override", None))
    if getattr(args, "mode", None):
        doc = apply_overrides(doc, [f"interface.mode={_MODE_FLAG[args.mode]}"])
    return parse_config(doc), doc


def cmd_gen_data(args) -> int:
    try:
        cfg, doc = _load_effective_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    started = _utcnow()
    try:
        pool = generate_demos(
            cfg.tasks,
            cfg.sil.demos_per_task,
            cfg.env,
            cfg.expert,
            seed=stable_seed("demos", cfg.sil.seed, args.seed),
        )
        streams = datastream_trajectories(pool, cfg.tasks, cfg.scenario_type, cfg.phase_map)
    except GenerationError as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractViolation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for task_id in sorted(pool):
        write_trajectories_jsonl(out / "demos" / f"{task_id}.jsonl", pool[task_id])
        write_labels_jsonl(out / "demos" / f"{task_id}.labels.jsonl", pool[task_id])
    for p, stream in enumerate(streams, start=1):
        write_trajectories_jsonl(out / "phases" / f"phase_{p}.jsonl", stream, strip_task=True)
        write_labels_jsonl(out / "phases" / f"phase_{p}.labels.jsonl", stream)
    manifest = {
        "config_hash": canonical_hash(doc),
        "tool_version": __version__,
        "seed": args.seed,
        "n_phases": len(streams),
        "tasks": [t.task_id for t in cfg.tasks],
        "demos_per_task": cfg.sil.demos_per_task,
        "timestamps": {"start": started, "end": _utcnow()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _load_datastream(cfg, data_dir: Path):
    pool = {}
    for task in cfg.tasks:
        path = data_dir / "demos" / f"{task.task_id}.jsonl"
        if not path.exists():
            raise ConfigError(f"datastream at {data_dir} has no demos for task {task.task_id!r}")
        demos = read_trajectories_jsonl(path)
        for traj in demos:
            traj.task_id = task.task_id
        pool[task.task_id] = demos
    datasets = []
    for p in range(1, cfg.n_phases + 1):
        path = data_dir / "phases" / f"phase_{p}.jsonl"
        if not path.exists():
            raise ConfigError(f"datastream at {data_dir} is missing phase file {path.name}")
        datasets.append(annotate_pool(read_trajectories_jsonl(path), cfg.sil.m))
    return pool, datasets


def cmd_run(args) -> int:
    try:
        cfg, doc = _load_effective_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    started = _utcnow()
    manifest = {
        "config_hash": canonical_hash(doc),
        "tool_version": __version__,
        "seed": args.seed,
        "seeds": list(cfg.eval.seeds),
        "mode": cfg.interface.mode,
        "strategy": cfg.sil.strategy,
        "tasks": [t.task_id for t in cfg.tasks],
        "partial": False,
        "timestamps": {"start": started, "end": None},
    }

    try:
        if args.data:
            pool, datasets = _load_datastream(cfg, Path(args.data))
        else:
            pool = datasets = None
    except ConfigError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        runtime = build_runtime(cfg, run_seed=args.seed, demo_pool=pool, datasets=datasets)
    except GenerationError as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_DATA

    try:
        for p in range(1, cfg.n_phases + 1):
            run_phase(runtime, p)
    except Exception as exc:  # phase failures leave prior artifacts intact
        manifest["partial"] = True
        manifest["error"] = str(exc)
        manifest["phases_done"] = runtime.phases_done
        manifest["timestamps"]["end"] = _utcnow()
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        print(f"runtime error in phase {runtime.phases_done + 1}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    events: list = []
    matrices = evaluate_groups(runtime, events=events)
    rows = metric_rows(matrices)
    manifest["timestamps"]["end"] = _utcnow()
    write_bundle(out, matrices, rows, manifest, events=events)
    return EXIT_OK


def _read_bundle(path: Path):
    manifest = json.loads((path / "manifest.json").read_text())
    rows = []
    lines = (path / "metrics.csv").read_text().strip().splitlines()
    for line in lines[1:]:
        group, metric, mean, std = line.split(",")
        rows.append({"group": group, "metric": metric, "mean": float(mean), "std": float(std)})
    return manifest, rows


_MD_COLUMNS = [
    ("Initial", GROUP_BWSC, "FWT_initial"),
    ("BwSC BWT", GROUP_BWSC, "BWT"),
    ("BwSC AUC", GROUP_BWSC, "AUC"),
    ("Overall BWT", "overall", "BWT"),
    ("Overall AUC", "overall", "AUC"),
    ("FwSC BWT", GROUP_FWSC, "BWT"),
    ("FwSC AUC", GROUP_FWSC, "AUC"),
    ("Final", GROUP_FWSC, "FWT_final"),
]


def cmd_report(args) -> int:
    bundles = []
    for path in args.inputs:
        path = Path(path)
        try:
            bundles.append(_read_bundle(path))
        except (OSError, json.JSONDecodeError, ValueError) as exc:
            print(f"config error: cannot read bundle {path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    rosters = {tuple(m.get("tasks", [])) for m, _ in bundles}
    if len(rosters) > 1:
        print("config error: bundles have different task rosters", file=sys.stderr)
        return EXIT_CONFIG

    merged: dict[str, dict[tuple, list[float]]] = {}
    for manifest, rows in bundles:
        method = f"{manifest.get('strategy', '?')}+{manifest.get('mode', '?')}"
        cells = merged.setdefault(method, {})
        for row in rows:
            cells.setdefault((row["group"], row["metric"]), []).append(row["mean"])

    import numpy as np

    if args.format == "csv":
        print("method,group,metric,mean,std")
        for method in sorted(merged):
            for (group, metric), values in sorted(merged[method].items()):
                print(f"{method},{group},{metric},{float(np.mean(values))!r},{float(np.std(values))!r}")
    else:
        header = "| method | " + " | ".join(name for name, _, _ in _MD_COLUMNS) + " |"
        sep = "|" + "---|" * (len(_MD_COLUMNS) + 1)
        print(header)
        print(sep)
        for method in sorted(merged):
            cells = [method]
            for _, group, metric in _MD_COLUMNS:
                values = merged[method].get((group, metric), [])
                if not values:
                    cells.append("-")
                else:
                    cells.append(f"{float(np.mean(values)):.1f} ± {float(np.std(values)):.1f}")
            print("| " + " | ".join(cells) + " |")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="silc", description="Skill-library compatibility scenarios")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the demo pool and per-phase datastream")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    gen.set_defaults(func=cmd_gen_data)

    run = sub.add_parser("run", help="execute a scenario and write a results bundle")
    run.add_argument("--config", required=True)
    run.add_argument("--data", default=None, help="datastream directory from gen-data (else in-memory)")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--mode", choices=sorted(_MODE_FLAG), default=None)
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="merge results bundles into a table")
    rep.add_argument("--in", dest="inputs", nargs="+", required=True)
    rep.add_argument("--format", choices=["csv", "md"], default="csv")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
