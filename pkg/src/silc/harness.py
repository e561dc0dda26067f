"""Phase-loop orchestration, evaluation groups, and transfer metrics.

A scenario run proceeds in phases. Each phase streams one skill dataset:
the registry appends that phase's skills, the decoder store appends a
partition (applying its retention strategy), and every evaluation task gets a
fresh task memory, decoder-derived labels, and a policy trained against the
phase's skill set. Phase-1 artifacts stay pinned: they are what backward
compatibility is measured against.

Evaluation builds two task-by-phase reward matrices:

    bwsc[t, p]  phase-1 policy of task t paired with the phase-p library
    fwsc[t, p]  phase-p policy of task t paired with the phase-p library

and the transfer metrics read off those matrices: FWT is a column, BWT the
mean delta of later columns against column 1, AUC the row mean. "Overall"
variants concatenate both matrices' rows.

Episode seeds derive from hashes of (run seed, task, policy phase, decoder
phase, episode, eval seed), never from shared RNG state, so any two interface
modes see identical environment randomness cell for cell.
"""

from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import (
    DecoderConfig,
    DecoderStore,
    HighLevelPolicy,
    act,
    assign_labels,
    decode,
    train_policy,
    update_decoder,
    PolicyConfig,
)
from .clustering import AnnotatedTransition
from .config import ScenarioConfig
from .errors import ContractViolation, DecoderMiss
from .interface import MODE_RANDOM_PROBE, InterfaceConfig, resolve
from .seeding import stable_seed
from .spaces import (
    SkillRegistry,
    SkillSpaceConfig,
    SubtaskSpaceConfig,
    TaskMemory,
    build_subtask_space,
    update_skill_space,
)
from .stageworld import (
    TASK_LENGTH,
    Task,
    annotate_pool,
    build_datastream,
    episode_over,
    generate_demos,
    observe,
    reset,
    step,
)

GROUP_BWSC = "bwsc"
GROUP_FWSC = "fwsc"
GROUP_OVERALL = "overall"

METRIC_NAMES = ("FWT_initial", "FWT_final", "BWT", "AUC")


@dataclass
class PhaseArtifacts:
    """Everything needed to evaluate against one phase's library state."""

    phase: int
    active: list[int]  # skill indices visible at this phase
    store: DecoderStore  # decoder partitions as of this phase's end
    policies: dict[str, HighLevelPolicy]
    task_memories: dict[str, TaskMemory]


@dataclass
class ScenarioRuntime:
    cfg: ScenarioConfig
    run_seed: int
    demo_pool: dict
    datasets: list[list[AnnotatedTransition]]
    registry: SkillRegistry
    store: DecoderStore
    per_phase: dict[int, PhaseArtifacts] = field(default_factory=dict)
    phases_done: int = 0


def build_runtime(cfg: ScenarioConfig, run_seed: int = 0, demo_pool=None, datasets=None) -> ScenarioRuntime:
    """Prepare a runtime: demo pool, per-phase datastream, empty artifacts.

    The demo pool and datasets can be supplied (e.g. loaded from files written
    by the data-generation command); otherwise they are generated here from
    the config's generation seed.
    """
    if demo_pool is None:
        demo_pool = generate_demos(
            cfg.tasks,
            cfg.sil.demos_per_task,
            cfg.env,
            cfg.expert,
            seed=stable_seed("demos", cfg.sil.seed),
        )
    if datasets is None:
        datasets, _ = build_datastream(demo_pool, cfg.tasks, cfg.scenario_type, cfg.phase_map, cfg.sil.m)
    registry = SkillRegistry(dimension=cfg.env.state_dim, distance_metric=cfg.interface.distance_metric)
    store = DecoderStore(strategy=cfg.sil.strategy, er_ratio=cfg.sil.er_ratio, seed=cfg.sil.seed)
    return ScenarioRuntime(
        cfg=cfg,
        run_seed=run_seed,
        demo_pool=demo_pool,
        datasets=datasets,
        registry=registry,
        store=store,
    )


def _select_task_transitions(runtime: ScenarioRuntime, task: Task) -> list[AnnotatedTransition]:
    """Demos for one task after shot selection and transition subsampling.

    Selection seeds depend only on (run seed, task), not on the phase, so
    policies trained at different phases see the same expert data.
    """
    cfg = runtime.cfg
    demos = runtime.demo_pool[task.task_id]
    shots = cfg.policy.shots
    if shots < len(demos):
        rng = np.random.default_rng(
            np.random.SeedSequence([stable_seed("shots", runtime.run_seed, task.task_id)])
        )
        chosen = sorted(rng.choice(len(demos), size=shots, replace=False))
        demos = [demos[i] for i in chosen]
    transitions = annotate_pool(demos, cfg.sil.m)
    ratio = cfg.policy.transition_ratio
    if ratio < 1.0:
        keep = max(1, int(round(ratio * len(transitions))))
        rng = np.random.default_rng(
            np.random.SeedSequence([stable_seed("ratio", runtime.run_seed, task.task_id)])
        )
        idx = sorted(rng.choice(len(transitions), size=keep, replace=False))
        transitions = [transitions[i] for i in idx]
    return transitions


def run_phase(runtime: ScenarioRuntime, p: int) -> list[int]:
    """Execute phase ``p``: skill-space update, decoder update, per-task training.

    Atomic: on any failure the runtime keeps its pre-phase artifacts. Returns
    the indices of the skills discovered this phase.
    """
    if p != runtime.phases_done + 1:
        raise ContractViolation(f"phases must run in order; expected {runtime.phases_done + 1}, got {p}")
    if not 1 <= p <= len(runtime.datasets):
        raise ContractViolation(f"no dataset for phase {p}")
    cfg = runtime.cfg

    registry = copy.deepcopy(runtime.registry)
    store = runtime.store.snapshot()

    new_indices = update_skill_space(
        runtime.datasets[p - 1],
        registry,
        SkillSpaceConfig(
            num_skills=cfg.sil.num_skills_per_phase,
            sub_clusters=cfg.sil.sub_clusters,
            seed=stable_seed("skills", runtime.run_seed, p),
            distance_metric=cfg.interface.distance_metric,
        ),
        phase=p,
    )
    update_decoder(runtime.datasets[p - 1], store, phase=p, seed=stable_seed("retain", runtime.run_seed, p))

    active = registry.indices_at_phase(p)
    policies: dict[str, HighLevelPolicy] = {}
    memories: dict[str, TaskMemory] = {}
    for task in cfg.tasks:
        transitions = _select_task_transitions(runtime, task)
        memories[task.task_id] = build_subtask_space(
            transitions,
            SubtaskSpaceConfig(
                num_subtasks=min(cfg.policy.num_subtasks, len(transitions)),
                sub_clusters=cfg.policy.sub_clusters,
                seed=stable_seed("subtask", runtime.run_seed, task.task_id),
                distance_metric=cfg.interface.distance_metric,
            ),
            task_id=task.task_id,
        )
        labeled = assign_labels(transitions, registry, store, active)
        policies[task.task_id] = train_policy(
            labeled,
            PolicyConfig(
                sub_clusters=cfg.policy.sub_clusters,
                seed=stable_seed("policy", runtime.run_seed, task.task_id, p),
                distance_metric=cfg.interface.distance_metric,
            ),
            task_id=task.task_id,
            phase=p,
        )

    # Commit point: nothing above touched the live runtime.
    runtime.registry = registry
    runtime.store = store
    runtime.per_phase[p] = PhaseArtifacts(
        phase=p,
        active=active,
        store=store.snapshot(),
        policies=policies,
        task_memories=memories,
    )
    runtime.phases_done = p
    return new_indices


def run_all_phases(runtime: ScenarioRuntime) -> None:
    for p in range(1, runtime.cfg.n_phases + 1):
        run_phase(runtime, p)


def run_episode(
    policy: HighLevelPolicy,
    registry: SkillRegistry,
    store: DecoderStore,
    task_memory: TaskMemory,
    task: Task,
    cfg: ScenarioConfig,
    episode_seed: int,
    active=None,
    icfg: InterfaceConfig | None = None,
    events: list | None = None,
    meta: dict | None = None,
) -> float:
    """One evaluation episode; returns the normalized score in [0, 100].

    Per step: high-level proposal, interface resolution, retrieval decode,
    environment step. A decoder miss substitutes a zero action and is logged.
    One trace entry is appended to ``events`` per executed step.
    """
    icfg = icfg or cfg.interface
    dcfg = DecoderConfig()
    env_cfg = cfg.env
    meta = meta or {}
    state = reset(task, env_cfg, episode_seed)
    total = 0.0
    step_i = 0
    noisy = env_cfg.obs_noise_scale > 0.0
    while not episode_over(state, env_cfg):
        obs = observe(state, env_cfg, seed=stable_seed("obs", episode_seed, step_i) if noisy else None)
        z_h = act(policy, obs)
        trace: dict | None = {} if events is not None else None
        probe_seed = (
            stable_seed("probe", episode_seed, step_i) if icfg.mode == MODE_RANDOM_PROBE else None
        )
        z_l = resolve(
            obs, z_h, task_memory, registry, icfg, active=active, probe_seed=probe_seed, trace=trace
        )
        try:
            action = decode(obs, z_l, registry, store, dcfg)
            miss = False
        except DecoderMiss:
            action = np.zeros(2)
            miss = True
        state, reward, _ = step(state, action, task, env_cfg)
        total += reward
        if events is not None:
            events.append({**meta, "t": step_i, **trace, "miss": miss})
        step_i += 1
    return 100.0 * total / TASK_LENGTH


@dataclass
class EvalMatrix:
    """Normalized rewards, tasks x phases, plus the per-seed breakdown."""

    group: str
    task_ids: list[str]
    rewards: np.ndarray  # (tasks, phases), mean over seeds and episodes
    per_seed: np.ndarray  # (seeds, tasks, phases)
    seeds: list[int]


def _pairings(group: str, p: int) -> int:
    return 1 if group == GROUP_BWSC else p


def evaluate_groups(runtime: ScenarioRuntime, icfg: InterfaceConfig | None = None, events: list | None = None):
    """Fill the BwSC and FwSC matrices by running evaluation episodes.

    Cell (task, phase) of BwSC pairs the task's phase-1 policy and task memory
    with the phase's library; FwSC pairs the phase's own policy. Every cell
    averages episodes_per_task episodes for each evaluation seed. SILC_THREADS
    caps worker threads (cells are independent and the fill order is fixed, so
    results do not depend on scheduling).
    """
    cfg = runtime.cfg
    if runtime.phases_done != cfg.n_phases:
        raise ContractViolation("evaluate_groups requires all phases to have run")
    icfg = icfg or cfg.interface
    task_ids = [t.task_id for t in cfg.tasks]
    tasks_by_id = {t.task_id: t for t in cfg.tasks}
    n_phases = cfg.n_phases
    seeds = list(cfg.eval.seeds)
    episodes = cfg.eval.episodes_per_task

    jobs = []
    for group in (GROUP_BWSC, GROUP_FWSC):
        for ti, task_id in enumerate(task_ids):
            for p in range(1, n_phases + 1):
                jobs.append((group, ti, task_id, p))

    def run_cell(job):
        group, ti, task_id, p = job
        policy_phase = _pairings(group, p)
        arts_policy = runtime.per_phase[policy_phase]
        arts_decoder = runtime.per_phase[p]
        cell = np.zeros((len(seeds), episodes))
        cell_events: list = [] if events is not None else None
        for si, eval_seed in enumerate(seeds):
            for e in range(episodes):
                ep_seed = stable_seed(
                    "episode", runtime.run_seed, task_id, policy_phase, p, e, eval_seed
                )
                meta = {
                    "group": group,
                    "task": task_id,
                    "phase": p,
                    "eval_seed": eval_seed,
                    "episode": e,
                }
                cell[si, e] = run_episode(
                    arts_policy.policies[task_id],
                    runtime.registry,
                    arts_decoder.store,
                    arts_policy.task_memories[task_id],
                    tasks_by_id[task_id],
                    cfg,
                    ep_seed,
                    active=arts_decoder.active,
                    icfg=icfg,
                    events=cell_events,
                    meta=meta,
                )
        return cell, cell_events

    threads = max(1, int(os.environ.get("SILC_THREADS", "1")))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_cell, jobs))
    else:
        outcomes = [run_cell(job) for job in jobs]

    per_seed = {
        GROUP_BWSC: np.zeros((len(seeds), len(task_ids), n_phases)),
        GROUP_FWSC: np.zeros((len(seeds), len(task_ids), n_phases)),
    }
    for job, (cell, cell_events) in zip(jobs, outcomes):
        group, ti, task_id, p = job
        per_seed[group][:, ti, p - 1] = cell.mean(axis=1)
        if events is not None:
            events.extend(cell_events)

    out = {}
    for group in (GROUP_BWSC, GROUP_FWSC):
        out[group] = EvalMatrix(
            group=group,
            task_ids=task_ids,
            rewards=per_seed[group].mean(axis=0),
            per_seed=per_seed[group],
            seeds=seeds,
        )
    return out


def overall_matrix(bwsc: EvalMatrix, fwsc: EvalMatrix) -> EvalMatrix:
    """Row concatenation of both groups; the paper-style center columns."""
    return EvalMatrix(
        group=GROUP_OVERALL,
        task_ids=[f"{GROUP_BWSC}:{t}" for t in bwsc.task_ids] + [f"{GROUP_FWSC}:{t}" for t in fwsc.task_ids],
        rewards=np.concatenate([bwsc.rewards, fwsc.rewards], axis=0),
        per_seed=np.concatenate([bwsc.per_seed, fwsc.per_seed], axis=1),
        seeds=bwsc.seeds,
    )


# -- metrics ---------------------------------------------------------------


def fwt(matrix: EvalMatrix, phase: int):
    """Forward transfer at one phase: that column, per task and averaged."""
    n_phases = matrix.rewards.shape[1]
    if not 1 <= phase <= n_phases:
        raise ContractViolation(f"phase must lie in 1..{n_phases}")
    col = matrix.rewards[:, phase - 1]
    return col.copy(), float(col.mean())


def bwt(matrix: EvalMatrix):
    """Backward transfer: mean delta of phases 2..P against phase 1, per task."""
    n_phases = matrix.rewards.shape[1]
    if n_phases < 2:
        raise ContractViolation("BWT needs at least two phases")
    deltas = matrix.rewards[:, 1:] - matrix.rewards[:, :1]
    per_task = deltas.mean(axis=1)
    return per_task, float(per_task.mean())


def auc(matrix: EvalMatrix):
    """Mean reward over phases, per task and averaged."""
    per_task = matrix.rewards.mean(axis=1)
    return per_task, float(per_task.mean())


def _metric_scalar(rewards: np.ndarray, metric: str) -> float:
    if metric == "FWT_initial":
        return float(rewards[:, 0].mean())
    if metric == "FWT_final":
        return float(rewards[:, -1].mean())
    if metric == "BWT":
        return float((rewards[:, 1:] - rewards[:, :1]).mean())
    if metric == "AUC":
        return float(rewards.mean())
    raise ContractViolation(f"unknown metric {metric!r}")


def metric_rows(matrices: dict) -> list[dict]:
    """Flat metric table: one row per (group, metric) with mean/std over seeds."""
    groups = dict(matrices)
    groups[GROUP_OVERALL] = overall_matrix(groups[GROUP_BWSC], groups[GROUP_FWSC])
    rows = []
    for group in (GROUP_BWSC, GROUP_FWSC, GROUP_OVERALL):
        matrix = groups[group]
        for metric in METRIC_NAMES:
            values = [_metric_scalar(matrix.per_seed[si], metric) for si in range(len(matrix.seeds))]
            rows.append(
                {
                    "group": group,
                    "metric": metric,
                    "mean": float(np.mean(values)),
                    "std": float(np.std(values)),
                }
            )
    return rows


# -- results bundle ----------------------------------------------------------


def _matrix_csv(matrix: EvalMatrix) -> str:
    n_phases = matrix.rewards.shape[1]
    lines = ["task," + ",".join(f"phase_{p}" for p in range(1, n_phases + 1))]
    for ti, task_id in enumerate(matrix.task_ids):
        lines.append(task_id + "," + ",".join(repr(float(v)) for v in matrix.rewards[ti]))
    return "\n".join(lines) + "\n"


def write_bundle(out_dir, matrices: dict, rows: list[dict], manifest: dict, events: list | None = None) -> None:
    """Write the results bundle: matrices/, metrics.csv, manifest.json, events."""
    out = Path(out_dir)
    (out / "matrices").mkdir(parents=True, exist_ok=True)
    for group in (GROUP_BWSC, GROUP_FWSC):
        (out / "matrices" / f"{group}.csv").write_text(_matrix_csv(matrices[group]))
    lines = ["group,metric,mean,std"]
    for row in rows:
        lines.append(f"{row['group']},{row['metric']},{row['mean']!r},{row['std']!r}")
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    if events is not None:
        with (out / "events.jsonl").open("w") as fh:
            for entry in events:
                fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
