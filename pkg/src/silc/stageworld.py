"""StageWorld: ordered-object activation in the unit square.

A point agent moves in [0,1]^2 among N fixed objects. A task is an ordered
sequence of 4 distinct objects; touching the *next expected* object flags it
and scores one point (touching anything else does nothing), so an episode's
reward lies in {0..4} and normalizes to a 0-100 score. The observation is
(agent position, object flags), optionally with Gaussian noise on the
continuous dimensions.

The module also carries the scripted expert used to generate demonstrations,
and the datastream builders that split a demo pool into per-phase skill
datasets for the two scenario flavors:

    emergent  whole trajectories grouped by task, task identity stripped
    explicit  trajectories cut at stage boundaries, clips grouped by object

Everything is driven by explicit seeds; dynamics themselves are deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import AnnotatedTransition, annotate_subgoals
from .errors import ContractViolation, GenerationError

OBS_NOISE_BASE_STD = 0.01
RESET_JITTER_RADIUS = 0.02
TASK_LENGTH = 4


def ring_layout(n_objects: int, radius: float = 0.4, center=(0.5, 0.5)) -> list[np.ndarray]:
    """Evenly spaced object positions on a circle."""
    cx, cy = center
    return [
        np.array([cx + radius * math.cos(2 * math.pi * i / n_objects),
                  cy + radius * math.sin(2 * math.pi * i / n_objects)])
        for i in range(n_objects)
    ]


@dataclass
class EnvConfig:
    n_objects: int = 8
    object_positions: list = None
    contact_radius: float = 0.05
    max_step: float = 0.05
    episode_len: int = 200
    obs_noise_scale: float = 0.0

    def __post_init__(self):
        if self.n_objects < 4:
            raise ContractViolation("need at least 4 objects")
        if self.object_positions is None:
            self.object_positions = ring_layout(self.n_objects)
        self.object_positions = [np.asarray(p, dtype=np.float64) for p in self.object_positions]
        if len(self.object_positions) != self.n_objects:
            raise ContractViolation("object_positions length must equal n_objects")
        for i, p in enumerate(self.object_positions):
            for q in self.object_positions[i + 1 :]:
                if np.array_equal(p, q):
                    raise ContractViolation("object positions must be pairwise distinct")
        if self.contact_radius <= 0 or self.max_step <= 0 or self.episode_len <= 0:
            raise ContractViolation("contact_radius, max_step, episode_len must be positive")
        if self.obs_noise_scale < 0:
            raise ContractViolation("obs_noise_scale must be nonnegative")

    @property
    def state_dim(self) -> int:
        return 2 + self.n_objects


@dataclass
class Task:
    task_id: str
    sequence: list[int]

    def __post_init__(self):
        if len(self.sequence) != TASK_LENGTH or len(set(self.sequence)) != TASK_LENGTH:
            raise ContractViolation(f"task {self.task_id}: sequence must be 4 distinct object indices")


@dataclass
class EnvState:
    agent_pos: np.ndarray
    flags: np.ndarray  # bool, one per object
    next_expected: int  # position in the task sequence, 0..4
    t: int

    @property
    def done(self) -> bool:
        return self.next_expected >= TASK_LENGTH


def reset(task: Task, cfg: EnvConfig, seed: int) -> EnvState:
    """Start at the center plus a small seeded jitter, all flags cleared."""
    if any(i >= cfg.n_objects or i < 0 for i in task.sequence):
        raise ContractViolation(f"task {task.task_id} references objects outside 0..{cfg.n_objects - 1}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF]))
    r = RESET_JITTER_RADIUS * math.sqrt(rng.random())
    theta = 2 * math.pi * rng.random()
    pos = np.array([0.5 + r * math.cos(theta), 0.5 + r * math.sin(theta)])
    return EnvState(agent_pos=pos, flags=np.zeros(cfg.n_objects, dtype=bool), next_expected=0, t=0)


def episode_over(state: EnvState, cfg: EnvConfig) -> bool:
    return state.done or state.t >= cfg.episode_len


def step(state: EnvState, action, task: Task, cfg: EnvConfig) -> tuple[EnvState, float, bool]:
    """Advance one step: clipped move, then ordered-contact check."""
    if episode_over(state, cfg):
        raise ContractViolation("step() called on a finished episode")
    a = np.asarray(action, dtype=np.float64)
    norm = float(np.linalg.norm(a))
    if norm > cfg.max_step:
        a = a * (cfg.max_step / norm)
    pos = np.clip(state.agent_pos + a, 0.0, 1.0)

    flags = state.flags.copy()
    next_expected = state.next_expected
    reward = 0.0
    target_obj = task.sequence[next_expected]
    if np.linalg.norm(pos - cfg.object_positions[target_obj]) <= cfg.contact_radius:
        flags[target_obj] = True
        next_expected += 1
        reward = 1.0

    new_state = EnvState(agent_pos=pos, flags=flags, next_expected=next_expected, t=state.t + 1)
    done = new_state.done or new_state.t >= cfg.episode_len
    return new_state, reward, done


def observe(state: EnvState, cfg: EnvConfig, seed: int | None = None) -> np.ndarray:
    """State vector (position, flags as 0/1), noisy on the continuous dims only."""
    vec = np.concatenate([state.agent_pos, state.flags.astype(np.float64)])
    if cfg.obs_noise_scale > 0.0:
        if seed is None:
            raise ContractViolation("observation noise requires a seed")
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF]))
        vec[:2] += rng.normal(0.0, cfg.obs_noise_scale * OBS_NOISE_BASE_STD, size=2)
    return vec


@dataclass
class ExpertConfig:
    gain: float = 1.0
    noise_std: float = 0.005


def scripted_expert(state: EnvState, task: Task, cfg: EnvConfig, expert: ExpertConfig, rng) -> tuple[np.ndarray, int]:
    """Proportional controller toward the next expected object.

    Returns (action, segment label); the label is the stage index and is
    ground truth for tests only - it never reaches the learner.
    """
    if episode_over(state, cfg):
        raise ContractViolation("expert queried on a finished episode")
    target = cfg.object_positions[task.sequence[state.next_expected]]
    a = expert.gain * (target - state.agent_pos)
    if expert.noise_std > 0.0:
        a = a + rng.normal(0.0, expert.noise_std, size=2)
    norm = float(np.linalg.norm(a))
    if norm > cfg.max_step:
        a = a * (cfg.max_step / norm)
    return a, state.next_expected


@dataclass
class Trajectory:
    """One rollout: per-step observed states, actions, and stage labels."""

    task_id: str
    episode_id: int
    states: list  # observed state vectors, one per executed action
    actions: list
    labels: list  # ground-truth stage index per step (sidecar only)
    reward: float


def rollout_expert(task: Task, cfg: EnvConfig, expert: ExpertConfig, seed: int, episode_id: int = 0) -> Trajectory:
    state = reset(task, cfg, seed)
    noise_rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 1]))
    states, actions, labels = [], [], []
    total = 0.0
    t = 0
    while not episode_over(state, cfg):
        obs = observe(state, cfg, seed=((seed & 0xFFFFFFFF) << 12) + t if cfg.obs_noise_scale > 0 else None)
        action, label = scripted_expert(state, task, cfg, expert, noise_rng)
        states.append(obs)
        actions.append(action)
        labels.append(label)
        state, r, _ = step(state, action, task, cfg)
        total += r
        t += 1
    return Trajectory(task_id=task.task_id, episode_id=episode_id, states=states, actions=actions, labels=labels, reward=total)


def generate_demos(tasks, n_per_task: int, cfg: EnvConfig, expert: ExpertConfig, seed: int) -> dict[str, list[Trajectory]]:
    """Seeded expert rollouts; failures are resampled within a 10x budget."""
    if n_per_task < 1:
        raise ContractViolation("n_per_task must be >= 1")
    pool: dict[str, list[Trajectory]] = {}
    for ti, task in enumerate(tasks):
        demos = []
        attempts = 0
        budget = 10 * n_per_task
        while len(demos) < n_per_task and attempts < budget:
            ep_seed = ((seed & 0xFFFF) << 20) | (ti << 12) | attempts
            traj = rollout_expert(task, cfg, expert, ep_seed, episode_id=len(demos))
            attempts += 1
            if traj.reward >= TASK_LENGTH:
                demos.append(traj)
        if len(demos) < n_per_task:
            raise GenerationError(
                f"task {task.task_id}: only {len(demos)}/{n_per_task} successful demos in {budget} attempts"
            )
        pool[task.task_id] = demos
    return pool


# -- datastream construction ----------------------------------------------

SCENARIO_EMERGENT = "emergent"
SCENARIO_EXPLICIT = "explicit"


def _clip_boundaries(labels) -> list[tuple[int, int]]:
    """Half-open [start, end) spans of constant label."""
    spans = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            spans.append((start, i))
            start = i
    return spans


def datastream_trajectories(demo_pool, tasks, scenario_type: str, phase_map: dict) -> list[list[Trajectory]]:
    """Route demo trajectories (or their stage clips) into per-phase streams.

    ``phase_map`` maps task ids (emergent) or object indices (explicit) to
    1-based contiguous phase indices. Streamed trajectories have task identity
    stripped; their ``labels`` carry the ground truth (stage index for
    emergent, object index for explicit) consumed only by sidecar files and
    tests.
    """
    if scenario_type not in (SCENARIO_EMERGENT, SCENARIO_EXPLICIT):
        raise ContractViolation(f"unknown scenario type {scenario_type!r}")
    task_by_id = {t.task_id: t for t in tasks}
    phases = sorted(set(phase_map.values()))
    if not phases or phases != list(range(1, len(phases) + 1)):
        raise ContractViolation(f"phase indices must be contiguous starting at 1, got {phases}")
    streams: list[list[Trajectory]] = [[] for _ in phases]

    if scenario_type == SCENARIO_EMERGENT:
        for task_id in sorted(demo_pool):
            if task_id not in phase_map:
                raise ContractViolation(f"phase_map is missing task {task_id!r}")
            p = phase_map[task_id] - 1
            for traj in demo_pool[task_id]:
                streams[p].append(
                    Trajectory(
                        task_id="",
                        episode_id=len(streams[p]),
                        states=traj.states,
                        actions=traj.actions,
                        labels=traj.labels,
                        reward=traj.reward,
                    )
                )
    else:
        for task_id in sorted(demo_pool):
            task = task_by_id[task_id]
            for traj in demo_pool[task_id]:
                for start, end in _clip_boundaries(traj.labels):
                    obj = task.sequence[traj.labels[start]]
                    if obj not in phase_map:
                        raise ContractViolation(f"phase_map is missing object {obj}")
                    p = phase_map[obj] - 1
                    streams[p].append(
                        Trajectory(
                            task_id="",
                            episode_id=len(streams[p]),
                            states=traj.states[start:end],
                            actions=traj.actions[start:end],
                            labels=[obj] * (end - start),
                            reward=0.0,
                        )
                    )

    for p, stream in enumerate(streams):
        if not stream:
            raise ContractViolation(f"phase {p + 1} received no data")
    return streams


def build_datastream(demo_pool, tasks, scenario_type: str, phase_map: dict, m: int):
    """Split a demo pool into per-phase, subgoal-annotated skill datasets.

    Returns (datasets, label_sidecars): ``datasets[p-1]`` is the transition
    list streamed at phase p, annotated within each trajectory or clip, and
    the sidecar holds matching ground-truth labels, for tests only. Together
    the datasets partition the pool.
    """
    streams = datastream_trajectories(demo_pool, tasks, scenario_type, phase_map)
    datasets, sidecars = [], []
    for stream in streams:
        annotated, labels = [], []
        for traj in stream:
            annotated.extend(
                annotate_subgoals(list(zip(traj.states, traj.actions)), m, episode_id=traj.episode_id)
            )
            labels.extend(traj.labels)
        datasets.append(annotated)
        sidecars.append(labels)
    return datasets, sidecars


# -- JSON Lines persistence ------------------------------------------------


def write_trajectories_jsonl(path, trajectories, strip_task: bool = False) -> None:
    """One record per transition: ep, task, t, state, action, done."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for traj in trajectories:
            last = len(traj.states) - 1
            for t in range(len(traj.states)):
                rec = {
                    "ep": traj.episode_id,
                    "task": "" if strip_task else traj.task_id,
                    "t": t,
                    "state": [float(v) for v in traj.states[t]],
                    "action": [float(v) for v in traj.actions[t]],
                    "done": t == last,
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_labels_jsonl(path, trajectories) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for traj in trajectories:
            for t, label in enumerate(traj.labels):
                fh.write(json.dumps({"ep": traj.episode_id, "t": t, "label": int(label)}, separators=(",", ":")) + "\n")


def read_trajectories_jsonl(path) -> list[Trajectory]:
    """Rebuild trajectories (without labels) from a transitions file."""
    by_ep: dict[int, Trajectory] = {}
    with Path(path).open() as fh:
        for line in fh:
            rec = json.loads(line)
            traj = by_ep.get(rec["ep"])
            if traj is None:
                traj = Trajectory(task_id=rec["task"], episode_id=rec["ep"], states=[], actions=[], labels=[], reward=0.0)
                by_ep[rec["ep"]] = traj
            traj.states.append(np.asarray(rec["state"], dtype=np.float64))
            traj.actions.append(np.asarray(rec["action"], dtype=np.float64))
    return [by_ep[ep] for ep in sorted(by_ep)]


def annotate_pool(trajectories, m: int) -> list[AnnotatedTransition]:
    """Concatenate trajectories into one subgoal-annotated transition list."""
    out = []
    for traj in trajectories:
        out.extend(annotate_subgoals(list(zip(traj.states, traj.actions)), m, episode_id=traj.episode_id))
    return out
