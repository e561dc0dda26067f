"""Skill-side and task-side prototype space construction.

The skill registry is the append-only index of every skill ever discovered:
per skill it keeps the phase that introduced it, a representative subgoal
embedding (medoid of the skill group's subgoals), and one multimodal prototype
in each of two shared memories — state space and subgoal space.

Task memories are the per-task counterpart: subtask prototypes over the
states of each subgoal group in the task's demonstrations, plus one
representative subgoal vector per group, which is what the interface hands to
the skill-side validator at inference time.

Both builders share a pipeline: segment transitions by subgoal, K-means each
group into sub-clusters, fit one diagonal Gaussian per sub-cluster.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import auto_k, kmeans, segment_by_subgoal
from .errors import ContractViolation
from .gauss import DEFAULT_VARIANCE_FLOOR, fit_diag_gaussian
from .memory import METRIC_MAHALANOBIS, Prototype, PrototypeMemory

AUTO_K_RANGE = (2, 8)


@dataclass
class SkillSpaceConfig:
    num_skills: int = 20
    sub_clusters: int | str = 4  # int, or "auto" for silhouette selection
    seed: int = 0
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    distance_metric: str = METRIC_MAHALANOBIS


@dataclass
class SubtaskSpaceConfig:
    num_subtasks: int = 20
    sub_clusters: int | str = 4
    seed: int = 0
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    distance_metric: str = METRIC_MAHALANOBIS


@dataclass
class SkillInfo:
    index: int
    phase_introduced: int
    subgoal_embedding: np.ndarray


@dataclass
class SkillRegistry:
    """Append-only skill index with paired state/goal prototype memories."""

    dimension: int
    distance_metric: str = METRIC_MAHALANOBIS
    skills: list[SkillInfo] = field(default_factory=list)
    state_memory: PrototypeMemory = None
    goal_memory: PrototypeMemory = None

    def __post_init__(self):
        if self.state_memory is None:
            self.state_memory = PrototypeMemory(self.dimension, distance_metric=self.distance_metric)
        if self.goal_memory is None:
            self.goal_memory = PrototypeMemory(self.dimension, distance_metric=self.distance_metric)

    def __len__(self) -> int:
        return len(self.skills)

    @property
    def indices(self) -> list[int]:
        return [s.index for s in self.skills]

    def subgoal_embedding(self, index: int) -> np.ndarray:
        return self.skills[index].subgoal_embedding

    def indices_at_phase(self, phase: int) -> list[int]:
        """Skill indices visible at the end of ``phase`` (cumulative)."""
        return [s.index for s in self.skills if s.phase_introduced <= phase]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "dimension": self.dimension,
            "distance_metric": self.distance_metric,
            "skills": [
                {
                    "index": s.index,
                    "phase_introduced": s.phase_introduced,
                    "subgoal_embedding": [float(v) for v in s.subgoal_embedding],
                }
                for s in self.skills
            ],
        }
        (directory / "registry.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        self.state_memory.save(directory, stem="states")
        self.goal_memory.save(directory, stem="goals")

    @classmethod
    def load(cls, directory) -> "SkillRegistry":
        directory = Path(directory)
        meta = json.loads((directory / "registry.json").read_text())
        reg = cls(
            dimension=meta["dimension"],
            distance_metric=meta["distance_metric"],
            state_memory=PrototypeMemory.load(directory, stem="states"),
            goal_memory=PrototypeMemory.load(directory, stem="goals"),
        )
        reg.skills = [
            SkillInfo(
                index=s["index"],
                phase_introduced=s["phase_introduced"],
                subgoal_embedding=np.asarray(s["subgoal_embedding"], dtype=np.float64),
            )
            for s in meta["skills"]
        ]
        return reg


@dataclass
class TaskMemory:
    """Per-task subtask prototypes plus representative subgoals per group."""

    task_id: str
    subtask_prototypes: PrototypeMemory
    subgoal_reps: dict[int, np.ndarray]

    def __len__(self) -> int:
        return len(self.subtask_prototypes)


def _resolve_sub_clusters(vectors: np.ndarray, sub_clusters, seed: int) -> int:
    n = vectors.shape[0]
    if sub_clusters == "auto":
        if n < 2:
            return 1
        k_min, k_max = AUTO_K_RANGE
        k_max = min(k_max, n)
        k_min = min(k_min, k_max)
        return auto_k(vectors, k_min, k_max, seed)
    k = int(sub_clusters)
    if k < 1:
        raise ContractViolation("sub_clusters must be >= 1 or 'auto'")
    return min(k, n)  # groups smaller than K get one sub-cluster per point


def fit_multimodal_prototype(vectors, label: int, sub_clusters, seed: int, variance_floor: float) -> Prototype:
    """K-means the vectors into sub-clusters and fit one Gaussian per cluster."""
    vectors = np.asarray(vectors, dtype=np.float64)
    k = _resolve_sub_clusters(vectors, sub_clusters, seed)
    assignments, _ = kmeans(vectors, k, seed)
    assignments = np.asarray(assignments)
    comps = [
        fit_diag_gaussian(vectors[assignments == c], variance_floor=variance_floor)
        for c in range(k)
    ]
    return Prototype(label=label, components=comps)


def update_skill_space(phase_dataset, registry: SkillRegistry, cfg: SkillSpaceConfig, phase: int) -> list[int]:
    """Discover this phase's skills and append their prototypes to the registry.

    Segments the phase dataset into ``cfg.num_skills`` subgoal groups, fits
    per-group state and subgoal prototypes, and appends them at the next free
    indices. Existing registry content is never modified. Returns the list of
    newly assigned skill indices.
    """
    transitions = list(phase_dataset)
    if not transitions:
        raise ContractViolation("phase dataset must be nonempty")
    groups = segment_by_subgoal(transitions, cfg.num_skills, cfg.seed)
    base = len(registry.skills)
    new_indices = []
    state_protos, goal_protos = [], []
    for group in groups:
        index = base + group.skill_index
        states = np.asarray([t.state for t in group.transitions])
        goals = np.asarray([t.subgoal for t in group.transitions])
        state_protos.append(
            fit_multimodal_prototype(states, index, cfg.sub_clusters, cfg.seed, cfg.variance_floor)
        )
        goal_protos.append(
            fit_multimodal_prototype(goals, index, cfg.sub_clusters, cfg.seed, cfg.variance_floor)
        )
        registry.skills.append(
            SkillInfo(index=index, phase_introduced=phase, subgoal_embedding=group.subgoal_embedding)
        )
        new_indices.append(index)
    registry.state_memory.append(state_protos)
    registry.goal_memory.append(goal_protos)
    return new_indices


def build_subtask_space(task_demos, cfg: SubtaskSpaceConfig, task_id: str = "task") -> TaskMemory:
    """Build the task-side memory: subtask prototypes plus subgoal representatives."""
    transitions = list(task_demos)
    if len(transitions) < cfg.num_subtasks:
        raise ContractViolation(
            f"{len(transitions)} demo transitions cannot form {cfg.num_subtasks} subtask groups"
        )
    groups = segment_by_subgoal(transitions, cfg.num_subtasks, cfg.seed)
    dim = transitions[0].state.size
    memory = PrototypeMemory(dim, distance_metric=cfg.distance_metric)
    reps: dict[int, np.ndarray] = {}
    protos = []
    for group in groups:
        states = np.asarray([t.state for t in group.transitions])
        protos.append(
            fit_multimodal_prototype(states, group.skill_index, cfg.sub_clusters, cfg.seed, cfg.variance_floor)
        )
        reps[group.skill_index] = group.subgoal_embedding
    memory.append(protos)
    return TaskMemory(task_id=task_id, subtask_prototypes=memory, subgoal_reps=reps)
