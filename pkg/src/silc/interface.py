"""The bilateral lazy-learning interface between subtask and skill spaces.

At every control step the high-level policy proposes a subtask index ``z_h``.
The interface decides which skill actually runs:

1. The task-side memory predicts the subgoal ``g`` the task needs from the
   current state (nearest subtask prototype, then that group's representative
   subgoal).
2. Skill validation: if ``z_h``'s goal prototype covers ``g`` (chi-square
   threshold on the Mahalanobis distance), ``z_h`` passes through unchanged.
3. Skill hooking: otherwise, candidates are every skill whose goal prototype
   covers ``g`` plus ``z_h`` itself as fallback, and the winner is the
   candidate with the nearest *state* prototype.

``passthrough`` mode disables all of this (identity mapping, the behavior of
a static subtask-to-skill binding); ``random_policy_probe`` replaces the
policy's proposal with a seeded uniform draw before applying the full rule.
Both exist for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, LabelNotFound
from .memory import METRIC_MAHALANOBIS
from .spaces import SkillRegistry, TaskMemory

MODE_FULL = "full"
MODE_PASSTHROUGH = "passthrough"
MODE_RANDOM_PROBE = "random_policy_probe"


@dataclass
class InterfaceConfig:
    confidence: float = 0.99
    mode: str = MODE_FULL
    distance_metric: str = METRIC_MAHALANOBIS

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ContractViolation(f"confidence must lie in (0, 1), got {self.confidence!r}")
        if self.mode not in (MODE_FULL, MODE_PASSTHROUGH, MODE_RANDOM_PROBE):
            raise ContractViolation(f"unknown interface mode {self.mode!r}")


def predict_subgoal(s, task_memory: TaskMemory) -> np.ndarray:
    """Task-side subgoal prediction: nearest subtask group's representative."""
    if len(task_memory) == 0:
        raise LabelNotFound("task memory is empty")
    label = task_memory.subtask_prototypes.classify(s, task_memory.subtask_prototypes.labels)
    return task_memory.subgoal_reps[label]


def candidate_set(g, registry: SkillRegistry, z_h: int, confidence: float, active=None) -> list[int]:
    """Goal-validated skills plus the proposing subtask as fallback, by index."""
    active = registry.indices if active is None else list(active)
    if z_h not in active:
        raise LabelNotFound(z_h)
    goal_memory = registry.goal_memory
    if goal_memory.distance_metric == METRIC_MAHALANOBIS:
        ok = goal_memory.validate_all(g, confidence)
        pos = goal_memory.label_positions()
        validated = [z for z in active if ok[pos[z]]]
    else:
        validated = [z for z in active if goal_memory.validate(g, z, confidence)]
    if z_h not in validated:
        validated.append(z_h)
    return sorted(validated)


def resolve(
    s,
    z_h: int,
    task_memory: TaskMemory | None,
    registry: SkillRegistry,
    cfg: InterfaceConfig,
    active=None,
    probe_seed: int | None = None,
    trace: dict | None = None,
) -> int:
    """Map a proposed subtask to the skill that will actually execute.

    ``active`` restricts the visible skill set (the index set of the phase
    being evaluated); defaults to the whole registry. ``probe_seed`` drives
    the uniform draw in random_policy_probe mode and must be supplied there.
    ``trace``, when given, is filled with the per-step decision record.
    """
    active = registry.indices if active is None else list(active)
    if z_h not in active:
        raise LabelNotFound(z_h)

    if trace is not None:
        trace.update({"z_h": int(z_h), "g_label": None, "validated": None, "z_l": int(z_h)})

    if cfg.mode == MODE_PASSTHROUGH:
        return z_h

    if cfg.mode == MODE_RANDOM_PROBE:
        if probe_seed is None:
            raise ContractViolation("random_policy_probe requires a probe_seed")
        rng = np.random.default_rng(np.random.SeedSequence([probe_seed & 0xFFFFFFFF]))
        z_h = int(active[int(rng.integers(len(active)))])
        if trace is not None:
            trace["z_h"] = z_h

    if task_memory is None or len(task_memory) == 0:
        raise ContractViolation("full interface mode requires a built task memory")

    label = task_memory.subtask_prototypes.classify(s, task_memory.subtask_prototypes.labels)
    g = task_memory.subgoal_reps[label]
    ok = registry.goal_memory.validate(g, z_h, cfg.confidence)
    if trace is not None:
        trace["g_label"] = int(label)
        trace["validated"] = bool(ok)
    if ok:
        return z_h

    candidates = candidate_set(g, registry, z_h, cfg.confidence, active=active)
    z_l = int(registry.state_memory.classify(s, candidates))
    if trace is not None:
        trace["z_l"] = z_l
    return z_l
