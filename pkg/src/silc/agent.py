"""Desk-scale agent components: retrieval decoder, label assignment, policy.

The skill decoder is a deterministic nearest-neighbor retrieval over stored
transitions: conditioned on a skill, it returns the action of the stored
transition minimizing a weighted sum of state distance and distance between
the skill's subgoal embedding and the transition's subgoal. Retention across
phases follows one of three strategies:

    FT  fine-tuning analog: only the newest phase's data is kept
    ER  experience replay:  older phases keep a fixed fraction, subsampled
    AA  adapter append:     every phase's partition is kept and frozen, and
                            a skill decodes only against the partition of the
                            phase that introduced it

High-level policies are nearest-prototype classifiers over states trained on
labels produced by the decoder itself: each demo transition is labeled with
the skill whose decoded action best matches the expert action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import AnnotatedTransition
from .errors import ContractViolation, DecoderMiss
from .gauss import DEFAULT_VARIANCE_FLOOR
from .memory import METRIC_MAHALANOBIS, PrototypeMemory
from .spaces import SkillRegistry, fit_multimodal_prototype

STRATEGY_FT = "FT"
STRATEGY_ER = "ER"
STRATEGY_AA = "AA"


@dataclass
class DecoderConfig:
    alpha: float = 1.0  # weight on state distance
    beta: float = 1.0  # weight on subgoal-embedding distance


@dataclass
class DecoderStore:
    """Phase-partitioned transition store with a retention strategy."""

    strategy: str
    er_ratio: float = 0.1
    seed: int = 0
    partitions: dict[int, list[AnnotatedTransition]] = field(default_factory=dict)
    original_counts: dict[int, int] = field(default_factory=dict)
    _arrays: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.strategy not in (STRATEGY_FT, STRATEGY_ER, STRATEGY_AA):
            raise ContractViolation(f"unknown retention strategy {self.strategy!r}")
        if self.strategy == STRATEGY_ER and not 0.0 < self.er_ratio <= 1.0:
            raise ContractViolation(f"ER ratio must lie in (0, 1], got {self.er_ratio!r}")

    @property
    def latest_phase(self) -> int:
        return max(self.partitions) if self.partitions else 0

    def scope(self, phase: int | None):
        """Transitions visible to a decode: one partition (AA) or all retained."""
        if phase is not None:
            return self.partitions.get(phase, [])
        out = []
        for p in sorted(self.partitions):
            out.extend(self.partitions[p])
        return out

    def scope_arrays(self, phase: int | None):
        key = phase
        cached = self._arrays.get(key)
        if cached is None:
            transitions = self.scope(phase)
            if not transitions:
                cached = None
            else:
                cached = (
                    np.ascontiguousarray([t.state for t in transitions]),
                    np.ascontiguousarray([t.subgoal for t in transitions]),
                    np.ascontiguousarray([t.action for t in transitions]),
                )
            self._arrays[key] = cached
        return cached

    def snapshot(self) -> "DecoderStore":
        """Cheap structural copy (shared transition objects) for per-phase archiving."""
        return DecoderStore(
            strategy=self.strategy,
            er_ratio=self.er_ratio,
            seed=self.seed,
            partitions={p: list(ts) for p, ts in self.partitions.items()},
            original_counts=dict(self.original_counts),
        )

    def manifest_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "er_ratio": self.er_ratio if self.strategy == STRATEGY_ER else None,
            "per_phase_counts": {str(p): len(ts) for p, ts in sorted(self.partitions.items())},
        }


def update_decoder(phase_dataset, store: DecoderStore, phase: int | None = None, seed: int | None = None) -> None:
    """Append a phase partition and apply the store's retention strategy.

    FT empties all prior partitions; ER(r) subsamples each prior partition to
    ceil(r * its original size), uniformly with a seed derived from
    (seed, partition); AA leaves prior partitions untouched.
    """
    transitions = list(phase_dataset)
    if not transitions:
        raise ContractViolation("phase dataset must be nonempty")
    if phase is None:
        phase = store.latest_phase + 1
    if phase in store.partitions:
        raise ContractViolation(f"partition for phase {phase} already exists")
    if seed is None:
        seed = store.seed

    store.partitions[phase] = transitions
    store.original_counts[phase] = len(transitions)
    for prior in sorted(store.partitions):
        if prior == phase:
            continue
        if store.strategy == STRATEGY_FT:
            store.partitions[prior] = []
        elif store.strategy == STRATEGY_ER:
            keep = math.ceil(store.er_ratio * store.original_counts[prior])
            current = store.partitions[prior]
            if len(current) > keep:
                rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, prior]))
                chosen = np.sort(rng.choice(len(current), size=keep, replace=False))
                store.partitions[prior] = [current[i] for i in chosen]
    store._arrays.clear()


def _decode_scope(store: DecoderStore, registry: SkillRegistry, z: int):
    if store.strategy == STRATEGY_AA:
        return store.scope_arrays(registry.skills[z].phase_introduced)
    return store.scope_arrays(None)


def decode(s, z: int, registry: SkillRegistry, store: DecoderStore, cfg: DecoderConfig | None = None) -> np.ndarray:
    """Retrieve the action of the stored transition best matching (state, skill goal).

    Score is alpha * ||s - s_i|| + beta * ||g_z - g_i|| with g_z the skill's
    subgoal embedding; ties resolve to the earliest stored transition.
    """
    cfg = cfg or DecoderConfig()
    if not 0 <= z < len(registry.skills):
        raise ContractViolation(f"skill {z} not in registry")
    arrays = _decode_scope(store, registry, z)
    if arrays is None:
        raise DecoderMiss(f"empty retrieval scope for skill {z}")
    states, goals, actions = arrays
    s = np.asarray(s, dtype=np.float64)
    g_z = registry.subgoal_embedding(z)
    d_s = np.sqrt(np.sum((states - s) ** 2, axis=1))
    d_g = np.sqrt(np.sum((goals - g_z) ** 2, axis=1))
    idx = int(np.argmin(cfg.alpha * d_s + cfg.beta * d_g))
    return actions[idx]


def assign_labels(demos, registry: SkillRegistry, store: DecoderStore, skill_indices, cfg: DecoderConfig | None = None):
    """Label each demo transition with the skill whose decode best matches it.

    Returns (state, skill index) pairs. For every transition the decoded
    action of each candidate skill is compared to the expert action by
    squared error; ties go to the lowest skill index. Matches a per-call
    ``decode`` loop exactly, batched per retrieval scope for speed.
    """
    cfg = cfg or DecoderConfig()
    demos = list(demos)
    if not demos:
        raise ContractViolation("demos must be nonempty")
    skills = sorted(skill_indices)
    if not skills:
        raise ContractViolation("skill index set must be nonempty")

    # Group skills by retrieval scope so each scope's distances are computed once.
    if store.strategy == STRATEGY_AA:
        scope_of = {z: registry.skills[z].phase_introduced for z in skills}
    else:
        scope_of = {z: None for z in skills}

    errors = np.full((len(demos), len(skills)), np.inf)
    queries = np.ascontiguousarray([t.state for t in demos])
    expert = np.ascontiguousarray([t.action for t in demos])

    for scope_key in sorted(set(scope_of.values()), key=lambda v: (v is None, v)):
        cols = [j for j, z in enumerate(skills) if scope_of[z] == scope_key]
        arrays = store.scope_arrays(scope_key)
        if arrays is None:
            raise DecoderMiss(f"empty retrieval scope for skills {[skills[j] for j in cols]}")
        states, goals, actions = arrays
        goal_dists = np.asarray(
            [np.sqrt(np.sum((goals - registry.subgoal_embedding(skills[j])) ** 2, axis=1)) for j in cols]
        )
        for qi in range(len(demos)):
            d_s = np.sqrt(np.sum((states - queries[qi]) ** 2, axis=1))
            combined = cfg.alpha * d_s[None, :] + cfg.beta * goal_dists
            picks = np.argmin(combined, axis=1)
            diff = actions[picks] - expert[qi]
            errors[qi, cols] = np.sum(diff * diff, axis=1)

    best = np.argmin(errors, axis=1)  # first minimum = lowest skill index
    return [(demos[i].state, skills[int(best[i])]) for i in range(len(demos))]


@dataclass
class PolicyConfig:
    sub_clusters: int | str = 4
    seed: int = 0
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    distance_metric: str = METRIC_MAHALANOBIS


@dataclass
class HighLevelPolicy:
    """Nearest-prototype classifier from states to skill indices."""

    classifier: PrototypeMemory
    task_id: str
    trained_at_phase: int

    @property
    def labels(self) -> list[int]:
        return self.classifier.labels


def train_policy(labeled, cfg: PolicyConfig, task_id: str = "task", phase: int = 1) -> HighLevelPolicy:
    """Fit per-label state prototypes from (state, skill index) pairs."""
    labeled = list(labeled)
    if not labeled:
        raise ContractViolation("labeled set must be nonempty")
    by_label: dict[int, list[np.ndarray]] = {}
    for state, z in labeled:
        by_label.setdefault(int(z), []).append(np.asarray(state, dtype=np.float64))
    dim = labeled[0][0].size
    memory = PrototypeMemory(dim, distance_metric=cfg.distance_metric)
    protos = [
        fit_multimodal_prototype(np.asarray(by_label[z]), z, cfg.sub_clusters, cfg.seed, cfg.variance_floor)
        for z in sorted(by_label)
    ]
    memory.append(protos)
    return HighLevelPolicy(classifier=memory, task_id=task_id, trained_at_phase=phase)


def act(policy: HighLevelPolicy, s) -> int:
    """Deterministic high-level decision: nearest prototype over all labels."""
    return policy.classifier.classify(s, policy.classifier.labels)
