"""Scenario configuration: one JSON document, validated fail-closed.

Sections are exactly env / tasks / phases / sil / policy / interface / eval.
Unknown keys anywhere are errors so a typo in a sweep cannot silently fall
back to a default. The canonical hash covers the config content as written
(sorted keys, fixed separators), so a run seed passed on the command line
never changes the hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .interface import MODE_FULL, MODE_PASSTHROUGH, MODE_RANDOM_PROBE, InterfaceConfig
from .memory import METRIC_EUCLIDEAN, METRIC_MAHALANOBIS
from .stageworld import SCENARIO_EMERGENT, SCENARIO_EXPLICIT, EnvConfig, ExpertConfig, Task

_SECTION_KEYS = {
    "env": {"n_objects", "object_positions", "contact_radius", "max_step", "episode_len", "obs_noise_scale"},
    "phases": {"scenario_type", "map"},
    "sil": {
        "num_skills_per_phase",
        "sub_clusters",
        "strategy",
        "er_ratio",
        "m",
        "seed",
        "demos_per_task",
        "expert_gain",
        "expert_noise",
    },
    "policy": {"num_subtasks", "sub_clusters", "shots", "transition_ratio"},
    "interface": {"confidence", "mode", "distance_metric"},
    "eval": {"episodes_per_task", "seeds"},
}


@dataclass
class SilSection:
    num_skills_per_phase: int = 20
    sub_clusters: int | str = 4
    strategy: str = "AA"
    er_ratio: float = 0.1
    m: int = 20
    seed: int = 0
    demos_per_task: int = 5
    expert_gain: float = 1.0
    expert_noise: float = 0.005


@dataclass
class PolicySection:
    num_subtasks: int = 20
    sub_clusters: int | str = 4
    shots: int = 5
    transition_ratio: float = 1.0


@dataclass
class EvalSection:
    episodes_per_task: int = 3
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3])


@dataclass
class ScenarioConfig:
    env: EnvConfig
    tasks: list[Task]
    scenario_type: str
    phase_map: dict  # task id (emergent) or object index (explicit) -> phase
    sil: SilSection
    policy: PolicySection
    interface: InterfaceConfig
    eval: EvalSection
    raw: dict = None  # the dict this config was parsed from (hash input)

    @property
    def n_phases(self) -> int:
        return max(self.phase_map.values())

    @property
    def expert(self) -> ExpertConfig:
        return ExpertConfig(gain=self.sil.expert_gain, noise_std=self.sil.expert_noise)

    def config_hash(self) -> str:
        return canonical_hash(self.raw)


def canonical_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _check_keys(section: str, given: dict) -> None:
    unknown = set(given) - _SECTION_KEYS[section]
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {sorted(unknown)}")


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be an object")
    _check_keys(name, value)
    return value


def parse_config(doc: dict) -> ScenarioConfig:
    """Validate a config document and build the typed scenario configuration."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - {"env", "tasks", "phases", "sil", "policy", "interface", "eval"}
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {sorted(unknown)}")

    try:
        env = EnvConfig(**_section(doc, "env"))
    except Exception as exc:
        raise ConfigError(f"env: {exc}") from exc

    tasks_doc = doc.get("tasks")
    if not isinstance(tasks_doc, list) or not tasks_doc:
        raise ConfigError("tasks: need a nonempty list of {id, sequence}")
    tasks = []
    for item in tasks_doc:
        extra = set(item) - {"id", "sequence"}
        if extra:
            raise ConfigError(f"tasks: unknown key(s) {sorted(extra)}")
        try:
            tasks.append(Task(task_id=str(item["id"]), sequence=[int(v) for v in item["sequence"]]))
        except KeyError as exc:
            raise ConfigError(f"tasks: missing field {exc}") from exc
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ConfigError("tasks: duplicate task ids")

    phases_doc = _section(doc, "phases")
    scenario_type = phases_doc.get("scenario_type", SCENARIO_EMERGENT)
    if scenario_type not in (SCENARIO_EMERGENT, SCENARIO_EXPLICIT):
        raise ConfigError(f"phases.scenario_type must be emergent or explicit, got {scenario_type!r}")
    raw_map = phases_doc.get("map")
    if not isinstance(raw_map, dict) or not raw_map:
        raise ConfigError("phases.map: need a nonempty mapping to phase indices")
    if scenario_type == SCENARIO_EMERGENT:
        phase_map = {str(k): int(v) for k, v in raw_map.items()}
        missing = [t for t in ids if t not in phase_map]
        if missing:
            raise ConfigError(f"phases.map: missing task {missing[0]!r}")
        extra = [k for k in phase_map if k not in ids]
        if extra:
            raise ConfigError(f"phases.map: unknown task {extra[0]!r}")
    else:
        phase_map = {int(k): int(v) for k, v in raw_map.items()}
        objects = sorted({obj for t in tasks for obj in t.sequence})
        missing = [o for o in objects if o not in phase_map]
        if missing:
            raise ConfigError(f"phases.map: missing object {missing[0]}")
    phases = sorted(set(phase_map.values()))
    if phases != list(range(1, len(phases) + 1)):
        raise ConfigError(f"phase indices must be contiguous starting at 1, got {phases}")

    try:
        sil = SilSection(**_section(doc, "sil"))
        policy = PolicySection(**_section(doc, "policy"))
        eval_section = EvalSection(**_section(doc, "eval"))
        iface = InterfaceConfig(**_section(doc, "interface"))
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from exc

    if sil.strategy not in ("FT", "ER", "AA"):
        raise ConfigError(f"sil.strategy must be FT, ER, or AA, got {sil.strategy!r}")
    if not 0 < policy.transition_ratio <= 1.0:
        raise ConfigError("policy.transition_ratio must lie in (0, 1]")
    if policy.shots < 1 or policy.shots > sil.demos_per_task:
        raise ConfigError("policy.shots must lie in [1, sil.demos_per_task]")
    if iface.distance_metric not in (METRIC_MAHALANOBIS, METRIC_EUCLIDEAN):
        raise ConfigError(f"interface.distance_metric invalid: {iface.distance_metric!r}")
    if not eval_section.seeds:
        raise ConfigError("eval.seeds must be nonempty")

    return ScenarioConfig(
        env=env,
        tasks=tasks,
        scenario_type=scenario_type,
        phase_map=phase_map,
        sil=sil,
        policy=policy,
        interface=iface,
        eval=eval_section,
        raw=doc,
    )


def load_config(path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc)


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply repeated ``key.path=value`` overrides to a config document.

    Values parse as JSON when possible and fall back to strings; the result
    is a new document (the input is not mutated).
    """
    doc = json.loads(json.dumps(doc))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return doc


# Stock task roster: pairs of "theme" tasks whose later variants share an
# ever-shorter prefix with the phase-1 originals and then diverge. Every task
# starts with partial competence under the phase-1 library, and each later
# phase supplies exactly the skills that complete its own pair.
DEFAULT_TASK_SEQUENCES = [
    (0, 1, 2, 3),
    (4, 5, 6, 7),
    (0, 1, 2, 5),
    (4, 5, 6, 1),
    (0, 1, 6, 7),
    (4, 5, 2, 3),
    (0, 3, 2, 1),
    (4, 7, 6, 5),
]


def default_scenario_doc(
    scenario_type: str = SCENARIO_EMERGENT,
    mode: str = MODE_FULL,
    strategy: str = "AA",
    n_tasks: int = 8,
    n_phases: int = 4,
) -> dict:
    """The stock desk-scale scenario: 8 objects on a ring, 8 prefix-family tasks.

    Emergent: task pairs are dealt to phases in order (the phase-p stream
    holds whole demos of tasks 2p-2 and 2p-1). Explicit: objects are dealt
    round-robin to phases and demos are cut into per-object clips.
    """
    if mode not in (MODE_FULL, MODE_PASSTHROUGH, MODE_RANDOM_PROBE):
        raise ConfigError(f"unknown interface mode {mode!r}")
    if not 1 <= n_tasks <= len(DEFAULT_TASK_SEQUENCES):
        raise ConfigError(f"n_tasks must lie in 1..{len(DEFAULT_TASK_SEQUENCES)}")
    n_objects = 8
    tasks = [
        {"id": f"t{i}", "sequence": list(seq)}
        for i, seq in enumerate(DEFAULT_TASK_SEQUENCES[:n_tasks])
    ]
    per_phase = max(1, n_tasks // n_phases)
    if scenario_type == SCENARIO_EMERGENT:
        phase_map = {f"t{i}": min(i // per_phase + 1, n_phases) for i in range(n_tasks)}
    else:
        phase_map = {str(obj): obj % n_phases + 1 for obj in range(n_objects)}
    return {
        "env": {
            "n_objects": n_objects,
            "object_positions": None,
            "contact_radius": 0.05,
            "max_step": 0.05,
            "episode_len": 120,
            "obs_noise_scale": 0.0,
        },
        "tasks": tasks,
        "phases": {"scenario_type": scenario_type, "map": phase_map},
        "sil": {
            "num_skills_per_phase": 20,
            "sub_clusters": 4,
            "strategy": strategy,
            "er_ratio": 0.1,
            "m": 5,
            "seed": 0,
            "demos_per_task": 5,
            "expert_gain": 1.0,
            "expert_noise": 0.005,
        },
        "policy": {"num_subtasks": 20, "sub_clusters": 4, "shots": 5, "transition_ratio": 1.0},
        "interface": {"confidence": 0.99, "mode": mode, "distance_metric": METRIC_MAHALANOBIS},
        "eval": {"episodes_per_task": 3, "seeds": [0, 1, 2, 3]},
    }
