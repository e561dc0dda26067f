"""Append-only skill libraries with a lazy-learning compatibility interface.

The package keeps hierarchical skill-based policies usable while the skill
library grows: skills and subtasks live in append-only prototype memories, a
bilateral interface validates each proposed subtask against the predicted
subgoal and hooks rejected ones to the nearest compatible skill, and a
synthetic multi-stage environment plus a phase-loop harness exercise the whole
mechanism with continual-learning transfer metrics (FWT/BWT/AUC over backward
and forward compatibility groups).
"""

__version__ = "0.1.0"

from .agent import (
    DecoderConfig,
    DecoderStore,
    HighLevelPolicy,
    PolicyConfig,
    act,
    assign_labels,
    decode,
    train_policy,
    update_decoder,
)
from .clustering import (
    AnnotatedTransition,
    SkillGroup,
    annotate_subgoals,
    auto_k,
    kmeans,
    segment_by_subgoal,
    silhouette,
)
from .config import ScenarioConfig, default_scenario_doc, load_config, parse_config
from .errors import (
    ConfigError,
    ContractViolation,
    DecoderMiss,
    GenerationError,
    LabelConflict,
    LabelNotFound,
)
from .gauss import GaussianComponent, chi2_quantile, diag_mahalanobis, fit_diag_gaussian
from .harness import (
    EvalMatrix,
    ScenarioRuntime,
    auc,
    build_runtime,
    bwt,
    evaluate_groups,
    fwt,
    metric_rows,
    overall_matrix,
    run_all_phases,
    run_episode,
    run_phase,
    write_bundle,
)
from .interface import InterfaceConfig, candidate_set, predict_subgoal, resolve
from .memory import Prototype, PrototypeMemory
from .spaces import (
    SkillRegistry,
    SkillSpaceConfig,
    SubtaskSpaceConfig,
    TaskMemory,
    build_subtask_space,
    update_skill_space,
)
from .stageworld import (
    EnvConfig,
    EnvState,
    ExpertConfig,
    Task,
    Trajectory,
    build_datastream,
    generate_demos,
    observe,
    reset,
    scripted_expert,
    step,
)
