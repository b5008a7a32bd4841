"""emoforge: shared-then-adapt multi-task evolutionary program search.

A shared archive is evolved against the family-average objective, projected
into per-task initializations (warmstart, best-shared, best-local), and each
task is adapted locally under a compute budget matched to independent
single-task evolution (S + K*A = K*B).
"""

from .archive import (
    Archive,
    ArchiveConfig,
    ArchiveEntry,
    Candidate,
    Checkpoint,
    EvaluationRecord,
    InsertOutcome,
    MutationContext,
    load_checkpoint,
    make_record,
)
from .engine import (
    SINGLE_TASK,
    STA_VARIANTS,
    BudgetPlan,
    Engine,
    EngineSettings,
    ExperimentResult,
    OODResult,
    RunResult,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DuplicateCandidateError,
    EmoforgeError,
    EmptyArchiveError,
    LauncherError,
    ReplayExhaustedError,
    UnknownFamilyError,
    UnknownTaskError,
)
from .execution import (
    CandidateGenome,
    ExecLimits,
    ExecRequest,
    ExecResponse,
    evaluate_genome,
    external_genome,
    parametric_genome,
    run_external,
    run_parametric,
    seed_genome_for,
)
from .mutators import DeterministicMutator, LLMConfig, LLMMutator, ReplayMutator
from .tasks import FamilySpec, TaskSpec, builtin_family, load_manifest, normalize

__version__ = "0.1.0"
