from .task_factory import (
    TaskPlan,
    TaskSpec,
    enumerate_task_count,
    make_decreasing_plan,
    make_fixed_size_plan,
    plan_from_label_lists,
)
from .multitask_trainer import (
    BaseTrainConfig,
    TrainLog,
    extract_for_incremental,
    train_base,
    train_single_task,
)
from .exemplar_memory import (
    HERDING,
    RANDOM,
    ExemplarStore,
    build_balanced_set,
    class_quotas,
    rebalance,
)
from .incremental_engine import (
    LOSS_GRID,
    STEP_CSV_HEADER,
    BalancedFinetuneConfig,
    ExperimentReport,
    IncrementalState,
    LossSwitches,
    Phase2Config,
    PhaseConfig,
    StepConfig,
    StepData,
    StepReport,
    initial_state,
    loss_grid,
    run_experiment,
    run_step,
)
from .metrics import (
    avg_incremental_accuracy,
    confusion,
    group_accuracy,
    overall_accuracy,
)

__all__ = [
    # Task plans
    "TaskPlan",
    "TaskSpec",
    "enumerate_task_count",
    "make_decreasing_plan",
    "make_fixed_size_plan",
    "plan_from_label_lists",
    # Base training
    "BaseTrainConfig",
    "TrainLog",
    "extract_for_incremental",
    "train_base",
    "train_single_task",
    # Exemplars
    "HERDING",
    "RANDOM",
    "ExemplarStore",
    "build_balanced_set",
    "class_quotas",
    "rebalance",
    # Incremental steps
    "LOSS_GRID",
    "STEP_CSV_HEADER",
    "BalancedFinetuneConfig",
    "ExperimentReport",
    "IncrementalState",
    "LossSwitches",
    "Phase2Config",
    "PhaseConfig",
    "StepConfig",
    "StepData",
    "StepReport",
    "initial_state",
    "loss_grid",
    "run_experiment",
    "run_step",
    # Metrics
    "avg_incremental_accuracy",
    "confusion",
    "group_accuracy",
    "overall_accuracy",
]
