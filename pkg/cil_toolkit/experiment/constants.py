"""Experiment runner constants."""

from typing import Final, Tuple

from frozendict import frozendict

DEFAULT_MAX_WORKERS: Final[int] = 4
DEFAULT_OUTPUT_DIR: Final[str] = "results"

# Exemplar budgets swept by default.
EXEMPLAR_GRID: Final[Tuple[int, ...]] = (20, 50, 100, 200, 300, 400)

PLAN_SINGLE: Final[str] = "single"
PLAN_DECREASING: Final[str] = "decreasing"
PLAN_FIXED: Final[str] = "fixed"
PLAN_EXPLICIT: Final[str] = "explicit"
PLAN_KINDS: Final[Tuple[str, ...]] = (PLAN_SINGLE, PLAN_DECREASING, PLAN_FIXED, PLAN_EXPLICIT)

# Base models compared by the exemplar sweep.
SWEEP_BASELINE: Final[str] = "baseline"
SWEEP_MULTITASK: Final[str] = "multitask"
SWEEP_BASES: Final[Tuple[str, ...]] = (SWEEP_BASELINE, SWEEP_MULTITASK)

# Output file names per subcommand.
OUTPUT_FILES: Final = frozendict(
    {
        "snapshot": "base_model.cilm",
        "train_log": "train_log.csv",
        "plan": "plan.json",
        "config": "config.json",
        "report": "report.json",
        "timing": "timing.json",
        "steps": "steps.csv",
        "confusion": "confusion_step{step}.csv",
        "exemplars": "exemplars.json",
        "loss_ablation_csv": "loss_ablation.csv",
        "loss_ablation_json": "loss_ablation.json",
        "head_sweep": "head_sweep.csv",
        "head_sweep_summary": "head_sweep_summary.csv",
        "exemplar_sweep": "exemplar_sweep.csv",
        "exemplar_sweep_summary": "exemplar_sweep_summary.csv",
    }
)
