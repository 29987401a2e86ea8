from pathlib import Path
from typing import Final

from frozendict import frozendict

# File paths
CONFIG_DIR = "configs"
EXPERIMENT_CONFIG = Path(CONFIG_DIR) / "experiment.yml"
SWEEP_SETTINGS = Path(CONFIG_DIR) / "sweeps.yml"

# Logging
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVELS: Final = ("DEBUG", "INFO", "WARNING", "ERROR")

# Exit codes
EXIT_OK: Final[int] = 0
EXIT_VALIDATION: Final[int] = 1
EXIT_NUMERICAL: Final[int] = 2
EXIT_IO: Final[int] = 3

COMMANDS: Final = frozendict(
    {
        "train-base": "Train the multitask base model and save its snapshot",
        "run-cil": "Run the incremental steps of the schedule on a base model",
        "ablate-losses": "Run the six CE/KD loss configurations",
        "sweep-heads": "Sweep multitask head configurations",
        "sweep-exemplars": "Sweep exemplar budgets",
        "gradcheck": "Check every analytic gradient against finite differences",
        "synth": "Write a synthetic Gaussian-blob dataset",
    }
)
