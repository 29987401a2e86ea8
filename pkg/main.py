import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from cil_toolkit.core import NumericalError, SnapshotFormatError, load_snapshot, save_snapshot
from cil_toolkit.core.gradcheck import run_gradcheck_suite
from cil_toolkit.core.model import ModelState
from cil_toolkit.data import DatasetFormatError, save_dataset, synth_blobs
from cil_toolkit.data.splits import SEEDED_ORDER
from cil_toolkit.experiment import (
    ConfigValidationError,
    ExperimentConfig,
    ExperimentConfigManager,
    ExperimentRunner,
    SweepSettings,
    add_baseline_delta,
    summarize,
    write_experiment_report,
    write_json,
    write_table,
)
from cil_toolkit.experiment.constants import OUTPUT_FILES, PLAN_SINGLE, SWEEP_BASELINE
from cil_toolkit.experiment.reports import write_train_log
from cli_parser import CliArgs, CliParser
from constants import (
    EXIT_IO,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    EXPERIMENT_CONFIG,
    LOG_FORMAT,
    SWEEP_SETTINGS,
)
from logger import LoggerSetup
from utils import validate_config_paths

# Config Paths
BASE_DIR = Path(__file__).parent
CONFIG_PATHS = {
    "experiment": BASE_DIR / EXPERIMENT_CONFIG,
    "sweeps": BASE_DIR / SWEEP_SETTINGS,
}


def load_experiment_config(args: CliArgs, logger: logging.Logger) -> ExperimentConfig:
    """Load the configuration document and apply command-line overrides."""
    path = Path(args.config) if args.config else CONFIG_PATHS["experiment"]
    validate_config_paths({"experiment": path}, logger)
    config = ExperimentConfigManager().load_experiment(path)
    return config.with_overrides(
        seed=args.seed,
        out=args.out,
        jobs=args.jobs,
        schedule=args.schedule,
        heads=args.heads,
        exemplars=args.exemplars,
        strategy=args.strategy,
        dataset=args.dataset,
    )


def load_sweep_settings(args: CliArgs, logger: logging.Logger) -> SweepSettings:
    path = Path(args.sweep_config) if args.sweep_config else CONFIG_PATHS["sweeps"]
    validate_config_paths({"sweeps": path}, logger)
    return SweepSettings.from_dict(ExperimentConfigManager().load_document(path))


def seed_dir(out_dir: Path, config: ExperimentConfig, seed: int) -> Path:
    return out_dir if len(config.seeds) == 1 else out_dir / f"seed_{seed}"


def cmd_train_base(args: CliArgs, logger: logging.Logger) -> int:
    config = load_experiment_config(args, logger)
    runner = ExperimentRunner(config)
    out_dir = Path(config.output_dir)
    written: List[str] = []
    for seed in config.seeds:
        target = seed_dir(out_dir, config, seed)
        try:
            base = runner.train_base(seed)
            save_snapshot(base.incremental_model, target / OUTPUT_FILES["snapshot"])
            write_train_log(target, base.log)
            write_json(target / OUTPUT_FILES["plan"], base.plan.to_dict())
            write_json(target / OUTPUT_FILES["config"], config.for_seed(seed).to_dict())
        except Exception:
            if written:
                logger.error(f"Seed {seed} failed; outputs of earlier seeds remain in {written}")
            raise
        written.append(str(target))
        logger.info(
            f"Seed {seed}: base model with heads {base.plan.sizes} saved to {target} "
            f"(best val_acc {base.log.best_val_acc})"
        )
    return EXIT_OK


def snapshot_seeds(
    config: ExperimentConfig, snapshot: ModelState, logger: logging.Logger
) -> ExperimentConfig:
    """Seeds a snapshot can serve: every seed under label order, only its own under seeded order."""
    if config.data.class_order != SEEDED_ORDER or config.seeds == [snapshot.seed]:
        return config
    if len(config.seeds) == 1:
        raise ConfigValidationError(
            f"Snapshot was trained with seed {snapshot.seed}; under class_order 'seeded' "
            f"seed {config.seeds[0]} draws a different class schedule"
        )
    logger.warning(
        f"Snapshot was trained with seed {snapshot.seed}; under class_order 'seeded' "
        f"only that seed is run (configured seeds {config.seeds})"
    )
    return config.with_overrides(seed=snapshot.seed)


def cmd_run_cil(args: CliArgs, logger: logging.Logger) -> int:
    config = load_experiment_config(args, logger)
    snapshot = load_snapshot(args.snapshot) if args.snapshot else None
    if snapshot is not None:
        config = snapshot_seeds(config, snapshot, logger)
    runner = ExperimentRunner(config)
    out_dir = Path(config.output_dir)
    for seed in config.seeds:
        base_model = snapshot if snapshot is not None else runner.train_base(seed).incremental_model
        report = runner.run_cil(seed, base_model)
        target = seed_dir(out_dir, config, seed)
        write_experiment_report(target, report)
        if report.store is not None:
            write_json(target / OUTPUT_FILES["exemplars"], report.store.to_dict())
        logger.info(
            f"Seed {seed}: {len(report.steps)} steps, "
            f"average incremental accuracy {report.avg_incremental_accuracy}"
        )
    return EXIT_OK


def cmd_ablate_losses(args: CliArgs, logger: logging.Logger) -> int:
    config = load_experiment_config(args, logger)
    runner = ExperimentRunner(config)
    rows = runner.ablate_losses()
    value_fields = [k for k in rows[0] if k.startswith("step_")] + ["avg"]
    summary = summarize(rows, ["config"], value_fields)
    out_dir = Path(config.output_dir)
    write_table(out_dir / OUTPUT_FILES["loss_ablation_csv"], summary)
    write_json(
        out_dir / OUTPUT_FILES["loss_ablation_json"],
        {"config": config.to_dict(), "runs": rows, "summary": summary},
    )
    for row in summary:
        logger.info(f"{row['config']:<22} avg={row['avg']}")
    return EXIT_OK


def cmd_sweep_heads(args: CliArgs, logger: logging.Logger) -> int:
    config = load_experiment_config(args, logger)
    settings = load_sweep_settings(args, logger)
    runner = ExperimentRunner(config)
    rows = runner.sweep_heads(settings)
    accuracy_fields = ["final_acc", "avg_incremental_accuracy"]
    summary = add_baseline_delta(
        summarize(
            rows,
            ["direction", "heads", "timing_jobs"],
            ["base_val_acc", "seconds_per_epoch"] + accuracy_fields,
        ),
        {"direction": PLAN_SINGLE},
        accuracy_fields,
    )
    out_dir = Path(config.output_dir)
    write_table(out_dir / OUTPUT_FILES["head_sweep"], rows)
    write_table(out_dir / OUTPUT_FILES["head_sweep_summary"], summary)
    for row in summary:
        logger.info(
            f"{row['heads']:<16} avg={row['avg_incremental_accuracy']} "
            f"vs [F] {row['avg_incremental_accuracy_vs_baseline']}"
        )
    return EXIT_OK


def cmd_sweep_exemplars(args: CliArgs, logger: logging.Logger) -> int:
    config = load_experiment_config(args, logger)
    settings = load_sweep_settings(args, logger)
    runner = ExperimentRunner(config)
    rows = runner.sweep_exemplars(settings)
    accuracy_fields = ["final_acc", "avg_incremental_accuracy"]
    summary = add_baseline_delta(
        summarize(rows, ["capacity", "base", "heads"], accuracy_fields + ["seconds"]),
        {"base": SWEEP_BASELINE},
        accuracy_fields,
        match_fields=["capacity"],
    )
    out_dir = Path(config.output_dir)
    write_table(out_dir / OUTPUT_FILES["exemplar_sweep"], rows)
    write_table(out_dir / OUTPUT_FILES["exemplar_sweep_summary"], summary)
    return EXIT_OK


def cmd_gradcheck(args: CliArgs, logger: logging.Logger) -> int:
    results = run_gradcheck_suite()
    for result in results:
        status = "ok" if result.passed else "FAILED"
        logger.info(
            f"{result.name:<16} seed={result.seed} rel_err={result.relative_error:.2e} {status}"
        )
    if not all(r.passed for r in results):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_synth(args: CliArgs, logger: logging.Logger) -> int:
    config = load_experiment_config(args, logger)
    synth = config.data.synth
    ds = synth_blobs(
        args.num_classes or synth.num_classes,
        args.n_per_class or synth.n_per_class,
        args.dim or synth.dim,
        args.separation if args.separation is not None else synth.separation,
        args.noise_sigma if args.noise_sigma is not None else synth.noise_sigma,
        args.seed if args.seed is not None else synth.seed,
    )
    save_dataset(ds, Path(config.output_dir))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[CliArgs, logging.Logger], int]] = {
    "train-base": cmd_train_base,
    "run-cil": cmd_run_cil,
    "ablate-losses": cmd_ablate_losses,
    "sweep-heads": cmd_sweep_heads,
    "sweep-exemplars": cmd_sweep_exemplars,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def exit_code_for(error: BaseException) -> Optional[int]:
    """Documented exit code for an error, or None when it is unexpected."""
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, (OSError, DatasetFormatError, SnapshotFormatError)):
        return EXIT_IO
    if isinstance(error, (ValueError, KeyError)):
        return EXIT_VALIDATION
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main execution function for the experiment CLI.
    Parses arguments, dispatches the subcommand and maps failures to exit codes.
    """
    try:
        args = CliParser.parse_arguments(argv)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    logger = LoggerSetup(LOG_FORMAT, args.log_level).get_logger()
    try:
        logger.info(f"Starting {args.command}")
        CliParser.validate_args(args)
        code = COMMANDS[args.command](args, logger)
        if code == EXIT_OK:
            logger.info(f"{args.command} completed successfully")
        return code
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"Fatal error in {args.command}: {e}")
        if code is None:
            raise
        return code


if __name__ == "__main__":
    sys.exit(main())
