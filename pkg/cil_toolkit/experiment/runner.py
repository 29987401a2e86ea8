import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Hashable, List, Mapping, Optional, Sequence

from cil_toolkit.core.model import BackboneSpec, ModelState
from cil_toolkit.data.dataset import Dataset, load_dataset
from cil_toolkit.data.splits import ClassSchedule, parse_schedule, stratified_split
from cil_toolkit.data.synth import synth_blobs
from cil_toolkit.learning.exemplar_memory import ExemplarStore
from cil_toolkit.learning.incremental_engine import (
    BalancedFinetuneConfig,
    ExperimentReport,
    LossSwitches,
    loss_grid,
    run_experiment,
)
from cil_toolkit.learning.multitask_trainer import TrainLog, extract_for_incremental, train_base
from cil_toolkit.learning.task_factory import TaskPlan

from .config import ConfigValidationError, ExperimentConfig, PlanConfig, SweepSettings
from .constants import (
    DEFAULT_MAX_WORKERS,
    PLAN_DECREASING,
    PLAN_FIXED,
    PLAN_SINGLE,
    SWEEP_BASELINE,
    SWEEP_BASES,
)

logger = logging.getLogger(__name__)


@dataclass
class SeedInputs:
    seed: int
    schedule: ClassSchedule
    train: Dataset
    val: Dataset
    test: Dataset
    spec: BackboneSpec


@dataclass
class BaseRun:
    seed: int
    plan: TaskPlan
    model: ModelState
    log: TrainLog

    @property
    def incremental_model(self) -> ModelState:
        return extract_for_incremental(self.model, self.plan)


def plan_label(plan: TaskPlan) -> str:
    return "[" + ",".join(str(s) for s in plan.sizes) + "]"


def head_sweep_plans(base_size: int, max_fixed_heads: int, directions: List[str]) -> List[PlanConfig]:
    """Decreasing plans [F], [F,F-1], ... and fixed-size plans [F,F-1,...,F-1]."""
    plans = [PlanConfig(kind=PLAN_SINGLE)]
    if PLAN_DECREASING in directions:
        for last in range(base_size - 1, 1, -1):
            plans.append(PlanConfig(kind=PLAN_DECREASING, sizes=list(range(base_size, last - 1, -1))))
    if PLAN_FIXED in directions and base_size > 2:
        available = math.comb(base_size, base_size - 1)
        for head_count in range(2, min(max_fixed_heads, available + 1) + 1):
            plans.append(PlanConfig(kind=PLAN_FIXED, head_count=head_count, size=base_size - 1))
    return plans


class ExperimentRunner:
    """Loads the dataset once and runs seeded base/incremental cells."""

    def __init__(self, config: ExperimentConfig, dataset: Optional[Dataset] = None) -> None:
        self.config = config
        self.dataset = dataset if dataset is not None else self._load_dataset()
        self.config.validate(self.dataset.num_classes, self.dataset.feature_shape)

    def _load_dataset(self) -> Dataset:
        data = self.config.data
        if data.path:
            return load_dataset(data.path)
        synth = data.synth
        return synth_blobs(
            synth.num_classes,
            synth.n_per_class,
            synth.dim,
            synth.separation,
            synth.noise_sigma,
            synth.seed,
        )

    def prepare(self, seed: int) -> SeedInputs:
        train, test, val = stratified_split(self.dataset, self.config.data.split, seed)
        schedule = parse_schedule(
            self.config.schedule, self.dataset.num_classes, seed, self.config.data.class_order
        )
        spec = self.config.backbone.to_spec(self.dataset.feature_shape)
        return SeedInputs(seed, schedule, train, val, test, spec)

    def train_base(self, seed: int, plan_config: Optional[PlanConfig] = None) -> BaseRun:
        inputs = self.prepare(seed)
        config = self.config.for_seed(seed)
        plan = (plan_config or config.plan).build(inputs.schedule.base_classes, seed)
        model, log = train_base(inputs.spec, plan, inputs.train, inputs.val, config.base_train)
        return BaseRun(seed=seed, plan=plan, model=model, log=log)

    def run_cil(
        self,
        seed: int,
        base_model: ModelState,
        switches: Optional[LossSwitches] = None,
        capacity: Optional[int] = None,
        balanced_finetune: Optional[BalancedFinetuneConfig] = None,
    ) -> ExperimentReport:
        inputs = self.prepare(seed)
        config = self.config.for_seed(seed)
        if switches is not None:
            config.step = replace(config.step, losses=switches)
        if capacity is not None:
            config.exemplars = replace(config.exemplars, capacity=capacity)
        if balanced_finetune is not None:
            config.step = replace(config.step, balanced_finetune=balanced_finetune)
        store = ExemplarStore(config.exemplars.capacity, config.exemplars.strategy, seed)
        return run_experiment(
            base_model,
            inputs.schedule,
            inputs.train,
            inputs.val,
            inputs.test,
            config.step,
            store,
            config_echo=config.to_dict(),
        )

    def run_cells(self, cells: Mapping[Hashable, Callable[[], Any]]) -> Dict[Hashable, Any]:
        """Run independent cells on a thread pool; results come back in sorted key order."""
        results: Dict[Hashable, Any] = {}
        workers = self.worker_count(len(cells))
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(fn): key for key, fn in cells.items()}
            for future in as_completed(futures):
                key = futures[future]
                try:
                    results[key] = future.result()
                    logger.info(f"Finished cell {key}")
                except Exception as e:
                    logger.error(f"Cell {key} failed: {e}")
                    raise
        return {key: results[key] for key in sorted(results)}

    def base_models(self) -> Dict[int, ModelState]:
        runs = self.run_cells({seed: (lambda s=seed: self.train_base(s)) for seed in self.config.seeds})
        return {seed: run.incremental_model for seed, run in runs.items()}

    def ablate_losses(self) -> List[Dict[str, Any]]:
        """One row per (loss configuration, seed), in loss-grid order."""
        bases = self.base_models()
        grid = loss_grid(self.config.step.losses.temperature)
        order = {switches.label: i for i, switches in enumerate(grid)}
        cells = {
            (order[switches.label], seed): (
                lambda sw=switches, s=seed: self.run_cil(s, bases[s], switches=sw)
            )
            for switches in grid
            for seed in self.config.seeds
        }
        rows = []
        for (index, seed), report in self.run_cells(cells).items():
            row: Dict[str, Any] = {"config": grid[index].label, "seed": seed}
            for step in report.steps:
                row[f"step_{step.step}"] = step.acc
            row["avg"] = report.avg_incremental_accuracy
            rows.append(row)
        return rows

    def worker_count(self, cell_count: int) -> int:
        return max(1, min(self.config.jobs, DEFAULT_MAX_WORKERS, cell_count or 1))

    def sweep_heads(
        self, settings: SweepSettings, plans: Optional[Sequence[PlanConfig]] = None
    ) -> List[Dict[str, Any]]:
        """One row per (plan, seed); ``plans`` defaults to :func:`head_sweep_plans`.

        ``seconds_per_epoch`` is wall-clock time, so it is only comparable across rows
        that share ``timing_jobs``.
        """
        if plans is None:
            base_size = self.prepare(self.config.seeds[0]).schedule.step_sizes[0]
            plans = head_sweep_plans(base_size, settings.max_fixed_heads, settings.directions)
        workers = self.worker_count(len(plans) * len(self.config.seeds))
        if workers > 1:
            logger.warning(
                f"Head sweep runs {workers} cells at once; seconds_per_epoch includes contention"
            )

        def cell(plan_config: PlanConfig, seed: int) -> Dict[str, Any]:
            base = self.train_base(seed, plan_config)
            report = self.run_cil(seed, base.incremental_model)
            return {
                "direction": plan_config.kind,
                "heads": plan_label(base.plan),
                "seed": seed,
                "base_val_acc": base.log.best_val_acc,
                "seconds_per_epoch": base.log.mean_epoch_seconds,
                "timing_jobs": workers,
                "epochs": len(base.log.epochs),
                "base_acc": report.steps[0].acc,
                "final_acc": report.steps[-1].acc,
                "avg_incremental_accuracy": report.avg_incremental_accuracy,
            }

        cells = {
            (i, seed): (lambda p=plan, s=seed: cell(p, s))
            for i, plan in enumerate(plans)
            for seed in self.config.seeds
        }
        return list(self.run_cells(cells).values())

    def sweep_exemplars(self, settings: SweepSettings) -> List[Dict[str, Any]]:
        """Budget sweep over two bases: the single-head baseline and the configured plan.

        The baseline starts from a single-head base and adds a balanced fine-tune to every
        step (``settings.baseline_finetune``, or the configured one); ``per_class_m`` is
        capped at ``capacity // total classes`` so the balanced set always fits the store.
        The multitask base runs the configured step unchanged.
        """
        total = sum(self.prepare(self.config.seeds[0]).schedule.step_sizes)
        too_small = [k for k in settings.exemplar_grid if k < total]
        if too_small:
            raise ConfigValidationError(
                f"Exemplar budgets {too_small} cannot hold one sample for each of {total} classes"
            )
        bases = self.run_cells(
            {
                (kind, seed): (
                    lambda k=kind, s=seed: self.train_base(
                        s, PlanConfig(kind=PLAN_SINGLE) if k == SWEEP_BASELINE else None
                    )
                )
                for kind in SWEEP_BASES
                for seed in self.config.seeds
            }
        )
        finetune = self.config.step.balanced_finetune or settings.baseline_settings()

        def cell(capacity: int, kind: str, seed: int) -> Dict[str, Any]:
            base = bases[(kind, seed)]
            balanced = None
            if kind == SWEEP_BASELINE:
                balanced = replace(finetune, per_class_m=min(finetune.per_class_m, capacity // total))
            report = self.run_cil(
                seed, base.incremental_model, capacity=capacity, balanced_finetune=balanced
            )
            return {
                "capacity": capacity,
                "base": kind,
                "heads": plan_label(base.plan),
                "balanced_per_class": balanced.per_class_m if balanced else None,
                "seed": seed,
                "final_acc": report.steps[-1].acc,
                "avg_incremental_accuracy": report.avg_incremental_accuracy,
                "seconds": report.timing["total_seconds"],
            }

        cells = {
            (capacity, kind, seed): (lambda k=capacity, b=kind, s=seed: cell(k, b, s))
            for capacity in settings.exemplar_grid
            for kind in SWEEP_BASES
            for seed in self.config.seeds
        }
        return list(self.run_cells(cells).values())
