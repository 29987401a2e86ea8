import json

import numpy as np
import pytest

from cil_toolkit.core import LrSchedule, model_checksum, predict_logits
from cil_toolkit.data import parse_schedule
from cil_toolkit.learning.exemplar_memory import ExemplarStore
from cil_toolkit.learning.incremental_engine import (
    LOSS_GRID,
    BalancedFinetuneConfig,
    IncrementalState,
    LossSwitches,
    Phase2Config,
    PhaseConfig,
    StepConfig,
    StepData,
    evaluate_step,
    initial_state,
    loss_grid,
    run_experiment,
    run_step,
)
from cil_toolkit.learning.loops import accuracy
from cil_toolkit.learning.multitask_trainer import BaseTrainConfig, train_single_task


@pytest.fixture
def base_model(splits, mlp_spec, schedule):
    train, _, val = splits
    cfg = BaseTrainConfig(
        epochs_max=8,
        batch_size=16,
        lr_schedule=LrSchedule(kind="cosine", lr0=0.05, total_epochs=8),
        seed=0,
    )
    model, _ = train_single_task(mlp_spec, train, val, cfg, class_labels=schedule.base_classes)
    return model


@pytest.fixture
def step_cfg():
    return StepConfig(
        losses=LossSwitches(ce_new=True, ce_old=True),
        phase1=PhaseConfig(lr=0.05, epochs=2),
        phase2=Phase2Config(lr=0.01, epochs_max=4, patience=1),
        batch_size=16,
        seed=0,
    )


@pytest.fixture
def state(base_model, splits):
    train, _, _ = splits
    return initial_state(base_model, ExemplarStore(capacity=12, seed=0), train)


def _data(splits):
    train, _, val = splits
    return StepData(train=train, val=val)


def test_loss_grid_rows():
    grid = loss_grid()
    assert [s.label for s in grid] == [
        "CE_N",
        "CE_N+KD_N",
        "CE_N+CE_O",
        "CE_N+CE_O+KD_N",
        "CE_N+CE_O+KD_O",
        "CE_N+CE_O+KD_N+KD_O",
    ]
    assert list(LOSS_GRID) == [s.label for s in grid]
    assert loss_grid(4.0)[0].temperature == 4.0


def test_loss_switch_validation():
    with pytest.raises(ValueError):
        LossSwitches(ce_new=False)
    with pytest.raises(ValueError):
        LossSwitches(temperature=0.0)
    with pytest.raises(ValueError):
        LossSwitches(weights={"kd_all": 1.0})
    with pytest.raises(KeyError):
        LossSwitches.from_label("KD_O")
    switches = LossSwitches(kd_old=True, weights={"kd_old": 0.0})
    assert not switches.uses_teacher
    assert not switches.uses_exemplars
    assert LossSwitches.from_dict(switches.to_dict()) == switches


def test_step_config_requires_larger_phase1_rate():
    with pytest.raises(ValueError):
        StepConfig(phase1=PhaseConfig(lr=0.001), phase2=Phase2Config(lr=0.001))
    cfg = StepConfig(balanced_finetune=BalancedFinetuneConfig(per_class_m=2, epochs=1))
    assert StepConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_initial_state_fills_store(state, schedule):
    assert state.seen_classes == schedule.base_classes
    assert state.store.classes == sorted(schedule.base_classes)
    assert state.store.total() == 12
    assert state.teacher is None


def test_without_training_old_logits_match_teacher(state, splits, schedule):
    cfg = StepConfig(phase1=PhaseConfig(epochs=0), phase2=Phase2Config(epochs_max=0))
    new_state, report = run_step(state, schedule.class_assignment[1], _data(splits), cfg)
    _, test, _ = splits
    width = report.teacher_width
    np.testing.assert_array_equal(
        predict_logits(new_state.student, test.features, 0)[:, :width],
        predict_logits(state.student, test.features, 0),
    )
    assert report.phase1_losses == []
    assert report.phase2_val_history == []


def test_step_keeps_teacher_and_backbone_discipline(state, splits, schedule, step_cfg):
    before = model_checksum(state.student)
    new_state, report = run_step(state, schedule.class_assignment[1], _data(splits), step_cfg)

    assert model_checksum(new_state.teacher) == before
    assert report.teacher_checksum_before == report.teacher_checksum_after == before
    assert report.backbone_checksum_before_phase1 == report.backbone_checksum_after_phase1
    assert model_checksum(state.student) == before
    assert len(report.phase1_losses) == step_cfg.phase1.epochs


def test_step_grows_head_and_store(state, splits, schedule, step_cfg):
    data = _data(splits)
    for step, new_classes in enumerate(schedule.class_assignment[1:], start=1):
        state, report = run_step(state, new_classes, data, step_cfg)
        assert state.student.heads[0].width == sum(schedule.step_sizes[: step + 1])
        assert state.student.heads[0].class_labels == schedule.seen_after(step)
        assert state.store.classes == sorted(schedule.seen_after(step))
        assert state.store.total() <= state.store.capacity
        assert report.exemplars_used > 0
        assert state.step_index == step


def _early_stopping_cases(count=100):
    rng = np.random.default_rng(2024)
    return [
        pytest.param(
            int(rng.integers(0, 2)),
            int(rng.integers(1, 7)),
            int(rng.integers(0, 4)),
            int(rng.integers(0, 1000)),
            id=f"case{i}",
        )
        for i in range(count)
    ]


@pytest.mark.parametrize("phase1_epochs,epochs_max,patience,seed", _early_stopping_cases())
def test_phase2_early_stopping_restores_best(
    state, splits, schedule, phase1_epochs, epochs_max, patience, seed
):
    def step(max_epochs):
        cfg = StepConfig(
            losses=LossSwitches(ce_new=True, ce_old=True),
            phase1=PhaseConfig(lr=0.05, epochs=phase1_epochs),
            phase2=Phase2Config(lr=0.02, epochs_max=max_epochs, patience=patience),
            batch_size=16,
            seed=seed,
        )
        return run_step(state, schedule.class_assignment[1], _data(splits), cfg)

    new_state, report = step(epochs_max)
    history = report.phase2_val_history
    best_epoch = report.phase2_best_epoch
    assert len(history) == report.phase2_epochs_run
    assert report.phase2_epochs_run <= min(epochs_max, best_epoch + patience + 1)
    assert history[best_epoch] == max(history)
    assert best_epoch == history.index(max(history))
    _, _, val = splits
    seen_val = val.subset(val.indices_of(new_state.student.heads[0].class_labels))
    assert accuracy(new_state.student, seen_val) == max(history)

    # Stopping right after the best epoch leaves exactly the weights that were restored.
    truncated_state, truncated = step(best_epoch + 1)
    assert truncated.phase2_val_history == history[: best_epoch + 1]
    assert model_checksum(truncated_state.student) == model_checksum(new_state.student)


def test_kd_compares_only_teacher_columns(state, splits, schedule):
    cfg = StepConfig(
        losses=LossSwitches(ce_new=True, ce_old=True, kd_new=True, kd_old=True),
        phase1=PhaseConfig(lr=0.05, epochs=1),
        phase2=Phase2Config(lr=0.01, epochs_max=1),
    )
    _, report = run_step(state, schedule.class_assignment[1], _data(splits), cfg)
    assert report.kd_compared_widths
    assert set(report.kd_compared_widths) == {report.teacher_width}
    assert report.to_dict()["kd_compared_widths"] == [report.teacher_width]


def test_disabled_switch_equals_zero_weight(state, splits, schedule):
    def run(losses):
        cfg = StepConfig(
            losses=losses,
            phase1=PhaseConfig(lr=0.05, epochs=2),
            phase2=Phase2Config(lr=0.01, epochs_max=2),
        )
        new_state, _ = run_step(state, schedule.class_assignment[1], _data(splits), cfg)
        return model_checksum(new_state.student)

    disabled = run(LossSwitches(ce_new=True, ce_old=False, kd_old=True))
    zeroed = run(LossSwitches(ce_new=True, ce_old=True, kd_old=True, weights={"ce_old": 0.0}))
    assert disabled == zeroed


def test_balanced_finetune_runs(state, splits, schedule, step_cfg):
    cfg = StepConfig(
        losses=step_cfg.losses,
        phase1=step_cfg.phase1,
        phase2=step_cfg.phase2,
        balanced_finetune=BalancedFinetuneConfig(per_class_m=3, epochs=2, lr=0.001),
    )
    _, report = run_step(state, schedule.class_assignment[1], _data(splits), cfg)
    assert len(report.balanced_losses) == 2


def test_step_preconditions(state, splits, schedule, step_cfg):
    data = _data(splits)
    with pytest.raises(ValueError):
        run_step(state, [], data, step_cfg)
    with pytest.raises(ValueError):
        run_step(state, schedule.base_classes[:1], data, step_cfg)
    train, _, _ = splits
    missing = train.subset(train.indices_of(schedule.base_classes))
    with pytest.raises(ValueError):
        run_step(state, schedule.class_assignment[1], StepData(missing, data.val), step_cfg)
    bare = IncrementalState(
        student=state.student, teacher=None, store=state.store, seen_classes=[]
    )
    kd_cfg = StepConfig(losses=LossSwitches(kd_new=True))
    with pytest.raises(ValueError):
        run_step(bare, schedule.class_assignment[1], data, kd_cfg)


def test_evaluation_confusion_counts(state, splits):
    _, test, _ = splits
    result = evaluate_step(state.student, test, 0, [], state.seen_classes)
    rows = test.indices_of(state.seen_classes)
    assert result.confusion.sum() == len(rows)
    expected = [int(np.sum(test.labels == c)) for c in result.classes]
    assert result.confusion.sum(axis=1).tolist() == expected
    assert result.acc_old is None and result.acc_new is None


def test_experiment_report(base_model, splits, schedule, step_cfg):
    train, test, val = splits
    report = run_experiment(
        base_model, schedule, train, val, test, step_cfg, ExemplarStore(capacity=12, seed=0)
    )
    assert [s.step for s in report.steps] == [0, 1, 2]
    assert [s.n_classes for s in report.steps] == [2, 4, 6]
    assert report.avg_incremental_accuracy == pytest.approx(
        np.mean([s.acc for s in report.steps[1:]])
    )
    for step in report.steps[1:]:
        assert step.acc_old is not None and step.acc_new is not None
        details = step.details
        assert details.backbone_checksum_before_phase1 == details.backbone_checksum_after_phase1
        assert details.teacher_checksum_before == details.teacher_checksum_after
    assert "seconds" not in json.dumps(report.to_dict())
    assert report.timing["total_seconds"] > 0
    assert len(report.csv_rows()) == 3

    again = run_experiment(
        base_model, schedule, train, val, test, step_cfg, ExemplarStore(capacity=12, seed=0)
    )
    assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(report.to_dict(), sort_keys=True)


def test_base_only_schedule_has_no_average(base_model, splits, step_cfg):
    train, test, val = splits
    schedule = parse_schedule("2", 6, seed=0, order="label")
    report = run_experiment(
        base_model, schedule, train, val, test, step_cfg, ExemplarStore(capacity=4)
    )
    assert len(report.steps) == 1
    assert report.avg_incremental_accuracy is None


def test_schedule_must_match_base_model(base_model, splits, step_cfg):
    train, test, val = splits
    wider_base = parse_schedule("3-2", 6, seed=0, order="label")
    with pytest.raises(ValueError):
        run_experiment(base_model, wider_base, train, val, test, step_cfg, ExemplarStore(capacity=4))
    with pytest.raises(ValueError):
        run_experiment(
            base_model,
            parse_schedule("2-5", 7, seed=0, order="label"),
            train,
            val,
            test,
            step_cfg,
            ExemplarStore(capacity=8),
        )
