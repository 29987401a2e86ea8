import json
import time
from pathlib import Path

import pytest
import yaml

from cil_toolkit.data import synth_blobs
from cil_toolkit.experiment import (
    ConfigValidationError,
    ExperimentConfig,
    ExperimentConfigManager,
    ExperimentRunner,
    PlanConfig,
    SweepSettings,
    head_sweep_plans,
)
from cil_toolkit.experiment.constants import PLAN_DECREASING, PLAN_FIXED, PLAN_SINGLE

REPO_ROOT = Path(__file__).resolve().parent.parent


def test_shipped_configs_parse():
    manager = ExperimentConfigManager()
    config = manager.load_experiment(REPO_ROOT / "configs" / "experiment.yml")
    assert config.schedule == "4-2-2-2"
    assert config.step.phase1.lr > config.step.phase2.lr
    assert config.base_train.lr_schedule.total_epochs == config.base_train.epochs_max
    config.validate(num_classes=10, feature_shape=(32,))
    assert ExperimentConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()

    settings = SweepSettings.from_dict(manager.load_document(REPO_ROOT / "configs" / "sweeps.yml"))
    assert settings.exemplar_grid == [20, 50, 100, 200, 300, 400]
    assert settings.baseline_settings().per_class_m == 10


def test_unknown_sections_are_rejected(tiny_config):
    with pytest.raises(ConfigValidationError, match="optimizer"):
        ExperimentConfig.from_dict({**tiny_config, "optimizer": {}})
    tiny_config["plan"] = {"kind": "decreasing", "depth": 3}
    with pytest.raises(ConfigValidationError):
        ExperimentConfig.from_dict(tiny_config)


def test_invalid_step_section_is_a_validation_error(tiny_config):
    tiny_config["step"]["phase2"]["lr"] = 0.5
    with pytest.raises(ConfigValidationError):
        ExperimentConfig.from_dict(tiny_config)


def test_overrides_win_and_leave_original_untouched(tiny_config):
    config = ExperimentConfig.from_dict(tiny_config)
    changed = config.with_overrides(seed=7, out="elsewhere", heads=[2], exemplars=30, strategy="herding")
    assert changed.seeds == [7]
    assert changed.output_dir == "elsewhere"
    assert changed.plan == PlanConfig(kind=PLAN_DECREASING, sizes=[2])
    assert changed.exemplars.capacity == 30
    assert changed.exemplars.strategy == "herding"
    assert config.seeds == [0]
    assert config.exemplars.capacity == 12
    assert config.plan.kind == PLAN_SINGLE


def test_validation_collects_every_error(tiny_config):
    config = ExperimentConfig.from_dict(tiny_config).with_overrides(heads=[3], exemplars=4)
    with pytest.raises(ConfigValidationError) as excinfo:
        config.validate(num_classes=6, feature_shape=(8,))
    message = str(excinfo.value)
    assert "exemplar capacity 4" in message
    assert "task plan" in message


@pytest.mark.parametrize(
    "overrides",
    [{"schedule": "4-4"}, {"schedule": "2-x"}, {"strategy": "kmeans"}, {"jobs": 0}],
)
def test_validation_rejects_bad_settings(tiny_config, overrides):
    config = ExperimentConfig.from_dict(tiny_config).with_overrides(**overrides)
    with pytest.raises(ConfigValidationError):
        config.validate(num_classes=6, feature_shape=(8,))


def test_for_seed_reseeds_every_component(tiny_config):
    config = ExperimentConfig.from_dict({**tiny_config, "seeds": [0, 1, 2]}).for_seed(2)
    assert config.seeds == [2]
    assert config.base_train.seed == 2
    assert config.step.seed == 2


def test_config_manager_caches_documents(tmp_path, tiny_config):
    path = tmp_path / "experiment.yml"
    path.write_text(yaml.safe_dump(tiny_config), encoding="utf-8")
    manager = ExperimentConfigManager()
    assert manager is ExperimentConfigManager()

    first = manager.load_document(path)
    first["schedule"] = "mutated"
    path.write_text(yaml.safe_dump({**tiny_config, "schedule": "3-3"}), encoding="utf-8")
    assert manager.load_document(path)["schedule"] == "2-2-2"

    manager.reset()
    assert manager.load_document(path)["schedule"] == "3-3"
    with pytest.raises(FileNotFoundError):
        manager.load_document(tmp_path / "missing.yml")


def test_json_documents_load_too(tmp_path, tiny_config):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(tiny_config), encoding="utf-8")
    config = ExperimentConfigManager().load_experiment(path)
    assert config.exemplars.capacity == 12
    assert config.backbone.to_spec((8,)).embedding_dim == 8


def test_sweep_settings_validation():
    with pytest.raises(ConfigValidationError):
        SweepSettings(exemplar_grid=[])
    with pytest.raises(ConfigValidationError):
        SweepSettings(directions=["sideways"])
    with pytest.raises(ConfigValidationError):
        SweepSettings.from_dict({"grid": [10]})
    with pytest.raises(ConfigValidationError):
        SweepSettings(baseline_finetune={"per_class_m": 0})
    with pytest.raises(ConfigValidationError):
        SweepSettings(baseline_finetune={"rounds": 2})
    assert SweepSettings().baseline_settings().epochs == 5


def test_head_sweep_plans():
    plans = head_sweep_plans(5, 6, [PLAN_DECREASING, PLAN_FIXED])
    assert [p.label for p in plans] == [
        "[F]",
        "[5,4]",
        "[5,4,3]",
        "[5,4,3,2]",
        "[F+1x4]",
        "[F+2x4]",
        "[F+3x4]",
        "[F+4x4]",
        "[F+5x4]",
    ]
    assert [p.label for p in head_sweep_plans(5, 3, [PLAN_FIXED])] == ["[F]", "[F+1x4]", "[F+2x4]"]
    assert head_sweep_plans(2, 6, [PLAN_DECREASING, PLAN_FIXED]) == [PlanConfig(kind=PLAN_SINGLE)]


def test_cells_come_back_in_key_order(tiny_config):
    config = ExperimentConfig.from_dict({**tiny_config, "jobs": 3})
    runner = ExperimentRunner(config, dataset=synth_blobs(6, 30, 8, 6.0, 0.5, seed=0))

    def cell(value, delay):
        def run():
            time.sleep(delay)
            return value

        return run

    results = runner.run_cells({(2, 0): cell("c", 0.0), (0, 1): cell("a", 0.05), (1, 0): cell("b", 0.02)})
    assert list(results) == [(0, 1), (1, 0), (2, 0)]
    assert list(results.values()) == ["a", "b", "c"]


def test_failing_cell_propagates(tiny_config):
    runner = ExperimentRunner(ExperimentConfig.from_dict(tiny_config))

    def broken():
        raise ValueError("cell exploded")

    with pytest.raises(ValueError, match="exploded"):
        runner.run_cells({0: broken})
