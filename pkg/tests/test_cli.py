import csv
import json

import pytest
import yaml

import cil_toolkit.core.layers as L
from cil_toolkit.core import NumericalError, SnapshotFormatError, load_snapshot
from cil_toolkit.data import load_dataset
from cil_toolkit.experiment import ExperimentRunner
from cli_parser import CliParser
from constants import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION
from main import exit_code_for, main


@pytest.fixture
def config_file(tmp_path, tiny_config):
    path = tmp_path / "experiment.yml"
    path.write_text(yaml.safe_dump(tiny_config), encoding="utf-8")
    return str(path)


def test_train_base_then_run_cil_from_snapshot(tmp_path, config_file):
    base_dir = tmp_path / "base"
    assert main(["train-base", "-c", config_file, "-o", str(base_dir), "--log-level", "warning"]) == EXIT_OK
    for name in ("base_model.cilm", "train_log.csv", "plan.json", "config.json"):
        assert (base_dir / name).exists()
    snapshot = base_dir / "base_model.cilm"
    assert load_snapshot(snapshot).heads[0].class_labels == [0, 1]

    runs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(["run-cil", "-c", config_file, "-o", str(out), "--snapshot", str(snapshot)])
        assert code == EXIT_OK
        runs.append(out)

    first, second = runs
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()
    report = json.loads((first / "report.json").read_text())
    assert [s["n_classes"] for s in report["steps"]] == [2, 4, 6]
    assert "timing" not in report
    assert "total_seconds" in json.loads((first / "timing.json").read_text())
    for step in range(3):
        assert (first / f"confusion_step{step}.csv").exists()
    with open(first / "steps.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["step", "n_classes", "acc", "acc_old", "acc_new"]
    assert rows[1][3:] == ["", ""]
    assert json.loads((first / "exemplars.json").read_text())["capacity"] == 12


def test_infeasible_head_plan_fails_before_writing(tmp_path, config_file):
    out = tmp_path / "out"
    assert main(["train-base", "-c", config_file, "-o", str(out), "--heads", "6"]) == EXIT_VALIDATION
    assert not out.exists()


def test_ablation_writes_six_rows(tmp_path, config_file):
    out = tmp_path / "ablation"
    assert main(["ablate-losses", "-c", config_file, "-o", str(out), "-j", "2"]) == EXIT_OK
    with open(out / "loss_ablation.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [r["config"] for r in rows][0] == "CE_N"
    assert len(rows) == 6
    assert len(json.loads((out / "loss_ablation.json").read_text())["runs"]) == 6


def test_synth_writes_a_loadable_dataset(tmp_path, config_file):
    out = tmp_path / "blobs"
    args = ["synth", "-c", config_file, "-o", str(out), "--num-classes", "3", "--n-per-class", "5", "--dim", "4"]
    assert main(args) == EXIT_OK
    ds = load_dataset(out)
    assert len(ds) == 15
    assert ds.feature_shape == (4,)


def test_gradcheck_exit_codes(monkeypatch):
    assert main(["gradcheck"]) == EXIT_OK
    original = L.ReLU.backward

    def flipped(self, params, dout, cache):
        dx, grads = original(self, params, dout, cache)
        return -dx, grads

    monkeypatch.setattr(L.ReLU, "backward", flipped)
    assert main(["gradcheck"]) == EXIT_NUMERICAL


def test_bad_arguments_are_validation_errors(tmp_path, config_file):
    assert main(["fly"]) == EXIT_VALIDATION
    assert main(["run-cil", "-c", config_file, "--jobs", "0"]) == EXIT_VALIDATION
    assert main(["run-cil", "-c", config_file, "--heads", "4,x"]) == EXIT_VALIDATION
    assert main(["run-cil", "-c", config_file, "--schedule", "2-2-2-2"]) == EXIT_VALIDATION


def test_io_failures_exit_with_io_code(tmp_path, config_file):
    assert main(["run-cil", "-c", str(tmp_path / "missing.yml")]) == EXIT_IO
    broken = tmp_path / "broken.cilm"
    broken.write_bytes(b"nope")
    assert main(["run-cil", "-c", config_file, "--snapshot", str(broken)]) == EXIT_IO


def test_exit_code_mapping():
    assert exit_code_for(NumericalError("nan")) == EXIT_NUMERICAL
    assert exit_code_for(SnapshotFormatError("magic")) == EXIT_IO
    assert exit_code_for(FileNotFoundError("x")) == EXIT_IO
    assert exit_code_for(KeyError("head")) == EXIT_VALIDATION
    assert exit_code_for(RuntimeError("boom")) is None


def test_parser_reads_list_flags():
    args = CliParser.parse_arguments(["sweep-heads", "--heads", "5,4,3", "-k", "20", "--seed", "3"])
    assert args.heads == [5, 4, 3]
    assert args.exemplars == 20
    assert args.seed == 3
    assert args.sweep_config is None


def test_snapshot_runs_only_its_own_seed_under_seeded_order(tmp_path, tiny_config, caplog):
    path = tmp_path / "seeded.yml"
    tiny_config["data"]["class_order"] = "seeded"
    tiny_config["seeds"] = [0, 1, 2]
    path.write_text(yaml.safe_dump(tiny_config), encoding="utf-8")
    base_dir = tmp_path / "base"
    assert main(["train-base", "-c", str(path), "-o", str(base_dir), "--seed", "1"]) == EXIT_OK
    snapshot = str(base_dir / "base_model.cilm")

    out = tmp_path / "cil"
    assert main(["run-cil", "-c", str(path), "-o", str(out), "--snapshot", snapshot]) == EXIT_OK
    assert json.loads((out / "report.json").read_text())["seed"] == 1
    assert not (out / "seed_0").exists()
    assert "only that seed is run" in caplog.text

    other = ["run-cil", "-c", str(path), "-o", str(tmp_path / "other"), "--snapshot", snapshot]
    assert main(other + ["--seed", "2"]) == EXIT_VALIDATION
    assert "seed 2 draws a different class schedule" in caplog.text


def test_failed_seed_logs_directories_already_written(tmp_path, tiny_config, monkeypatch, caplog):
    path = tmp_path / "two_seeds.yml"
    tiny_config["seeds"] = [0, 1]
    path.write_text(yaml.safe_dump(tiny_config), encoding="utf-8")
    original = ExperimentRunner.train_base

    def fail_on_second_seed(self, seed, plan_config=None):
        if seed == 1:
            raise ValueError("diverged")
        return original(self, seed, plan_config)

    monkeypatch.setattr(ExperimentRunner, "train_base", fail_on_second_seed)
    out = tmp_path / "base"
    assert main(["train-base", "-c", str(path), "-o", str(out)]) == EXIT_VALIDATION
    assert (out / "seed_0" / "base_model.cilm").exists()
    assert not (out / "seed_1").exists()
    assert f"Seed 1 failed; outputs of earlier seeds remain in ['{out / 'seed_0'}']" in caplog.text
