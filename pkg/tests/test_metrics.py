import numpy as np
import pytest

from cil_toolkit.learning.metrics import (
    MACRO,
    avg_incremental_accuracy,
    confusion,
    group_accuracy,
    maybe_avg_incremental_accuracy,
    overall_accuracy,
)

# Per-step accuracies (base step first) and the published averages of the loss ablation.
LOSS_TABLE = {
    "CE_N": ([96.97, 60.23, 43.79, 35.73, 29.46, 26.22], 39.09),
    "CE_N+KD_N": ([97.08, 60.75, 43.34, 37.43, 36.20, 34.85], 42.52),
    "CE_N+CE_O": ([97.25, 88.77, 79.07, 72.88, 72.82, 57.27], 74.16),
    "CE_N+CE_O+KD_N": ([96.78, 84.65, 78.27, 77.91, 73.60, 72.55], 77.39),
    "CE_N+CE_O+KD_O": ([97.12, 85.72, 80.64, 78.99, 74.30, 71.93], 78.32),
    "CE_N+CE_O+KD_N+KD_O": ([97.35, 87.92, 81.47, 77.66, 73.80, 73.27], 78.82),
}


def test_perfect_predictions_give_diagonal():
    labels = [0, 1, 2, 2, 1]
    cm = confusion(labels, labels, 3)
    assert np.array_equal(cm, np.diag([1, 2, 2]))
    assert overall_accuracy(cm) == 1.0


def test_empty_input_gives_zero_matrix():
    cm = confusion([], [], 4)
    assert cm.shape == (4, 4)
    assert cm.sum() == 0


def test_confusion_matches_direct_tally(rng):
    preds = rng.integers(0, 5, size=100)
    labels = rng.integers(0, 5, size=100)
    expected = np.zeros((5, 5), dtype=np.int64)
    for p, t in zip(preds, labels):
        expected[t][p] += 1
    cm = confusion(preds, labels, 5)
    assert np.array_equal(cm, expected)
    assert cm.sum(axis=1).tolist() == np.bincount(labels, minlength=5).tolist()


def test_confusion_rejects_bad_input():
    with pytest.raises(ValueError):
        confusion([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        confusion([0], [0, 1], 3)


def test_group_accuracy_hand_tally():
    cm = np.array([[8, 2, 0], [1, 9, 0], [5, 0, 5]])
    assert group_accuracy(cm, {0, 1}) == pytest.approx(0.85)
    assert group_accuracy(cm, {0, 1, 2}) == pytest.approx(overall_accuracy(cm))
    assert group_accuracy(cm, {0, 2}, average=MACRO) == pytest.approx(0.65)


def test_group_accuracy_of_diagonal_is_one():
    cm = np.diag([3, 4, 5])
    assert group_accuracy(cm, [2]) == 1.0
    assert group_accuracy(cm, [0, 1]) == 1.0


def test_group_accuracy_needs_samples():
    cm = np.array([[2, 0], [0, 0]])
    with pytest.raises(ValueError):
        group_accuracy(cm, [1])
    with pytest.raises(ValueError):
        group_accuracy(cm, [])


@pytest.mark.parametrize("label", list(LOSS_TABLE))
def test_average_reproduces_published_rows(label):
    steps, published = LOSS_TABLE[label]
    # Inputs and outputs are both rounded to two decimals.
    assert avg_incremental_accuracy(steps) == pytest.approx(published, abs=0.01)


def test_average_excludes_base_step_by_default():
    steps, _ = LOSS_TABLE["CE_N"]
    assert avg_incremental_accuracy(steps) == pytest.approx(39.086, abs=1e-9)
    assert avg_incremental_accuracy(steps, include_base=True) == pytest.approx(48.733, abs=1e-3)


def test_average_of_constant_list():
    assert avg_incremental_accuracy([0.7, 0.7, 0.7]) == pytest.approx(0.7)


def test_average_needs_an_incremental_step():
    with pytest.raises(ValueError):
        avg_incremental_accuracy([0.9])
    assert maybe_avg_incremental_accuracy([0.9]) is None
    assert maybe_avg_incremental_accuracy([0.9, 0.5]) == pytest.approx(0.5)
