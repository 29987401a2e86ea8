import math

import numpy as np
import pytest

from cil_toolkit.core import CrossEntropyTerm, DistillationTerm, ShapeError, WeightedSum, cross_entropy, kd_loss


def test_cross_entropy_of_uniform_logits_is_log_width():
    logits = np.zeros((3, 4))
    assert cross_entropy(logits, np.array([0, 2, 3])) == pytest.approx(math.log(4), abs=1e-9)


def test_cross_entropy_vanishes_for_dominant_logit():
    logits = np.array([[1000.0, 0.0, 0.0], [0.0, 0.0, 1000.0]])
    assert cross_entropy(logits, np.array([0, 2])) == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_matches_direct_sum(rng):
    logits = rng.standard_normal((3, 5))
    labels = np.array([4, 0, 2])
    expected = 0.0
    for row, label in zip(logits, labels):
        expected -= math.log(math.exp(row[label]) / sum(math.exp(v) for v in row))
    assert cross_entropy(logits, labels) == pytest.approx(expected / 3, abs=1e-10)


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


@pytest.mark.parametrize("temperature", [1.0, 2.0, 4.0])
def test_kd_of_identical_logits_is_zero(rng, temperature):
    logits = rng.standard_normal((4, 6))
    assert kd_loss(logits, logits.copy(), temperature) == pytest.approx(0.0, abs=1e-12)


def test_kd_is_invariant_to_row_shifts(rng):
    student = rng.standard_normal((3, 4))
    teacher = student + rng.standard_normal((3, 1)) * 5
    assert kd_loss(student, teacher, 2.0) == pytest.approx(0.0, abs=1e-9)


def test_kd_matches_direct_sum(rng):
    student = rng.standard_normal((2, 3))
    teacher = rng.standard_normal((2, 3))
    t = 2.0
    total = 0.0
    for s_row, t_row in zip(student, teacher):
        zs = sum(math.exp(v / t) for v in s_row)
        zt = sum(math.exp(v / t) for v in t_row)
        for s_val, t_val in zip(s_row, t_row):
            p = math.exp(t_val / t) / zt
            q = math.exp(s_val / t) / zs
            total += p * math.log(p / q)
    assert kd_loss(student, teacher, t) == pytest.approx(t * t * total / 2, abs=1e-10)


def test_kd_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        kd_loss(np.zeros((2, 3)), np.zeros((2, 4)), 2.0)
    with pytest.raises(ValueError):
        kd_loss(np.zeros((2, 3)), np.zeros((2, 3)), 0.0)


def test_distillation_reads_only_teacher_columns(rng):
    logits = rng.standard_normal((4, 5))
    term = DistillationTerm(rng.standard_normal((2, 3)), temperature=2.0, rows=np.array([1, 3]))
    value, grad = term.value_and_grad(logits)
    assert value > 0
    assert term.compared_widths == [3]
    assert np.all(grad[:, 3:] == 0)
    assert np.all(grad[[0, 2]] == 0)


def test_zero_weight_term_matches_absent_term(rng):
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 1, 2, 1])
    ce = CrossEntropyTerm(labels)
    kd_off = DistillationTerm(rng.standard_normal((4, 3)), weight=0.0)
    with_zero = WeightedSum([ce, kd_off]).value_and_grad(logits)
    alone = WeightedSum([ce]).value_and_grad(logits)
    assert with_zero[0] == alone[0]
    np.testing.assert_array_equal(with_zero[1], alone[1])
    assert kd_off.compared_widths == []


def test_weighted_sum_scales_terms(rng):
    logits = rng.standard_normal((3, 3))
    labels = np.array([2, 0, 1])
    value, grad = WeightedSum([CrossEntropyTerm(labels, weight=0.5)]).value_and_grad(logits)
    base_value, base_grad = CrossEntropyTerm(labels).value_and_grad(logits)
    assert value == pytest.approx(0.5 * base_value)
    np.testing.assert_allclose(grad, 0.5 * base_grad)
