import time

import numpy as np
import pytest

from cil_toolkit.core import layers as L
from cil_toolkit.core.gradcheck import (
    CHECKS,
    check_mlp,
    check_relu,
    numeric_gradient,
    relative_error,
    run_gradcheck_suite,
)


@pytest.mark.parametrize("check", CHECKS, ids=lambda c: c.__name__)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_analytic_gradients_match_finite_differences(check, seed):
    result = check(seed)
    assert result.passed, f"{result.name} seed={seed} rel_err={result.relative_error:.3e}"


def test_suite_runs_quickly():
    start = time.perf_counter()
    results = run_gradcheck_suite()
    assert len(results) == 3 * len(CHECKS)
    assert all(r.passed for r in results)
    assert time.perf_counter() - start < 60


def test_sign_flip_in_backward_is_caught(monkeypatch):
    original = L.ReLU.backward

    def flipped(self, params, dout, cache):
        dx, grads = original(self, params, dout, cache)
        return -dx, grads

    monkeypatch.setattr(L.ReLU, "backward", flipped)
    assert not check_relu(0).passed
    assert not check_mlp(0).passed


def test_numeric_gradient_of_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    grad = numeric_gradient(lambda: float(np.sum(x**2)), x)
    assert relative_error(2 * x, grad) < 1e-9
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])
