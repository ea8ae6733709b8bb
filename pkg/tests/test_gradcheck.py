"""Finite-difference verification of every backward pass, plus a canary
proving the harness detects a corrupted gradient.
"""

import numpy as np
import pytest

from serkit.gradcheck import (CHECKS, THRESHOLD, max_relative_error,
                              numeric_gradient, run_gradcheck)
from serkit.net import Dense


def test_max_relative_error():
    a = np.array([1.0, 2.0])
    assert max_relative_error(a, a) == 0.0
    assert max_relative_error(np.array([1.0]), np.array([1.1])) == \
        pytest.approx(0.1 / 1.1, rel=1e-4)
    # The additive floor keeps tiny denominators from exploding the ratio.
    assert max_relative_error(np.array([0.0]), np.array([1e-9])) < 1e-2


def test_numeric_gradient_quadratic():
    # d/dx of 0.5 * sum(x^2) is x itself.
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    grad = numeric_gradient(lambda: 0.5 * float((x * x).sum()), x, h=1e-5)
    assert np.abs(grad - x).max() < 1e-9


def test_every_check_passes_threshold():
    for name, check in CHECKS.items():
        err = check(seed=0)
        assert err <= THRESHOLD, f"{name} exceeded threshold: {err}"


def test_linear_layers_are_tight():
    # Purely linear paths should sit far below the kink-limited bound.
    assert CHECKS["dense"](seed=1) < 1e-6


def test_run_gradcheck_report():
    report = run_gradcheck(seed=0)
    assert report["pass"] is True
    assert set(report["checks"]) == set(CHECKS)
    assert report["max_error"] == max(report["checks"].values())
    assert report["max_error"] <= report["threshold"] == THRESHOLD
    assert report["step"] == 1e-5


def test_corrupted_backward_is_flagged(monkeypatch):
    original = Dense.backward

    def corrupted(self, ctx, dy):
        dx, grads = original(self, ctx, dy)
        return dx, {k: 1.05 * g for k, g in grads.items()}

    monkeypatch.setattr(Dense, "backward", corrupted)
    err = CHECKS["dense"](seed=0)
    assert err >= 1e-2
    report = run_gradcheck(seed=0)
    assert report["pass"] is False
