import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhd.numeric import Adam, finite_diff_grad, logsumexp, relative_error, spawn_stream


class TestLogsumexp:
    def test_single_element(self):
        assert logsumexp([3.25]) == 3.25

    def test_two_zeros(self):
        assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_large_values_do_not_overflow(self):
        assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), rel=1e-15)
        assert logsumexp([-700.0, -700.0]) == pytest.approx(-700 + math.log(2), rel=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty vector"):
            logsumexp([])

    @given(st.lists(st.floats(-300, 300), min_size=1, max_size=20), st.floats(-300, 300))
    def test_shift_invariance(self, v, c):
        lhs = logsumexp(np.array(v) + c)
        rhs = logsumexp(v) + c
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda x: np.sum(x ** 2), [1.0, 2.0])
        np.testing.assert_allclose(g, [2.0, 4.0], rtol=1e-8)

    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_grad(lambda x: 7.0, [1.0, 2.0, 3.0]), 0.0)

    def test_product(self):
        g = finite_diff_grad(lambda x: x[0] * x[1], [3.0, 5.0])
        np.testing.assert_allclose(g, [5.0, 3.0], rtol=1e-8)

    def test_non_finite_reports_index(self):
        f = lambda x: np.inf if x[1] > 1.0 else 0.0  # noqa: E731
        with pytest.raises(FloatingPointError, match="index 1"):
            finite_diff_grad(f, [0.0, 1.0], h=1e-3)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_cubic_polynomials(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = r.normal(size=3), r.normal(size=3), r.normal(size=3)
        x = r.normal(size=3)
        f = lambda v: float(a @ v ** 3 + b @ v ** 2 + c @ v)  # noqa: E731
        analytic = 3 * a * x ** 2 + 2 * b * x + c
        assert relative_error(finite_diff_grad(f, x), analytic) < 1e-6


class TestStreams:
    def test_determinism(self):
        a = spawn_stream(42, 3).generator().standard_normal(100)
        b = spawn_stream(42, 3).generator().standard_normal(100)
        np.testing.assert_array_equal(a, b)

    def test_distinct_ids_differ(self):
        a = spawn_stream(42, 0).generator().standard_normal()
        b = spawn_stream(42, 1).generator().standard_normal()
        assert a != b

    def test_children_are_distinct_and_stable(self):
        s = spawn_stream(5, 9)
        assert s.child(1).generator().random() == s.child(1).generator().random()
        assert s.child(1).generator().random() != s.child(2).generator().random()

    def test_normal_mean(self):
        draws = spawn_stream(7, 0).generator().standard_normal(100_000)
        assert abs(draws.mean()) < 0.02


def test_adam_zero_lr_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, lr=0.0)
    opt.step(p, {"w": np.array([5.0, 5.0])})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_lr_sized():
    p = {"w": np.array([0.0])}
    Adam(p, lr=0.1).step(p, {"w": np.array([3.0])})
    assert p["w"][0] == pytest.approx(-0.1, rel=1e-6)
