import numpy as np
import pytest

from illumkit.color import angular_error, from_chromaticity, normalize, to_chromaticity
from illumkit.errors import DegenerateSum, ZeroVector


class TestNormalize:
    def test_uniform_vector(self):
        out = normalize((2.0, 2.0, 2.0))
        assert np.allclose(out, np.full(3, 1.0 / np.sqrt(3.0)), atol=1e-15)

    def test_axis_vector(self):
        assert np.array_equal(normalize((0.0, 0.0, 5.0)), [0.0, 0.0, 1.0])

    def test_zero_vector_raises(self):
        with pytest.raises(ZeroVector):
            normalize((0.0, 0.0, 0.0))

    def test_result_is_unit(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            v = rng.uniform(-5, 5, 3)
            if np.linalg.norm(v) < 1e-6:
                continue
            assert np.linalg.norm(normalize(v)) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            normalize((1.0, np.nan, 0.0))


class TestAngularError:
    def test_parallel(self):
        assert angular_error((1, 1, 1), (7, 7, 7)) == 0.0

    def test_orthogonal(self):
        assert angular_error((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0, abs=1e-12)

    def test_45_degrees(self):
        assert angular_error((1, 1, 0), (1, 0, 0)) == pytest.approx(45.0, abs=1e-12)

    def test_self_is_exactly_zero(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.uniform(0.01, 1, 3)
            assert angular_error(v, v) == 0.0

    def test_symmetry_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a = rng.uniform(0.01, 1, 3)
            b = rng.uniform(0.01, 1, 3)
            assert angular_error(a, b) == angular_error(b, a)

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = rng.uniform(0.01, 1, 3)
            b = rng.uniform(0.01, 1, 3)
            alpha, beta = rng.uniform(0.01, 100, 2)
            assert angular_error(alpha * a, beta * b) == pytest.approx(
                angular_error(a, b), abs=1e-9
            )

    def test_zero_inputs_raise(self):
        with pytest.raises(ZeroVector):
            angular_error((0, 0, 0), (1, 0, 0))
        with pytest.raises(ZeroVector):
            angular_error((1, 0, 0), (0, 0, 0))

    def test_antiparallel(self):
        assert angular_error((1, 0, 0), (-1, 0, 0)) == pytest.approx(180.0, abs=1e-9)

    def test_resolves_tiny_angles(self):
        # a rotation of 1e-9 degrees must not be reported as zero or 1e-6
        theta = np.radians(1e-9)
        a = np.array([1.0, 0.0, 0.0])
        b = np.array([np.cos(theta), np.sin(theta), 0.0])
        assert angular_error(a, b) == pytest.approx(1e-9, rel=1e-3)


class TestChromaticity:
    def test_gray_point(self):
        assert np.allclose(to_chromaticity((1, 1, 1)), [1 / 3, 1 / 3], atol=1e-15)

    def test_arithmetic(self):
        assert np.allclose(to_chromaticity((2, 1, 1)), [0.5, 0.25], atol=1e-15)

    def test_zero_sum_raises(self):
        with pytest.raises(DegenerateSum):
            to_chromaticity((0, 0, 0))

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            v = rng.uniform(0.01, 1, 3)
            alpha = rng.uniform(0.01, 100)
            assert np.allclose(to_chromaticity(alpha * v), to_chromaticity(v), atol=1e-12)

    def test_from_chromaticity_examples(self):
        assert np.allclose(from_chromaticity((1 / 3, 1 / 3)), [1 / 3, 1 / 3, 1 / 3], atol=1e-15)
        assert np.allclose(from_chromaticity((0.5, 0.25)), [0.5, 0.25, 0.25], atol=1e-15)
        assert np.array_equal(from_chromaticity((1.0, 0.0)), [1.0, 0.0, 0.0])

    def test_round_trip_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            u = rng.uniform(0, 1, 2)
            if u.sum() > 1:
                u = 1 - u
            back = to_chromaticity(from_chromaticity(u))
            assert np.allclose(back, u, atol=1e-12)

    def test_round_trip_preserves_direction(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            v = rng.uniform(0.01, 1, 3)
            lifted = from_chromaticity(to_chromaticity(v))
            assert angular_error(lifted, v) < 1e-9

    def test_out_of_simplex_lift(self):
        # the inverse embedding is defined beyond the simplex for LUT nodes
        v = from_chromaticity((0.9, 0.9))
        assert np.allclose(v, [0.9, 0.9, -0.8], atol=1e-15)
