import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loggpis.covariance import KernelParams
from loggpis.field import (INSIDE, LATENT_FLOOR, OUTSIDE, UNKNOWN, FieldEstimates, gpis_transform,
                           log_transform, recover_sign, to_distance, to_gradient, to_variance)
from loggpis.gp import TrainingBlock, fit, predict

from oracles import CAP_LAM40

P40 = KernelParams(lam=40.0)


class TestDistance:
    def test_one_is_surface(self):
        assert to_distance(1.0, P40) == (0.0, False)

    def test_exact_inverse(self):
        d, c = to_distance(np.exp(-40.0), P40, floor=1e-300)
        assert d == pytest.approx(1.0, rel=1e-14) and not c

    def test_exact_inverse_beyond_default_cap(self):
        # exp(-40) is below the default floor, so 1 m reads as the 0.69 m cap.
        d, c = to_distance(np.exp(-40.0), P40)
        assert d == pytest.approx(CAP_LAM40, rel=1e-14) and c

    def test_negative_latent_clamps(self):
        d, c = to_distance(-0.001, P40)
        assert d == pytest.approx(CAP_LAM40, rel=1e-14) and c

    def test_above_one_is_zero_and_flagged(self):
        assert to_distance(1.2, P40) == (0.0, True)

    @given(st.floats(0.0, 0.5 * -np.log(LATENT_FLOOR) / 40.0))
    def test_round_trip(self, d):
        assert to_distance(np.exp(-40.0 * d), P40)[0] == pytest.approx(d, abs=1e-12)

    def test_strictly_decreasing(self):
        f = np.geomspace(2 * LATENT_FLOOR, 1.0, 500)
        d = np.array([to_distance(v, P40)[0] for v in f])
        assert np.all(np.diff(d) < 0)

    def test_custom_floor(self):
        d, c = to_distance(1e-20, P40, floor=1e-300)
        assert d == pytest.approx(-np.log(1e-20) / 40) and not c


class TestGradient:
    def test_normalize_and_flip(self):
        np.testing.assert_allclose(to_gradient(0.5, [0.0, -3.0]), [0.0, 1.0])

    def test_degenerate(self):
        assert to_gradient(0.5, [1e-15, 0.0]) is None

    def test_unit_norm(self, rng):
        for g in rng.normal(size=(20, 3)):
            assert np.linalg.norm(to_gradient(0.3, g)) == pytest.approx(1.0, abs=1e-12)


class TestVariance:
    def test_zero(self):
        assert to_variance(0.5, 0.0, P40) == 0.0

    def test_substitution(self):
        assert to_variance(1.0, 0.04, P40) == pytest.approx(2.5e-5, rel=1e-14)

    def test_monte_carlo(self, rng):
        lam = 2.0
        p = KernelParams(lam=lam, noise_y=0.01, noise_grad=0.01)
        X = np.linspace(0.0, 1.0, 6)[:, None]
        v = np.exp(-lam * X[:, 0])
        m = fit(TrainingBlock(X, v, -lam * v[:, None]), p)
        checked = 0
        for q in np.linspace(0.05, 1.2, 24):
            mean, _, var, _ = predict(m, np.array([q]))
            if not (np.sqrt(var) < 0.1 * mean and mean < 1):
                continue
            f = rng.normal(mean, np.sqrt(var), size=100_000)
            d = -np.log(f) / lam
            assert np.var(d) == pytest.approx(to_variance(mean, var, p), rel=0.2)
            checked += 1
        assert checked >= 5


class TestSign:
    def test_toward_and_away(self):
        assert recover_sign([0, 0], [1, 0], [5, 0]) == OUTSIDE
        assert recover_sign([0, 0], [-1, 0], [5, 0]) == INSIDE

    def test_perpendicular_is_unknown(self):
        assert recover_sign([0, 0], [0, 1], [5, 0]) == UNKNOWN
        assert recover_sign([0, 0], None, [5, 0]) == UNKNOWN

    def test_interior_query_circle(self):
        # Inside a circle of radius 5 at (1, 0): the nearest surface point is
        # (5, 0) and the distance gradient points away from it, toward the
        # centre; the sensor sits outside at (8, 0).
        x = np.array([1.0, 0.0])
        grad = np.array([-1.0, 0.0])
        assert recover_sign(x, grad, [8.0, 0.0]) == INSIDE


class TestTransforms:
    def test_log_transform_columns(self):
        X = np.zeros((3, 2))
        mean = np.array([1.0, np.exp(-4.0), -1.0])
        grad = np.array([[0.0, -1.0], [0.0, -2.0], [0.0, 0.0]])
        fe = log_transform(X, mean, grad, np.full(3, 1e-4), KernelParams(lam=4.0), sensor_pos=[0.0, 5.0])
        np.testing.assert_allclose(fe.distance[:2], [0.0, 1.0])
        np.testing.assert_array_equal(fe.clamped, [False, False, True])
        np.testing.assert_array_equal(fe.sign[:2], [OUTSIDE, OUTSIDE])
        assert np.isnan(fe.gradient[2]).all() and fe.sign[2] == UNKNOWN
        assert fe[2].gradient is None

    def test_log_transform_without_sensor(self):
        fe = log_transform(np.zeros((1, 2)), [0.5], [[1.0, 0.0]], [0.0], P40)
        assert fe.sign[0] == UNKNOWN

    def test_gpis_transform(self):
        fe = gpis_transform(np.zeros((2, 2)), [0.3, -0.2], [[1.0, 0.0], [1.0, 0.0]], [0.1, -1e-9])
        np.testing.assert_allclose(fe.distance, [0.3, 0.2])
        np.testing.assert_array_equal(fe.sign, [OUTSIDE, INSIDE])
        np.testing.assert_allclose(fe.gradient, [[1.0, 0.0], [-1.0, 0.0]])
        assert fe.variance[1] == 0.0

    def test_signed_distance_and_empty(self):
        fe = gpis_transform(np.zeros((2, 2)), [0.3, -0.2], [[1.0, 0.0], [1.0, 0.0]], [0.0, 0.0])
        np.testing.assert_allclose(fe.signed_distance(), [0.3, -0.2])
        assert len(FieldEstimates.empty(3)) == 0
        assert fe[1].signed_distance == pytest.approx(-0.2)
