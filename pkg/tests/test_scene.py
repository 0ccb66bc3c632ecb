import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loggpis.covariance import InvalidInputError
from loggpis.field import INSIDE, OUTSIDE
from loggpis.scene import AnalyticScene, Ball, Box

from oracles import box_sdf, circle_edf

coords = st.floats(-3, 3, allow_nan=False)


class TestPrimitives:
    @given(st.lists(st.tuples(coords, coords), min_size=1, max_size=20))
    def test_ball_matches_oracle(self, pts):
        X = np.array(pts)
        np.testing.assert_allclose(Ball((0.5, -0.2), 1.3).signed_distance(X) + 1.3,
                                   circle_edf(X, (0.5, -0.2), 0.0), atol=1e-12)

    @given(st.lists(st.tuples(coords, coords, coords), min_size=1, max_size=20))
    def test_box_matches_oracle(self, pts):
        X = np.array(pts)
        b = Box((0.1, 0.2, 0.3), (0.3, 0.2, 0.2))
        np.testing.assert_allclose(b.signed_distance(X), box_sdf(X, b.center, b.size), atol=1e-12)

    @pytest.mark.parametrize("kw", [dict(radius=0.0), dict(radius=-1.0)])
    def test_bad_ball(self, kw):
        with pytest.raises(InvalidInputError):
            Ball((0, 0), **kw)

    def test_bad_box(self):
        with pytest.raises(InvalidInputError):
            Box((0, 0), (1, 0))
        with pytest.raises(InvalidInputError):
            Box((0, 0, 0), (1, 1))

    def test_ball_surface_samples(self):
        P, N = Ball((1.0, 2.0, 3.0), 0.5).sample_surface(0.05)
        np.testing.assert_allclose(np.linalg.norm(P - [1, 2, 3], axis=1), 0.5, atol=1e-12)
        np.testing.assert_allclose(N, (P - [1, 2, 3]) / 0.5, atol=1e-12)

    def test_box_surface_samples(self):
        b = Box((0, 0, 0), (0.3, 0.2, 0.2))
        P, N = b.sample_surface(0.01)
        np.testing.assert_allclose(b.signed_distance(P), 0.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(N).sum(axis=1), 1.0)


class TestScene:
    def test_mixed_dimensions(self):
        with pytest.raises(InvalidInputError):
            AnalyticScene([Ball((0, 0), 1), Ball((0, 0, 0), 1)])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            AnalyticScene([])

    def test_ray_cast_from_centre(self):
        s = AnalyticScene([Ball((0, 0), 5.0)])
        th = np.linspace(0, 2 * np.pi, 37)
        D = np.column_stack([np.cos(th), np.sin(th)])
        np.testing.assert_allclose(s.ray_cast(np.zeros_like(D), D), 5.0, atol=1e-12)

    def test_ray_miss(self):
        s = AnalyticScene([Ball((0, 0), 1.0), Box((5, 0), (1, 1))])
        assert s.ray_cast([[0, 3]], [[0, 1]])[0] == np.inf

    def test_ray_hits_nearest(self):
        s = AnalyticScene([Box((2, 0), (1, 1)), Box((5, 0), (1, 1))])
        assert s.ray_cast([[0, 0]], [[1, 0]])[0] == pytest.approx(1.5)

    def test_ray_on_axis_slab(self):
        s = AnalyticScene([Box((0, 0, 1), (1, 1, 1))])
        assert s.ray_cast([[0, 0, 0]], [[0, 0, 1]])[0] == pytest.approx(0.5)

    @given(st.lists(st.tuples(coords, coords), min_size=1, max_size=20))
    def test_union_distance(self, pts):
        X = np.array(pts)
        s = AnalyticScene([Ball((-1, 0), 0.5), Box((1.5, 0), (1, 2))])
        ref = np.minimum(circle_edf(X, (-1, 0), 0.0) - 0.5, box_sdf(X, (1.5, 0), (1, 2)))
        np.testing.assert_allclose(s.signed_distance(X), ref, atol=1e-12)
        np.testing.assert_allclose(s.edf(X), np.abs(ref), atol=1e-12)

    def test_distance_gradient_finite_difference(self, rng):
        s = AnalyticScene([Ball((0, 0, 0), 1.0), Box((3, 0, 0), (1, 1, 1))])
        X = rng.uniform(-2, 4, size=(200, 3))
        h = 1e-6
        fd = np.column_stack([(s.edf(X + h * e) - s.edf(X - h * e)) / (2 * h) for e in np.eye(3)])
        g = s.distance_gradient(X)
        ok = np.abs(np.linalg.norm(fd, axis=1) - 1) < 1e-4  # skip kinks
        np.testing.assert_allclose(g[ok], fd[ok], atol=1e-5)

    def test_sampled_surface_excludes_hidden(self):
        s = AnalyticScene([Box((0, 0), (1, 1)), Box((1.0, 0), (1, 0.5))])
        P, _ = s.sample_surface(0.05)
        assert np.all(np.abs(s.signed_distance(P)) < 1e-12)

    def test_oracle_field(self):
        f = AnalyticScene([Ball((0, 0), 1.0)]).field()
        est = f.query_batch([[0.0, 0.5], [0.0, 2.0]])
        np.testing.assert_allclose(est.distance, [0.5, 1.0])
        np.testing.assert_array_equal(est.sign, [INSIDE, OUTSIDE])
        np.testing.assert_allclose(est.gradient, [[0, -1], [0, 1]], atol=1e-12)
