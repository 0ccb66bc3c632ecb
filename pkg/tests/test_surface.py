import numpy as np
import pytest

from loggpis.covariance import InvalidInputError, KernelParams
from loggpis.evaluation import polyline_hausdorff
from loggpis.field import INSIDE, OUTSIDE
from loggpis.map import ClusterMap, SurfacePoint
from loggpis.scene import AnalyticScene, Ball, Box
from loggpis.surface import (GridSpec, Mesh, extract_iso, node_signs, propagate_signs,
                             sample_signed_grid, write_contour_csv)


@pytest.fixture(scope="module")
def circle_map():
    scene = AnalyticScene([Ball((0.0, 0.0), 5.0)])
    P, N = scene.sample_surface(0.01)
    m = ClusterMap([-10, -10], [10, 10], KernelParams(lam=40.0), fuse_radius=0.0)
    m.insert_points([SurfacePoint(p, n, 0.01) for p, n in zip(P, N)])
    m.refit_dirty()
    return m


class _Unsigned:
    """Oracle field with the sign withheld, as a map would report it."""

    def __init__(self, scene):
        self.field = scene.field()
        self.dim = scene.dim

    def query_batch(self, X, sensor_pos=None):
        from dataclasses import replace

        est = self.field.query_batch(X)
        return replace(est, sign=np.zeros_like(est.sign))


class TestGrid:
    def test_covering(self):
        g = GridSpec.covering([0, 0], [1, 0.5], 0.1)
        assert g.counts == (11, 6)
        assert g.nodes()[-1] == pytest.approx([1.0, 0.5])

    @pytest.mark.parametrize("kw", [dict(origin=(0,), counts=(3,)), dict(cell_size=0.0), dict(counts=(1, 3))])
    def test_invalid(self, kw):
        args = dict(origin=(0, 0), cell_size=0.1, counts=(3, 3))
        args.update(kw)
        with pytest.raises(InvalidInputError):
            GridSpec(**args)


class TestPropagate:
    def test_fills_by_majority(self):
        s = np.array([[1, 1, 1], [1, 0, -1], [1, -1, -1]])
        assert propagate_signs(s)[1, 1] == OUTSIDE

    def test_fills_regions(self):
        s = np.zeros((5, 5), dtype=int)
        s[0, 0] = INSIDE
        np.testing.assert_array_equal(propagate_signs(s), INSIDE)

    def test_all_unknown_positive(self):
        np.testing.assert_array_equal(propagate_signs(np.zeros((3, 3, 3))), OUTSIDE)

    def test_tie_stays_then_positive(self):
        s = np.array([[1, 0, -1]])
        assert propagate_signs(s)[0, 1] == OUTSIDE


class TestSigns:
    def test_keeps_known_signs(self):
        scene = AnalyticScene([Ball((0, 0), 1.0)])
        X = np.array([[0.0, 0.0], [2.0, 0.0]])
        est = scene.field().query_batch(X)
        np.testing.assert_array_equal(node_signs(None, X, est), est.sign)

    def test_sensor_mode(self):
        scene = AnalyticScene([Ball((0, 0), 1.0)])
        X = np.array([[0.5, 0.0], [1.5, 0.0]])
        est = _Unsigned(scene).query_batch(X)
        s = node_signs(None, X, est, sensor_track=[[3.0, 0.0]], mode="sensor")
        np.testing.assert_array_equal(s, [INSIDE, OUTSIDE])

    def test_bad_mode(self):
        with pytest.raises(InvalidInputError):
            node_signs(None, np.zeros((1, 2)), _Unsigned(AnalyticScene([Ball((0, 0), 1.0)])).query_batch(np.zeros((1, 2))), mode="x")

    @pytest.mark.parametrize("mode", ["normal", "sensor"])
    def test_circle_map_signs(self, circle_map, mode):
        grid = GridSpec.covering([-7, -7], [7, 7], 0.1)
        track = [[x, y] for x in (-9, 0, 9) for y in (-9, 0, 9) if (x, y) != (0, 0)]
        sg = sample_signed_grid(circle_map, grid, track, sign_mode=mode)
        X = grid.nodes()
        r = np.linalg.norm(X, axis=1)
        far = np.abs(r - 5.0) > grid.cell_size
        if mode == "sensor":
            # The gradient carries no direction where the latent field is clamped.
            far &= ~sg.estimates.clamped
        truth = np.where(r < 5.0, INSIDE, OUTSIDE)
        assert np.mean(sg.sign.ravel()[far] == truth[far]) >= 0.99

    def test_deterministic(self, circle_map):
        grid = GridSpec.covering([-6, -6], [6, 6], 0.2)
        a = extract_iso(circle_map, grid)
        b = extract_iso(circle_map, grid)
        assert a.vertices.tobytes() == b.vertices.tobytes()
        assert a.faces.tobytes() == b.faces.tobytes()

    def test_far_grid_all_positive(self, circle_map):
        grid = GridSpec.covering([7, 7], [9, 9], 0.25)
        sg = sample_signed_grid(circle_map, grid)
        assert np.all(sg.sign == OUTSIDE)
        assert extract_iso(circle_map, grid, signed=sg).is_empty


class TestExtraction:
    def test_oracle_sphere_radii(self):
        scene = AnalyticScene([Ball((0.01, -0.02, 0.03), 0.5)])
        cell = 0.05
        grid = GridSpec.covering([-0.7] * 3, [0.7] * 3, cell)
        mesh = extract_iso(scene.field(), grid)
        r = np.linalg.norm(mesh.vertices - [0.01, -0.02, 0.03], axis=1)
        assert mesh.faces.shape[0] > 500
        assert np.max(np.abs(r - 0.5)) < 0.1 * cell

    def test_watertight(self):
        scene = AnalyticScene([Ball((0.0, 0.0, 0.0), 0.5)])
        grid = GridSpec.covering([-0.7] * 3, [0.7] * 3, 0.07)
        counts = extract_iso(scene.field(), grid).edge_face_counts()
        assert set(counts.values()) == {2}

    def test_box_watertight(self):
        scene = AnalyticScene([Box((0.0, 0.0, 0.0), (0.3, 0.2, 0.2))])
        grid = GridSpec.covering([-0.3] * 3, [0.3] * 3, 0.03)
        mesh = extract_iso(scene.field(), grid)
        assert set(mesh.edge_face_counts().values()) == {2}

    def test_oracle_circle_contour(self):
        scene = AnalyticScene([Ball((0.0, 0.0), 1.0)])
        grid = GridSpec.covering([-1.5, -1.5], [1.5, 1.5], 0.02)
        mesh = extract_iso(scene.field(), grid)
        assert len(mesh.polylines()) == 1
        assert polyline_hausdorff(mesh, scene) < 1e-3

    def test_fully_positive_cell(self):
        scene = AnalyticScene([Ball((5.0, 5.0), 1.0)])
        grid = GridSpec((0, 0), 0.5, (2, 2))
        assert extract_iso(scene.field(), grid).is_empty

    def test_hermite_not_worse(self):
        scene = AnalyticScene([Ball((0.0, 0.0, 0.0), 0.5), Box((0.9, 0.0, 0.0), (0.4, 0.6, 0.5))])
        grid = GridSpec.covering([-0.7, -0.7, -0.7], [1.3, 0.7, 0.7], 0.06)
        err = []
        for hermite in (True, False):
            mesh = extract_iso(scene.field(), grid, hermite=hermite)
            err.append(np.median(scene.edf(mesh.vertices)))
        assert err[0] <= err[1]

    def test_grid_order_invariance(self):
        scene = AnalyticScene([Ball((0.0, 0.0), 1.0)])
        a = extract_iso(scene.field(), GridSpec.covering([-1.5, -1.5], [1.5, 1.5], 0.1))
        b = extract_iso(scene.field(), GridSpec.covering([-1.5, -1.5], [1.5, 1.5], 0.1))
        np.testing.assert_array_equal(a.vertices, b.vertices)

    def test_dimension_mismatch(self, circle_map):
        with pytest.raises(InvalidInputError):
            extract_iso(circle_map, GridSpec.covering([0, 0, 0], [1, 1, 1], 0.5))


class TestOutput:
    def test_contour_csv(self, tmp_path):
        scene = AnalyticScene([Ball((0.0, 0.0), 1.0)])
        mesh = extract_iso(scene.field(), GridSpec.covering([-1.5, -1.5], [1.5, 1.5], 0.25))
        write_contour_csv(tmp_path / "c.csv", mesh)
        rows = (tmp_path / "c.csv").read_text().splitlines()
        assert rows[0] == "polyline,x,y,variance"
        first, last = rows[1].split(",")[1:3], rows[-1].split(",")[1:3]
        assert first == last  # closed loop

    def test_empty_contour_csv(self, tmp_path):
        write_contour_csv(tmp_path / "c.csv", Mesh.empty(2))
        assert (tmp_path / "c.csv").read_text() == "polyline,x,y,variance\n"

    def test_mesh_ply(self, tmp_path):
        from loggpis.ply import load_ply

        scene = AnalyticScene([Ball((0.0, 0.0, 0.0), 0.5)])
        mesh = extract_iso(scene.field(), GridSpec.covering([-0.7] * 3, [0.7] * 3, 0.1))
        mesh.save_ply(tmp_path / "m.ply")
        d = load_ply(tmp_path / "m.ply")
        np.testing.assert_array_equal(d.faces, mesh.faces)
        np.testing.assert_array_equal(d.quality, mesh.vertex_variance)
