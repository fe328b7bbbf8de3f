import numpy as np
import pytest

from actiontubes.errors import InputError
from actiontubes.footprint import (CellLayout, DiagonalGaussianMixture,
                                   FeatureGridSequence, build_footprint_map,
                                   cells_overlapping, aggregate_cells,
                                   fisher_vector, fit_gmm, mean_box,
                                   nearest_centroid_alphas, posteriors,
                                   prune_drifted)
from actiontubes.model import BoundingBox, Detection, Tube
from actiontubes.scoring import TubeScore
from oracles import fisher_reference, softmax_reference


def random_gmm(rng, k=3, d=4):
    weights = rng.dirichlet(np.ones(k) * 3)
    means = rng.normal(size=(k, d)) * 2
    variances = rng.uniform(0.5, 2.0, size=(k, d))
    return DiagonalGaussianMixture(weights, means, variances)


class TestGmm:
    def test_fit_recovers_separated_blobs(self):
        rng = np.random.default_rng(2)
        a = rng.normal(loc=0.0, scale=0.3, size=(200, 3))
        b = rng.normal(loc=8.0, scale=0.3, size=(200, 3))
        gmm = fit_gmm(np.vstack([a, b]), components=2, seed=5)
        centers = sorted(float(m[0]) for m in gmm.means)
        assert centers[0] == pytest.approx(0.0, abs=0.15)
        assert centers[1] == pytest.approx(8.0, abs=0.15)
        np.testing.assert_allclose(gmm.weights, [0.5, 0.5], atol=0.02)

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(150, 4))
        g1 = fit_gmm(x, 3, seed=11)
        g2 = fit_gmm(x, 3, seed=11)
        assert np.array_equal(g1.means, g2.means)
        assert np.array_equal(g1.weights, g2.weights)
        assert np.array_equal(g1.variances, g2.variances)

    def test_more_components_than_points_rejected(self):
        with pytest.raises(InputError):
            fit_gmm(np.zeros((3, 2)), components=4)

    def test_posterior_rows_sum_to_one(self):
        rng = np.random.default_rng(21)
        gmm = random_gmm(rng)
        q = posteriors(gmm, rng.normal(size=(40, 4)))
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)

    def test_invalid_mixture_rejected(self):
        with pytest.raises(InputError):
            DiagonalGaussianMixture(np.array([0.5, 0.4]),
                                    np.zeros((2, 3)), np.ones((2, 3)))
        with pytest.raises(InputError):
            DiagonalGaussianMixture(np.array([0.5, 0.5]),
                                    np.zeros((2, 3)), -np.ones((2, 3)))


class TestFisherVector:
    def test_matches_literal_formula(self):
        rng = np.random.default_rng(33)
        for _ in range(50):
            k = int(rng.integers(1, 4))
            d = int(rng.integers(1, 5))
            n = int(rng.integers(1, 11))
            gmm = random_gmm(rng, k, d)
            x = rng.normal(size=(n, d)) * 2
            got = fisher_vector(x, gmm)
            want = fisher_reference(x, gmm.weights, gmm.means, gmm.variances)
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_dimension_is_2kd(self):
        rng = np.random.default_rng(4)
        for k, d in [(1, 1), (2, 3), (4, 8)]:
            gmm = random_gmm(rng, k, d)
            fv = fisher_vector(rng.normal(size=(6, d)), gmm)
            assert fv.shape == (2 * k * d,)

    def test_unit_norm(self):
        rng = np.random.default_rng(8)
        gmm = random_gmm(rng)
        fv = fisher_vector(rng.normal(size=(10, 4)), gmm)
        assert np.linalg.norm(fv) == pytest.approx(1.0, abs=1e-12)

    def test_empty_descriptors_rejected(self):
        rng = np.random.default_rng(1)
        with pytest.raises(InputError):
            fisher_vector(np.empty((0, 4)), random_gmm(rng))


class TestCellLayout:
    def test_defaults(self):
        layout = CellLayout()
        assert layout.grid_side == 14
        assert layout.num_cells == 49

    def test_aggregate_shape_and_pooling(self):
        rng = np.random.default_rng(6)
        layout = CellLayout(cell_size=2, map_side=3)
        gmm = random_gmm(rng, k=2, d=5)
        grids = FeatureGridSequence(rng.normal(size=(4, 6, 6, 5)))
        cells = aggregate_cells(grids, layout, gmm)
        assert cells.shape == (9, 2 * 2 * 5)
        # Uniform grids produce identical vectors in every cell.
        flat = FeatureGridSequence(np.ones((2, 6, 6, 5)))
        uniform = aggregate_cells(flat, layout, gmm)
        for row in uniform[1:]:
            np.testing.assert_allclose(row, uniform[0], atol=1e-12)

    def test_grid_side_mismatch_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(InputError):
            aggregate_cells(FeatureGridSequence(np.ones((1, 8, 8, 2))),
                            CellLayout(2, 3), random_gmm(rng, 2, 2))


class TestFootprintMap:
    def test_weights_are_softmax_of_alphas(self):
        rng = np.random.default_rng(12)
        alphas = rng.uniform(0, 1, size=(3, 49))
        fmap = build_footprint_map(alphas)
        for c in range(3):
            np.testing.assert_allclose(fmap.weights[c],
                                       softmax_reference(alphas[c]),
                                       atol=1e-12)
            assert fmap.weights[c].sum() == pytest.approx(1.0, abs=1e-12)

    def test_uniform_alphas_give_uniform_weights(self):
        fmap = build_footprint_map(np.full((2, 49), 0.5))
        np.testing.assert_allclose(fmap.weights, 1.0 / 49, atol=1e-12)

    def test_out_of_range_alphas_rejected(self):
        with pytest.raises(InputError):
            build_footprint_map(np.full((1, 49), 1.5))


class TestCellsOverlapping:
    layout = CellLayout(2, 7)

    def test_full_frame_box_hits_all_cells(self):
        cells = cells_overlapping(self.layout, BoundingBox(0, 0, 140, 140),
                                  (140.0, 140.0))
        assert cells == list(range(49))

    def test_box_within_single_cell(self):
        cells = cells_overlapping(self.layout, BoundingBox(2, 2, 15, 15),
                                  (140.0, 140.0))
        assert cells == [0]

    def test_boundary_touch_is_not_overlap(self):
        # Box ends exactly at the first cell boundary (x = 20).
        cells = cells_overlapping(self.layout, BoundingBox(0, 0, 20, 20),
                                  (140.0, 140.0))
        assert cells == [0]

    def test_box_spanning_two_cells(self):
        cells = cells_overlapping(self.layout, BoundingBox(15, 2, 25, 15),
                                  (140.0, 140.0))
        assert cells == [0, 1]

    def test_box_outside_frame_hits_nothing(self):
        cells = cells_overlapping(self.layout, BoundingBox(200, 200, 220, 220),
                                  (140.0, 140.0))
        assert cells == []


def tube_at(box, video="v", tube_id="t", frames=4, label=0):
    entries = tuple(Detection(i, box, (0.9, 0.1)) for i in range(frames))
    return Tube(video, tube_id, entries, label=label)


def ts_for(label=0, score=1.0):
    return TubeScore((1.0, 0.0), (0.0, 0.0), (score, 0.0), label, score)


class TestPruneDrifted:
    def center_heavy_map(self, classes=2):
        alphas = np.full((classes, 49), 0.3)
        for r in range(2, 5):
            for c in range(2, 5):
                alphas[:, r * 7 + c] = 0.95
        return build_footprint_map(alphas)

    def test_center_kept_corner_removed(self):
        fmap = self.center_heavy_map()
        frame = (140.0, 140.0)
        center = (tube_at(BoundingBox(55, 55, 85, 85), tube_id="c"),
                  ts_for())
        corner = (tube_at(BoundingBox(1, 1, 18, 18), tube_id="k"), ts_for())
        kept = prune_drifted([center, corner], fmap, frame)
        assert kept == [center]

    def test_uniform_map_keeps_everything(self):
        fmap = build_footprint_map(np.full((2, 49), 0.4))
        frame = (140.0, 140.0)
        tubes = [(tube_at(BoundingBox(1, 1, 10, 10)), ts_for()),
                 (tube_at(BoundingBox(100, 100, 139, 139), tube_id="u"),
                  ts_for())]
        assert prune_drifted(tubes, fmap, frame) == tubes

    def test_projection_outside_map_removed(self):
        fmap = self.center_heavy_map()
        off = (tube_at(BoundingBox(500, 500, 540, 540)), ts_for())
        assert prune_drifted([off], fmap, (140.0, 140.0)) == []

    def test_label_selects_map_row(self):
        alphas = np.full((2, 49), 0.3)
        alphas[1, 0] = 1.0   # class 1 concentrates in the corner cell
        alphas[0, 24] = 1.0  # class 0 in the center cell
        fmap = build_footprint_map(alphas)
        corner_box = BoundingBox(1, 1, 18, 18)
        as_class1 = (tube_at(corner_box, label=1), ts_for(label=1))
        as_class0 = (tube_at(corner_box, tube_id="z"), ts_for(label=0))
        kept = prune_drifted([as_class1, as_class0], fmap, (140.0, 140.0))
        assert kept == [as_class1]

    def test_unknown_label_rejected(self):
        fmap = self.center_heavy_map()
        bad = (tube_at(BoundingBox(1, 1, 10, 10)), ts_for(label=7))
        with pytest.raises(InputError):
            prune_drifted([bad], fmap, (140.0, 140.0))


class TestMeanBox:
    def test_average_of_coordinates(self):
        t = Tube("v", "t", (
            Detection(0, BoundingBox(0, 0, 10, 10), (1.0,)),
            Detection(1, BoundingBox(10, 10, 20, 20), (1.0,))))
        assert mean_box(t) == BoundingBox(5, 5, 15, 15)


class TestNearestCentroidAlphas:
    def test_separable_cells_reach_full_accuracy(self):
        layout = CellLayout(1, 2)  # 4 cells
        rng = np.random.default_rng(44)

        def sample(label):
            # Cells 0 and 1 carry the class signal, cells 2 and 3 noise.
            v = rng.normal(scale=0.01, size=(4, 3))
            v[0] += label * 10
            v[1] -= label * 10
            return label, v

        train = [sample(l) for l in (0, 1) for _ in range(10)]
        test = [sample(l) for l in (0, 1) for _ in range(10)]
        alphas = nearest_centroid_alphas(train, test, 2, layout)
        assert alphas.shape == (2, 4)
        np.testing.assert_allclose(alphas[:, 0], 1.0)
        np.testing.assert_allclose(alphas[:, 1], 1.0)

    def test_missing_class_rejected(self):
        layout = CellLayout(1, 2)
        item = (0, np.zeros((4, 3)))
        with pytest.raises(InputError):
            nearest_centroid_alphas([item], [item], 2, layout)
