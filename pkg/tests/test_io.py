"""Round-trip and validation tests for the on-disk formats."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actiontubes import formats
from actiontubes.errors import SchemaError
from actiontubes.footprint import DiagonalGaussianMixture
from actiontubes.fusion import FlowMagnitudeGrid
from actiontubes.model import (BoundingBox, ClipScoreSequence, Detection,
                               FrameInterval, GroundTruthTube, Proposal,
                               Source, Tube)
from actiontubes.scoring import RecurrentScorerWeights
from actiontubes.synth import ScenarioConfig, generate
from actiontubes.tracker import PointMatchSet, PrecomputedMatcher


@pytest.fixture(scope="module")
def bundle():
    return generate(ScenarioConfig(
        seed=11, video_count=3, frames_per_video=12, num_classes=2,
        clip_length=4, jitter_sigma=1.5, false_positive_rate=0.3,
        frame_size=(160, 120), with_footprint=False, with_flow=True))


def coords(strategy_max=500.0):
    return st.floats(0.0, strategy_max, allow_nan=False,
                     allow_infinity=False, width=64)


def box_strategy():
    return st.tuples(coords(), coords(), st.floats(0.5, 80.0),
                     st.floats(0.5, 80.0)).map(
        lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


class TestDetectionsRoundTrip:
    def test_bundle_detections(self, bundle, tmp_path):
        path = tmp_path / "d.tsv"
        data = {v.video_id: v.detections["static"] for v in bundle.videos}
        formats.write_detections(path, data)
        back = formats.read_detections(path)
        assert set(back) == set(data)
        for video_id in data:
            assert sorted(back[video_id],
                          key=lambda d: (d.frame_index, d.score)) == \
                sorted(data[video_id],
                       key=lambda d: (d.frame_index, d.score))

    def test_rewrite_is_byte_identical(self, bundle, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        data = {v.video_id: v.detections["early"] for v in bundle.videos}
        formats.write_detections(a, data)
        formats.write_detections(b, formats.read_detections(a))
        assert a.read_bytes() == b.read_bytes()

    def test_empty_file_round_trips(self, tmp_path):
        path = tmp_path / "d.tsv"
        formats.write_detections(path, {})
        assert formats.read_detections(path) == {}

    @given(frame=st.integers(0, 10 ** 6), box=box_strategy(),
           scores=st.lists(st.floats(0.0, 1.0, width=64), min_size=1,
                           max_size=5),
           source=st.sampled_from(list(Source)))
    @settings(max_examples=60, deadline=None)
    def test_arbitrary_detection_round_trips(self, tmp_path_factory, frame,
                                             box, scores, source):
        path = tmp_path_factory.mktemp("io") / "d.tsv"
        det = Detection(frame, box, tuple(scores), source)
        formats.write_detections(path, {"v0": [det]})
        assert formats.read_detections(path) == {"v0": [det]}


class TestProposalsRoundTrip:
    def test_bundle_proposals(self, bundle, tmp_path):
        path = tmp_path / "p.tsv"
        data = {v.video_id: v.proposals for v in bundle.videos}
        formats.write_proposals(path, data)
        back = formats.read_proposals(path)
        assert set(back) == set(data)
        for video_id, frames in data.items():
            for frame, props in frames.items():
                assert sorted(back[video_id][frame],
                              key=lambda p: p.objectness) == \
                    sorted(props, key=lambda p: p.objectness)


class TestMatchesRoundTrip:
    def test_matcher_equivalence(self, bundle, tmp_path):
        path = tmp_path / "m.tsv"
        matcher = bundle.matcher()
        pairs = {}
        for video in bundle.videos:
            w, h = video.frame_size
            full = BoundingBox(0, 0, w, h)
            for frame in list(video.extent.frames())[:-1]:
                pairs[(video.video_id, frame, frame + 1)] = \
                    matcher.match(video.video_id, frame, frame + 1, full)
        formats.write_matches(path, pairs)
        reread = PrecomputedMatcher(formats.read_matches(path))
        video = bundle.videos[0]
        gt = video.gt_tubes[0]
        for frame in list(gt.interval().frames())[:-1]:
            box = gt.box_at(frame)
            a = matcher.match(video.video_id, frame, frame + 1, box)
            b = reread.match(video.video_id, frame, frame + 1, box)
            assert np.allclose(np.sort(a.to_points, axis=0),
                               np.sort(b.to_points, axis=0))

    def test_backward_queries_served_from_forward_records(self, tmp_path):
        path = tmp_path / "m.tsv"
        pairs = {("v0", 3, 4): PointMatchSet(np.array([[1.0, 2.0]]),
                                             np.array([[5.0, 6.0]]))}
        formats.write_matches(path, pairs)
        matcher = PrecomputedMatcher(formats.read_matches(path))
        back = matcher.match("v0", 4, 3, BoundingBox(0, 0, 10, 10))
        assert np.array_equal(back.from_points, [[5.0, 6.0]])
        assert np.array_equal(back.to_points, [[1.0, 2.0]])

    def test_non_adjacent_record_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        formats.write_records(path, "matches",
                              [("v0", "0", "2", "1.0", "1.0", "2.0", "2.0")])
        with pytest.raises(SchemaError) as info:
            formats.read_matches(path)
        assert info.value.line == 3


class TestTubesRoundTrip:
    def _tubes(self, bundle):
        tubes = []
        for i, video in enumerate(bundle.videos):
            entries = tuple(
                Detection(f, video.gt_tubes[0].box_at(f), (0.3, 0.7),
                          Source.TRACKED if f % 2 else Source.MERGED)
                for f in video.gt_tubes[0].interval().frames())
            label = None if i == 0 else 1
            score = None if i == 0 else 1.25
            tubes.append(Tube(video.video_id, f"t{i}", entries,
                              label=label, score=score))
        return tubes

    def test_round_trip(self, bundle, tmp_path):
        path = tmp_path / "t.tsv"
        tubes = self._tubes(bundle)
        formats.write_tubes(path, tubes)
        back = formats.read_tubes(path)
        assert back == sorted(tubes, key=lambda t: (t.video_id, t.tube_id))

    def test_rewrite_is_byte_identical(self, bundle, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        formats.write_tubes(a, self._tubes(bundle))
        formats.write_tubes(b, formats.read_tubes(a))
        assert a.read_bytes() == b.read_bytes()

    def test_duplicate_tube_id_rejected_on_write(self, bundle, tmp_path):
        tube = self._tubes(bundle)[0]
        with pytest.raises(Exception):
            formats.write_tubes(tmp_path / "t.tsv", [tube, tube])

    def test_conflicting_label_rows_rejected(self, tmp_path):
        path = tmp_path / "t.tsv"
        row = ("v0", "t0", "0", "0.0", "0.0", "5.0", "5.0", "static",
               "1.0", "0", "0.5")
        other = ("v0", "t0", "1", "0.0", "0.0", "5.0", "5.0", "static",
                 "1.0", "1", "0.5")
        formats.write_records(path, "tubes", [row, other])
        with pytest.raises(SchemaError) as info:
            formats.read_tubes(path)
        assert info.value.field == "label"

    def test_gap_in_frames_rejected(self, tmp_path):
        path = tmp_path / "t.tsv"
        rows = [("v0", "t0", str(f), "0.0", "0.0", "5.0", "5.0", "static",
                 "1.0", "-", "-") for f in (0, 2)]
        formats.write_records(path, "tubes", rows)
        with pytest.raises(SchemaError):
            formats.read_tubes(path)


class TestGroundTruthRoundTrip:
    def test_round_trip(self, bundle, tmp_path):
        path = tmp_path / "gt.tsv"
        tubes = [gt for v in bundle.videos for gt in v.gt_tubes]
        formats.write_gt_tubes(path, tubes)
        assert formats.read_gt_tubes(path) == \
            sorted(tubes, key=lambda t: (t.video_id, t.tube_id))

    def test_missing_frame_rejected(self, tmp_path):
        path = tmp_path / "gt.tsv"
        rows = [("v0", "a0", "1", str(f), "0.0", "0.0", "5.0", "5.0")
                for f in (3, 5)]
        formats.write_records(path, "gttubes", rows)
        with pytest.raises(SchemaError) as info:
            formats.read_gt_tubes(path)
        assert "skips frame 4" in str(info.value)

    def test_conflicting_labels_rejected(self, tmp_path):
        path = tmp_path / "gt.tsv"
        rows = [("v0", "a0", "1", "0", "0.0", "0.0", "5.0", "5.0"),
                ("v0", "a0", "2", "1", "0.0", "0.0", "5.0", "5.0")]
        formats.write_records(path, "gttubes", rows)
        with pytest.raises(SchemaError):
            formats.read_gt_tubes(path)


class TestClipScoresRoundTrip:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "c.tsv"
        clips = ClipScoreSequence(
            4, (FrameInterval(0, 4), FrameInterval(4, 10)),
            ((0.25, 0.75), (0.5, 0.5)))
        other = ClipScoreSequence(4, (FrameInterval(8, 12),),
                                  ((1.0, 0.0),))
        data = {("v0", "t0"): clips, ("v1", "t9"): other}
        formats.write_clip_scores(path, data)
        assert formats.read_clip_scores(path) == data

    @given(st.lists(st.lists(st.floats(0.01, 1.0, width=64), min_size=3,
                             max_size=3), min_size=1, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_arbitrary_distributions_round_trip(self, tmp_path_factory,
                                                raw):
        path = tmp_path_factory.mktemp("io") / "c.tsv"
        scores = tuple(tuple(v / sum(vec) for v in vec) for vec in raw)
        intervals = tuple(FrameInterval(4 * i, 4 * (i + 1))
                          for i in range(len(scores)))
        clips = ClipScoreSequence(4, intervals, scores)
        formats.write_clip_scores(path, {("v0", "t0"): clips})
        assert formats.read_clip_scores(path) == {("v0", "t0"): clips}

    def test_mixed_clip_length_rejected(self, tmp_path):
        path = tmp_path / "c.tsv"
        rows = [("v0", "t0", "4", "0", "4", "1.0"),
                ("v0", "t0", "8", "4", "12", "1.0")]
        formats.write_records(path, "clipscores", rows)
        with pytest.raises(SchemaError):
            formats.read_clip_scores(path)


class TestHeaderValidation:
    def test_wrong_kind(self, tmp_path):
        path = tmp_path / "x.tsv"
        formats.write_detections(path, {})
        with pytest.raises(SchemaError) as info:
            formats.read_proposals(path)
        assert "detections" in str(info.value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("#something else 1\n")
        with pytest.raises(SchemaError):
            formats.read_detections(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "x.tsv"
        path.write_text("#actiontubes detections 99\n#columns\ta\n")
        with pytest.raises(SchemaError) as info:
            formats.read_detections(path)
        assert "version" in str(info.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            formats.read_detections(tmp_path / "absent.tsv")

    def test_short_row_names_line(self, tmp_path):
        path = tmp_path / "x.tsv"
        formats.write_detections(path, {})
        with open(path, "a") as fh:
            fh.write("v0\t3\n")
        with pytest.raises(SchemaError) as info:
            formats.read_detections(path)
        assert info.value.line == 3

    def test_bad_number_names_field(self, tmp_path):
        path = tmp_path / "x.tsv"
        formats.write_records(
            path, "detections",
            [("v0", "zero", "0.0", "0.0", "5.0", "5.0", "static", "1.0")])
        with pytest.raises(SchemaError) as info:
            formats.read_detections(path)
        assert info.value.field == "frame"
        assert info.value.line == 3

    def test_bad_identifier_rejected(self, tmp_path):
        path = tmp_path / "x.tsv"
        formats.write_records(
            path, "detections",
            [("v 0", "0", "0.0", "0.0", "5.0", "5.0", "static", "1.0")])
        with pytest.raises(SchemaError) as info:
            formats.read_detections(path)
        assert info.value.field == "video_id"


class TestMetrics:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "m.tsv"
        rows = [("map", "video", "0.5", "-", "1.0"),
                ("ap", "video", "0.5", "0", "1.0")]
        formats.write_metrics(path, rows)
        assert formats.read_metrics(path) == sorted(tuple(r) for r in rows)


class TestArrayContainer:
    def test_round_trip_shapes_and_dtypes(self, tmp_path):
        path = tmp_path / "a.atb"
        arrays = {
            "floats": np.linspace(0, 1, 12).reshape(3, 4),
            "ints": np.arange(6, dtype=np.int64).reshape(2, 3, 1),
            "bytes": np.frombuffer(b"relu", dtype=np.uint8),
            "vector": np.array([1.5, -2.5]),
            "deep": np.arange(24, dtype=np.float64).reshape(2, 3, 2, 2),
        }
        formats.write_arrays(path, arrays)
        back = formats.read_arrays(path)
        assert set(back) == set(arrays)
        for name, arr in arrays.items():
            assert back[name].dtype == np.asarray(arr).dtype
            assert np.array_equal(back[name], arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "a.atb"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(SchemaError):
            formats.read_arrays(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "a.atb"
        formats.write_arrays(path, {"x": np.arange(10.0)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(SchemaError) as info:
            formats.read_arrays(path)
        assert "truncated" in str(info.value)

    def test_trailing_bytes_detected(self, tmp_path):
        path = tmp_path / "a.atb"
        formats.write_arrays(path, {"x": np.arange(4.0)})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(SchemaError) as info:
            formats.read_arrays(path)
        assert "trailing" in str(info.value)

    def test_weights_round_trip(self, tmp_path):
        path = tmp_path / "w.atb"
        weights = RecurrentScorerWeights(
            w_io=np.eye(3), w_hh=np.zeros((3, 3)), b_y=np.zeros(3),
            w_cls=np.ones((2, 3)), b_cls=np.array([0.0, -1.0]),
            activation="logistic")
        formats.write_weights(path, weights)
        back = formats.read_weights(path)
        assert back.activation == "logistic"
        for name in ("w_io", "w_hh", "b_y", "w_cls", "b_cls"):
            assert np.array_equal(getattr(back, name),
                                  getattr(weights, name))

    def test_weights_missing_entry(self, tmp_path):
        path = tmp_path / "w.atb"
        formats.write_arrays(path, {"w_io": np.eye(2)})
        with pytest.raises(SchemaError) as info:
            formats.read_weights(path)
        assert "missing" in str(info.value)

    def test_gmm_round_trip(self, tmp_path):
        path = tmp_path / "g.atb"
        gmm = DiagonalGaussianMixture(
            np.array([0.4, 0.6]), np.array([[0.0, 1.0], [2.0, 3.0]]),
            np.array([[1.0, 1.0], [0.5, 2.0]]))
        formats.write_gmm(path, gmm)
        back = formats.read_gmm(path)
        assert np.array_equal(back.weights, gmm.weights)
        assert np.array_equal(back.means, gmm.means)
        assert np.array_equal(back.variances, gmm.variances)

    def test_alphas_round_trip(self, tmp_path):
        path = tmp_path / "al.atb"
        alphas = np.random.default_rng(0).uniform(size=(3, 49))
        formats.write_alphas(path, alphas)
        assert np.array_equal(formats.read_alphas(path), alphas)

    def test_flow_round_trip(self, bundle, tmp_path):
        path = tmp_path / "f.atb"
        data = {v.video_id: v.flow for v in bundle.videos}
        formats.write_flow(path, data)
        back = formats.read_flow(path)
        assert set(back) == set(data)
        for video_id, grids in data.items():
            assert set(back[video_id]) == set(grids)
            for frame, grid in grids.items():
                assert np.array_equal(back[video_id][frame].values,
                                      grid.values)

    @given(st.lists(st.floats(-1e12, 1e12, allow_nan=False, width=64),
                    min_size=1, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_floats_survive_exactly(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("io") / "x.atb"
        formats.write_arrays(path, {"v": np.asarray(values)})
        assert np.array_equal(formats.read_arrays(path)["v"],
                              np.asarray(values))
