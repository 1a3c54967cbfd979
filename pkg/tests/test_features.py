import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiertrack.core import Detection, EmbeddingTable, make_tracklet
from hiertrack.core import HiertrackError
from hiertrack.features import (
    appearance_distance,
    edge_feature_vector,
    estimate_velocity,
    giou,
    giou_batch,
    motion_consistency,
    position_features,
    time_distance,
)

TOL = 1e-10


def tracklet(specs, embeddings=None):
    """specs: list of (frame, box); embeddings: optional list of vectors."""
    if embeddings is None:
        embeddings = [(1.0, 0.0)] * len(specs)
    table = EmbeddingTable(np.array(embeddings, dtype=np.float64))
    dets = [
        Detection(frame=f, box=box, embedding_id=i) for i, (f, box) in enumerate(specs)
    ]
    return make_tracklet(dets, table)


def boxes_strategy():
    coord = st.floats(min_value=-500, max_value=500, allow_nan=False)
    size = st.floats(min_value=0.5, max_value=200, allow_nan=False)
    return st.tuples(coord, coord, size, size)


class TestPositionFeatures:
    def test_identical_boxes(self):
        u = tracklet([(0, (10.0, 20.0, 4.0, 8.0))])
        v = tracklet([(5, (10.0, 20.0, 4.0, 8.0))])
        assert position_features(u, v) == pytest.approx((0, 0, 0, 0), abs=TOL)

    def test_offset_boxes(self):
        u = tracklet([(0, (10.0, 10.0, 4.0, 8.0))])
        v = tracklet([(5, (12.0, 14.0, 4.0, 8.0))])
        assert position_features(u, v) == pytest.approx((-0.25, -0.5, 0.0, 0.0), abs=TOL)

    def test_size_ratio(self):
        u = tracklet([(0, (0.0, 0.0, 2.0, 2.0))])
        v = tracklet([(5, (0.0, 0.0, 4.0, 4.0))])
        assert position_features(u, v) == pytest.approx(
            (0.0, 0.0, -math.log(2), -math.log(2)), abs=TOL
        )

    def test_overlap_is_error(self):
        u = tracklet([(0, (0.0, 0.0, 2.0, 2.0)), (5, (0.0, 0.0, 2.0, 2.0))])
        v = tracklet([(5, (0.0, 0.0, 2.0, 2.0))])
        with pytest.raises(HiertrackError):
            position_features(u, v)

    def test_log_ratios_translation_invariant(self):
        u = tracklet([(0, (3.0, 7.0, 2.0, 5.0))])
        v = tracklet([(4, (11.0, 1.0, 6.0, 2.5))])
        base = position_features(u, v)
        u2 = tracklet([(0, (3.0 + 50, 7.0 + 20, 2.0, 5.0))])
        v2 = tracklet([(4, (11.0 + 50, 1.0 + 20, 6.0, 2.5))])
        shifted = position_features(u2, v2)
        assert shifted == pytest.approx(base, abs=TOL)


class TestTimeDistance:
    def test_adjacent(self):
        assert time_distance(tracklet([(5, (0, 0, 1, 1))]), tracklet([(6, (0, 0, 1, 1))])) == 1

    def test_gap(self):
        assert time_distance(tracklet([(10, (0, 0, 1, 1))]), tracklet([(40, (0, 0, 1, 1))])) == 30

    def test_touching_is_error(self):
        with pytest.raises(HiertrackError):
            time_distance(tracklet([(10, (0, 0, 1, 1))]), tracklet([(10, (0, 0, 1, 1))]))


class TestAppearanceDistance:
    def test_identical(self):
        u = tracklet([(0, (0, 0, 1, 1))], [(1.0, 0.0, 0.0)])
        v = tracklet([(1, (0, 0, 1, 1))], [(1.0, 0.0, 0.0)])
        assert appearance_distance(u, v) == pytest.approx(0.0, abs=TOL)

    def test_unit_vectors(self):
        u = tracklet([(0, (0, 0, 1, 1))], [(1.0, 0.0, 0.0)])
        v = tracklet([(1, (0, 0, 1, 1))], [(0.0, 1.0, 0.0)])
        assert appearance_distance(u, v) == pytest.approx(math.sqrt(2), abs=TOL)

    def test_mean_then_distance(self):
        u = tracklet([(0, (0, 0, 1, 1)), (1, (0, 0, 1, 1))], [(2.0, 0.0), (0.0, 2.0)])
        v = tracklet([(5, (0, 0, 1, 1))], [(0.0, 0.0)])
        assert appearance_distance(u, v) == pytest.approx(math.sqrt(2), abs=TOL)

    def test_dimension_mismatch(self):
        u = tracklet([(0, (0, 0, 1, 1))], [(1.0, 0.0)])
        v = tracklet([(1, (0, 0, 1, 1))], [(1.0, 0.0, 0.0)])
        with pytest.raises(HiertrackError):
            appearance_distance(u, v)

    @given(
        st.lists(st.tuples(*[st.floats(-5, 5) for _ in range(3)]), min_size=3, max_size=3)
    )
    def test_triangle_inequality(self, vecs):
        a, b, c = (
            tracklet([(i, (0, 0, 1, 1))], [vec]) for i, vec in enumerate(vecs)
        )
        assert appearance_distance(a, c) <= (
            appearance_distance(a, b) + appearance_distance(b, c) + 1e-9
        )


class TestEstimateVelocity:
    def test_exact_line(self):
        # centers (0,0), (2,1), (4,2): place 2x2 boxes so the centers match
        t = tracklet(
            [(0, (-1.0, -1.0, 2.0, 2.0)), (1, (1.0, 0.0, 2.0, 2.0)), (2, (3.0, 1.0, 2.0, 2.0))]
        )
        assert t.velocity == pytest.approx((2.0, 1.0), abs=TOL)

    def test_stationary_with_gap(self):
        t = tracklet([(0, (0.0, 0.0, 2.0, 2.0)), (10, (0.0, 0.0, 2.0, 2.0))])
        assert t.velocity == pytest.approx((0.0, 0.0), abs=TOL)

    def test_least_squares_slope(self):
        # centers x: 0, 1, 5 at frames 0, 1, 2
        t = tracklet(
            [(0, (-1.0, -1.0, 2.0, 2.0)), (1, (0.0, -1.0, 2.0, 2.0)), (2, (4.0, -1.0, 2.0, 2.0))]
        )
        assert t.velocity == pytest.approx((2.5, 0.0), abs=TOL)

    def test_singleton_has_no_velocity(self):
        t = tracklet([(0, (0.0, 0.0, 2.0, 2.0))])
        assert estimate_velocity(t) is None


class TestGiou:
    def test_identical(self):
        assert giou((0, 0, 1, 1), (0, 0, 1, 1)) == pytest.approx(1.0, abs=TOL)

    def test_disjoint_with_gap(self):
        assert giou((0, 0, 1, 1), (2, 0, 1, 1)) == pytest.approx(-1.0 / 3.0, abs=TOL)

    def test_partial_overlap(self):
        assert giou((0, 0, 2, 2), (1, 1, 2, 2)) == pytest.approx(1.0 / 7.0 - 2.0 / 9.0, abs=TOL)

    def test_degenerate_is_error(self):
        with pytest.raises(HiertrackError):
            giou((0, 0, 0, 1), (0, 0, 1, 1))

    @settings(max_examples=200)
    @given(boxes_strategy(), boxes_strategy())
    def test_symmetry_and_bounds(self, a, b):
        g = giou(a, b)
        assert g == pytest.approx(giou(b, a), abs=1e-9)
        assert -1.0 < g <= 1.0 + 1e-12

    @settings(max_examples=200)
    @given(boxes_strategy(), boxes_strategy())
    def test_never_exceeds_iou(self, a, b):
        from hiertrack.features import iou

        assert giou(a, b) <= iou(a, b) + 1e-12

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        a = np.column_stack([rng.uniform(-10, 10, 50), rng.uniform(-10, 10, 50),
                             rng.uniform(0.5, 5, 50), rng.uniform(0.5, 5, 50)])
        b = np.column_stack([rng.uniform(-10, 10, 50), rng.uniform(-10, 10, 50),
                             rng.uniform(0.5, 5, 50), rng.uniform(0.5, 5, 50)])
        batch = giou_batch(a, b)
        for i in range(50):
            assert batch[i] == pytest.approx(giou(tuple(a[i]), tuple(b[i])), abs=1e-12)


class TestMotionConsistency:
    def test_stationary_same_box(self):
        u = tracklet([(0, (5.0, 5.0, 2.0, 2.0)), (1, (5.0, 5.0, 2.0, 2.0))])
        v = tracklet([(4, (5.0, 5.0, 2.0, 2.0)), (5, (5.0, 5.0, 2.0, 2.0))])
        assert motion_consistency(u, v) == pytest.approx(1.0, abs=TOL)

    def test_consistent_linear_path(self):
        # both tracklets on one constant-velocity (2, 0) trajectory, gap of 4
        u = tracklet([(0, (0.0, 0.0, 4.0, 4.0)), (1, (2.0, 0.0, 4.0, 4.0)), (2, (4.0, 0.0, 4.0, 4.0))])
        v = tracklet([(6, (12.0, 0.0, 4.0, 4.0)), (7, (14.0, 0.0, 4.0, 4.0)), (8, (16.0, 0.0, 4.0, 4.0))])
        assert motion_consistency(u, v) == pytest.approx(1.0, abs=TOL)

    def test_inconsistent_paths_are_negative(self):
        u = tracklet([(0, (0.0, 0.0, 4.0, 4.0)), (2, (4.0, 0.0, 4.0, 4.0))])
        v = tracklet([(6, (-200.0, 0.0, 4.0, 4.0)), (8, (-220.0, 0.0, 4.0, 4.0))])
        assert motion_consistency(u, v) < 0

    def test_absent_velocity_gives_none(self):
        u = tracklet([(0, (0.0, 0.0, 4.0, 4.0))])
        v = tracklet([(6, (12.0, 0.0, 4.0, 4.0)), (8, (16.0, 0.0, 4.0, 4.0))])
        assert motion_consistency(u, v) is None

    @given(
        st.floats(-3, 3), st.floats(-3, 3),
        st.integers(1, 10), st.integers(1, 20),
        st.floats(-50, 50), st.floats(-50, 50),
    )
    @settings(max_examples=100)
    def test_shared_trajectory_scores_one(self, vx, vy, run, gap, x0, y0):
        def box_at(f):
            return (x0 + vx * f, y0 + vy * f, 3.0, 3.0)

        u = tracklet([(f, box_at(f)) for f in range(run + 1)])
        start = run + gap
        v = tracklet([(f, box_at(f)) for f in range(start, start + run + 1)])
        assert motion_consistency(u, v) == pytest.approx(1.0, abs=1e-9)


class TestEdgeFeatureVector:
    def test_adjacent_identical_singletons(self):
        u = tracklet([(0, (10.0, 20.0, 4.0, 8.0))])
        v = tracklet([(1, (10.0, 20.0, 4.0, 8.0))])
        vec = edge_feature_vector(u, v)
        assert vec == pytest.approx([0, 0, 0, 0, 1, 0, 0, 0], abs=TOL)

    def test_length_is_eight(self):
        u = tracklet([(0, (1.0, 2.0, 3.0, 4.0)), (1, (2.0, 2.0, 3.0, 4.0))])
        v = tracklet([(5, (9.0, 2.0, 3.0, 4.0)), (6, (10.0, 2.0, 3.0, 4.0))])
        assert edge_feature_vector(u, v).shape == (8,)

    def test_matches_individual_components(self):
        u = tracklet(
            [(0, (1.0, 2.0, 3.0, 4.0)), (2, (2.0, 3.0, 3.0, 4.0))],
            [(0.5, 1.0), (1.5, 2.0)],
        )
        v = tracklet(
            [(7, (9.0, 2.0, 2.0, 5.0)), (9, (10.0, 2.0, 2.0, 5.0))],
            [(0.0, 1.0), (1.0, 0.0)],
        )
        vec = edge_feature_vector(u, v, time_scale=5.0)
        assert vec[:4] == pytest.approx(position_features(u, v), abs=TOL)
        assert vec[4] == pytest.approx(time_distance(u, v) / 5.0, abs=TOL)
        assert vec[5] == pytest.approx(appearance_distance(u, v), abs=TOL)
        assert vec[6] == pytest.approx(motion_consistency(u, v), abs=TOL)
        assert vec[7] == 1.0
