import math

import numpy as np
import pytest

from hiertrack.core import HierarchyConfig, HiertrackError
from hiertrack.mpn import init_params, zeros_like_params
from hiertrack.synth import ScenarioConfig, generate
from hiertrack.training import (
    AdamState,
    TrainConfig,
    clip_loss,
    focal_loss,
    focal_loss_grad,
    prepare_clips,
    train,
    train_step,
    unfreeze_schedule,
)


class TestFocalLoss:
    def test_half_probability_positive(self):
        assert focal_loss(0.5, 1, 1.0) == pytest.approx(0.5 * math.log(2), abs=1e-12)

    def test_gamma_zero_is_cross_entropy(self):
        assert focal_loss(0.5, 1, 0.0) == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_correct_tends_to_zero(self):
        assert focal_loss(1 - 1e-9, 1, 1.0) < 1e-8

    def test_rejects_out_of_range(self):
        with pytest.raises(HiertrackError):
            focal_loss(0.0, 1, 1.0)
        with pytest.raises(HiertrackError):
            focal_loss(1.0, 0, 1.0)

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(1e-6, 1 - 1e-6, size=100)
        y = rng.integers(0, 2, size=100)
        assert (focal_loss(p, y, 1.0) >= 0).all()

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = float(rng.uniform(0.05, 0.95))
            y = int(rng.integers(0, 2))
            eps = 1e-7
            fd = (focal_loss(p + eps, y, 1.0) - focal_loss(p - eps, y, 1.0)) / (2 * eps)
            assert focal_loss_grad(np.array([p]), np.array([y]), 1.0)[0] == pytest.approx(
                float(fd), rel=1e-5
            )


class TestClipLoss:
    def test_single_edge_equals_focal(self):
        scores = [np.array([0.3])]
        labels = [np.array([1])]
        assert clip_loss(scores, labels, 1.0) == pytest.approx(float(focal_loss(0.3, 1, 1.0)))

    def test_two_identical_levels_double(self):
        scores = [np.array([0.3, 0.9]), np.array([0.3, 0.9])]
        labels = [np.array([1, 0]), np.array([1, 0])]
        single = clip_loss(scores[:1], labels[:1], 1.0)
        assert clip_loss(scores, labels, 1.0) == pytest.approx(2 * single)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        scores = [rng.uniform(0.01, 0.99, size=rng.integers(1, 9)) for _ in range(4)]
        labels = [rng.integers(0, 2, size=len(s)) for s in scores]
        total = 0.0
        for s, l in zip(scores, labels):
            acc = 0.0
            for p, y in zip(s, l):
                acc += float(focal_loss(p, y, 1.0))
            total += acc / len(s)
        assert clip_loss(scores, labels, 1.0) == pytest.approx(total, abs=1e-12)

    def test_frozen_levels_excluded(self):
        scores = [np.array([0.3]), np.array([0.3])]
        labels = [np.array([1]), np.array([1])]
        only_first = clip_loss(scores, labels, 1.0, active_levels={1})
        assert only_first == pytest.approx(float(focal_loss(0.3, 1, 1.0)))

    def test_empty_level_contributes_zero(self):
        scores = [np.array([]), np.array([0.3])]
        labels = [np.array([]), np.array([1])]
        assert clip_loss(scores, labels, 1.0) == pytest.approx(float(focal_loss(0.3, 1, 1.0)))


class TestUnfreezeSchedule:
    def test_starts_with_first_level(self):
        assert unfreeze_schedule(0, 750, 4) == {1}

    def test_second_level_joins_at_interval(self):
        assert unfreeze_schedule(749, 750, 4) == {1}
        assert unfreeze_schedule(750, 750, 4) == {1, 2}

    def test_all_levels_after_three_intervals(self):
        assert unfreeze_schedule(3 * 750, 750, 4) == {1, 2, 3, 4}
        assert unfreeze_schedule(10_000, 750, 4) == {1, 2, 3, 4}

    def test_monotone(self):
        prev = set()
        for it in range(0, 400, 7):
            cur = unfreeze_schedule(it, 50, 4)
            assert prev.issubset(cur)
            prev = cur

    def test_rejects_negative_iteration(self):
        with pytest.raises(HiertrackError):
            unfreeze_schedule(-1, 750, 4)


class TestAdam:
    def test_zero_gradient_changes_params_only_by_weight_decay(self):
        cfg = HierarchyConfig()
        params = init_params(cfg, seed=0)
        before = {name: t.copy() for name, t in params.items()}
        adam = AdamState(params)
        adam.step(params, zeros_like_params(params), lr=1e-2, weight_decay=1e-1)
        for name, t in params.items():
            assert np.allclose(t, before[name] * (1 - 1e-2 * 1e-1), atol=1e-15)

    def test_descends_a_quadratic(self):
        cfg = HierarchyConfig(
            level_window_sizes=(4,), node_dim=2, edge_dim=2, hidden_edge_init=2,
            hidden_edge=2, hidden_msg=2, hidden_node=2, hidden_class=2,
        )
        params = init_params(cfg, seed=1)
        adam = AdamState(params)
        target = {name: np.ones_like(t) for name, t in params.items()}
        for _ in range(500):
            grads = zeros_like_params(params)
            for (name, g), (_, p) in zip(grads.items(), params.items()):
                g += 2 * (p - target[name])
            adam.step(params, grads, lr=1e-2, weight_decay=0.0)
        for name, p in params.items():
            assert np.allclose(p, target[name], atol=0.05)


def tiny_training_setup(num_frames=300, seed=5):
    scen = ScenarioConfig(
        num_objects=4, num_frames=num_frames, occlusion_probability=0.004,
        max_occlusion=20, appearance_noise=0.05, jitter=0.2, embedding_dim=8, seed=seed,
    )
    dets, table = generate(scen)
    table = table.normalized()
    cfg = HierarchyConfig(
        level_window_sizes=(5, 25, 75, 150), knn_k=4, message_passing_steps=2,
        node_dim=8, edge_dim=6, hidden_edge_init=8, hidden_edge=16,
        hidden_msg=12, hidden_node=8, hidden_class=6,
    )
    clips = prepare_clips(dets, table, cfg)
    return clips, table, cfg


class TestTrainStep:
    def test_duplicated_clip_gives_same_update_as_single(self):
        clips, table, cfg = tiny_training_setup()
        tc = TrainConfig(batch_clips=2, epochs=1, unfreeze_interval=1, seed=0)

        params_a = init_params(cfg, seed=3)
        adam_a = AdamState(params_a)
        train_step([clips[0]], table, params_a, adam_a, 0, cfg, tc)

        params_b = init_params(cfg, seed=3)
        adam_b = AdamState(params_b)
        train_step([clips[0], clips[0]], table, params_b, adam_b, 0, cfg, tc)

        for (name, a), (_, b) in zip(params_a.items(), params_b.items()):
            assert np.allclose(a, b, atol=1e-12), name

    def test_empty_batch_rejected(self):
        clips, table, cfg = tiny_training_setup()
        tc = TrainConfig(seed=0)
        params = init_params(cfg, seed=0)
        with pytest.raises(HiertrackError):
            train_step([], table, params, AdamState(params), 0, cfg, tc)

    def test_unlabeled_clips_rejected(self):
        scen = ScenarioConfig(num_objects=2, num_frames=40, embedding_dim=4, seed=1)
        dets, table = generate(scen)
        stripped = [d for d in dets]
        import dataclasses

        stripped = [dataclasses.replace(d, gt_identity=None) for d in dets]
        cfg = HierarchyConfig(level_window_sizes=(5, 25), knn_k=3, node_dim=4, edge_dim=4)
        with pytest.raises(HiertrackError):
            prepare_clips(stripped, table, cfg)


class TestTrainLoop:
    def test_seeded_training_is_deterministic(self):
        clips, table, cfg = tiny_training_setup()
        tc = TrainConfig(learning_rate=1e-3, batch_clips=2, epochs=3, unfreeze_interval=2, seed=9)

        params_a = init_params(cfg, seed=4)
        train(clips, table, params_a, cfg, tc, max_iterations=6)
        params_b = init_params(cfg, seed=4)
        train(clips, table, params_b, cfg, tc, max_iterations=6)
        for (name, a), (_, b) in zip(params_a.items(), params_b.items()):
            assert np.array_equal(a, b), name

    def test_overfit_first_level_loss_collapses(self):
        # five-clip overfit set; with the default unfreeze interval only the
        # first level is active for all 200 iterations
        clips, table, cfg = tiny_training_setup(num_frames=750, seed=6)
        assert len(clips) == 5
        params = init_params(cfg, seed=5)
        tc = TrainConfig(learning_rate=3e-3, batch_clips=5, epochs=200, seed=0)
        _, _, records = train(clips, table, params, cfg, tc, max_iterations=200)
        assert records[0].active_levels == (1,)
        assert records[-1].active_levels == (1,)
        assert records[-1].total_loss < 0.1 * records[0].total_loss
