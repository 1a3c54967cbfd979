import numpy as np
import pytest

from hiertrack.core import Detection, HierarchyConfig, HiertrackError, Trajectory
from hiertrack.dataio import (
    load_checkpoint,
    load_dataset,
    read_detections_csv,
    read_embeddings,
    read_track_csv,
    save_checkpoint,
    write_detections_csv,
    write_embeddings,
    write_track_csv,
)
from hiertrack.mpn import init_params
from hiertrack.synth import ScenarioConfig, generate
from hiertrack.training import AdamState


class TestDetectionCsv:
    def test_round_trip(self, tmp_path):
        dets = [
            Detection(frame=0, box=(1.25, 2.5, 3.0, 4.0), confidence=0.9,
                      class_id=2, embedding_id=0, gt_identity=7),
            Detection(frame=1, box=(5.0, 6.0, 7.0, 8.0), embedding_id=1),
        ]
        path = tmp_path / "detections.csv"
        write_detections_csv(path, dets)
        back = read_detections_csv(path)
        assert len(back) == 2
        assert back[0].frame == 0 and back[0].gt_identity == 7
        assert back[0].box == (1.25, 2.5, 3.0, 4.0)
        assert back[1].gt_identity is None
        assert [d.embedding_id for d in back] == [0, 1]

    def test_rejects_malformed_rows(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,3\n")
        with pytest.raises(HiertrackError):
            read_detections_csv(path)


class TestEmbeddings:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        vectors = rng.normal(size=(17, 5)).astype(np.float32)
        path = tmp_path / "embeddings.bin"
        write_embeddings(path, vectors)
        table = read_embeddings(path)
        assert table.vectors.shape == (17, 5)
        assert np.array_equal(table.vectors, vectors.astype(np.float64))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(HiertrackError):
            read_embeddings(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "embeddings.bin"
        write_embeddings(path, np.ones((4, 3), dtype=np.float32))
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(HiertrackError):
            read_embeddings(path)


class TestTrackCsv:
    def test_rows_sorted_and_flagged(self, tmp_path):
        t1 = Trajectory(identity=2, detections=(
            Detection(frame=1, box=(0.0, 0.0, 1.0, 1.0), embedding_id=0),
            Detection(frame=2, box=(1.0, 0.0, 1.0, 1.0), embedding_id=-1),
        ), interpolated=(False, True))
        t2 = Trajectory(identity=1, detections=(
            Detection(frame=1, box=(9.0, 0.0, 1.0, 1.0), embedding_id=1),
        ))
        path = tmp_path / "tracks.csv"
        write_track_csv(path, [t1, t2])
        rows = read_track_csv(path)
        assert [(r[0], r[1]) for r in rows] == [(1, 1), (1, 2), (2, 2)]
        assert [r[8] for r in rows] == [0, 0, 1]


class TestLoadDataset:
    def test_missing_embeddings_named_in_error(self, tmp_path):
        write_detections_csv(tmp_path / "detections.csv", [])
        with pytest.raises(HiertrackError, match="embeddings.bin"):
            load_dataset(tmp_path)

    def test_row_count_mismatch_rejected(self, tmp_path):
        dets, table = generate(ScenarioConfig(num_objects=2, num_frames=10,
                                              max_occlusion=5, seed=0))
        write_detections_csv(tmp_path / "detections.csv", dets)
        write_embeddings(tmp_path / "embeddings.bin", table.vectors[:3])
        with pytest.raises(HiertrackError):
            load_dataset(tmp_path)

    def test_loads_normalized(self, tmp_path):
        dets, table = generate(ScenarioConfig(num_objects=2, num_frames=10,
                                              max_occlusion=5, seed=0))
        write_detections_csv(tmp_path / "detections.csv", dets)
        write_embeddings(tmp_path / "embeddings.bin", table.vectors)
        loaded, tab = load_dataset(tmp_path)
        assert len(loaded) == len(dets)
        norms = np.linalg.norm(tab.vectors, axis=1)
        assert np.allclose(norms, 1.0)


class TestCheckpoint:
    def test_round_trip_params(self, tmp_path):
        cfg = HierarchyConfig(level_window_sizes=(5, 25), node_dim=8, edge_dim=4)
        params = init_params(cfg, seed=3)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg, iteration=42)
        loaded, cfg2, adam, iteration = load_checkpoint(path)
        assert iteration == 42
        assert adam is None
        assert cfg2 == cfg
        for (name, a), (_, b) in zip(params.items(), loaded.items()):
            assert np.array_equal(a, b), name

    def test_round_trip_with_optimizer(self, tmp_path):
        cfg = HierarchyConfig(level_window_sizes=(5, 25), node_dim=8, edge_dim=4)
        params = init_params(cfg, seed=3)
        adam = AdamState(params)
        adam.t = 7
        for _, m in adam.m.items():
            m += 0.5
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg, adam=adam, iteration=7)
        _, _, adam2, it = load_checkpoint(path)
        assert it == 7 and adam2 is not None and adam2.t == 7
        for (_, a), (_, b) in zip(adam.m.items(), adam2.m.items()):
            assert np.array_equal(a, b)

    def test_corruption_detected(self, tmp_path):
        cfg = HierarchyConfig(level_window_sizes=(5, 25), node_dim=8, edge_dim=4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(cfg, seed=0), cfg)
        raw = bytearray(path.read_bytes())
        raw[50] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(HiertrackError, match="checksum"):
            load_checkpoint(path)

    def test_byte_identical_rewrites(self, tmp_path):
        cfg = HierarchyConfig(level_window_sizes=(5, 25), node_dim=8, edge_dim=4)
        params = init_params(cfg, seed=1)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, params, cfg, iteration=9)
        save_checkpoint(p2, params, cfg, iteration=9)
        assert p1.read_bytes() == p2.read_bytes()
