"""Dataset formats, resampling, windowing and ingestion."""

import numpy as np
import pytest
import torch

from lidarcap.seqdata import (
    DataFormatError,
    DatasetError,
    RawRecording,
    center_frame,
    load_dataset,
    read_mot,
    read_ptc,
    recording_to_sample,
    resample_frame,
    window_sequences,
    write_dataset,
    write_mot,
    write_ptc,
)
from lidarcap.smpl_body import joints_from_params


def _seed(n=0):
    return np.random.SeedSequence([7, 0, n])


class TestResample:
    def test_exact_512_unchanged(self):
        pts = np.random.default_rng(0).normal(size=(512, 3)).astype(np.float32)
        out = resample_frame(pts, _seed())
        np.testing.assert_array_equal(out, pts)

    def test_repeat_histogram_n30(self):
        pts = np.arange(90, dtype=np.float32).reshape(30, 3)
        out = resample_frame(pts, _seed())
        assert out.shape == (512, 3)
        # 512 = 17 * 30 + 2: cyclic repetition gives the first two points one
        # extra copy, everything else exactly 17
        counts = {}
        for row in out:
            counts[tuple(row)] = counts.get(tuple(row), 0) + 1
        values = [counts[tuple(p)] for p in pts]
        assert values[:2] == [18, 18]
        assert all(v == 17 for v in values[2:])

    def test_subset_no_repetition_n1024(self):
        pts = np.random.default_rng(1).normal(size=(1024, 3)).astype(np.float32)
        out = resample_frame(pts, _seed())
        assert out.shape == (512, 3)
        seen = {tuple(p) for p in pts}
        rows = [tuple(p) for p in out]
        assert len(set(rows)) == 512  # no duplicates
        assert all(r in seen for r in rows)  # no invented coordinates

    def test_deterministic_subset(self):
        pts = np.random.default_rng(2).normal(size=(1024, 3)).astype(np.float32)
        a = resample_frame(pts, _seed(3))
        b = resample_frame(pts, _seed(3))
        np.testing.assert_array_equal(a, b)
        c = resample_frame(pts, _seed(4))
        assert not np.array_equal(a, c)

    def test_fps_method(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(700, 3)).astype(np.float32)
        out = resample_frame(pts, _seed(), method="fps")
        assert out.shape == (512, 3)
        seen = {tuple(p) for p in pts}
        assert all(tuple(p) in seen for p in out)

    def test_empty_frame_rejected(self):
        with pytest.raises(DatasetError, match="empty"):
            resample_frame(np.zeros((0, 3), dtype=np.float32), _seed())

    def test_bad_method(self):
        with pytest.raises(DatasetError, match="method"):
            resample_frame(np.zeros((4, 3), dtype=np.float32), _seed(), method="grid")


class TestCenterFrame:
    def test_zero_mean_input_unchanged(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(512, 3)).astype(np.float32)
        pts -= pts.mean(axis=0, keepdims=True)
        centered, centroid = center_frame(pts)
        assert np.abs(centroid) .max() < 1e-6
        np.testing.assert_allclose(centered, pts, atol=1e-6)

    def test_constant_cloud(self):
        pts = np.full((512, 3), [5.0, 2.0, 20.0], dtype=np.float32)
        centered, centroid = center_frame(pts)
        np.testing.assert_allclose(centroid, [5.0, 2.0, 20.0], atol=1e-6)
        assert np.abs(centered).max() < 1e-4

    def test_round_trip(self):
        rng = np.random.default_rng(6)
        pts = (rng.normal(size=(512, 3)) * 2 + [12.0, -1.0, 0.5]).astype(np.float32)
        centered, centroid = center_frame(pts)
        np.testing.assert_allclose(centered + centroid, pts, atol=1e-6)
        assert np.abs(centered.mean(axis=0)).max() < 1e-5


def _mini_sample(model, n_frames, rec_id="rec000", rec_index=0):
    rng = np.random.default_rng(100 + rec_index)
    frames = [rng.normal(0, 0.3, size=(rng.integers(40, 120), 3)).astype(np.float32) for _ in range(n_frames)]
    theta = rng.normal(0, 0.2, size=(n_frames, 72)).astype(np.float32)
    translation = rng.normal(0, 1.0, size=(n_frames, 3)).astype(np.float32)
    rec = RawRecording(recording_id=rec_id, frames=frames, theta=theta, translation=translation)
    return rec, recording_to_sample(rec, model, recording_index=rec_index)


class TestWindows:
    def _fake(self, model, n_frames):
        _, sample = _mini_sample(model, n_frames)
        return sample

    def test_window_arithmetic(self, body_model):
        sample = self._fake(body_model, 100)
        assert len(window_sequences([sample], 16, 16)) == 6
        assert len(window_sequences([sample], 16, 8)) == 11
        sample16 = self._fake(body_model, 16)
        assert len(window_sequences([sample16], 16, 8)) == 1
        sample15 = self._fake(body_model, 15)
        assert len(window_sequences([sample15], 16, 8)) == 0

    def test_three_recordings_of_64(self, body_model):
        samples = [self._fake(body_model, 64) for _ in range(3)]
        windows = window_sequences(samples, 16, 8)
        assert len(windows) == 21  # 7 per recording

    def test_window_contents_and_offsets(self, body_model):
        sample = self._fake(body_model, 40)
        windows = window_sequences([sample], 16, 8)
        assert [w.start_frame for w in windows] == [0, 8, 16, 24]
        w1 = windows[1]
        np.testing.assert_array_equal(w1.sequence.frames, sample.sequence.frames[8:24])
        np.testing.assert_array_equal(w1.gt_theta, sample.gt_theta[8:24])
        np.testing.assert_array_equal(w1.gt_joints, sample.gt_joints[8:24])
        assert w1.distances is not None and len(w1.distances) == 16


class TestMotionSample:
    def test_gt_joints_reproducible(self, body_model):
        _, sample = _mini_sample(body_model, 6)
        joints = joints_from_params(
            body_model, torch.as_tensor(sample.gt_theta, dtype=torch.float64)
        ).numpy() + sample.gt_translation[:, None, :]
        assert np.abs(joints - sample.gt_joints).max() < 1e-6

    def test_gt_joints_body_removes_translation(self, body_model):
        _, sample = _mini_sample(body_model, 4)
        diff = sample.gt_joints - sample.gt_joints_body
        np.testing.assert_allclose(diff, np.broadcast_to(sample.gt_translation[:, None, :], diff.shape), atol=1e-7)

    def test_theta_canonicalized_at_ingestion(self, body_model):
        rng = np.random.default_rng(9)
        frames = [rng.normal(size=(50, 3)).astype(np.float32) for _ in range(2)]
        theta = np.zeros((2, 72), dtype=np.float32)
        axis = np.array([0.0, 0.6, 0.8])
        theta[0, 3:6] = axis * (np.pi + 0.5)  # over-rotated, same rotation as pi - ...
        rec = RawRecording("rec000", frames, theta, np.zeros((2, 3), dtype=np.float32))
        sample = recording_to_sample(rec, body_model)
        angle = np.linalg.norm(sample.gt_theta[0, 3:6])
        assert angle <= np.pi + 1e-6
        np.testing.assert_allclose(angle, np.pi - 0.5, atol=1e-5)

    def test_sequence_frames_centered(self, body_model):
        _, sample = _mini_sample(body_model, 5)
        means = sample.sequence.frames.mean(axis=1)
        assert np.abs(means).max() < 1e-5


class TestFormats:
    def test_ptc_round_trip_bit_exact(self, tmp_path):
        pts = np.random.default_rng(20).normal(size=(77, 3)).astype(np.float32)
        path = tmp_path / "f.ptc"
        write_ptc(path, pts)
        out = read_ptc(path)
        assert out.dtype == np.float32
        assert out.tobytes() == pts.tobytes()

    def test_ptc_write_byte_stable(self, tmp_path):
        pts = np.random.default_rng(21).normal(size=(33, 3)).astype(np.float32)
        write_ptc(tmp_path / "a.ptc", pts)
        write_ptc(tmp_path / "b.ptc", pts)
        assert (tmp_path / "a.ptc").read_bytes() == (tmp_path / "b.ptc").read_bytes()

    def test_ptc_errors(self, tmp_path):
        path = tmp_path / "bad.ptc"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(DataFormatError, match="magic"):
            read_ptc(path)
        pts = np.ones((5, 3), dtype=np.float32)
        write_ptc(tmp_path / "ok.ptc", pts)
        data = (tmp_path / "ok.ptc").read_bytes()
        (tmp_path / "trunc.ptc").write_bytes(data[:-7])
        with pytest.raises(DataFormatError, match="bytes"):
            read_ptc(tmp_path / "trunc.ptc")
        with pytest.raises(DataFormatError, match="empty"):
            write_ptc(tmp_path / "e.ptc", np.zeros((0, 3), dtype=np.float32))

    def test_ptc_rejects_nan(self, tmp_path):
        pts = np.ones((4, 3), dtype=np.float32)
        pts[2, 1] = np.nan
        with pytest.raises(DataFormatError, match="finite"):
            write_ptc(tmp_path / "n.ptc", pts)

    def test_mot_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(22)
        theta = rng.normal(size=(9, 72)).astype(np.float32)
        trans = rng.normal(size=(9, 3)).astype(np.float32)
        path = tmp_path / "gt.mot"
        write_mot(path, theta, trans)
        t2, tr2 = read_mot(path)
        assert t2.tobytes() == theta.tobytes()
        assert tr2.tobytes() == trans.tobytes()

    def test_mot_errors(self, tmp_path):
        with pytest.raises(DataFormatError, match="theta"):
            write_mot(tmp_path / "x.mot", np.zeros((2, 71)), np.zeros((2, 3)))
        with pytest.raises(DataFormatError, match="translation"):
            write_mot(tmp_path / "x.mot", np.zeros((2, 72)), np.zeros((3, 3)))
        path = tmp_path / "bad.mot"
        path.write_bytes(b"MOT2" + b"\x00" * 10)
        with pytest.raises(DataFormatError, match="magic"):
            read_mot(path)


class TestLoadDataset:
    def _write_mini(self, root, model, recs=2, frames=20):
        recordings = [_mini_sample(model, frames, rec_id=f"rec{i:03d}", rec_index=i)[0] for i in range(recs)]
        write_dataset(root, recordings)
        return recordings

    def test_round_trip_counts(self, tmp_path, body_model):
        self._write_mini(tmp_path / "d", body_model, recs=2, frames=20)
        samples = load_dataset(tmp_path / "d", body_model, window=16, stride=8)
        assert len(samples) == 2  # one 16-window per 20-frame recording
        assert {s.recording_id for s in samples} == {"rec000", "rec001"}

    def test_resample_seed_reproducible(self, tmp_path, body_model):
        self._write_mini(tmp_path / "d", body_model)
        a = load_dataset(tmp_path / "d", body_model, resample_seed=5)
        b = load_dataset(tmp_path / "d", body_model, resample_seed=5)
        np.testing.assert_array_equal(a[0].sequence.frames, b[0].sequence.frames)

    def test_nan_frame_named_in_error(self, tmp_path, body_model):
        root = tmp_path / "d"
        self._write_mini(root, body_model, recs=1, frames=4)
        bad = root / "rec000" / "frames" / "000002.ptc"
        raw = bytearray(bad.read_bytes())
        raw[8:12] = np.float32(np.nan).tobytes()
        bad.write_bytes(bytes(raw))
        with pytest.raises(DatasetError, match="000002.ptc"):
            load_dataset(root, body_model)

    def test_count_mismatch(self, tmp_path, body_model):
        root = tmp_path / "d"
        self._write_mini(root, body_model, recs=1, frames=4)
        extra = np.zeros((5, 72), dtype=np.float32)
        write_mot(root / "rec000" / "gt.mot", extra, np.zeros((5, 3), dtype=np.float32))
        with pytest.raises(DatasetError, match="frame files"):
            load_dataset(root, body_model)

    def test_errors_aggregated_across_recordings(self, tmp_path, body_model):
        root = tmp_path / "d"
        self._write_mini(root, body_model, recs=3, frames=4)
        (root / "rec000" / "gt.mot").unlink()
        (root / "rec002" / "frames" / "000001.ptc").write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(DatasetError) as err:
            load_dataset(root, body_model)
        msg = str(err.value)
        assert "rec000" in msg and "rec002" in msg and "rec001" not in msg

    def test_missing_root(self, tmp_path, body_model):
        with pytest.raises(DatasetError, match="not a directory"):
            load_dataset(tmp_path / "absent", body_model)

    def test_empty_root(self, tmp_path, body_model):
        (tmp_path / "d").mkdir()
        with pytest.raises(DatasetError, match="no recordings"):
            load_dataset(tmp_path / "d", body_model)

    def test_write_dataset_rejects_bad_id(self, tmp_path, body_model):
        rec, _ = _mini_sample(body_model, 2, rec_id="bad/../id")
        with pytest.raises(DatasetError, match="recording id"):
            write_dataset(tmp_path / "d", [rec])
