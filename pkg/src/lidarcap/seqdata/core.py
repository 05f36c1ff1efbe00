"""Dataset ingestion and preprocessing: per-frame 512-point resampling,
centroid centering, sequence windowing, and the on-disk layout reader/writer.

Layout: ``root/<recording_id>/frames/<%06d>.ptc`` plus ``root/<recording_id>/gt.mot``.
Frames are numbered contiguously from 000000 and must match the motion frame
count.

Normalization: each frame is centered at its own centroid; the centroid is
kept so global positions can be reconstructed. Training is pose-only, so
ground-truth joints for the losses live in the body frame (forward kinematics
of gt_theta without translation); sensor-frame joints are gt_joints,
reproducible as body joints + gt_translation.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..rot3d import canonicalize_axis_angle
from ..smpl_body import joints_from_params
from .formats import DataFormatError, read_mot, read_ptc, write_mot, write_ptc

FRAME_POINTS = 512
DEFAULT_WINDOW = 16
DEFAULT_STRIDE = 8
DEFAULT_FRAME_RATE = 10.0


class DatasetError(Exception):
    category = "dataset"


@dataclass
class RawFrame:
    points: np.ndarray  # (N, 3) float32, sensor frame, N >= 1
    frame_index: int
    subject_distance: float | None = None  # horizontal meters, when known


@dataclass
class RawRecording:
    recording_id: str
    frames: list  # of (N_i, 3) float32 arrays
    theta: np.ndarray  # (F, 72) float32
    translation: np.ndarray  # (F, 3) float32


@dataclass
class PointSequence:
    frames: np.ndarray  # (T, 512, 3) float32, centered per frame
    centroids: np.ndarray  # (T, 3) float32
    frame_rate: float = DEFAULT_FRAME_RATE


@dataclass
class MotionSample:
    sequence: PointSequence
    gt_theta: np.ndarray  # (T, 72) float32, canonical axis-angle
    gt_translation: np.ndarray  # (T, 3) float32
    gt_joints: np.ndarray  # (T, 24, 3) float32, sensor frame
    recording_id: str = ""
    start_frame: int = 0
    distances: np.ndarray | None = None  # (T,) horizontal subject distance, meters

    @property
    def gt_joints_body(self):
        """Joints in the translation-free body frame (training target)."""
        return self.gt_joints - self.gt_translation[:, None, :]


def resample_frame(points, seed, method="uniform"):
    """Fix a frame to exactly 512 points.

    N == 512: returned unchanged (same order). N > 512: uniform random subset
    without replacement from the seeded generator, original order preserved.
    N < 512: points repeated cyclically in input order, truncated at 512.
    ``method="fps"`` switches the N > 512 path to farthest-point sampling.
    """
    if method not in ("uniform", "fps"):
        raise DatasetError(f"unknown resampling method {method!r}")
    points = np.asarray(points, dtype=np.float32)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DatasetError(f"frame must be (N, 3), got {points.shape}")
    n = points.shape[0]
    if n == 0:
        raise DatasetError("empty frame (N = 0)")
    if n == FRAME_POINTS:
        return points.copy()
    if n > FRAME_POINTS:
        if method == "fps":
            idx = _farthest_point_indices(points, FRAME_POINTS)
        else:
            rng = np.random.default_rng(seed)
            idx = np.sort(rng.choice(n, size=FRAME_POINTS, replace=False))
        return points[idx]
    reps = np.arange(FRAME_POINTS) % n
    return points[reps]


def _farthest_point_indices(points, k):
    pts = points.astype(np.float64)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = 0
    d = ((pts - pts[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        chosen[i] = int(d.argmax())
        d = np.minimum(d, ((pts - pts[chosen[i]]) ** 2).sum(axis=1))
    return chosen


def center_frame(points):
    """Subtract the frame centroid. Returns (centered (512, 3), centroid (3,))."""
    points = np.asarray(points, dtype=np.float32)
    if not np.isfinite(points).all():
        raise DatasetError("frame contains non-finite values")
    centroid = points.mean(axis=0, dtype=np.float64).astype(np.float32)
    return points - centroid, centroid


def window_sequences(samples, window, stride):
    """Slice full-recording MotionSamples into sliding windows of length
    ``window`` with the given stride; trailing partial windows are dropped."""
    if window < 1 or stride < 1:
        raise DatasetError(f"window and stride must be >= 1, got {window}, {stride}")
    out = []
    for sample in samples:
        total = len(sample.gt_theta)
        for start in range(0, total - window + 1, stride):
            sl = slice(start, start + window)
            out.append(
                MotionSample(
                    sequence=PointSequence(
                        frames=sample.sequence.frames[sl],
                        centroids=sample.sequence.centroids[sl],
                        frame_rate=sample.sequence.frame_rate,
                    ),
                    gt_theta=sample.gt_theta[sl],
                    gt_translation=sample.gt_translation[sl],
                    gt_joints=sample.gt_joints[sl],
                    recording_id=sample.recording_id,
                    start_frame=sample.start_frame + start,
                    distances=None if sample.distances is None else sample.distances[sl],
                )
            )
    return out


def _frame_seed(base, recording_index, frame_index):
    # stable scalar seed per frame; SeedSequence mixes the tuple portably
    return np.random.SeedSequence([int(base), int(recording_index), int(frame_index)])


def recording_to_sample(rec, model, recording_index=0, resample_seed=0, frame_rate=DEFAULT_FRAME_RATE):
    """Preprocess one RawRecording into a full-length MotionSample."""
    total = len(rec.frames)
    if total != len(rec.theta):
        raise DatasetError(
            f"{rec.recording_id}: {total} frames but {len(rec.theta)} motion frames"
        )
    frames = np.empty((total, FRAME_POINTS, 3), dtype=np.float32)
    centroids = np.empty((total, 3), dtype=np.float32)
    for t, pts in enumerate(rec.frames):
        fixed = resample_frame(pts, _frame_seed(resample_seed, recording_index, t))
        frames[t], centroids[t] = center_frame(fixed)
    theta = np.asarray(rec.theta, dtype=np.float32)
    theta = (
        canonicalize_axis_angle(torch.from_numpy(theta).reshape(-1, 3))
        .reshape(total, 72)
        .numpy()
    )
    translation = np.asarray(rec.translation, dtype=np.float32)
    with torch.no_grad():
        body_joints = joints_from_params(model, torch.as_tensor(theta, dtype=torch.float64))
    gt_joints = (body_joints.numpy() + translation[:, None, :]).astype(np.float32)
    return MotionSample(
        sequence=PointSequence(frames=frames, centroids=centroids, frame_rate=frame_rate),
        gt_theta=theta,
        gt_translation=translation,
        gt_joints=gt_joints,
        recording_id=rec.recording_id,
        distances=np.linalg.norm(translation[:, :2], axis=1),
    )


def read_raw_recording(rec_dir):
    """Read and validate one recording directory into a RawRecording."""
    rec_dir = Path(rec_dir)
    frames_dir = rec_dir / "frames"
    mot_path = rec_dir / "gt.mot"
    errors = []
    if not frames_dir.is_dir():
        raise DatasetError(f"{rec_dir}: missing frames/ directory")
    if not mot_path.is_file():
        raise DatasetError(f"{rec_dir}: missing gt.mot")
    theta, translation = read_mot(mot_path)
    frame_paths = sorted(frames_dir.glob("*.ptc"))
    expected = [frames_dir / f"{i:06d}.ptc" for i in range(len(theta))]
    if frame_paths != expected:
        raise DatasetError(
            f"{rec_dir}: frame files must be 000000.ptc..{len(theta) - 1:06d}.ptc "
            f"matching gt.mot ({len(theta)} frames); found {len(frame_paths)} files"
        )
    frames = []
    for path in frame_paths:
        try:
            frames.append(read_ptc(path))
        except DataFormatError as exc:
            errors.append(str(exc))
    if errors:
        raise DatasetError(f"{rec_dir}: " + "; ".join(errors))
    return RawRecording(
        recording_id=rec_dir.name, frames=frames, theta=theta, translation=translation
    )


def load_dataset(
    root,
    model,
    window=DEFAULT_WINDOW,
    stride=DEFAULT_STRIDE,
    frame_rate=DEFAULT_FRAME_RATE,
    resample_seed=0,
):
    """Load, validate and preprocess a dataset directory into windowed
    MotionSamples. Per-file problems are aggregated into one DatasetError
    naming every offending file."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    rec_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not rec_dirs:
        raise DatasetError(f"dataset root {root} contains no recordings")
    samples = []
    errors = []
    for idx, rec_dir in enumerate(rec_dirs):
        try:
            rec = read_raw_recording(rec_dir)
            samples.append(
                recording_to_sample(
                    rec, model, recording_index=idx, resample_seed=resample_seed, frame_rate=frame_rate
                )
            )
        except (DatasetError, DataFormatError) as exc:
            errors.append(str(exc))
    if errors:
        raise DatasetError("dataset validation failed: " + " | ".join(errors))
    return window_sequences(samples, window, stride)


def write_dataset(root, recordings):
    """Write RawRecordings in the documented on-disk layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for rec in recordings:
        if not re.fullmatch(r"[A-Za-z0-9_\-]+", rec.recording_id):
            raise DatasetError(f"bad recording id {rec.recording_id!r}")
        rec_dir = root / rec.recording_id
        (rec_dir / "frames").mkdir(parents=True, exist_ok=True)
        write_mot(rec_dir / "gt.mot", rec.theta, rec.translation)
        for i, pts in enumerate(rec.frames):
            write_ptc(rec_dir / "frames" / f"{i:06d}.ptc", pts)
