"""Synthetic LiDAR scan generator: poses a body motion at a configured
distance, scans it with a single-viewpoint angular-grid range sensor (first
mesh intersections, so self-occlusion is physical), adds range noise and
dropout, and attaches ground truth.

Coordinates: sensor at the origin, z up. The subject stands on the ground
plane z = -sensor_height and is placed along +x at the recording's distance,
walking laterally (+y). Calibration target: per-frame hit counts in the low
hundreds near 12 m falling to tens near 28 m at the default 0.2 deg / 0.35
deg angular resolution.
"""

from dataclasses import dataclass, replace

import numpy as np
import torch

from .. import smpl_body
from .core import RawRecording, recording_to_sample
from .formats import read_mot
from .raycast import scan_mesh


class SynthError(Exception):
    category = "synth"


@dataclass
class SynthConfig:
    n_recordings: int = 3
    frames_per_recording: int = 64
    distance_min: float = 12.0  # meters, subject placement range
    distance_max: float = 28.0
    az_step_deg: float = 0.2  # horizontal angular resolution (beam divergence proxy)
    el_step_deg: float = 0.35  # vertical angular resolution
    dropout: float = 0.02  # per-return drop probability
    noise_sigma: float = 0.01  # meters, along-ray range noise
    sensor_height: float = 2.0  # meters above ground
    frame_rate: float = 10.0
    walk_speed: float = 0.8  # m/s lateral
    motion: str = "gait"  # "gait", "random", or path to a .mot file to replay
    seed: int = 0

    def validate(self):
        if self.n_recordings < 1 or self.frames_per_recording < 1:
            raise SynthError("n_recordings and frames_per_recording must be >= 1")
        if not 0 < self.distance_min <= self.distance_max:
            raise SynthError("need 0 < distance_min <= distance_max")
        if self.az_step_deg <= 0 or self.el_step_deg <= 0:
            raise SynthError("angular steps must be positive")
        if not 0 <= self.dropout <= 1:
            raise SynthError("dropout must be in [0, 1]")
        if self.noise_sigma < 0 or self.frame_rate <= 0:
            raise SynthError("noise_sigma must be >= 0 and frame_rate > 0")


def gait_theta(n_frames, frame_rate, rng):
    """Procedural walking pose track (n_frames, 72): sinusoidal hip/knee/arm
    swing with per-recording phase and amplitude jitter. Facing +y (the walk
    direction); the template faces +x, hence the pi/2 root yaw."""
    t = np.arange(n_frames) / frame_rate
    phase = 2 * np.pi * 0.9 * t + rng.uniform(0, 2 * np.pi)
    amp = 1.0 + rng.uniform(-0.15, 0.15)
    theta = np.zeros((n_frames, 72))

    def set_aa(joint, axis, values):
        theta[:, 3 * joint + axis] = values

    set_aa(0, 2, np.pi / 2 + 0.04 * np.sin(phase))  # yaw sway
    set_aa(0, 0, 0.03 * np.sin(2 * phase))  # roll bob
    hip = 0.45 * amp
    set_aa(1, 1, hip * np.sin(phase))
    set_aa(2, 1, -hip * np.sin(phase))
    knee = 0.65 * amp
    set_aa(4, 1, knee * np.clip(-np.sin(phase - 0.6), 0, None))
    set_aa(5, 1, knee * np.clip(np.sin(phase - 0.6), 0, None))
    set_aa(7, 1, 0.15 * np.sin(phase))
    set_aa(8, 1, -0.15 * np.sin(phase))
    set_aa(3, 2, 0.06 * np.sin(phase))
    set_aa(9, 2, -0.05 * np.sin(phase))
    set_aa(16, 1, -0.30 * amp * np.sin(phase))
    set_aa(17, 1, 0.30 * amp * np.sin(phase))
    set_aa(18, 1, -0.35 + 0.10 * np.sin(phase))
    set_aa(19, 1, -0.35 - 0.10 * np.sin(phase))
    set_aa(12, 2, 0.03 * np.sin(phase))
    return theta


_RANDOM_AMP = np.full(24, 0.20)
_RANDOM_AMP[[1, 2, 4, 5, 16, 17, 18, 19]] = 0.55  # hips, knees, shoulders, elbows
_RANDOM_AMP[[7, 8, 20, 21]] = 0.35  # ankles, wrists
_RANDOM_AMP[0] = 0.12  # root wobbles around the facing yaw only


def random_theta(n_frames, frame_rate, rng):
    """Smooth random pose track (n_frames, 72): per joint axis a sum of three
    random low-frequency sinusoids, amplitude-limited per joint group. Covers
    the pose space far beyond the single gait cycle; each recording's rng
    draws an independent motion."""
    t = np.arange(n_frames) / frame_rate
    theta = np.zeros((n_frames, 72))
    for j in range(24):
        for axis in range(3):
            track = np.zeros(n_frames)
            weights = rng.uniform(0.2, 1.0, size=3)
            freqs = rng.uniform(0.15, 1.1, size=3)
            phases = rng.uniform(0, 2 * np.pi, size=3)
            for w, f, p in zip(weights, freqs, phases):
                track += w * np.sin(2 * np.pi * f * t + p)
            theta[:, 3 * j + axis] = track * (_RANDOM_AMP[j] / weights.sum())
    theta[:, 2] += np.pi / 2  # face the walk direction like the gait track
    return theta


def _motion_track(cfg, rec_index, model, rng):
    """(theta (F, 72), translation (F, 3)) for one recording."""
    n = cfg.frames_per_recording
    if cfg.motion == "gait":
        theta = gait_theta(n, cfg.frame_rate, rng)
    elif cfg.motion == "random":
        theta = random_theta(n, cfg.frame_rate, rng)
    else:
        theta_file, _ = read_mot(cfg.motion)
        reps = np.arange(n) % len(theta_file)
        theta = theta_file[reps].astype(np.float64)
    if cfg.n_recordings > 1:
        frac = rec_index / (cfg.n_recordings - 1)
    else:
        frac = 0.0
    distance = cfg.distance_min + frac * (cfg.distance_max - cfg.distance_min)
    t_sec = np.arange(n) / cfg.frame_rate
    y = cfg.walk_speed * (t_sec - t_sec[-1] / 2) if n > 1 else np.zeros(1)
    ground = -cfg.sensor_height
    z0 = ground - float(model.template_vertices[:, 2].min()) + 0.02
    bob = 0.02 * np.sin(2 * (2 * np.pi * 0.9 * t_sec))
    translation = np.stack((np.full(n, distance), y, z0 + bob), axis=1)
    return theta, translation


def synth_generate_raw(cfg, model):
    """Simulate recordings -> list of RawRecording (variable point counts per
    frame, sensor frame). Deterministic under cfg.seed."""
    cfg.validate()
    if model.faces is None or not len(model.faces):
        raise SynthError("body model carries no triangle faces; scanning needs a mesh")
    az_step = np.deg2rad(cfg.az_step_deg)
    el_step = np.deg2rad(cfg.el_step_deg)
    origin = np.zeros(3)
    recordings = []
    total_empty = 0
    total_frames = 0
    empty_notes = []
    for rec_index in range(cfg.n_recordings):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, rec_index]))
        theta, translation = _motion_track(cfg, rec_index, model, rng)
        with torch.no_grad():
            posed = smpl_body.forward(
                model,
                torch.as_tensor(theta, dtype=torch.float64),
                translation=torch.as_tensor(translation, dtype=torch.float64),
            )
        all_verts = posed.vertices.numpy()
        frames = []
        for t in range(cfg.frames_per_recording):
            _, dist, dirs = scan_mesh(origin, all_verts[t], model.faces, az_step, el_step)
            if len(dist):
                dist = dist + rng.normal(0.0, cfg.noise_sigma, size=len(dist))
                keep = rng.random(len(dist)) >= cfg.dropout
                dist, dirs = dist[keep], dirs[keep]
            total_frames += 1
            if len(dist) == 0:
                total_empty += 1
                empty_notes.append(f"rec{rec_index:03d}/frame{t:06d}")
            frames.append((dirs * dist[:, None]).astype(np.float32))
        recordings.append(
            RawRecording(
                recording_id=f"rec{rec_index:03d}",
                frames=frames,
                theta=theta.astype(np.float32),
                translation=translation.astype(np.float32),
            )
        )
    if total_empty == total_frames:
        raise SynthError("configuration produced zero hits on every frame")
    if total_empty:
        raise SynthError(
            f"{total_empty} frames with zero points (e.g. {empty_notes[0]}); "
            "reduce dropout/distance or coarsen the grid"
        )
    return recordings


def synth_generate(cfg, model):
    """Simulate and preprocess: list of full-length MotionSamples (one per
    recording), ground truth attached. Window downstream as needed."""
    raw = synth_generate_raw(cfg, model)
    return [
        recording_to_sample(rec, model, recording_index=i, resample_seed=cfg.seed, frame_rate=cfg.frame_rate)
        for i, rec in enumerate(raw)
    ]


def distance_sweep_config(cfg, distances):
    """Variant of cfg with one recording pinned at each given distance.

    Recording distances are linearly interpolated between distance_min and
    distance_max, so the requested distances must be evenly spaced."""
    distances = [float(d) for d in distances]
    if len(distances) < 2 or sorted(distances) != distances:
        raise SynthError("distance sweep needs at least two increasing distances")
    steps = np.diff(distances)
    if not np.allclose(steps, steps[0]):
        raise SynthError(f"sweep distances must be evenly spaced, got {distances}")
    return replace(
        cfg,
        n_recordings=len(distances),
        distance_min=distances[0],
        distance_max=distances[-1],
    )
