"""Training, evaluation, checkpointing and windowed inference.

Recipe: Adam with constant learning rate 1e-4, weight decay 1e-4 (the common
reading of a stated decay rate), batch size 8, dropout 0.5, 200 epochs over
the Eq-style united loss (stage losses summed unweighted). Loss components
are logged separately per epoch into an append-only JSONL manifest. A
non-finite loss aborts training; the last periodic checkpoint is retained.
"""

import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import __version__, rot3d
from .container import read_container, write_container
from .metrics import DEFAULT_PCK_TAUS, EvalSample, evaluate
from .net import LidarCapModel, NetConfig, NetError, total_loss
from .seqdata import (
    DEFAULT_FRAME_RATE,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    center_frame,
    load_dataset,
    resample_frame,
)
from .smpl_body import joints_from_params


class TrainError(Exception):
    category = "train"


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    dropout: float = 0.5  # copied into the network config at build time
    optimizer: str = "adam"
    seed: int = 0
    data_root: str = ""
    out_dir: str = ""
    split: str = "all"  # or "holdout:<k>": hold the last k recordings out
    window: int = DEFAULT_WINDOW
    stride: int = DEFAULT_STRIDE
    frame_rate: float = DEFAULT_FRAME_RATE
    max_steps: int | None = None  # cap on optimizer steps, for smoke runs
    checkpoint_every: int = 10  # epochs
    net: NetConfig = field(default_factory=NetConfig)

    def validate(self):
        for name in ("epochs", "batch_size", "window", "stride", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise TrainError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.frame_rate <= 0:
            raise TrainError("learning_rate/frame_rate must be positive, weight_decay >= 0")
        if self.optimizer != "adam":
            raise TrainError(f"unsupported optimizer {self.optimizer!r}")
        if not (self.split == "all" or self.split.startswith("holdout:")):
            raise TrainError(f"split must be 'all' or 'holdout:<k>', got {self.split!r}")
        self.net.validate()

    @classmethod
    def smoke(cls, **overrides):
        """Overfit-capable CPU preset: small widths, higher learning rate."""
        base = dict(
            epochs=10_000,
            max_steps=500,
            learning_rate=2e-3,
            dropout=0.0,
            checkpoint_every=50,
            net=NetConfig.smoke(),
        )
        base.update(overrides)
        return cls(**base)


class RunManifest:
    """Append-only JSONL run log."""

    def __init__(self, path):
        self.path = Path(path)
        self.records = []

    def append(self, record):
        self.records.append(record)
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        manifest = cls(path)
        with open(path) as f:
            manifest.records = [json.loads(line) for line in f if line.strip()]
        return manifest

    def epoch_losses(self, component="loss_total"):
        return [r[component] for r in self.records if r.get("event") == "epoch"]


@dataclass
class TrainResult:
    model: LidarCapModel
    manifest: RunManifest
    checkpoint_path: Path
    steps: int


def _net_config_from_dict(d):
    kwargs = {}
    for f in fields(NetConfig):
        if f.name in d:
            v = d[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return NetConfig(**kwargs)


def save_checkpoint(path, model, seed=0, step=0, epoch=0):
    arrays = {name: tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()}
    meta = {
        "kind": "checkpoint",
        "net": asdict(model.cfg),
        "seed": int(seed),
        "step": int(step),
        "epoch": int(epoch),
        "version": __version__,
    }
    write_container(path, arrays, meta=meta)


def load_checkpoint(path):
    """-> (model in eval mode, meta dict)."""
    arrays, meta = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise TrainError(f"{path}: not a checkpoint container (kind={meta.get('kind')!r})")
    cfg = _net_config_from_dict(meta["net"])
    model = LidarCapModel(cfg)
    state = {name: torch.as_tensor(arr) for name, arr in arrays.items()}
    try:
        missing, unexpected = model.load_state_dict(state, strict=False)
    except RuntimeError as exc:  # shape mismatch between config and weights
        raise TrainError(f"{path}: checkpoint/config mismatch ({exc})") from exc
    if missing or unexpected:
        raise TrainError(
            f"{path}: checkpoint/config mismatch (missing {sorted(missing)}, unexpected {sorted(unexpected)})"
        )
    model.eval()
    return model, meta


def _stack_windows(samples):
    points = torch.from_numpy(np.stack([s.sequence.frames for s in samples]))
    j_body = torch.from_numpy(np.stack([s.gt_joints_body for s in samples]))
    theta = torch.from_numpy(np.stack([s.gt_theta for s in samples]))
    return points, j_body, theta


def _apply_split(samples, split):
    if split == "all":
        return samples
    k = int(split.split(":", 1)[1])
    rec_ids = sorted({s.recording_id for s in samples})
    if k >= len(rec_ids):
        raise TrainError(f"holdout:{k} leaves no training recordings out of {len(rec_ids)}")
    held = set(rec_ids[len(rec_ids) - k :])
    return [s for s in samples if s.recording_id not in held]


def train(cfg, body, samples=None):
    """Run the training loop. ``samples``: windowed MotionSamples; loaded from
    cfg.data_root when omitted. Returns a TrainResult."""
    cfg.validate()
    out_dir = Path(cfg.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if samples is None:
        if not cfg.data_root:
            raise TrainError("no samples given and data_root is empty")
        samples = load_dataset(
            cfg.data_root, body, window=cfg.window, stride=cfg.stride,
            frame_rate=cfg.frame_rate, resample_seed=cfg.seed,
        )
    samples = _apply_split(samples, cfg.split)
    if not samples:
        raise TrainError("no training windows after split/windowing")

    torch.manual_seed(cfg.seed)
    net_cfg = replace(cfg.net, dropout=cfg.dropout)
    model = LidarCapModel(net_cfg)
    opt = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )
    points, j_body, theta = _stack_windows(samples)
    theta = rot3d.canonicalize_axis_angle(theta.reshape(-1, 3)).reshape(theta.shape)
    n_win = len(samples)

    manifest = RunManifest(out_dir / "manifest.jsonl")
    config_snapshot = asdict(cfg)
    config_snapshot["net"] = asdict(net_cfg)
    manifest.append(
        {"event": "config", "config": config_snapshot, "version": __version__, "n_windows": n_win}
    )

    shuffler = torch.Generator().manual_seed(cfg.seed)
    ckpt_path = out_dir / "ckpt_latest.arc"
    step = 0
    t_start = time.time()
    model.train()
    try:
        for epoch in range(cfg.epochs):
            order = torch.randperm(n_win, generator=shuffler)
            sums = {}
            n_batches = 0
            for lo in range(0, n_win, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                preds = model(points[idx], body=body)
                loss, comps = total_loss(preds, j_body[idx], theta[idx], net_cfg, body=body)
                if not torch.isfinite(loss):
                    manifest.append({"event": "abort", "reason": "non-finite loss", "step": step})
                    raise TrainError(
                        f"non-finite loss at step {step}; last-good checkpoint: {ckpt_path}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                step += 1
                for name, value in comps.items():
                    sums[name] = sums.get(name, 0.0) + float(value)
                sums["loss_total"] = sums.get("loss_total", 0.0) + float(loss.detach())
                n_batches += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
            record = {
                "event": "epoch",
                "epoch": epoch,
                "step": step,
                "wall_sec": round(time.time() - t_start, 3),
            }
            record.update({k: v / n_batches for k, v in sums.items()})
            manifest.append(record)
            if (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model, seed=cfg.seed, step=step, epoch=epoch)
                manifest.append({"event": "checkpoint", "path": str(ckpt_path), "step": step})
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        model.eval()
    _recalibrate_bn(model, points, cfg.batch_size)
    save_checkpoint(ckpt_path, model, seed=cfg.seed, step=step, epoch=cfg.epochs)
    manifest.append({"event": "checkpoint", "path": str(ckpt_path), "step": step})
    manifest.append({"event": "done", "steps": step, "wall_sec": round(time.time() - t_start, 3)})
    return TrainResult(model=model, manifest=manifest, checkpoint_path=ckpt_path, steps=step)


_RECAL_MAX_BATCHES = 50


def _recalibrate_bn(model, points, batch_size):
    """Re-estimate batch-norm running statistics against the final weights.

    Momentum-tracked statistics lag the weights whenever the last training
    steps still move them quickly, which skews every eval-mode forward pass.
    One cumulative pass over the training windows (batch-norm layers in
    training mode, everything else in eval mode so dropout stays off) pins
    the statistics to the distribution the final weights actually produce.
    """
    bns = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    if not bns:
        return
    momenta = [bn.momentum for bn in bns]
    model.eval()
    for bn in bns:
        bn.reset_running_stats()
        bn.momentum = None  # None switches to a cumulative moving average
        bn.train()
    with torch.no_grad():
        for lo in range(0, min(len(points), _RECAL_MAX_BATCHES * batch_size), batch_size):
            model(points[lo : lo + batch_size])
    for bn, momentum in zip(bns, momenta):
        bn.momentum = momentum
    model.eval()


def predict_windows(model, points, chunk=16):
    """points (W, T, 512, 3) -> theta_hat (W, T, 72) float32, eval mode, no grad."""
    model.eval()
    outs = []
    with torch.no_grad():
        for lo in range(0, len(points), chunk):
            preds = model(points[lo : lo + chunk])
            outs.append(preds.theta_hat.float())
    return torch.cat(outs, dim=0)


def evaluate_model(
    model,
    samples,
    body,
    pck_taus=DEFAULT_PCK_TAUS,
    with_buckets=False,
    with_pve=True,
    fps=None,
):
    """MetricsReport of a model over windowed MotionSamples. Predictions and
    ground truth are compared in the body frame (pose-only protocol)."""
    if not samples:
        raise TrainError("no samples to evaluate")
    points, _, _ = _stack_windows(samples)
    theta_hat = predict_windows(model, points)
    preds, gts = [], []
    with torch.no_grad():
        pred_joints = joints_from_params(body, theta_hat.double()).float().numpy()
    for i, sample in enumerate(samples):
        preds.append(EvalSample(joints=pred_joints[i], theta=theta_hat[i].numpy()))
        gts.append(
            EvalSample(
                joints=sample.gt_joints_body,
                theta=sample.gt_theta,
                distances=sample.distances,
            )
        )
    return evaluate(
        preds,
        gts,
        model=body if with_pve else None,
        pck_taus=pck_taus,
        fps=fps if fps is not None else samples[0].sequence.frame_rate,
        with_buckets=with_buckets,
    )


def infer_frames(model, body, frames, window=DEFAULT_WINDOW, stride=None, resample_seed=0):
    """Pose a raw frame list (arbitrary N per frame).

    Windows of length ``window`` (stride defaults to window // 2) are
    predicted independently; overlapping per-frame rotation estimates are
    averaged in matrix space and projected back to the nearest rotation.
    Sequences shorter than one window are left-padded by repeating the first
    frame. Returns (theta (F, 72) float32, translation (F, 3) float32) where
    the translations place body-frame joints at the observed point centroids.
    """
    n_frames = len(frames)
    if n_frames == 0:
        raise TrainError("no frames to infer")
    stride = max(1, window // 2 if stride is None else stride)
    fixed = np.empty((n_frames, 512, 3), dtype=np.float32)
    centroids = np.empty((n_frames, 3), dtype=np.float32)
    for i, pts in enumerate(frames):
        resampled = resample_frame(pts, np.random.SeedSequence([resample_seed, i]))
        fixed[i], centroids[i] = center_frame(resampled)

    pad = max(0, window - n_frames)
    if pad:
        fixed = np.concatenate([np.repeat(fixed[:1], pad, axis=0), fixed], axis=0)
    total = len(fixed)
    starts = sorted({*range(0, total - window + 1, stride), total - window})
    points = torch.from_numpy(np.stack([fixed[s : s + window] for s in starts]))
    theta_windows = predict_windows(model, points)

    rot_sum = torch.zeros(total, 24, 3, 3, dtype=torch.float64)
    counts = torch.zeros(total, 1, 1, 1, dtype=torch.float64)
    for w, s in enumerate(starts):
        rmats = rot3d.axis_angle_to_matrix(theta_windows[w].double().reshape(window, 24, 3))
        rot_sum[s : s + window] += rmats
        counts[s : s + window] += 1
    stitched = rot3d.project_to_rotation(rot_sum / counts)
    theta = rot3d.matrix_to_axis_angle(stitched).reshape(total, 72)[pad:].float()

    with torch.no_grad():
        body_joints = joints_from_params(body, theta.double()).numpy()
    translation = centroids - body_joints.mean(axis=1).astype(np.float32)
    return theta.numpy(), translation
