"""Pose-estimation metric suite: MPJPE, PA-MPJPE, PCK, PVE and acceleration
error, with optional distance bucketing.

Protocol notes (documented because upstream conventions vary):
  - MPJPE / PCK / PVE are root-aligned: predictions are translated per frame
    so the root joints (index 0) coincide. The pipeline does not regress
    global translation, so unaligned errors would mostly measure translation.
  - PA-MPJPE additionally removes an optimal per-frame similarity transform
    (scale + rotation + translation, Umeyama closed form, reflections
    excluded).
  - PCK thresholds are absolute distances in meters and are labeled
    explicitly in reports (e.g. ``pck@0.15m``); no normalization is assumed.
  - Distances are reported in millimeters; acceleration error in m/s^2 from
    discrete second differences at the configured frame rate.

All functions are numpy and operate on (T, 24, 3) joint sequences in meters.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PCK_TAUS = (0.05, 0.10, 0.15, 0.30, 0.50)
DEFAULT_BUCKET_EDGES = (14.0, 17.0, 20.0, 23.0)


class MetricsError(Exception):
    category = "metrics"


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def apply(self, points):
        return self.scale * points @ self.rotation.T + self.translation


@dataclass
class EvalSample:
    """One sequence to score: joints in meters, optional pose parameters for
    PVE and per-frame subject distances for bucketing."""

    joints: np.ndarray  # (T, 24, 3)
    theta: np.ndarray | None = None  # (T, 72)
    distances: np.ndarray | None = None  # (T,) meters


@dataclass
class MetricsReport:
    mpjpe: float  # millimeters
    pa_mpjpe: float  # millimeters
    pck: dict  # tau (m) -> fraction
    pve: float | None  # millimeters, None when meshes unavailable
    accel_err: float | None  # m/s^2, None when every sequence is shorter than 3
    n_frames: int
    distance_buckets: dict = field(default_factory=dict)  # label -> MetricsReport

    def to_dict(self):
        out = {
            "mpjpe_mm": self.mpjpe,
            "pa_mpjpe_mm": self.pa_mpjpe,
            "n_frames": self.n_frames,
        }
        for tau in sorted(self.pck):
            out[f"pck@{tau:g}m"] = self.pck[tau]
        if self.pve is not None:
            out["pve_mm"] = self.pve
        if self.accel_err is not None:
            out["accel_err_mps2"] = self.accel_err
        if self.distance_buckets:
            out["distance_buckets"] = {
                label: rep.to_dict() for label, rep in self.distance_buckets.items()
            }
        return out


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricsError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def _root_align(pred, gt):
    """Translate pred per frame so its root joint lands on gt's root."""
    return pred - pred[:, :1, :] + gt[:, :1, :]


def procrustes_align(pred, gt):
    """Optimal similarity transform from pred onto gt (24x3 each).

    Returns (SimilarityTransform, aligned pred). Minimizes
    sum_j ||s R pred_j + t - gt_j||^2 with det(R) = +1.
    """
    pred, gt = _check_pair(pred, gt)
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xp = pred - mu_p
    xg = gt - mu_g
    var_p = (xp**2).sum() / len(pred)
    if var_p < 1e-12:
        raise MetricsError("degenerate input: prediction points are coincident")
    cov = xg.T @ xp / len(pred)
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        s_fix[2] = -1.0
    rotation = u @ np.diag(s_fix) @ vt
    scale = (d * s_fix).sum() / var_p
    translation = mu_g - scale * rotation @ mu_p
    tf = SimilarityTransform(scale=float(scale), rotation=rotation, translation=translation)
    return tf, tf.apply(pred)


def _joint_dists(pred_seq, gt_seq):
    pred, gt = _check_pair(pred_seq, gt_seq)
    aligned = _root_align(pred, gt)
    return np.linalg.norm(aligned - gt, axis=-1)  # (T, 24)


def mpjpe(pred_seq, gt_seq):
    """Root-aligned mean per-joint position error in millimeters."""
    return float(_joint_dists(pred_seq, gt_seq).mean() * 1000.0)


def pa_mpjpe(pred_seq, gt_seq):
    """Per-frame Procrustes-aligned mean joint error in millimeters."""
    pred, gt = _check_pair(pred_seq, gt_seq)
    dists = []
    for t in range(len(pred)):
        _, aligned = procrustes_align(pred[t], gt[t])
        dists.append(np.linalg.norm(aligned - gt[t], axis=-1))
    return float(np.mean(dists) * 1000.0)


def pck(pred_seq, gt_seq, tau):
    """Fraction of root-aligned (frame, joint) errors strictly below tau meters."""
    if tau <= 0:
        raise MetricsError(f"tau must be positive, got {tau}")
    return float((_joint_dists(pred_seq, gt_seq) < tau).mean())


def pve(pred_theta_seq, gt_theta_seq, model):
    """Mean per-vertex error (mm) between meshes posed at beta = 0, root-aligned."""
    import torch

    from . import smpl_body

    pred = torch.as_tensor(np.asarray(pred_theta_seq), dtype=torch.float64)
    gt = torch.as_tensor(np.asarray(gt_theta_seq), dtype=torch.float64)
    if pred.shape != gt.shape:
        raise MetricsError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    with torch.no_grad():
        out_p = smpl_body.forward(model, pred)
        out_g = smpl_body.forward(model, gt)
    vp = out_p.vertices.numpy() + (out_g.joints[:, :1] - out_p.joints[:, :1]).numpy()
    vg = out_g.vertices.numpy()
    return float(np.linalg.norm(vp - vg, axis=-1).mean() * 1000.0)


def _accel(seq, fps):
    return (seq[2:] - 2 * seq[1:-1] + seq[:-2]) * fps * fps


def accel_error(pred_joints_seq, gt_joints_seq, fps=10.0):
    """Mean norm of the difference between predicted and ground-truth discrete
    joint accelerations, m/s^2. Requires T >= 3."""
    pred, gt = _check_pair(pred_joints_seq, gt_joints_seq)
    if len(pred) < 3:
        raise MetricsError(f"acceleration error needs at least 3 frames, got {len(pred)}")
    diff = _accel(pred, fps) - _accel(gt, fps)
    return float(np.linalg.norm(diff, axis=-1).mean())


def _bucket_label(lo, hi):
    if lo is None:
        return f"<{hi:g}m"
    if hi is None:
        return f">={lo:g}m"
    return f"{lo:g}-{hi:g}m"


def _pooled_report(frames, pck_taus, model):
    """frames: list of (pred_joints, gt_joints, pred_theta, gt_theta, accel_diff_or_None)
    grouped per sample; pooling concatenates (frame, joint) pairs."""
    dists, pa_dists, accel_diffs, pve_vals = [], [], [], []
    n_frames = 0
    for pred_j, gt_j, pred_th, gt_th, accel_diff in frames:
        if len(pred_j) == 0:
            continue
        n_frames += len(pred_j)
        dists.append(_joint_dists(pred_j, gt_j))
        for t in range(len(pred_j)):
            _, aligned = procrustes_align(pred_j[t], gt_j[t])
            pa_dists.append(np.linalg.norm(aligned - gt_j[t], axis=-1))
        if accel_diff is not None and len(accel_diff):
            accel_diffs.append(accel_diff)
        if pred_th is not None and gt_th is not None and model is not None:
            pve_vals.append(pve(pred_th, gt_th, model) * len(pred_j))
    dists = np.concatenate(dists, axis=0)
    pa_dists = np.stack(pa_dists, axis=0)
    report = MetricsReport(
        mpjpe=float(dists.mean() * 1000.0),
        pa_mpjpe=float(pa_dists.mean() * 1000.0),
        pck={tau: float((dists < tau).mean()) for tau in pck_taus},
        pve=float(sum(pve_vals) / n_frames) if pve_vals else None,
        accel_err=float(np.concatenate(accel_diffs).mean()) if accel_diffs else None,
        n_frames=n_frames,
    )
    return report


def evaluate(
    pred_samples,
    gt_samples,
    model=None,
    pck_taus=DEFAULT_PCK_TAUS,
    fps=10.0,
    bucket_edges=DEFAULT_BUCKET_EDGES,
    with_buckets=False,
):
    """Aggregate MetricsReport over aligned lists of EvalSample.

    Pooling concatenates all (frame, joint) pairs, so equal-length samples
    average their per-sample values. PVE is computed only when both sides
    carry theta and a body model is given. Distance buckets (per-frame subject
    distance against ``bucket_edges``) are added when ``with_buckets`` and gt
    samples carry distances.
    """
    if len(pred_samples) != len(gt_samples):
        raise MetricsError(f"sample count mismatch: {len(pred_samples)} vs {len(gt_samples)}")
    if not pred_samples:
        raise MetricsError("no samples to evaluate")

    rows = []
    for pred, gt in zip(pred_samples, gt_samples):
        pred_j, gt_j = _check_pair(pred.joints, gt.joints)
        accel_diff = None
        if len(pred_j) >= 3:
            accel_diff = np.linalg.norm(
                _accel(_root_align(pred_j, gt_j), fps) - _accel(gt_j, fps), axis=-1
            ).mean(axis=-1)  # (T-2,) mean over joints per center frame
        rows.append((pred_j, gt_j, pred.theta, gt.theta, accel_diff))

    report = _pooled_report(rows, pck_taus, model)

    if with_buckets:
        edges = [None] + sorted(bucket_edges) + [None]
        for lo, hi in zip(edges[:-1], edges[1:]):
            members = []
            for (pred_j, gt_j, pred_th, gt_th, accel_diff), gt in zip(rows, gt_samples):
                if gt.distances is None:
                    continue
                d = np.asarray(gt.distances, dtype=np.float64)
                mask = np.ones(len(d), dtype=bool)
                if lo is not None:
                    mask &= d >= lo
                if hi is not None:
                    mask &= d < hi
                if not mask.any():
                    continue
                sub_accel = None
                if accel_diff is not None:
                    sub_accel = accel_diff[mask[1:-1]]  # bucket of the center frame
                members.append(
                    (
                        pred_j[mask],
                        gt_j[mask],
                        pred_th[mask] if pred_th is not None else None,
                        gt_th[mask] if gt_th is not None else None,
                        sub_accel,
                    )
                )
            if members:
                report.distance_buckets[_bucket_label(lo, hi)] = _pooled_report(
                    members, pck_taus, model
                )
    return report
