"""Three-stage pose network: per-frame point-set encoder with bidirectional
recurrent fusion and a joint decoder (stage 1), a spatio-temporal graph
convolution over the kinematic tree regressing per-joint 6D rotations
(stage 2), and body-model joint reprojection (stage 3), plus the three
training losses and their unweighted sum.

Shapes follow (B, T, ...) batches of T-frame windows with 512 points per
frame (the encoder itself works for any point count >= the sampling sizes).
Per-frame descriptors are produced solely from that frame's points; points
are lexicographically sorted on entry, which makes the whole pipeline exactly
permutation-invariant per frame.
"""

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from . import rot3d
from .smpl_body import NUM_JOINTS, PARENTS, joints_from_params


class NetError(Exception):
    category = "net"


@dataclass
class NetConfig:
    descriptor_dim: int = 1024
    sa1_npoint: int = 128
    sa1_radius: float = 0.2
    sa1_nsample: int = 32
    sa1_mlp: tuple = (64, 64, 128)
    sa2_npoint: int = 32
    sa2_radius: float = 0.4
    sa2_nsample: int = 32
    sa2_mlp: tuple = (128, 128, 256)
    global_mlp: tuple = (256, 512)
    gru_hidden: int = 1024
    gru_layers: int = 2
    decoder_hidden: tuple = (512, 256)
    gcn_channels: tuple = (128, 256)
    temporal_kernel: int = 9
    dropout: float = 0.5
    enable_ik_stage: bool = True  # False: direct MLP rotation head instead of the graph stage
    enable_smpl_loss: bool = True

    def validate(self):
        if not 0 <= self.dropout < 1:
            raise NetError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise NetError("temporal_kernel must be odd and >= 1")
        for name in ("descriptor_dim", "sa1_npoint", "sa1_nsample", "sa2_npoint", "sa2_nsample", "gru_hidden", "gru_layers"):
            if getattr(self, name) < 1:
                raise NetError(f"{name} must be >= 1")
        if self.sa2_npoint > self.sa1_npoint:
            raise NetError("sa2_npoint cannot exceed sa1_npoint")

    @classmethod
    def tiny(cls):
        """Double-precision finite-difference audit size (T=2, 8 points)."""
        return cls(
            descriptor_dim=8,
            sa1_npoint=4, sa1_radius=0.6, sa1_nsample=4, sa1_mlp=(8,),
            sa2_npoint=2, sa2_radius=1.2, sa2_nsample=2, sa2_mlp=(8,),
            global_mlp=(8,),
            gru_hidden=8, gru_layers=1,
            decoder_hidden=(8,),
            gcn_channels=(8,), temporal_kernel=3,
            dropout=0.0,
        )

    @classmethod
    def smoke(cls):
        """Small widths for CPU overfit runs."""
        return cls(
            descriptor_dim=192,
            sa1_npoint=32, sa1_radius=0.3, sa1_nsample=16, sa1_mlp=(24, 48),
            sa2_npoint=8, sa2_radius=0.6, sa2_nsample=8, sa2_mlp=(48, 96),
            global_mlp=(96,),
            gru_hidden=96, gru_layers=1,
            decoder_hidden=(96,),
            gcn_channels=(64, 64), temporal_kernel=7,
            dropout=0.0,
        )


@dataclass
class StagePredictions:
    joints_stage1: torch.Tensor  # (B, T, 24, 3)
    rot6d: torch.Tensor  # (B, T, 24, 6)
    theta_hat: torch.Tensor  # (B, T, 72)
    joints_smpl: torch.Tensor | None = None  # (B, T, 24, 3) when the body was supplied
    descriptors: torch.Tensor | None = field(default=None, repr=False)  # (B, T, D)


def canonical_sort(points):
    """Sort each frame's points lexicographically by (x, y, z); stable sorts
    from the last key up. Makes downstream sampling order-independent."""
    for dim in (2, 1, 0):
        order = points[..., dim].sort(dim=-1, stable=True).indices
        points = points.gather(-2, order.unsqueeze(-1).expand_as(points))
    return points


def farthest_point_sample(xyz, npoint):
    """(N, P, 3) -> (N, npoint) indices; starts at index 0 (inputs are
    canonically sorted, so this is deterministic)."""
    n, p, _ = xyz.shape
    if npoint > p:
        raise NetError(f"cannot sample {npoint} centers from {p} points")
    idx = torch.zeros(n, npoint, dtype=torch.long, device=xyz.device)
    dists = torch.full((n, p), float("inf"), dtype=xyz.dtype, device=xyz.device)
    farthest = torch.zeros(n, dtype=torch.long, device=xyz.device)
    batch = torch.arange(n, device=xyz.device)
    for i in range(npoint):
        idx[:, i] = farthest
        centroid = xyz[batch, farthest].unsqueeze(1)
        d = ((xyz - centroid) ** 2).sum(-1)
        dists = torch.minimum(dists, d)
        farthest = dists.argmax(-1)
    return idx


def ball_query(xyz, centers, radius, nsample):
    """Group up to nsample point indices within radius of each center,
    padding with the first in-range index (the center itself is always in
    range, so groups are never empty)."""
    n, p, _ = xyz.shape
    # squared distances via the quadratic expansion, clamped against rounding
    d2 = (
        (centers**2).sum(-1, keepdim=True)
        + (xyz**2).sum(-1)[:, None, :]
        - 2.0 * centers @ xyz.transpose(1, 2)
    ).clamp_min(0)
    sentinel = torch.arange(p, device=xyz.device).expand(n, centers.shape[1], p).clone()
    sentinel[d2 > radius * radius] = p
    grouped = sentinel.sort(dim=-1).values[..., :nsample]
    first = grouped[..., :1]
    return torch.where(grouped == p, first, grouped)


def _gather_points(data, idx):
    """data (N, P, C), idx (N, ...) -> (N, ..., C)."""
    n, p, c = data.shape
    flat = idx.reshape(n, -1)
    out = data.gather(1, flat.unsqueeze(-1).expand(-1, -1, c))
    return out.reshape(*idx.shape, c)


class SetAbstraction(nn.Module):
    def __init__(self, npoint, radius, nsample, in_channels, mlp):
        super().__init__()
        self.npoint = npoint
        self.radius = radius
        self.nsample = nsample
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        last = in_channels
        for width in mlp:
            self.convs.append(nn.Conv2d(last, width, 1))
            self.bns.append(nn.BatchNorm2d(width))
            last = width

    def forward(self, xyz, feats):
        centers = _gather_points(xyz, farthest_point_sample(xyz, self.npoint))
        group_idx = ball_query(xyz, centers, self.radius, self.nsample)
        grouped = _gather_points(xyz, group_idx) - centers.unsqueeze(2)
        if feats is not None:
            grouped = torch.cat((grouped, _gather_points(feats, group_idx)), dim=-1)
        x = grouped.permute(0, 3, 1, 2)  # (N, C, npoint, nsample)
        for conv, bn in zip(self.convs, self.bns):
            x = torch.relu(bn(conv(x)))
        x = x.max(dim=-1).values
        return centers, x.transpose(1, 2)  # (N, npoint, C_out)


class GlobalAbstraction(nn.Module):
    """Final group-all stage; the descriptor conv is the one convolution
    without batch norm (final output layer before the decoder)."""

    def __init__(self, in_channels, mlp, out_dim):
        super().__init__()
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleList()
        last = in_channels
        for width in mlp:
            self.convs.append(nn.Conv1d(last, width, 1))
            self.bns.append(nn.BatchNorm1d(width))
            last = width
        self.out_conv = nn.Conv1d(last, out_dim, 1)

    def forward(self, xyz, feats):
        x = torch.cat((xyz, feats), dim=-1).transpose(1, 2)  # (N, C, P)
        for conv, bn in zip(self.convs, self.bns):
            x = torch.relu(bn(conv(x)))
        x = torch.relu(self.out_conv(x))
        return x.max(dim=-1).values  # (N, out_dim)


class FrameEncoder(nn.Module):
    """Hierarchical set abstraction: one global descriptor per frame."""

    def __init__(self, cfg):
        super().__init__()
        self.sa1 = SetAbstraction(cfg.sa1_npoint, cfg.sa1_radius, cfg.sa1_nsample, 3, cfg.sa1_mlp)
        self.sa2 = SetAbstraction(
            cfg.sa2_npoint, cfg.sa2_radius, cfg.sa2_nsample, 3 + cfg.sa1_mlp[-1], cfg.sa2_mlp
        )
        self.global_sa = GlobalAbstraction(3 + cfg.sa2_mlp[-1], cfg.global_mlp, cfg.descriptor_dim)

    def forward(self, points):
        points = canonical_sort(points)
        xyz1, f1 = self.sa1(points, None)
        xyz2, f2 = self.sa2(xyz1, f1)
        g = self.global_sa(xyz2, f2)
        if not torch.isfinite(g).all():
            raise NetError("non-finite activations in frame encoder")
        return g


class TemporalFuser(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.gru = nn.GRU(
            input_size=cfg.descriptor_dim,
            hidden_size=cfg.gru_hidden,
            num_layers=cfg.gru_layers,
            batch_first=True,
            bidirectional=True,
            dropout=cfg.dropout if cfg.gru_layers > 1 else 0.0,
        )
        self.proj = nn.Linear(2 * cfg.gru_hidden, cfg.descriptor_dim)

    def forward(self, f_seq):
        h, _ = self.gru(f_seq)
        return self.proj(h)  # (B, T, descriptor_dim)


class JointDecoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        layers = []
        last = cfg.descriptor_dim
        for width in cfg.decoder_hidden:
            layers += [nn.Linear(last, width), nn.ReLU()]
            last = width
        layers.append(nn.Linear(last, NUM_JOINTS * 3))
        self.mlp = nn.Sequential(*layers)

    def forward(self, g_seq):
        b, t, _ = g_seq.shape
        return self.mlp(g_seq).reshape(b, t, NUM_JOINTS, 3)


def tree_adjacency(parents=PARENTS, dtype=torch.float64):
    """Symmetric-normalized kinematic-tree adjacency with self loops:
    D^{-1/2} (A + I) D^{-1/2}."""
    n = len(parents)
    a = torch.eye(n, dtype=dtype)
    for j in range(1, n):
        a[j, parents[j]] = 1.0
        a[parents[j], j] = 1.0
    deg = a.sum(dim=1)
    inv_sqrt = deg.rsqrt()
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


class GraphBlock(nn.Module):
    """Spatial graph convolution over joints, then temporal convolution along
    frames, batch norm after each (the final output conv lives outside)."""

    def __init__(self, in_channels, out_channels, temporal_kernel, dropout):
        super().__init__()
        self.spatial = nn.Conv2d(in_channels, out_channels, 1)
        self.bn1 = nn.BatchNorm2d(out_channels)
        pad = temporal_kernel // 2
        self.temporal = nn.Conv2d(out_channels, out_channels, (temporal_kernel, 1), padding=(pad, 0))
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, adj):
        # x: (B, C, T, V)
        x = self.spatial(x)
        x = torch.einsum("bctv,vw->bctw", x, adj)
        x = torch.relu(self.bn1(x))
        x = torch.relu(self.bn2(self.temporal(x)))
        return self.drop(x)


class GraphIKSolver(nn.Module):
    """ST-GCN over joint node features Q = [joint xyz ++ frame descriptor],
    regressing per-joint 6D rotation residuals."""

    def __init__(self, cfg):
        super().__init__()
        self.register_buffer("adj", tree_adjacency(dtype=torch.float32))
        blocks = []
        last = 3 + cfg.descriptor_dim
        for width in cfg.gcn_channels:
            blocks.append(GraphBlock(last, width, cfg.temporal_kernel, cfg.dropout))
            last = width
        self.blocks = nn.ModuleList(blocks)
        self.out_conv = nn.Conv2d(last, 6, 1)  # final output layer: no batch norm
        # zero residual head: training starts exactly at the identity pose, so
        # early rotation-loss gradients cannot destabilize the shared encoder
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, j_hat, g_seq):
        q = torch.cat(
            (j_hat, g_seq.unsqueeze(2).expand(-1, -1, NUM_JOINTS, -1)), dim=-1
        )  # (B, T, 24, 3 + D)
        x = q.permute(0, 3, 1, 2)  # (B, C, T, V)
        adj = self.adj.to(x.dtype)
        for block in self.blocks:
            x = block(x, adj)
        out = self.out_conv(x).permute(0, 2, 3, 1)  # (B, T, 24, 6)
        return out


class DirectIKHead(nn.Module):
    """Ablation head replacing the graph stage: shared two-layer perceptron
    from the fused descriptor straight to 24 x 6D."""

    def __init__(self, cfg):
        super().__init__()
        width = cfg.decoder_hidden[0] if cfg.decoder_hidden else cfg.descriptor_dim
        self.mlp = nn.Sequential(
            nn.Linear(cfg.descriptor_dim, width), nn.ReLU(), nn.Linear(width, NUM_JOINTS * 6)
        )
        # zero residual head, same identity-pose start as the graph stage
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)

    def forward(self, j_hat, g_seq):
        b, t, _ = g_seq.shape
        return self.mlp(g_seq).reshape(b, t, NUM_JOINTS, 6)


class LidarCapModel(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = FrameEncoder(cfg)
        self.fuser = TemporalFuser(cfg)
        self.decoder = JointDecoder(cfg)
        self.ik = GraphIKSolver(cfg) if cfg.enable_ik_stage else DirectIKHead(cfg)
        self.register_buffer(
            "identity6d", torch.tensor(rot3d.IDENTITY_6D, dtype=torch.float32).reshape(1, 1, 1, 6)
        )

    def encode_frames(self, points):
        """(B, T, P, 3) -> (B, T, descriptor_dim)."""
        b, t, p, _ = points.shape
        return self.encoder(points.reshape(b * t, p, 3)).reshape(b, t, -1)

    def forward(self, points, body=None):
        """points (B, T, P, 3), centered frames. Returns StagePredictions.

        joints_smpl is populated when ``body`` is given and the config trains
        the reprojection loss; it equals joints_from_params(theta_hat) in the
        translation-free body frame.
        """
        if points.dim() != 4:
            raise NetError(f"expected (B, T, P, 3) points, got {tuple(points.shape)}")
        f = self.encode_frames(points)
        g = self.fuser(f)
        j_hat = self.decoder(g)
        residual = self.ik(j_hat, g)
        rot6d = residual + self.identity6d.to(residual.dtype)
        if not torch.isfinite(rot6d).all():
            raise NetError("non-finite activations in rotation head")
        b, t = rot6d.shape[:2]
        rmat = rot3d.sixd_to_matrix(rot6d)
        theta_hat = rot3d.matrix_to_axis_angle(rmat).reshape(b, t, NUM_JOINTS * 3)
        joints_smpl = None
        if body is not None and self.cfg.enable_smpl_loss:
            joints_smpl = joints_from_params(body, theta_hat)
        return StagePredictions(
            joints_stage1=j_hat,
            rot6d=rot6d,
            theta_hat=theta_hat,
            joints_smpl=joints_smpl,
            descriptors=g,
        )


def _batched(x, trailing):
    """Accept (T, *trailing) or (B, T, *trailing) -> (B, T, *trailing)."""
    if x.dim() == len(trailing) + 1:
        return x.unsqueeze(0)
    if x.dim() == len(trailing) + 2:
        return x
    raise NetError(f"expected (T, ...) or (B, T, ...) with trailing {trailing}, got {tuple(x.shape)}")


def _sum_sq_per_sequence(diff):
    return diff.reshape(diff.shape[0], -1).pow(2).sum(dim=-1).mean()


def loss_stage1(j_hat, j_gt):
    """Sum over frames of squared joint-position error, averaged over the batch."""
    j_hat = _batched(j_hat, (NUM_JOINTS, 3))
    j_gt = _batched(j_gt, (NUM_JOINTS, 3))
    if j_hat.shape != j_gt.shape:
        raise NetError(f"shape mismatch: {tuple(j_hat.shape)} vs {tuple(j_gt.shape)}")
    return _sum_sq_per_sequence(j_hat - j_gt)


def loss_stage2(theta_hat, theta_gt):
    """Sum over frames of squared pose-parameter error (axis-angle), batch-averaged."""
    theta_hat = _batched(theta_hat, (72,))
    theta_gt = _batched(theta_gt, (72,))
    if theta_hat.shape != theta_gt.shape:
        raise NetError(f"shape mismatch: {tuple(theta_hat.shape)} vs {tuple(theta_gt.shape)}")
    return _sum_sq_per_sequence(theta_hat - theta_gt)


def loss_stage3(theta_hat, j_gt, body, joints_smpl=None):
    """Sum over frames of squared error between body-model joints posed at
    theta_hat (beta = 0, body frame) and ground-truth joints, batch-averaged."""
    theta_hat = _batched(theta_hat, (72,))
    j_gt = _batched(j_gt, (NUM_JOINTS, 3))
    if joints_smpl is None:
        joints_smpl = joints_from_params(body, theta_hat)
    else:
        joints_smpl = _batched(joints_smpl, (NUM_JOINTS, 3))
    if joints_smpl.shape != j_gt.shape:
        raise NetError(f"shape mismatch: {tuple(joints_smpl.shape)} vs {tuple(j_gt.shape)}")
    return _sum_sq_per_sequence(joints_smpl - j_gt.to(joints_smpl.dtype))


def total_loss(preds, j_gt, theta_gt, cfg, body=None):
    """Unweighted sum of the enabled loss components.

    Returns (total, components dict). Raises when the config expects a
    component whose prediction is unavailable."""
    components = {}
    components["loss_joints"] = loss_stage1(preds.joints_stage1, j_gt)
    if preds.rot6d is None or preds.theta_hat is None:
        raise NetError("rotation predictions missing; the pose stages always run")
    components["loss_theta"] = loss_stage2(preds.theta_hat, theta_gt)
    if cfg.enable_smpl_loss:
        if preds.joints_smpl is None and body is None:
            raise NetError("enable_smpl_loss is set but no body model or precomputed joints given")
        components["loss_joints_smpl"] = loss_stage3(
            preds.theta_hat, j_gt, body, joints_smpl=preds.joints_smpl
        )
    total = sum(components.values())
    components = {k: v.detach() for k, v in components.items()}
    return total, components
