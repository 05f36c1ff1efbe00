"""Differentiable parametric body model: shape/pose blendshapes, kinematic-tree
forward kinematics and linear blend skinning.

The model produces a 6890-vertex mesh and 24 joints from pose parameters
theta (24 axis-angle rotations, 72 values; joint 0 is the global body
rotation), shape parameters beta (10 PCA coefficients) and an optional root
translation. The pipeline fixes beta = 0 (mean shape) everywhere; shape
support exists for completeness and testing.

Model weights live in the ARC1 array container (see ``container``) under the
names: template_vertices (6890x3 f8, meters), shape_dirs (6890x3x10 f8),
pose_dirs (6890x3x207 f8), joint_regressor (24x6890 f8, rows sum to 1),
skin_weights (6890x24 f8, nonnegative rows summing to 1), parents (24 i8,
parents[0] = -1). An optional faces array (Fx3 i8) carries the triangle mesh
used by the synthetic scan generator.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .container import read_container, write_container
from .rot3d import axis_angle_to_matrix

NUM_VERTICES = 6890
NUM_JOINTS = 24
NUM_SHAPE = 10
NUM_POSE_BLEND = 207  # 23 non-root joints x 9 rotation-matrix entries

# standard kinematic tree: pelvis root, legs, spine, arms
PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int64,
)

BETA_LIMIT = 5.0


class BodyModelError(Exception):
    category = "model"


class ModelShapeError(BodyModelError):
    """Array missing or with the wrong shape/dtype."""


class ModelInvariantError(BodyModelError):
    """Arrays have the right shape but violate a model invariant."""


_REQUIRED = {
    "template_vertices": (NUM_VERTICES, 3),
    "shape_dirs": (NUM_VERTICES, 3, NUM_SHAPE),
    "pose_dirs": (NUM_VERTICES, 3, NUM_POSE_BLEND),
    "joint_regressor": (NUM_JOINTS, NUM_VERTICES),
    "skin_weights": (NUM_VERTICES, NUM_JOINTS),
    "parents": (NUM_JOINTS,),
}


@dataclass
class BodyModel:
    template_vertices: np.ndarray
    shape_dirs: np.ndarray
    pose_dirs: np.ndarray
    joint_regressor: np.ndarray
    skin_weights: np.ndarray
    parents: np.ndarray
    faces: np.ndarray | None = None
    _torch_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def validate(self):
        for name, shape in _REQUIRED.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ModelShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
        if self.faces is not None and (self.faces.ndim != 2 or self.faces.shape[1] != 3):
            raise ModelShapeError(f"faces: expected (F, 3), got {self.faces.shape}")
        for name in ("template_vertices", "shape_dirs", "pose_dirs", "joint_regressor", "skin_weights"):
            if not np.isfinite(getattr(self, name)).all():
                raise ModelInvariantError(f"{name} contains non-finite values")
        reg_sums = self.joint_regressor.sum(axis=1)
        if np.abs(reg_sums - 1.0).max() > 1e-5 or self.joint_regressor.min() < -1e-9:
            raise ModelInvariantError("joint_regressor rows must be nonnegative and sum to 1")
        w_sums = self.skin_weights.sum(axis=1)
        if np.abs(w_sums - 1.0).max() > 1e-5 or self.skin_weights.min() < -1e-9:
            raise ModelInvariantError("skin_weights rows must be nonnegative and sum to 1")
        if self.parents[0] != -1:
            raise ModelInvariantError("parents[0] must be -1 (root)")
        for j in range(1, NUM_JOINTS):
            if not 0 <= self.parents[j] < j:
                raise ModelInvariantError(
                    f"parents must be topologically ordered; parents[{j}] = {self.parents[j]}"
                )
        if self.faces is not None and self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= NUM_VERTICES:
                raise ModelInvariantError("faces index out of vertex range")

    def tensors(self, dtype=torch.float32, device="cpu"):
        """Model arrays as torch tensors, cached per (dtype, device)."""
        key = (dtype, str(device))
        if key not in self._torch_cache:
            self._torch_cache[key] = {
                name: torch.as_tensor(getattr(self, name), dtype=dtype, device=device)
                for name in ("template_vertices", "shape_dirs", "pose_dirs", "joint_regressor", "skin_weights")
            }
        return self._torch_cache[key]


@dataclass
class BodyOutput:
    vertices: torch.Tensor | None  # (..., 6890, 3) or None when skipped
    joints: torch.Tensor  # (..., 24, 3)
    joint_transforms: torch.Tensor  # (..., 24, 4, 4) posed global rigid transforms


def load_body_model(path):
    """Load and validate a BodyModel container. Missing file, shape mismatch
    and invariant violations raise distinct exception types."""
    try:
        arrays, _ = read_container(path)
    except FileNotFoundError:
        raise
    missing = [name for name in _REQUIRED if name not in arrays]
    if missing:
        raise ModelShapeError(f"{path}: missing arrays {missing}")
    model = BodyModel(
        template_vertices=np.asarray(arrays["template_vertices"], dtype=np.float64),
        shape_dirs=np.asarray(arrays["shape_dirs"], dtype=np.float64),
        pose_dirs=np.asarray(arrays["pose_dirs"], dtype=np.float64),
        joint_regressor=np.asarray(arrays["joint_regressor"], dtype=np.float64),
        skin_weights=np.asarray(arrays["skin_weights"], dtype=np.float64),
        parents=np.asarray(arrays["parents"], dtype=np.int64),
        faces=np.asarray(arrays["faces"], dtype=np.int64) if "faces" in arrays else None,
    )
    model.validate()
    return model


def save_body_model(path, model):
    model.validate()
    arrays = {name: getattr(model, name) for name in _REQUIRED}
    if model.faces is not None:
        arrays["faces"] = model.faces
    write_container(path, arrays, meta={"kind": "body_model"})


def _check_beta(beta):
    if beta is None:
        return None
    beta = torch.as_tensor(beta)
    if beta.shape != (NUM_SHAPE,):
        raise ValueError(f"beta must have shape ({NUM_SHAPE},), got {tuple(beta.shape)}")
    if not torch.isfinite(beta).all() or beta.abs().max() > BETA_LIMIT:
        raise ValueError(f"beta components must be finite with |beta_i| <= {BETA_LIMIT}")
    return beta


def rest_joints(model, beta=None, dtype=torch.float64):
    """Joint locations of the unposed, shaped body: regressor @ (template + shape_dirs @ beta).

    Returns a (24, 3) tensor.
    """
    t = model.tensors(dtype=dtype)
    v = t["template_vertices"]
    beta = _check_beta(beta)
    if beta is not None:
        v = v + torch.einsum("vcs,s->vc", t["shape_dirs"], beta.to(dtype))
    return t["joint_regressor"] @ v


def forward(model, theta, beta=None, translation=None, return_vertices=True):
    """Pose the body. theta: (..., 72) tensor; beta: optional (10,);
    translation: optional (..., 3). Returns BodyOutput with tensors batched
    like theta's leading dimensions.

    The computation follows the standard skinning recipe: shape blendshapes,
    pose blendshapes driven by the 207 entries of (R_j - I) for the 23
    non-root joints, forward kinematics along the parent tree, then linear
    blend skinning. Joints are the rigid transforms applied to the rest
    joints; the global rotation acts about the root joint.
    """
    theta = torch.as_tensor(theta)
    if theta.shape[-1] != 3 * NUM_JOINTS:
        raise ValueError(f"theta must have trailing dim {3 * NUM_JOINTS}, got {tuple(theta.shape)}")
    batch = theta.shape[:-1]
    dtype = theta.dtype if theta.is_floating_point() else torch.float64
    theta = theta.to(dtype).reshape(-1, NUM_JOINTS, 3)
    b = theta.shape[0]
    t = model.tensors(dtype=dtype, device=theta.device)
    beta = _check_beta(beta)

    v_shaped = t["template_vertices"]
    if beta is not None:
        v_shaped = v_shaped + torch.einsum("vcs,s->vc", t["shape_dirs"], beta.to(dtype))
    j_rest = t["joint_regressor"] @ v_shaped  # (24, 3)

    rots = axis_angle_to_matrix(theta)  # (b, 24, 3, 3)

    parents = model.parents
    rel = j_rest.clone()
    rel[1:] = j_rest[1:] - j_rest[parents[1:]]
    transforms = [None] * NUM_JOINTS
    row = torch.zeros(b, 1, 4, dtype=dtype, device=theta.device)
    row[..., 3] = 1
    for j in range(NUM_JOINTS):
        local = torch.cat(
            (torch.cat((rots[:, j], rel[j].expand(b, 3)[..., None]), dim=-1), row), dim=-2
        )  # (b, 4, 4)
        transforms[j] = local if j == 0 else transforms[parents[j]] @ local
    tf = torch.stack(transforms, dim=1)  # (b, 24, 4, 4)
    joints = tf[..., :3, 3]

    vertices = None
    if return_vertices:
        pose_feat = (rots[:, 1:] - torch.eye(3, dtype=dtype, device=theta.device)).reshape(b, NUM_POSE_BLEND)
        v_posed = v_shaped + torch.einsum("vcp,bp->bvc", t["pose_dirs"], pose_feat)
        # remove the rest-joint offset so skinning transforms act on rest coordinates
        skin_tf = tf.clone()
        skin_tf[..., :3, 3] = tf[..., :3, 3] - (tf[..., :3, :3] @ j_rest[..., None]).squeeze(-1)
        per_vertex = torch.einsum("vj,bjrc->bvrc", t["skin_weights"], skin_tf)
        vertices = (per_vertex[..., :3, :3] @ v_posed[..., None]).squeeze(-1) + per_vertex[..., :3, 3]

    if translation is not None:
        tr = torch.as_tensor(translation, dtype=dtype, device=theta.device).reshape(-1, 1, 3)
        joints = joints + tr
        tf = tf.clone()
        tf[..., :3, 3] = tf[..., :3, 3] + tr
        if vertices is not None:
            vertices = vertices + tr

    joints = joints.reshape(batch + (NUM_JOINTS, 3))
    tf = tf.reshape(batch + (NUM_JOINTS, 4, 4))
    if vertices is not None:
        vertices = vertices.reshape(batch + (NUM_VERTICES, 3))
    return BodyOutput(vertices=vertices, joints=joints, joint_transforms=tf)


def joints_from_params(model, theta, beta=None, translation=None):
    """Joints only (skips skinning; pose blendshapes do not move joints).
    Differentiable with respect to theta and beta."""
    return forward(model, theta, beta=beta, translation=translation, return_vertices=False).joints


# ---------------------------------------------------------------------------
# procedural default body
# ---------------------------------------------------------------------------

# joint rest positions relative to the pelvis (x forward, y left, z up)
_JOINT_POS = np.array(
    [
        [0.00, 0.00, 0.00],  # 0 pelvis
        [0.00, 0.09, -0.06],  # 1 left hip
        [0.00, -0.09, -0.06],  # 2 right hip
        [0.00, 0.00, 0.11],  # 3 spine1
        [0.00, 0.10, -0.46],  # 4 left knee
        [0.00, -0.10, -0.46],  # 5 right knee
        [0.00, 0.00, 0.23],  # 6 spine2
        [0.00, 0.11, -0.85],  # 7 left ankle
        [0.00, -0.11, -0.85],  # 8 right ankle
        [0.00, 0.00, 0.33],  # 9 spine3
        [0.12, 0.11, -0.91],  # 10 left foot
        [0.12, -0.11, -0.91],  # 11 right foot
        [0.00, 0.00, 0.50],  # 12 neck
        [0.00, 0.07, 0.43],  # 13 left collar
        [0.00, -0.07, 0.43],  # 14 right collar
        [0.00, 0.00, 0.63],  # 15 head
        [0.00, 0.17, 0.46],  # 16 left shoulder
        [0.00, -0.17, 0.46],  # 17 right shoulder
        [0.00, 0.43, 0.46],  # 18 left elbow
        [0.00, -0.43, 0.46],  # 19 right elbow
        [0.00, 0.68, 0.46],  # 20 left wrist
        [0.00, -0.68, 0.46],  # 21 right wrist
        [0.00, 0.77, 0.46],  # 22 left hand
        [0.00, -0.77, 0.46],  # 23 right hand
    ]
)


def _tube(a, b, radius0, radius1, ring_verts, rings, scale_x=1.0):
    """Vertex rings along segment a->b; end rings collapse to near-points so
    the tube is effectively capped. Returns (verts, faces)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axis = b - a
    length = np.linalg.norm(axis)
    u = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    n1 = np.cross(u, ref)
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(u, n1)
    phis = 2 * np.pi * np.arange(ring_verts) / ring_verts
    verts = np.empty((rings * ring_verts, 3))
    for i in range(rings):
        s = i / (rings - 1)
        r = radius0 + (radius1 - radius0) * s
        if i == 0 or i == rings - 1:
            r = 1e-3
        center = a + s * axis
        offsets = r * np.cos(phis)[:, None] * n1 + r * np.sin(phis)[:, None] * n2
        offsets[:, 0] *= scale_x  # flatten front-to-back for the torso
        verts[i * ring_verts : (i + 1) * ring_verts] = center + offsets
    faces = []
    for i in range(rings - 1):
        for j in range(ring_verts):
            j2 = (j + 1) % ring_verts
            v00, v01 = i * ring_verts + j, i * ring_verts + j2
            v10, v11 = (i + 1) * ring_verts + j, (i + 1) * ring_verts + j2
            faces.append((v00, v01, v10))
            faces.append((v01, v11, v10))
    return verts, np.asarray(faces, dtype=np.int64)


def _part_weights(n_verts, verts, chain):
    """Skin weights along a part's axis: piecewise-linear blend between the
    chain's (joint, axial fraction) anchors."""
    w = np.zeros((n_verts, NUM_JOINTS))
    s = verts[:, 3]  # axial fraction appended by caller
    joints = [c[0] for c in chain]
    fracs = np.array([c[1] for c in chain])
    for vi in range(n_verts):
        x = np.clip(s[vi], fracs[0], fracs[-1])
        k = int(np.searchsorted(fracs, x, side="right") - 1)
        k = min(k, len(chain) - 2)
        t = (x - fracs[k]) / (fracs[k + 1] - fracs[k])
        w[vi, joints[k]] += 1 - t
        w[vi, joints[k + 1]] += t
    return w


def synthetic_body_model(seed=0):
    """Deterministic stand-in body: a capsule-limb humanoid with exactly 6890
    vertices, valid regressor/skinning rows and the standard 24-joint tree.
    Used wherever real model weights are unavailable."""
    rng = np.random.default_rng(seed)
    J = _JOINT_POS
    arm_dir = np.array([0.0, 1.0, 0.0])

    # part: (a, b, r0, r1, ring_verts, rings, scale_x, weight chain)
    parts = [
        ("torso", J[0] + [0, 0, -0.10], J[12], 0.15, 0.11, 24, None, 0.75,
         [(0, 0.00), (3, 0.32), (6, 0.52), (9, 0.68), (12, 1.00)]),
        ("head", J[12] + [0, 0, 0.02], J[15] + [0, 0, 0.15], 0.075, 0.085, 16, 30, 1.0,
         [(12, 0.0), (15, 1.0)]),
        ("l_thigh", J[1], J[4], 0.080, 0.060, 14, 40, 1.0, [(1, 0.0), (4, 1.0)]),
        ("r_thigh", J[2], J[5], 0.080, 0.060, 14, 40, 1.0, [(2, 0.0), (5, 1.0)]),
        ("l_shin", J[4], J[7], 0.055, 0.040, 12, 36, 1.0, [(4, 0.0), (7, 1.0)]),
        ("r_shin", J[5], J[8], 0.055, 0.040, 12, 36, 1.0, [(5, 0.0), (8, 1.0)]),
        ("l_foot", J[7] + [-0.04, 0, -0.04], J[10] + [0.06, 0, 0], 0.035, 0.030, 10, 16, 1.0,
         [(7, 0.0), (10, 1.0)]),
        ("r_foot", J[8] + [-0.04, 0, -0.04], J[11] + [0.06, 0, 0], 0.035, 0.030, 10, 16, 1.0,
         [(8, 0.0), (11, 1.0)]),
        ("l_upperarm", J[16], J[18], 0.048, 0.038, 10, 30, 1.0, [(16, 0.0), (18, 1.0)]),
        ("r_upperarm", J[17], J[19], 0.048, 0.038, 10, 30, 1.0, [(17, 0.0), (19, 1.0)]),
        ("l_forearm", J[18], J[20], 0.038, 0.030, 10, 30, 1.0, [(18, 0.0), (20, 1.0)]),
        ("r_forearm", J[19], J[21], 0.038, 0.030, 10, 30, 1.0, [(19, 0.0), (21, 1.0)]),
        ("l_hand", J[20], J[22] + 0.05 * arm_dir, 0.032, 0.020, 8, 14, 1.0,
         [(20, 0.0), (22, 1.0)]),
        ("r_hand", J[21], J[23] - 0.05 * arm_dir, 0.032, 0.020, 8, 14, 1.0,
         [(21, 0.0), (23, 1.0)]),
    ]

    fixed = sum(p[5] * p[6] for p in parts if p[6] is not None)
    torso_k = parts[0][5]
    torso_rings = (NUM_VERTICES - fixed) // torso_k
    filler = NUM_VERTICES - fixed - torso_rings * torso_k

    all_verts, all_faces, all_weights = [], [], []
    offset = 0
    for name, a, b, r0, r1, k, rings, sx, chain in parts:
        if rings is None:
            rings = torso_rings
        verts, faces = _tube(a, b, r0, r1, k, rings, scale_x=sx)
        frac = np.repeat(np.arange(rings) / (rings - 1), k)
        w = _part_weights(len(verts), np.concatenate([verts, frac[:, None]], axis=1), chain)
        all_verts.append(verts)
        all_faces.append(faces + offset)
        all_weights.append(w)
        offset += len(verts)
    if filler:
        # interior spine-axis vertices, unreferenced by faces, to hit exactly 6890
        zs = np.linspace(0.05, 0.30, filler)
        fv = np.stack([np.zeros(filler), np.zeros(filler), zs], axis=1)
        fw = np.zeros((filler, NUM_JOINTS))
        fw[:, 3] = 1.0
        all_verts.append(fv)
        all_weights.append(fw)

    template = np.concatenate(all_verts, axis=0)
    faces = np.concatenate(all_faces, axis=0)
    weights = np.concatenate(all_weights, axis=0)
    assert template.shape == (NUM_VERTICES, 3)

    # joint regressor: Gaussian kernel over vertex distance to the design joint
    d2 = ((template[None, :, :] - J[:, None, :]) ** 2).sum(-1)
    reg = np.exp(-d2 / (2 * 0.045**2))
    reg /= reg.sum(axis=1, keepdims=True)

    # shape modes: height, girth, then smooth low-frequency fields
    shape_dirs = np.zeros((NUM_VERTICES, 3, NUM_SHAPE))
    zc = template[:, 2] - template[:, 2].mean()
    shape_dirs[:, 2, 0] = 0.05 * zc
    shape_dirs[:, 0, 1] = 0.03 * template[:, 0]
    shape_dirs[:, 1, 1] = 0.03 * template[:, 1]
    for s in range(2, NUM_SHAPE):
        freq = rng.normal(scale=2.0, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        field = 0.01 * np.sin(template @ freq + phase)
        shape_dirs[:, :, s] = field[:, None] * direction

    pose_dirs = np.zeros((NUM_VERTICES, 3, NUM_POSE_BLEND))
    for p in range(NUM_POSE_BLEND):
        freq = rng.normal(scale=3.0, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        field = 0.002 * np.sin(template @ freq + phase)
        pose_dirs[:, :, p] = field[:, None] * direction

    model = BodyModel(
        template_vertices=template,
        shape_dirs=shape_dirs,
        pose_dirs=pose_dirs,
        joint_regressor=reg,
        skin_weights=weights,
        parents=PARENTS.copy(),
        faces=faces,
    )
    model.validate()
    return model
