"""Rotation conversions between axis-angle, 3x3 matrices and the continuous
6D representation.

Conventions
-----------
* Axis-angle: tensor of shape (..., 3); direction is the rotation axis, norm is
  the angle in radians. Canonical form has angle in [0, pi].
* Rotation matrix: tensor of shape (..., 3, 3), acting on column vectors.
* 6D: tensor of shape (..., 6) holding the first two COLUMNS of the rotation
  matrix, flattened column-by-column. Decoding Gram-Schmidt-orthonormalizes the
  two 3-vectors and completes the third column by cross product.

All functions are batched over leading dimensions, work in the dtype of their
input, and are differentiable away from the angle-0/angle-pi singular sets.
Branching uses boolean-mask indexing so that the untaken branch never
contributes NaNs to gradients.
"""

import torch

# below this angle Rodrigues' coefficients use their Taylor expansions
_TAYLOR_ANGLE = 1e-4


def canonicalize_axis_angle(aa):
    """Wrap an axis-angle vector so its norm lies in [0, pi].

    The angle is reduced modulo 2*pi and the axis flipped when the reduced
    angle exceeds pi.
    """
    angle = aa.norm(dim=-1, keepdim=True)
    out = aa.clone()
    big = (angle > torch.pi).squeeze(-1)
    if big.any():
        a = angle[big]
        wrapped = torch.remainder(a, 2 * torch.pi)
        flip = wrapped > torch.pi
        target = torch.where(flip, wrapped - 2 * torch.pi, wrapped)
        out[big] = aa[big] * (target / a)
    return out


def axis_angle_to_matrix(aa):
    """Rodrigues' formula, (..., 3) -> (..., 3, 3).

    Uses R = I + sin(t)/t * K + (1-cos(t))/t^2 * K^2 with K the skew matrix of
    the unnormalized axis-angle vector; both coefficients are analytic in t^2,
    so the small-angle branch is an even polynomial and the zero vector maps
    exactly to the identity with well-defined gradients.
    """
    sq = (aa * aa).sum(-1)
    c1 = torch.empty_like(sq)  # sin(t)/t
    c2 = torch.empty_like(sq)  # (1-cos(t))/t^2
    small = sq < _TAYLOR_ANGLE**2
    big = ~small
    if big.any():
        t = torch.sqrt(sq[big])
        c1[big] = torch.sin(t) / t
        c2[big] = (1 - torch.cos(t)) / sq[big]
    if small.any():
        s = sq[small]
        c1[small] = 1 - s / 6
        c2[small] = 0.5 - s / 24
    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack(
        (zero, -z, y, z, zero, -x, -y, x, zero), dim=-1
    ).reshape(aa.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=aa.dtype, device=aa.device).expand_as(k)
    return eye + c1[..., None, None] * k + c2[..., None, None] * (k @ k)


def check_rotation_matrix(m, tol=1e-4):
    """Raise ValueError if any matrix in the batch is not orthonormal with
    determinant +1 within ``tol``."""
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrices, got {tuple(m.shape)}")
    eye = torch.eye(3, dtype=m.dtype, device=m.device)
    ortho = (m.transpose(-1, -2) @ m - eye).abs().max()
    if not torch.isfinite(m).all():
        raise ValueError("rotation matrix contains non-finite entries")
    if ortho > tol:
        raise ValueError(f"matrix not orthonormal: max |R^T R - I| = {ortho:.3e} > {tol:g}")
    det = torch.linalg.det(m)
    if (det - 1).abs().max() > max(tol, 1e-3):
        raise ValueError("matrix determinant differs from +1 (reflection or scaling)")


def _matrix_to_quaternion(m):
    """(..., 3, 3) -> (..., 4) unit quaternion, w first, w >= 0.

    Builds the four candidate quaternions (one per diagonal combination) and
    picks, per element, the one whose squared leading term is largest — the
    best-conditioned denominator, which near angle pi is the candidate of the
    largest diagonal entry.
    """
    batch = m.shape[:-2]
    m00, m01, m02, m10, m11, m12, m20, m21, m22 = torch.unbind(m.reshape(batch + (9,)), -1)
    one = torch.ones_like(m00)
    q_abs_sq = torch.stack(
        (
            one + m00 + m11 + m22,
            one + m00 - m11 - m22,
            one - m00 + m11 - m22,
            one - m00 - m11 + m22,
        ),
        dim=-1,
    )
    # mask-indexed sqrt: entries at/below zero never enter a sqrt node, so no
    # inf sqrt-backward can poison the unselected candidates' gradients
    q_abs = torch.zeros_like(q_abs_sq)
    positive = q_abs_sq > 0
    q_abs[positive] = torch.sqrt(q_abs_sq[positive])
    # rows: candidate quaternions scaled by 2*q_abs[i]
    cand = torch.stack(
        (
            torch.stack((q_abs_sq[..., 0], m21 - m12, m02 - m20, m10 - m01), dim=-1),
            torch.stack((m21 - m12, q_abs_sq[..., 1], m10 + m01, m02 + m20), dim=-1),
            torch.stack((m02 - m20, m10 + m01, q_abs_sq[..., 2], m12 + m21), dim=-1),
            torch.stack((m10 - m01, m02 + m20, m12 + m21, q_abs_sq[..., 3]), dim=-1),
        ),
        dim=-2,
    )
    # clamp keeps the three unselected rows finite; selection ignores them
    denom = 2.0 * torch.clamp(q_abs[..., None], min=0.1)
    cand = cand / denom
    best = q_abs.argmax(dim=-1)
    quat = torch.gather(
        cand, -2, best[..., None, None].expand(batch + (1, 4))
    ).squeeze(-2)
    sign = torch.where(quat[..., :1] < 0, -torch.ones_like(quat[..., :1]), torch.ones_like(quat[..., :1]))
    return quat * sign / quat.norm(dim=-1, keepdim=True)


def matrix_to_axis_angle(m, tol=1e-4):
    """(..., 3, 3) -> (..., 3) canonical axis-angle (angle in [0, pi]).

    Matrices failing orthonormality beyond ``tol`` are rejected (this signals
    an upstream decoding bug, not a recoverable condition). At angle pi the
    axis sign ambiguity is resolved by the quaternion extraction, which keeps
    the largest-magnitude axis component positive.
    """
    check_rotation_matrix(m, tol=tol)
    q = _matrix_to_quaternion(m)
    xyz = q[..., 1:]
    norm = xyz.norm(dim=-1, keepdim=True)
    angle = 2.0 * torch.atan2(norm, q[..., :1])
    # aa = xyz * angle / sin(angle/2); expand the ratio near zero
    half = 0.5 * angle
    scale = torch.empty_like(angle)
    small = (angle < _TAYLOR_ANGLE).squeeze(-1)
    big = ~small
    if big.any():
        scale[big] = angle[big] / torch.sin(half[big])
    if small.any():
        # angle/sin(angle/2) = 2 + angle^2/12 + O(angle^4)
        scale[small] = 2.0 + angle[small] * angle[small] / 12.0
    return xyz * scale


def sixd_to_matrix(v, eps=1e-8):
    """Decode (..., 6) -> (..., 3, 3) by Gram-Schmidt on the two 3-vectors.

    Raises ValueError when the first vector is (numerically) zero or the
    second is parallel to the first; degenerate network output must surface,
    never silently become NaN.
    """
    if v.shape[-1] != 6:
        raise ValueError(f"expected (..., 6), got {tuple(v.shape)}")
    a1, a2 = v[..., :3], v[..., 3:]
    n1 = a1.norm(dim=-1, keepdim=True)
    if (n1 <= eps).any():
        raise ValueError("degenerate 6D rotation: first column vector is zero")
    b1 = a1 / n1
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    n2 = u2.norm(dim=-1, keepdim=True)
    if (n2 <= eps).any():
        raise ValueError("degenerate 6D rotation: column vectors are parallel")
    b2 = u2 / n2
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack((b1, b2, b3), dim=-1)


def matrix_to_sixd(m):
    """Take the first two columns of (..., 3, 3), flattened to (..., 6)."""
    return m[..., :, :2].transpose(-1, -2).reshape(m.shape[:-2] + (6,))


IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def project_to_rotation(m):
    """Orthogonally project (..., 3, 3) onto SO(3) via SVD (nearest rotation,
    reflection corrected). Used when averaging rotation matrices."""
    u, _, vh = torch.linalg.svd(m)
    det = torch.linalg.det(u @ vh)
    d = torch.ones_like(det)
    corr = torch.diag_embed(torch.stack((d, d, det), dim=-1))
    return u @ corr @ vh
