"""First-hit ray casting of a sensor's angular grid against a triangle mesh.

This is the synthetic generator's hot kernel. Two interchangeable
implementations exist: a numba-compiled loop (default when numba imports) and
a pure-numpy fallback. Set ``LIDARCAP_DISABLE_NUMBA=1`` to force the numpy
path; both produce identical results (same operation order per triangle).
``benchmarks/bench_raycast.py`` times the two side by side.

Rays are Moller-Trumbore tested against every triangle; the smallest positive
hit distance wins, so self-occlusion falls out naturally. The angular grid is
anchored at absolute multiples of the step (a real scanner's beam directions
do not track the subject), spanning the mesh's angular bounding box plus one
step of margin.
"""

import os

import numpy as np

_DET_EPS = 1e-12
_T_MIN = 1e-9

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    _HAVE_NUMBA = False


class RaycastError(Exception):
    category = "raycast"


def numba_enabled():
    return _HAVE_NUMBA and os.environ.get("LIDARCAP_DISABLE_NUMBA", "0") not in ("1", "true")


def angular_grid(verts, origin, az_step, el_step, margin=1):
    """Ray directions (R, 3) covering the mesh seen from origin.

    az_step/el_step in radians. Azimuth = atan2(y, x), elevation =
    atan2(z, hypot(x, y)); grid angles are integer multiples of the steps.
    """
    if az_step <= 0 or el_step <= 0:
        raise RaycastError("angular steps must be positive")
    rel = np.asarray(verts, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    az = np.arctan2(rel[:, 1], rel[:, 0])
    el = np.arctan2(rel[:, 2], np.hypot(rel[:, 0], rel[:, 1]))
    if az.max() - az.min() > np.pi:
        raise RaycastError("mesh spans the azimuth seam; place the subject away from +-pi")
    az_idx = np.arange(
        int(np.ceil(az.min() / az_step)) - margin, int(np.floor(az.max() / az_step)) + margin + 1
    )
    el_idx = np.arange(
        int(np.ceil(el.min() / el_step)) - margin, int(np.floor(el.max() / el_step)) + margin + 1
    )
    az_grid = az_idx[:, None] * az_step + np.zeros_like(el_idx[None, :], dtype=np.float64)
    el_grid = el_idx[None, :] * el_step + np.zeros_like(az_idx[:, None], dtype=np.float64)
    az_flat = az_grid.ravel()
    el_flat = el_grid.ravel()
    dirs = np.stack(
        (np.cos(el_flat) * np.cos(az_flat), np.cos(el_flat) * np.sin(az_flat), np.sin(el_flat)),
        axis=1,
    )
    return dirs


def _first_hits_numpy(dirs, origin, v0, e1, e2, chunk=256):
    n_rays = dirs.shape[0]
    tvec = origin[None, :] - v0  # (F, 3)
    # q = tvec x e1 is ray-independent; precompute
    q = np.cross(tvec, e1)
    e2q = (e2 * q).sum(axis=1)  # (F,)
    out = np.full(n_rays, np.inf)
    for lo in range(0, n_rays, chunk):
        d = dirs[lo : lo + chunk]  # (c, 3)
        p = np.cross(d[:, None, :], e2[None, :, :])  # (c, F, 3)
        det = (p * e1[None, :, :]).sum(axis=2)
        ok = np.abs(det) >= _DET_EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = (p * tvec[None, :, :]).sum(axis=2) * inv
        v = (d @ q.T) * inv
        t = e2q[None, :] * inv
        valid = ok & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > _T_MIN)
        t = np.where(valid, t, np.inf)
        out[lo : lo + chunk] = t.min(axis=1)
    return out


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _first_hits_numba(dirs, origin, v0, e1, e2):  # pragma: no cover - compiled
        n_rays = dirs.shape[0]
        n_tri = v0.shape[0]
        out = np.full(n_rays, np.inf)
        for r in range(n_rays):
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            best = np.inf
            for f in range(n_tri):
                e2x, e2y, e2z = e2[f, 0], e2[f, 1], e2[f, 2]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1[f, 0] * px + e1[f, 1] * py + e1[f, 2] * pz
                if abs(det) < _DET_EPS:
                    continue
                inv = 1.0 / det
                tvx = origin[0] - v0[f, 0]
                tvy = origin[1] - v0[f, 1]
                tvz = origin[2] - v0[f, 2]
                u = (tvx * px + tvy * py + tvz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = tvy * e1[f, 2] - tvz * e1[f, 1]
                qy = tvz * e1[f, 0] - tvx * e1[f, 2]
                qz = tvx * e1[f, 1] - tvy * e1[f, 0]
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if _T_MIN < t < best:
                    best = t
            out[r] = best
        return out


def cast_first_hits(origin, dirs, verts, faces):
    """Distance to the first triangle hit along each ray, inf for misses.

    origin (3,), dirs (R, 3) unit vectors, verts (V, 3), faces (F, 3) int.
    """
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0:
        raise RaycastError("mesh has no faces")
    v0 = np.ascontiguousarray(verts[faces[:, 0]])
    e1 = np.ascontiguousarray(verts[faces[:, 1]] - v0)
    e2 = np.ascontiguousarray(verts[faces[:, 2]] - v0)
    if numba_enabled():
        return _first_hits_numba(dirs, origin, v0, e1, e2)
    return _first_hits_numpy(dirs, origin, v0, e1, e2)


def scan_mesh(origin, verts, faces, az_step, el_step):
    """Scan a mesh from origin over the angular grid. Returns, for the rays
    that hit: (points (N, 3), distances (N,), directions (N, 3))."""
    dirs = angular_grid(verts, origin, az_step, el_step)
    t = cast_first_hits(origin, dirs, verts, faces)
    hit = np.isfinite(t)
    points = np.asarray(origin, dtype=np.float64)[None, :] + dirs[hit] * t[hit, None]
    return points, t[hit], dirs[hit]
