"""Binary frame and motion file formats.

PTC1 (one point cloud frame):
    magic  b"PTC1"
    count  uint32 little-endian, N
    data   N x 3 float32 little-endian (x, y, z meters, sensor frame)

MOT1 (one motion sequence):
    magic  b"MOT1"
    count  uint32 little-endian, F
    theta  F x 72 float32 little-endian (24 axis-angle joint rotations)
    trans  F x 3 float32 little-endian (root translation, meters)
"""

import struct

import numpy as np

PTC_MAGIC = b"PTC1"
MOT_MAGIC = b"MOT1"


class DataFormatError(Exception):
    category = "format"


def write_ptc(path, points):
    points = np.ascontiguousarray(points, dtype="<f4")
    if points.ndim != 2 or points.shape[1] != 3:
        raise DataFormatError(f"points must be (N, 3), got {points.shape}")
    if points.shape[0] == 0:
        raise DataFormatError("refusing to write an empty frame (N = 0)")
    if not np.isfinite(points).all():
        raise DataFormatError("points contain non-finite values")
    with open(path, "wb") as f:
        f.write(PTC_MAGIC)
        f.write(struct.pack("<I", points.shape[0]))
        f.write(points.tobytes())


def read_ptc(path):
    """Read one PTC1 frame -> (N, 3) float32. Empty frames (N = 0) are rejected."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != PTC_MAGIC:
        raise DataFormatError(f"{path}: bad magic {data[:4]!r}, expected {PTC_MAGIC!r}")
    if len(data) < 8:
        raise DataFormatError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", data[4:8])
    if n == 0:
        raise DataFormatError(f"{path}: empty frame (N = 0)")
    expected = 8 + n * 12
    if len(data) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes for N={n}, got {len(data)}")
    points = np.frombuffer(data, dtype="<f4", offset=8).reshape(n, 3).copy()
    if not np.isfinite(points).all():
        raise DataFormatError(f"{path}: non-finite point coordinates")
    return points


def write_mot(path, theta, translation):
    theta = np.ascontiguousarray(theta, dtype="<f4")
    translation = np.ascontiguousarray(translation, dtype="<f4")
    if theta.ndim != 2 or theta.shape[1] != 72:
        raise DataFormatError(f"theta must be (F, 72), got {theta.shape}")
    if translation.shape != (theta.shape[0], 3):
        raise DataFormatError(
            f"translation must be ({theta.shape[0]}, 3), got {translation.shape}"
        )
    if not (np.isfinite(theta).all() and np.isfinite(translation).all()):
        raise DataFormatError("motion contains non-finite values")
    with open(path, "wb") as f:
        f.write(MOT_MAGIC)
        f.write(struct.pack("<I", theta.shape[0]))
        f.write(theta.tobytes())
        f.write(translation.tobytes())


def read_mot(path):
    """Read one MOT1 file -> (theta (F, 72) float32, translation (F, 3) float32)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MOT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {data[:4]!r}, expected {MOT_MAGIC!r}")
    if len(data) < 8:
        raise DataFormatError(f"{path}: truncated header")
    (f_count,) = struct.unpack("<I", data[4:8])
    expected = 8 + f_count * (72 + 3) * 4
    if len(data) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes for F={f_count}, got {len(data)}")
    theta = np.frombuffer(data, dtype="<f4", offset=8, count=f_count * 72).reshape(f_count, 72).copy()
    translation = (
        np.frombuffer(data, dtype="<f4", offset=8 + f_count * 288, count=f_count * 3)
        .reshape(f_count, 3)
        .copy()
    )
    if not (np.isfinite(theta).all() and np.isfinite(translation).all()):
        raise DataFormatError(f"{path}: non-finite motion values")
    return theta, translation
