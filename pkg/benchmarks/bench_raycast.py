"""Time the ray-cast kernel's numba and numpy paths on a realistic scene.

Usage: python benchmarks/bench_raycast.py [--distance 12] [--repeats 5]

Builds the synthetic body at the given range, casts the sensor's angular grid
against it with both implementations and reports per-scan wall time. The
numpy path is what you get with LIDARCAP_DISABLE_NUMBA=1.
"""

import argparse
import os
import statistics
import time

import numpy as np
import torch

from lidarcap import smpl_body
from lidarcap.seqdata import raycast


def build_scene(distance):
    model = smpl_body.synthetic_body_model(seed=0)
    out = smpl_body.forward(model, torch.zeros(72, dtype=torch.float64))
    verts = out.vertices.numpy() + np.array([distance, 0.0, 1.0])
    origin = np.array([0.0, 0.0, 2.0])
    az_step, el_step = np.radians(0.2), np.radians(0.35)
    dirs = raycast.angular_grid(verts, origin, az_step, el_step)
    return origin, dirs, verts, model.faces


def time_path(origin, dirs, verts, faces, repeats):
    raycast.cast_first_hits(origin, dirs, verts, faces)  # warmup (jit compile / cache touch)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        t = raycast.cast_first_hits(origin, dirs, verts, faces)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), t


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--distance", type=float, default=12.0, help="subject range in meters")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    origin, dirs, verts, faces = build_scene(args.distance)
    print(f"scene: {len(dirs)} rays x {len(faces)} triangles, subject at {args.distance:g} m")

    results = {}
    hits = {}
    for label, disable in (("numba", "0"), ("numpy", "1")):
        os.environ["LIDARCAP_DISABLE_NUMBA"] = disable
        if label == "numba" and not raycast.numba_enabled():
            print("numba unavailable; skipping the compiled path")
            continue
        median, t = time_path(origin, dirs, verts, faces, args.repeats)
        results[label] = median
        hits[label] = np.isfinite(t)
        print(f"{label:6s} {median * 1e3:8.2f} ms/scan   {int(hits[label].sum())} hits")

    if len(results) == 2:
        same = np.array_equal(hits["numba"], hits["numpy"])
        print(f"speedup: {results['numpy'] / results['numba']:.1f}x, identical hit masks: {same}")
    os.environ.pop("LIDARCAP_DISABLE_NUMBA", None)


if __name__ == "__main__":
    main()
