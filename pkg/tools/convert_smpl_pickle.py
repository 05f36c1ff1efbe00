"""Convert an official SMPL pickle (basicModel_*.pkl) into a body container.

Usage: python tools/convert_smpl_pickle.py SMPL_NEUTRAL.pkl body.arc

The pickle holds chumpy arrays and (in some releases) a scipy-sparse joint
regressor; everything is densified to plain float64/int64 numpy arrays and
written through save_body_model, which validates the invariants (regressor
and skinning rows summing to one, topologically ordered parents).
"""

import argparse
import pickle

import numpy as np


def pack_smpl_arrays(raw):
    """Map the official pickle keys onto BodyModel field arrays.

    Accepts chumpy arrays, scipy sparse matrices or plain ndarrays. The
    shape basis is truncated to the first 10 coefficients; parents come from
    row 0 of kintree_table with the root forced to -1.
    """

    def dense(x):
        if hasattr(x, "toarray"):
            return np.asarray(x.toarray(), dtype=np.float64)
        return np.asarray(np.array(x), dtype=np.float64)

    parents = np.asarray(np.array(raw["kintree_table"]), dtype=np.int64)[0].copy()
    parents[0] = -1
    return {
        "template_vertices": dense(raw["v_template"]),
        "shape_dirs": dense(raw["shapedirs"])[:, :, :10],
        "pose_dirs": dense(raw["posedirs"]),
        "joint_regressor": dense(raw["J_regressor"]),
        "skin_weights": dense(raw["weights"]),
        "parents": parents,
        "faces": np.asarray(np.array(raw["f"]), dtype=np.int64),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("pickle_path")
    parser.add_argument("out_path")
    args = parser.parse_args()

    with open(args.pickle_path, "rb") as f:
        raw = pickle.load(f, encoding="latin1")
    arrays = pack_smpl_arrays(raw)

    from lidarcap.smpl_body import BodyModel, save_body_model

    model = BodyModel(**arrays)
    save_body_model(args.out_path, model)
    print(f"wrote {args.out_path}: {arrays['template_vertices'].shape[0]} vertices, "
          f"{arrays['faces'].shape[0]} faces")


if __name__ == "__main__":
    main()
