"""Generate a small dataset, split it, and round-trip it through disk.

Each sample is one distributed-load case: the branch input holds the 21
bottom-chord intensities (kN/m), the target holds the solved nodal
fields (m, m, rad).  The split is stratified per load scenario and the
written manifest carries a digest of the frame model for provenance.
"""

import json
import os
import tempfile

import numpy as np

from stiffonet import data, fem


def main():
    model = fem.build_lattice()
    ds = data.make_dataset(model, seed=42, per_scenario=20)
    data.split(ds, ratio=0.8, seed=42)
    ds.scalers = data.fit_scalers(ds.branch, ds.targets, ds.train_indices)

    print(f"samples: {ds.n_samples} ({', '.join(ds.scenarios[:3])} ...)")
    print(f"branch block: {ds.branch.shape}, targets: {ds.targets.shape}")
    print(f"split: {len(ds.train_indices)} train / {len(ds.test_indices)} test")
    print(f"intensity range in branch: [{ds.branch.max(initial=0):.2f}] kN/m max")
    print(f"output std per variable: {np.array2string(ds.scalers.output_std, precision=3)}")

    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "demo_data")
        manifest_path = data.save_dataset(ds, out)
        with open(manifest_path) as fh:
            digest = json.load(fh)["model"]["sha256"]
        back = data.load_dataset(out)
        same = np.array_equal(back.targets, ds.targets)
        print(f"saved to {out}")
        print(f"model digest: {digest[:16]}...  reload bit-exact: {same}")


if __name__ == "__main__":
    main()
