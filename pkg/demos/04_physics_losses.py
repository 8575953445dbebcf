"""Compare the three loss formulations on one shared dataset.

dd       data only, full field
dd+ec    data plus the energy-conservation residual |U'KU - U'F|
dd+ses   data plus static equilibrium of the condensed system, trained
         on nine picked nodes only and completed by static recovery

The physics terms are rescaled by their epoch-0 magnitude so neither
term drowns the other.  At this deliberately small width the full-field
runs struggle with the rotation field, while dd+ses is both the
cheapest per epoch and the most accurate: it learns nine nodes instead
of 56 and the recovery step enforces equilibrium exactly everywhere
else.  The energy term pays off at full scale (width-48 preset, larger
dataset); the acceptance tests run that comparison.
"""

import numpy as np

from stiffonet import data, fem
from stiffonet.deeponet import DeepONetSpec, MlpSpec
from stiffonet.evaluate import error_stats, predict_dataset
from stiffonet.training import LossSpec, TrainConfig, train


def main():
    model = fem.build_lattice()
    ds = data.make_dataset(model, seed=3, per_scenario=60)
    data.split(ds, ratio=0.8, seed=3)
    ds.scalers = data.fit_scalers(ds.branch, ds.targets, ds.train_indices)

    specs = [
        DeepONetSpec(
            branch=MlpSpec((21, 24, 24, 24, 24)),
            trunk=MlpSpec((2, 24, 24, 24, 24)),
            n_outputs=3,
        )
    ]
    print(f"{ds.n_samples} samples, {len(ds.train_indices)} train")
    print(f"{'loss':8s} {'u_x %':>8s} {'u_y %':>8s} {'r_z %':>8s} {'ms/epoch':>9s}")
    for kind in ("dd", "dd+ec", "dd+ses"):
        loss = LossSpec(kind) if kind == "dd" else LossSpec(kind, phys_scale=True)
        config = TrainConfig(epochs=800, batch_size=10, seed=0, loss=loss)
        surrogate, report = train(config, ds, specs=specs)
        pred = predict_dataset(surrogate, ds, ds.test_indices)
        stats = error_stats(pred, ds.targets[ds.test_indices])
        per_epoch = 1000.0 * float(np.mean(report.epoch_seconds))
        print(
            f"{kind:8s} {stats.mean[0]:8.3f} {stats.mean[1]:8.3f} "
            f"{stats.mean[2]:8.3f} {per_epoch:9.2f}"
        )


if __name__ == "__main__":
    main()
