"""Train a small data-driven surrogate and watch the loss fall.

Uses a deliberately reduced network and dataset so the run finishes in
seconds; the full-size preset used for the real experiments is
"split-2d" (width 48, six layers).
"""

import numpy as np

from stiffonet import data, fem
from stiffonet.deeponet import DeepONetSpec, MlpSpec
from stiffonet.training import LossSpec, TrainConfig, train


def main():
    model = fem.build_lattice()
    ds = data.make_dataset(model, seed=1, per_scenario=30)
    data.split(ds, ratio=0.8, seed=1)
    ds.scalers = data.fit_scalers(ds.branch, ds.targets, ds.train_indices)

    specs = [
        DeepONetSpec(
            branch=MlpSpec((21, 24, 24, 24)),
            trunk=MlpSpec((2, 24, 24, 24)),
            n_outputs=3,
        )
    ]
    config = TrainConfig(epochs=400, batch_size=8, seed=0, loss=LossSpec("dd"))
    surrogate, report = train(config, ds, specs=specs)

    print(f"{config.epochs} epochs x {report.steps_per_epoch} steps")
    for epoch in (0, 99, 199, 299, 399):
        print(
            f"  epoch {epoch + 1:3d}: train {report.train_loss[epoch]:.4f}  "
            f"test {report.test_loss[epoch]:.4f}"
        )
    print(f"best test loss {report.best_test_loss:.4f} at epoch {report.best_epoch + 1}")

    # predict one held-out sample and compare midspan deflection
    i = int(ds.test_indices[0])
    from stiffonet.evaluate import predict_field

    pred = predict_field(surrogate, ds.branch[i], model)
    truth = ds.targets[i]
    print(
        f"held-out sample {i} midspan u_y: "
        f"pred {pred[10, 1] * 1000:.3f} mm vs true {truth[10, 1] * 1000:.3f} mm"
    )


if __name__ == "__main__":
    main()
