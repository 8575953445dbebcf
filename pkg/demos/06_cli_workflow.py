"""Drive the whole command line workflow in a temporary directory.

Mirrors what a shell session would do with the `stiffonet` executable:

    stiffonet gen-model --config run.json
    stiffonet gen-data  --config run.json
    stiffonet train     --config run.json --out run/train
    stiffonet eval      --config run.json --out run/eval
    stiffonet study     --config run.json --out run/study

Every step reads the same config file; sizes here are tiny so the demo
finishes in under a minute.
"""

import json
import os
import tempfile

from stiffonet.cli import main as cli


def run(argv):
    rc = cli(argv)
    assert rc == 0, f"command failed: {argv}"


def main():
    with tempfile.TemporaryDirectory() as tmp:
        config = {
            "out": os.path.join(tmp, "model"),
            "dataset": {
                "seed": 5,
                "per_scenario": 20,
                "ratio": 0.8,
                "schur_nodes": [1, 4, 7, 10, 13, 16, 19, 26, 36],
            },
            "network": {"strategy": "split", "branch": [21, 24, 24, 24], "trunk": [2, 24, 24, 24]},
            "loss": {"kind": "dd+ses", "phys_scale": True},
            "train": {"dataset": "data", "epochs": 300, "batch_size": 8, "seed": 0},
            "eval": {"dataset": "data", "surrogate": "train"},
            "study": {"dataset": "data", "sweep": "batch", "values": [4, 16, 48], "epochs": 20},
        }
        cfg = os.path.join(tmp, "run.json")
        with open(cfg, "w") as fh:
            json.dump(config, fh, indent=1)

        run(["gen-model", "--config", cfg])
        run(["gen-data", "--config", cfg, "--out", os.path.join(tmp, "data")])
        run(["train", "--config", cfg, "--out", os.path.join(tmp, "train")])
        run(["eval", "--config", cfg, "--out", os.path.join(tmp, "eval")])
        run(["study", "--config", cfg, "--out", os.path.join(tmp, "study")])

        stats = json.load(open(os.path.join(tmp, "eval", "stats.json")))
        print("\neval summary (mean (min~max) percent):")
        for var in ("u_x", "u_y", "r_z"):
            print(f"  {var}: {stats[var]['summary']}")
        print(f"\nartifacts under {tmp}:")
        for root, _, files in os.walk(tmp):
            for name in sorted(files):
                rel = os.path.relpath(os.path.join(root, name), tmp)
                print(f"  {rel}")


if __name__ == "__main__":
    main()
