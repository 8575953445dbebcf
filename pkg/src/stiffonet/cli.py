"""Command line front end for the full workflow.

Five subcommands: gen-model, gen-data, train, eval, study.  Each run is
driven by one JSON config file whose text is echoed into the output
directory for provenance.  Relative paths inside the config resolve
against the config file's directory.  Exit codes: 0 success, 1
numerical failure, 2 usage or config errors.  STIFFONET_THREADS caps
BLAS worker threads (default 1, for reproducible runs).
"""

import argparse
import json
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import data, fem
from .deeponet import PRESETS, DeepONetSpec, MlpSpec, load_surrogate
from .evaluate import evaluate_surrogate
from .linalg import (
    NotPositiveDefiniteError,
    Partition,
    SingularMatrixError,
    schur_reduce,
)
from .training import (
    LossSpec,
    TrainConfig,
    TrainingDivergedError,
    _thread_cap,
    train,
)


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


NUMERICAL_ERRORS = (
    TrainingDivergedError,
    SingularMatrixError,
    NotPositiveDefiniteError,
    np.linalg.LinAlgError,
    FloatingPointError,
)

TOP_KEYS = {"out", "model", "dataset", "network", "loss", "train", "eval", "study"}

SWEEP_DEFAULTS = {
    "neurons": [6, 12, 18, 24, 30, 36, 42, 48],
    "layers": [2, 3, 4, 5, 6, 7, 8],
    "aspect": [
        [24, 10], [20, 12], [16, 15], [12, 20], [8, 30],
        [6, 40], [5, 48], [4, 60], [3, 80],
    ],
    "batch": [4, 8, 16, 20, 32, 64],
}


def _check_keys(doc, allowed, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where}: {unknown}")


def load_config(path):
    """Parse the run config; returns (doc, raw text, base dir)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    _check_keys(doc, TOP_KEYS, "top level")
    return doc, text, os.path.dirname(os.path.abspath(path))


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.join(base, path)


def _echo_config(out_dir, text):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(text)


def _out_dir(args, doc, base):
    out = args.out or doc.get("out")
    if not out:
        raise ConfigError("no output directory: pass --out or set \"out\"")
    return _resolve(base, out)


# --------------------------------------------------------------------------
# config section builders


def _build_material(doc):
    allowed = {
        "youngs_modulus", "poisson_ratio", "density",
        "width", "height", "shear_correction",
    }
    _check_keys(doc, allowed, "model.material")
    base = fem.steel_rect_section()
    fields = {k: getattr(base, k) for k in allowed}
    fields.update(doc)
    try:
        return fem.MaterialSection(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.material: {exc}") from exc


def _build_model(doc):
    _check_keys(doc, {"span", "height", "material"}, "model")
    material = _build_material(doc.get("material", {}))
    try:
        return fem.build_lattice(
            span=float(doc.get("span", 20.0)),
            height=float(doc.get("height", 5.0)),
            material=material,
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _build_loss(doc):
    _check_keys(doc, {"kind", "weight_dd", "weight_phys", "phys_scale"}, "loss")
    try:
        return LossSpec(
            kind=doc.get("kind", "dd"),
            weight_dd=float(doc.get("weight_dd", 1.0)),
            weight_phys=float(doc.get("weight_phys", 1.0)),
            phys_scale=bool(doc.get("phys_scale", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"loss: {exc}") from exc


def _build_specs(doc):
    """Network section -> (specs or None, preset name)."""
    _check_keys(doc, {"preset", "strategy", "branch", "trunk", "n_outputs"}, "network")
    if "preset" in doc:
        if len(doc) > 1:
            raise ConfigError("network: give either a preset or an explicit spec")
        name = doc["preset"]
        if name not in PRESETS:
            raise ConfigError(f"network: unknown preset {name!r}")
        return None, name
    try:
        strategy = doc.get("strategy", "split")
        branch = tuple(int(v) for v in doc["branch"])
        trunk = tuple(int(v) for v in doc["trunk"])
        n_outputs = int(doc.get("n_outputs", 3))
    except KeyError as exc:
        raise ConfigError(f"network: missing key {exc}") from exc
    try:
        if strategy == "split":
            specs = [
                DeepONetSpec(
                    branch=MlpSpec(branch), trunk=MlpSpec(trunk),
                    n_outputs=n_outputs,
                )
            ]
        else:
            member = DeepONetSpec(
                branch=MlpSpec(branch), trunk=MlpSpec(trunk),
                n_outputs=1, strategy="independent",
            )
            specs = [member] * n_outputs
    except ValueError as exc:
        raise ConfigError(f"network: {exc}") from exc
    return specs, "custom"


def _build_train_config(doc, loss, preset, seed_override):
    allowed = {"dataset", "epochs", "batch_size", "seed", "lr", "picked_nodes"}
    _check_keys(doc, allowed, "train")
    try:
        return TrainConfig(
            epochs=int(doc.get("epochs", 100)),
            batch_size=int(doc.get("batch_size", 20)),
            seed=int(seed_override if seed_override is not None else doc.get("seed", 0)),
            lr=float(doc.get("lr", 0.001)),
            loss=loss,
            preset=preset,
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc


def _load_split_dataset(path):
    ds = data.load_dataset(path)
    if ds.split_info is None or ds.scalers is None:
        raise ConfigError(
            f"dataset at {path} has no split/scalers; regenerate with a ratio"
        )
    return ds


# --------------------------------------------------------------------------
# commands


def cmd_gen_model(doc, args, base, text):
    out = _out_dir(args, doc, base)
    model = _build_model(doc.get("model", {}))
    _echo_config(out, text)
    path = os.path.join(out, "model.json")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(fem.model_to_json(model))
    print(f"model: {model.n_nodes} nodes, {len(model.elements)} elements -> {path}")
    return 0


def cmd_gen_data(doc, args, base, text):
    out = _out_dir(args, doc, base)
    sec = doc.get("dataset", {})
    allowed = {
        "model", "seed", "per_scenario", "ratio", "split_seed",
        "uvl_direction", "schur_nodes",
    }
    _check_keys(sec, allowed, "dataset")
    if "model" in sec:
        with open(_resolve(base, sec["model"]), "r", encoding="ascii") as fh:
            model = fem.model_from_json(fh.read())
    else:
        model = _build_model(doc.get("model", {}))
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    per_scenario = int(sec.get("per_scenario", 1016))
    try:
        ds = data.make_dataset(
            model, seed=seed, per_scenario=per_scenario,
            uvl_direction=sec.get("uvl_direction", "left"),
        )
        if "ratio" in sec:
            data.split(ds, float(sec["ratio"]), int(sec.get("split_seed", seed)))
            ds.scalers = data.fit_scalers(ds.branch, ds.targets, ds.train_indices)
        if "schur_nodes" in sec:
            picked = sorted(set(int(n) for n in sec["schur_nodes"]))
            system = fem.assemble(model)
            part = Partition.from_picked(
                system.free_positions(picked), system.free.size
            )
            data.attach_reduced_forces(ds, schur_reduce(system.k_free(), part), picked)
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from exc
    _echo_config(out, text)
    manifest_path = data.save_dataset(ds, out)
    with open(manifest_path, "r", encoding="ascii") as fh:
        digest = json.load(fh)["model"]["sha256"]
    print(f"dataset: {ds.n_samples} samples -> {out} (model digest {digest[:12]})")
    return 0


def cmd_train(doc, args, base, text):
    out = _out_dir(args, doc, base)
    sec = doc.get("train", {})
    if "dataset" not in sec:
        raise ConfigError("train.dataset is required")
    ds = _load_split_dataset(_resolve(base, sec["dataset"]))
    loss = _build_loss(doc.get("loss", {}))
    specs, preset = _build_specs(doc.get("network", {"preset": "split-2d"}))
    config = _build_train_config(sec, loss, preset, args.seed)
    _echo_config(out, text)
    model, report = train(
        config, ds, out_dir=out, specs=specs,
        picked_nodes=sec.get("picked_nodes"),
    )
    print(
        f"trained {loss.kind} for {config.epochs} epochs: "
        f"final test {report.test_loss[-1]:.6f}, "
        f"best {report.best_test_loss:.6f} at epoch {report.best_epoch}"
    )
    return 0


def cmd_eval(doc, args, base, text):
    out = _out_dir(args, doc, base)
    sec = doc.get("eval", {})
    _check_keys(sec, {"dataset", "surrogate", "sample"}, "eval")
    for key in ("dataset", "surrogate"):
        if key not in sec:
            raise ConfigError(f"eval.{key} is required")
    ds = _load_split_dataset(_resolve(base, sec["dataset"]))
    model = load_surrogate(_resolve(base, sec["surrogate"]))
    _echo_config(out, text)
    stats = evaluate_surrogate(model, ds, out_dir=out, export_sample=sec.get("sample"))
    for name, entry in stats.to_dict().items():
        if isinstance(entry, dict):
            print(f"{name}: {entry['summary']} %")
    return 0


def _sweep_specs(sweep, value):
    """Network for one sweep point of the parametric study."""
    if sweep == "neurons":
        width = int(value)
        if width % 3:
            raise ConfigError(f"study: neurons value {width} not divisible by 3")
        branch, trunk = (21,) + (width,) * 6, (2,) + (width,) * 6
    elif sweep == "layers":
        n = int(value)
        branch, trunk = (21,) + (48,) * n, (2,) + (48,) * n
    elif sweep == "aspect":
        n, width = int(value[0]), int(value[1])
        # inner layers take the sweep width; output stays at 48 so the
        # three-way split remains possible
        branch = (21,) + (width,) * (n - 1) + (48,)
        trunk = (2,) + (width,) * (n - 1) + (48,)
    else:
        spec = PRESETS["split-2d"]
        branch, trunk = spec["branch"], spec["trunk"]
    try:
        return [
            DeepONetSpec(branch=MlpSpec(branch), trunk=MlpSpec(trunk), n_outputs=3)
        ]
    except ValueError as exc:
        raise ConfigError(f"study: {exc}") from exc


def _format_value(sweep, value):
    if sweep == "aspect":
        return f"{int(value[0])}x{int(value[1])}"
    return str(int(value))


def cmd_study(doc, args, base, text):
    out = _out_dir(args, doc, base)
    sec = doc.get("study", {})
    allowed = {"dataset", "sweep", "values", "epochs", "batch_size", "seed", "lr"}
    _check_keys(sec, allowed, "study")
    if "dataset" not in sec:
        raise ConfigError("study.dataset is required")
    sweep = sec.get("sweep", "batch")
    if sweep not in SWEEP_DEFAULTS:
        raise ConfigError(f"study: unknown sweep {sweep!r}")
    values = sec.get("values", SWEEP_DEFAULTS[sweep])
    # one dataset for every sweep point, so rows differ only by architecture
    ds = _load_split_dataset(_resolve(base, sec["dataset"]))
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    epochs = int(sec.get("epochs", 100))
    base_batch = int(sec.get("batch_size", 20))
    lr = float(sec.get("lr", 0.001))

    _echo_config(out, text)
    rows = []
    for value in values:
        specs = _sweep_specs(sweep, value)
        batch = int(value) if sweep == "batch" else base_batch
        config = TrainConfig(
            epochs=epochs, batch_size=batch, seed=seed, lr=lr, loss=LossSpec("dd")
        )
        _, report = train(config, ds, specs=specs)
        per_1000 = 1000.0 * float(np.mean(report.epoch_seconds))
        rows.append(
            (
                sweep,
                _format_value(sweep, value),
                "-".join(str(s) for s in specs[0].branch.layer_sizes),
                "-".join(str(s) for s in specs[0].trunk.layer_sizes),
                batch,
                epochs,
                report.test_loss[-1],
                report.best_test_loss,
                per_1000,
            )
        )
        print(
            f"study {sweep}={rows[-1][1]}: final test {rows[-1][6]:.6f}, "
            f"{per_1000:.2f} s / 1000 epochs"
        )
    path = os.path.join(out, "study.csv")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(
            "sweep,value,branch,trunk,batch_size,epochs,"
            "final_test_loss,best_test_loss,seconds_per_1000_epochs\n"
        )
        for row in rows:
            fh.write(
                f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]},{row[5]},"
                f"{row[6]:.12e},{row[7]:.12e},{row[8]:.6e}\n"
            )
    print(f"study: {len(rows)} rows -> {path}")
    return 0


COMMANDS = {
    "gen-model": cmd_gen_model,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "study": cmd_study,
}


def _parser():
    parser = argparse.ArgumentParser(
        prog="stiffonet",
        description="FE lattice surrogates: data generation, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        doc, text, base = load_config(args.config)
        with threadpool_limits(limits=_thread_cap()):
            return COMMANDS[args.command](doc, args, base, text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
