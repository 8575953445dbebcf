"""Dataset generation, normalization, splits, and the on-disk format.

A dataset is the FEM ground truth for a batch of random load cases:

* branch:  (n, 21)    raw line-load intensity (kN/m) at bottom-chord nodes
* trunk:   (56, 2)    node coordinates normalized to [0,1] by span/height
* targets: (n, 56, 3) displacements (u_x, u_y in m; r_z in rad), raw SI
* forces:  (n, 165)   support-reduced consistent force vectors (N, N*m)
* fc:      (n, |I|)   Schur-reduced forces, present when a reduction
                      was attached

On disk that is a `manifest.json` plus one raw little-endian float64
blob per array (row-major, no header; shapes live in the manifest), and
the frame geometry as `model.json`.  Writing then reading reproduces
every array bit-exactly.

Normalization policy: branch inputs divide by the global max-abs of the
training split; outputs are z-scored per variable with population
statistics pooled over training samples and nodes.  Scalers are fit on
the training split only; losses and reported errors always apply to
de-normalized physical values.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import fem
from .fem import DOF_NAMES, INTENSITY_MAX, INTENSITY_MIN, SCENARIOS
from .linalg import SchurSystem, reduce_force

__all__ = [
    "Scalers",
    "Dataset",
    "clamp_intensity",
    "sample_intensities",
    "sample_cases",
    "generate",
    "make_dataset",
    "trunk_coordinates",
    "stratified_split",
    "split",
    "fit_scalers",
    "attach_reduced_forces",
    "save_dataset",
    "load_dataset",
]

BLOB_DTYPE = "<f8"


def clamp_intensity(w: float) -> float:
    """Pull an intensity into the admissible [0.1, 15] kN/m range."""
    return float(min(max(w, INTENSITY_MIN), INTENSITY_MAX))


def trunk_coordinates(model) -> np.ndarray:
    """Node coordinates scaled to the unit square by span and height."""
    coords = np.asarray(model.nodes, dtype=np.float64)
    span = float(coords[:, 0].max() - coords[:, 0].min())
    height = float(coords[:, 1].max() - coords[:, 1].min())
    out = np.empty_like(coords)
    out[:, 0] = (coords[:, 0] - coords[:, 0].min()) / span
    out[:, 1] = (coords[:, 1] - coords[:, 1].min()) / height
    return out


def sample_intensities(seed: int, per_scenario: int) -> dict:
    """Per-scenario i.i.d. uniform [0.1, 15] kN/m draws, one seeded stream."""
    if per_scenario < 1:
        raise ValueError("per_scenario must be at least 1")
    rng = np.random.default_rng(seed)
    return {
        scenario: rng.uniform(INTENSITY_MIN, INTENSITY_MAX, size=per_scenario)
        for scenario in SCENARIOS
    }


def sample_cases(model, seed: int, per_scenario: int, uvl_direction: str = "left"):
    """Draw per_scenario random load cases for each scenario.

    Cases come back grouped by scenario in canonical order, so the
    layout is reproducible from (seed, per_scenario) alone.
    """
    cases = []
    for scenario, ws in sample_intensities(seed, per_scenario).items():
        for w in ws:
            cases.append(fem.make_load_case(model, scenario, float(w), uvl_direction))
    return cases


@dataclass
class Scalers:
    """Branch max-abs scale plus per-variable output z-score parameters."""

    branch_max_abs: float
    output_mean: np.ndarray  # (3,)
    output_std: np.ndarray  # (3,)

    def normalize_branch(self, b):
        return np.asarray(b, dtype=np.float64) / self.branch_max_abs

    def normalize_targets(self, t):
        return (np.asarray(t, dtype=np.float64) - self.output_mean) / self.output_std

    def denormalize_targets(self, t):
        return np.asarray(t, dtype=np.float64) * self.output_std + self.output_mean

    def to_dict(self):
        return {
            "branch_max_abs": self.branch_max_abs,
            "output_mean": self.output_mean.tolist(),
            "output_std": self.output_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            branch_max_abs=float(d["branch_max_abs"]),
            output_mean=np.asarray(d["output_mean"], dtype=np.float64),
            output_std=np.asarray(d["output_std"], dtype=np.float64),
        )


@dataclass
class Dataset:
    """In-memory dataset: arrays, provenance, optional split and scalers."""

    model: fem.FrameModel
    branch: np.ndarray  # (n, 21) kN/m
    trunk: np.ndarray  # (56, 2) normalized
    targets: np.ndarray  # (n, 56, 3) SI
    forces: np.ndarray  # (n, n_free) N / N*m
    scenarios: list  # per-sample scenario string
    intensities: np.ndarray  # (n,) kN/m
    seed: int
    per_scenario: int
    uvl_direction: str = "left"
    fc: np.ndarray | None = None  # (n, |I|) Schur-reduced forces
    picked_nodes: list | None = None
    split_info: dict | None = None  # ratio, seed, train, test
    scalers: Scalers | None = None

    @property
    def n_samples(self) -> int:
        return self.branch.shape[0]

    @property
    def train_indices(self) -> np.ndarray:
        if self.split_info is None:
            raise ValueError("dataset has no split; call split() first")
        return np.asarray(self.split_info["train"], dtype=np.intp)

    @property
    def test_indices(self) -> np.ndarray:
        if self.split_info is None:
            raise ValueError("dataset has no split; call split() first")
        return np.asarray(self.split_info["test"], dtype=np.intp)


def generate(model, cases, seed: int, per_scenario: int, uvl_direction: str = "left") -> Dataset:
    """Solve every case against the factored model and collect the arrays.

    seed/per_scenario are provenance for the manifest; the cases list is
    what actually gets solved.
    """
    sys = fem.assemble(model)
    solver = fem.StaticSolver(sys)
    n = len(cases)
    n_nodes = model.n_nodes
    branch = np.empty((n, len(model.bottom_chord)))
    targets = np.empty((n, n_nodes, 3))
    forces = np.empty((n, sys.free.size))
    scenarios = []
    intensities = np.empty(n)
    for i, case in enumerate(cases):
        try:
            u = solver.solve(case.force_vector)
        except Exception as exc:
            raise RuntimeError(f"static solve failed on case {i}: {exc}") from exc
        branch[i] = case.nodal_intensities
        targets[i] = u.reshape(n_nodes, 3)
        forces[i] = case.force_vector[sys.free]
        scenarios.append(case.scenario)
        intensities[i] = case.intensity
    return Dataset(
        model=model,
        branch=branch,
        trunk=trunk_coordinates(model),
        targets=targets,
        forces=forces,
        scenarios=scenarios,
        intensities=intensities,
        seed=seed,
        per_scenario=per_scenario,
        uvl_direction=uvl_direction,
    )


def make_dataset(model, seed: int, per_scenario: int, uvl_direction: str = "left") -> Dataset:
    """sample_cases + generate in one step."""
    cases = sample_cases(model, seed, per_scenario, uvl_direction)
    return generate(model, cases, seed, per_scenario, uvl_direction)


def stratified_split(scenarios, ratio: float, seed: int):
    """Seeded train/test assignment, stratified by scenario.

    The train count is floor(ratio * n) overall; it is apportioned to
    scenarios by largest fractional remainder (ties broken by scenario
    order), so e.g. 3048 samples at 0.8 give 2438 train / 610 test and
    at 0.2 every scenario contributes exactly floor(0.2 * 1016).
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    scenarios = list(scenarios)
    n = len(scenarios)
    groups = []  # (name, indices) in order of first appearance
    seen = {}
    for i, s in enumerate(scenarios):
        if s not in seen:
            seen[s] = len(groups)
            groups.append((s, []))
        groups[seen[s]][1].append(i)

    total_train = int(np.floor(ratio * n))
    bases, rems = [], []
    for _, idx in groups:
        exact = ratio * len(idx)
        bases.append(int(np.floor(exact)))
        rems.append(exact - np.floor(exact))
    shortfall = total_train - sum(bases)
    order = sorted(range(len(groups)), key=lambda g: (-rems[g], g))
    quota = list(bases)
    for g in order[:shortfall]:
        quota[g] += 1

    rng = np.random.default_rng(seed)
    train, test = [], []
    for (_, idx), k in zip(groups, quota):
        idx = np.asarray(idx, dtype=np.intp)
        rng.shuffle(idx)
        train.extend(idx[:k].tolist())
        test.extend(idx[k:].tolist())
    return np.asarray(sorted(train), dtype=np.intp), np.asarray(sorted(test), dtype=np.intp)


def split(ds: Dataset, ratio: float, seed: int) -> Dataset:
    """Attach a stratified train/test split to the dataset."""
    train, test = stratified_split(ds.scenarios, ratio, seed)
    ds.split_info = {
        "ratio": float(ratio),
        "seed": int(seed),
        "train": train.tolist(),
        "test": test.tolist(),
    }
    return ds


def fit_scalers(branch, targets, train_idx) -> Scalers:
    """Fit normalization on the training rows only.

    Branch scale is the global max-abs; output statistics are population
    (ddof 0) mean/std pooled over samples and nodes, per variable.
    """
    train_idx = np.asarray(train_idx, dtype=np.intp)
    if train_idx.size < 2:
        raise ValueError("need at least 2 training samples to fit scalers")
    b = np.asarray(branch, dtype=np.float64)[train_idx]
    max_abs = float(np.max(np.abs(b)))
    if max_abs == 0.0:
        raise ValueError("training branch inputs are identically zero")
    t = np.asarray(targets, dtype=np.float64)[train_idx]
    mean = t.mean(axis=(0, 1))
    std = t.std(axis=(0, 1))  # population convention
    for name, s in zip(DOF_NAMES, std):
        if s == 0.0:
            raise ValueError(f"zero variance in output variable {name}")
    return Scalers(branch_max_abs=max_abs, output_mean=mean, output_std=std)


def attach_reduced_forces(ds: Dataset, schur: SchurSystem, picked_nodes) -> Dataset:
    """Store F_c = F_I - K_IN inv(K_NN) F_N for every sample."""
    n = ds.n_samples
    fc = np.empty((n, schur.n_picked))
    for i in range(n):
        fc[i] = reduce_force(schur, ds.forces[i])
    ds.fc = fc
    ds.picked_nodes = [int(p) for p in picked_nodes]
    return ds


# --------------------------------------------------------------------------
# on-disk format

def _write_blob(path, arr):
    np.ascontiguousarray(arr, dtype=np.float64).astype(BLOB_DTYPE).tofile(path)


def _read_blob(path, shape):
    arr = np.fromfile(path, dtype=BLOB_DTYPE).astype(np.float64)
    expect = int(np.prod(shape))
    if arr.size != expect:
        raise ValueError(f"{path}: expected {expect} float64 values, found {arr.size}")
    return arr.reshape(shape)


def save_dataset(ds: Dataset, out_dir) -> str:
    """Write manifest.json, model.json, and the array blobs into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    model_text = fem.model_to_json(ds.model)
    with open(os.path.join(out_dir, "model.json"), "w", encoding="ascii") as fh:
        fh.write(model_text)

    arrays = {
        "branch": ds.branch,
        "trunk": ds.trunk,
        "targets": ds.targets,
        "forces": ds.forces,
    }
    if ds.fc is not None:
        arrays["fc"] = ds.fc
    records = {}
    for name, arr in arrays.items():
        fname = f"{name}.f64"
        _write_blob(os.path.join(out_dir, fname), arr)
        records[name] = {
            "file": fname,
            "dtype": BLOB_DTYPE,
            "shape": list(arr.shape),
            "offset": 0,
        }

    manifest = {
        "n_samples": ds.n_samples,
        "seed": ds.seed,
        "per_scenario": ds.per_scenario,
        "uvl_direction": ds.uvl_direction,
        "scenarios": ds.scenarios,
        "intensities": ds.intensities.tolist(),
        "arrays": records,
        "split": ds.split_info,
        "scalers": ds.scalers.to_dict() if ds.scalers is not None else None,
        "picked_nodes": ds.picked_nodes,
        "model": {
            "file": "model.json",
            "sha256": hashlib.sha256(model_text.encode("ascii")).hexdigest(),
        },
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_dataset(in_dir) -> Dataset:
    """Read a dataset directory back; verifies the model file digest."""
    with open(os.path.join(in_dir, "manifest.json"), "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    model_path = os.path.join(in_dir, manifest["model"]["file"])
    with open(model_path, "r", encoding="ascii") as fh:
        model_text = fh.read()
    digest = hashlib.sha256(model_text.encode("ascii")).hexdigest()
    if digest != manifest["model"]["sha256"]:
        raise ValueError(f"{model_path} does not match the digest in the manifest")
    model = fem.model_from_json(model_text)

    def blob(name):
        rec = manifest["arrays"][name]
        return _read_blob(os.path.join(in_dir, rec["file"]), rec["shape"])

    ds = Dataset(
        model=model,
        branch=blob("branch"),
        trunk=blob("trunk"),
        targets=blob("targets"),
        forces=blob("forces"),
        scenarios=list(manifest["scenarios"]),
        intensities=np.asarray(manifest["intensities"], dtype=np.float64),
        seed=int(manifest["seed"]),
        per_scenario=int(manifest["per_scenario"]),
        uvl_direction=manifest["uvl_direction"],
        split_info=manifest["split"],
        picked_nodes=manifest["picked_nodes"],
    )
    if "fc" in manifest["arrays"]:
        ds.fc = blob("fc")
    if manifest["scalers"] is not None:
        ds.scalers = Scalers.from_dict(manifest["scalers"])
    return ds
