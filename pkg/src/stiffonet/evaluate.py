"""Inference and error reporting for trained surrogates.

Full-field surrogates are forwarded directly; picked-node surrogates are
completed by static recovery of the interior DOFs before any statistics
are taken.  Errors are per-variable relative L2 norms over the test
split, reported in percent as mean (min~max).
"""

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, trunk_coordinates
from .deeponet import Surrogate
from .fem import DOF_NAMES, NDOF, FrameModel, assemble
from .linalg import SchurSystem, recover_interior, scatter
from .training import build_context

N_HIST_BINS = 40


def predict_field(model: Surrogate, branch_raw, frame: FrameModel):
    """Physical-unit fields at every node; constrained DOFs pinned to zero.

    `branch_raw` holds raw (un-normalized) load intensities, one row per
    sample or a single 1-D vector.  Only full-field surrogates qualify;
    picked-node models go through recover_full instead.
    """
    if model.scalers is None:
        raise ValueError("surrogate carries no scalers")
    b = np.asarray(branch_raw, dtype=np.float64)
    single = b.ndim == 1
    if single:
        b = b[None, :]
    trunk = trunk_coordinates(frame)
    pred = model.predict_normalized(model.scalers.normalize_branch(b), trunk)
    phys = model.scalers.denormalize_targets(pred)
    flat = phys.reshape(b.shape[0], -1)
    flat[:, frame.constrained_dofs()] = 0.0
    out = flat.reshape(b.shape[0], frame.nodes.shape[0], NDOF)
    return out[0] if single else out


def recover_full(pred_picked, schur: SchurSystem, f_free, system):
    """Complete a picked-DOF prediction to the full nodal field.

    Picked values come from the network; the remaining free DOFs follow
    from static condensation against the per-sample force vector, and
    constrained DOFs are zero by construction.
    """
    u_i = np.asarray(pred_picked, dtype=np.float64).reshape(-1)
    if u_i.size != schur.n_picked:
        raise ValueError(
            f"expected {schur.n_picked} picked values, got {u_i.size}"
        )
    f = np.asarray(f_free, dtype=np.float64)
    u_n = recover_interior(schur, u_i, f)
    u_free = scatter(schur.partition, u_i, u_n)
    return system.expand(u_free).reshape(-1, NDOF)


def predict_dataset(model: Surrogate, dataset: Dataset, indices=None):
    """Full-field predictions for the given dataset rows, surrogate-kind aware."""
    if indices is None:
        idx = np.arange(dataset.branch.shape[0])
    else:
        idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= dataset.branch.shape[0]):
        raise ValueError("sample index out of range")
    if model.meta.get("loss") == "dd+ses":
        picked = model.meta.get("picked_nodes")
        ctx, trunk, _, _ = build_context(dataset, "dd+ses", picked)
        b = model.scalers.normalize_branch(dataset.branch[idx])
        picked_pred = model.scalers.denormalize_targets(
            model.predict_normalized(b, trunk)
        )
        system = assemble(dataset.model)
        out = np.empty((idx.size, dataset.trunk.shape[0], NDOF))
        for j, i in enumerate(idx):
            out[j] = recover_full(
                picked_pred[j].reshape(-1), ctx.schur, dataset.forces[i], system
            )
        return out
    return predict_field(model, dataset.branch[idx], dataset.model)


# --------------------------------------------------------------------------
# error statistics


def relative_errors(pred, true):
    """Per-sample, per-variable relative L2 errors in percent.

    Norms run over the node axis for one variable at a time.  Samples
    whose truth norm is zero for a variable get NaN there and are
    excluded from aggregation.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 3:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    diff = np.linalg.norm(p - t, axis=1)
    base = np.linalg.norm(t, axis=1)
    out = np.full(diff.shape, np.nan)
    ok = base > 0.0
    out[ok] = 100.0 * diff[ok] / base[ok]
    return out


@dataclass
class ErrorStats:
    """Per-variable relative error aggregates in percent."""

    mean: np.ndarray
    min: np.ndarray
    max: np.ndarray
    excluded: np.ndarray  # zero-norm-truth samples dropped, per variable
    n_samples: int

    def to_dict(self):
        doc = {"n_samples": self.n_samples}
        for v, name in enumerate(DOF_NAMES):
            doc[name] = {
                "mean": float(self.mean[v]),
                "min": float(self.min[v]),
                "max": float(self.max[v]),
                "excluded": int(self.excluded[v]),
                "summary": f"{self.mean[v]:.3g} ({self.min[v]:.3g}~{self.max[v]:.3g})",
            }
        return doc


def error_stats(pred, true) -> ErrorStats:
    errs = relative_errors(pred, true)
    excluded = np.isnan(errs).sum(axis=0)
    if excluded.any():
        warnings.warn(
            f"excluded zero-norm truth samples per variable: {excluded.tolist()}",
            stacklevel=2,
        )
    if np.isnan(errs).all(axis=0).any():
        bad = DOF_NAMES[int(np.argmax(np.isnan(errs).all(axis=0)))]
        raise ValueError(f"no usable samples for variable {bad}")
    return ErrorStats(
        mean=np.nanmean(errs, axis=0),
        min=np.nanmin(errs, axis=0),
        max=np.nanmax(errs, axis=0),
        excluded=excluded.astype(np.intp),
        n_samples=errs.shape[0],
    )


# --------------------------------------------------------------------------
# exports


def export_field(path, nodes, actual, pred):
    """One sample to CSV: coordinates plus actual/pred/|err| per variable."""
    names = ["x", "y"]
    cols = [nodes[:, 0], nodes[:, 1]]
    for v, name in enumerate(DOF_NAMES):
        names += [f"{name}_actual", f"{name}_pred", f"{name}_err"]
        cols += [actual[:, v], pred[:, v], np.abs(pred[:, v] - actual[:, v])]
    table = np.column_stack(cols)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for row in table:
            fh.write(",".join(f"{v:.12e}" for v in row) + "\n")
    return path


def export_histograms(out_dir, errors):
    """Binned relative errors, one CSV per variable, bins over [0, max]."""
    paths = []
    for v, name in enumerate(DOF_NAMES):
        col = errors[:, v]
        col = col[~np.isnan(col)]
        hi = float(col.max()) if col.size and col.max() > 0 else 1.0
        counts, edges = np.histogram(col, bins=N_HIST_BINS, range=(0.0, hi))
        path = os.path.join(out_dir, f"hist_{name}.csv")
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("bin_lo,bin_hi,count\n")
            for i in range(N_HIST_BINS):
                fh.write(f"{edges[i]:.12e},{edges[i + 1]:.12e},{counts[i]}\n")
        paths.append(path)
    return paths


def evaluate_surrogate(model: Surrogate, dataset: Dataset, out_dir=None, export_sample=None):
    """Test-split error statistics, optionally with CSV/JSON exports.

    Exports: stats.json, hist_<var>.csv per variable, and field_<id>.csv
    for one sample (the first test sample unless export_sample names a
    dataset row).
    """
    idx = dataset.test_indices
    pred = predict_dataset(model, dataset, idx)
    true = dataset.targets[idx]
    errs = relative_errors(pred, true)
    stats = error_stats(pred, true)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        export_histograms(out_dir, errs)
        sid = int(idx[0]) if export_sample is None else int(export_sample)
        sample_pred = predict_dataset(model, dataset, [sid])[0]
        export_field(
            os.path.join(out_dir, f"field_{sid}.csv"),
            dataset.model.nodes,
            dataset.targets[sid],
            sample_pred,
        )
        with open(os.path.join(out_dir, "stats.json"), "w", encoding="ascii") as fh:
            json.dump(stats.to_dict(), fh, indent=2)
            fh.write("\n")
    return stats
