"""Losses, reverse-mode gradients, Adam, and the training loop.

Three loss regimes, all evaluated on de-normalized physical fields:

* dd      mean relative L2 data loss over the batch
* dd+ec   adds the energy residual |U^T K U - U^T F| per sample (J)
* dd+ses  adds the reduced equilibrium residual ||S U_I - F_c|| (N);
          the network predicts only the picked DOFs here

Gradients are hand-written reverse mode straight through the combine
layer and both MLPs.  The energy term uses d/dU (U^T K U - U^T F) =
(K + K^T) U - F, computed as 2KU - F since K is symmetric; the Schur
term uses S r_hat.  Everything is chained through the output z-score
de-normalization (a per-variable factor of std).

Physics residuals carry physical units while the data loss is
dimensionless, so the combination weights are exposed; `phys_scale`
optionally divides the physics term by its epoch-0 magnitude over the
training split.  Defaults are plain unweighted sums.

Training is deterministic for a fixed seed: one RNG drives both init
and the per-epoch shuffles, and BLAS threads are capped by the
STIFFONET_THREADS env var (default 1).
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import deeponet, fem
from .data import Dataset
from .deeponet import (
    DeepONetParams,
    MlpParams,
    Surrogate,
    _act_grad,
    flatten_heads,
    forward_heads,
    init_heads,
    mlp_forward,
    preset_heads,
    save_surrogate,
    unflatten_heads,
)
from .linalg import Partition, SchurSystem, reduce_force, schur_reduce

__all__ = [
    "LOSS_KINDS",
    "DEFAULT_PICKED_NODES",
    "LossSpec",
    "PhysicsContext",
    "AdamState",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "loss_dd",
    "energy_residual",
    "loss_ec",
    "loss_ses",
    "compose_loss",
    "backward",
    "adam_init",
    "adam_step",
    "build_context",
    "train",
    "grad_check",
]

LOSS_KINDS = ("dd", "dd+ec", "dd+ses")

# Picked nodes for the reduced-equilibrium pathway: every third
# bottom-chord node starting inside the supports, plus the two top-chord
# quarter-point nodes.  9 nodes x 3 DOFs = 27, none of them constrained.
DEFAULT_PICKED_NODES = (1, 4, 7, 10, 13, 16, 19, 26, 36)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class LossSpec:
    """Loss selection and combination weights."""

    kind: str = "dd"
    weight_dd: float = 1.0
    weight_phys: float = 1.0
    phys_scale: bool = False  # divide physics term by its epoch-0 value

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.weight_dd < 0 or self.weight_phys < 0:
            raise ValueError("loss weights must be non-negative")
        if self.weight_dd == 0 and self.weight_phys == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class PhysicsContext:
    """Per-sample operators and forces consumed by the physics losses.

    free_cols maps positions in the flattened (node, var) prediction to
    free-DOF order; forces/fc are row-per-sample and must align with
    whatever batch the losses receive (use select()).
    """

    free_cols: np.ndarray | None = None
    k_free: np.ndarray | None = None
    forces: np.ndarray | None = None
    schur: SchurSystem | None = None
    fc: np.ndarray | None = None

    def select(self, idx) -> "PhysicsContext":
        return PhysicsContext(
            free_cols=self.free_cols,
            k_free=self.k_free,
            forces=None if self.forces is None else self.forces[idx],
            schur=self.schur,
            fc=None if self.fc is None else self.fc[idx],
        )


# --------------------------------------------------------------------------
# losses (values and gradients w.r.t. physical predictions)


def _dd_value_grad(pred, true):
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {true.shape}")
    b = pred.shape[0]
    diff = (pred - true).reshape(b, -1)
    tn = np.linalg.norm(true.reshape(b, -1), axis=1)
    if np.any(tn == 0.0):
        k = int(np.nonzero(tn == 0.0)[0][0])
        raise ValueError(f"zero-norm ground truth at batch sample {k}")
    dn = np.linalg.norm(diff, axis=1)
    value = float(np.mean(dn / tn))
    safe = np.where(dn == 0.0, 1.0, dn)
    coef = np.where(dn == 0.0, 0.0, 1.0 / (b * tn * safe))
    grad = (diff * coef[:, None]).reshape(pred.shape)
    return value, grad


def loss_dd(pred_batch, true_batch) -> float:
    """Mean relative L2 over the batch, norms over each flattened field."""
    return _dd_value_grad(pred_batch, true_batch)[0]


def energy_residual(u, k, f) -> float:
    """Signed scalar U^T K U - U^T F."""
    u = np.asarray(u, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if u.shape[0] != k.shape[0] or k.shape[0] != k.shape[1] or f.shape != u.shape:
        raise ValueError("dimension mismatch in energy residual")
    return float(u @ k @ u - u @ f)


def _ec_value_grad(pred, ctx: PhysicsContext):
    if ctx is None or ctx.k_free is None or ctx.forces is None or ctx.free_cols is None:
        raise ValueError("EC loss needs k_free, forces, and free_cols in the context")
    pred = np.asarray(pred, dtype=np.float64)
    b = pred.shape[0]
    flat = pred.reshape(b, -1)
    u = flat[:, ctx.free_cols]
    if u.shape[1] != ctx.k_free.shape[0]:
        raise ValueError("free-DOF count does not match the reduced stiffness")
    ku = u @ ctx.k_free  # K symmetric, so this is (K U)^T rows
    r = np.einsum("bi,bi->b", u, ku) - np.einsum("bi,bi->b", u, ctx.forces)
    value = float(np.mean(np.abs(r)))
    du = (np.sign(r) / b)[:, None] * (2.0 * ku - ctx.forces)
    grad = np.zeros_like(flat)
    grad[:, ctx.free_cols] = du
    return value, grad.reshape(pred.shape)


def loss_ec(pred_batch, ctx: PhysicsContext) -> float:
    """Mean |U^T K U - U^T F| over the batch, in joules."""
    return _ec_value_grad(pred_batch, ctx)[0]


def _ses_value_grad(pred, ctx: PhysicsContext):
    if ctx is None or ctx.schur is None or ctx.fc is None:
        raise ValueError("SE-S loss needs a SchurSystem and reduced forces")
    pred = np.asarray(pred, dtype=np.float64)
    b = pred.shape[0]
    u = pred.reshape(b, -1)
    s = ctx.schur.s_matrix
    if u.shape[1] != s.shape[0]:
        raise ValueError(f"predicted {u.shape[1]} picked DOFs, Schur system has {s.shape[0]}")
    r = u @ s - ctx.fc  # S symmetric
    n = np.linalg.norm(r, axis=1)
    value = float(np.mean(n))
    safe = np.where(n == 0.0, 1.0, n)
    rhat = r / safe[:, None]
    rhat[n == 0.0] = 0.0
    grad = (rhat @ s) / b
    return value, grad.reshape(pred.shape)


def loss_ses(pred_picked_batch, ctx: PhysicsContext) -> float:
    """Mean ||S U_I - F_c|| over the batch, in newtons."""
    return _ses_value_grad(pred_picked_batch, ctx)[0]


def _loss_value_grad(spec: LossSpec, pred, true, ctx):
    val_dd, g_dd = _dd_value_grad(pred, true)
    if spec.kind == "dd":
        return spec.weight_dd * val_dd, spec.weight_dd * g_dd
    if spec.kind == "dd+ec":
        val_p, g_p = _ec_value_grad(pred, ctx)
    else:
        val_p, g_p = _ses_value_grad(pred, ctx)
    total = spec.weight_dd * val_dd + spec.weight_phys * val_p
    return total, spec.weight_dd * g_dd + spec.weight_phys * g_p


def compose_loss(spec: LossSpec, pred, true, ctx=None) -> float:
    """weight_dd * L_dd + weight_phys * L_phys per the loss kind.

    phys_scale is resolved by train() (it needs epoch-0 state); here the
    weights are taken as given.
    """
    return _loss_value_grad(spec, pred, true, ctx)[0]


# --------------------------------------------------------------------------
# reverse mode


def _mlp_backward(spec, params, cache, d_out) -> MlpParams:
    zs, acts = cache
    n = len(params.weights)
    d_w = [None] * n
    d_b = [None] * n
    delta = d_out
    for layer in reversed(range(n)):
        d_w[layer] = acts[layer].T @ delta
        d_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer].T) * _act_grad(
                spec.activation, zs[layer - 1]
            )
    return MlpParams(weights=d_w, biases=d_b)


def backward(specs, heads, branch_in, trunk_in, true_phys, loss_spec, ctx, scalers):
    """Loss value and flat gradient for one batch.

    branch_in is already normalized; predictions are de-normalized with
    `scalers` before the loss, so gradients carry the std chain factor.
    Ensemble heads receive gradient only through their own columns.
    """
    branch_in = np.atleast_2d(np.asarray(branch_in, dtype=np.float64))
    trunk_in = np.atleast_2d(np.asarray(trunk_in, dtype=np.float64))
    b_sz, p_sz = branch_in.shape[0], trunk_in.shape[0]

    saved = []
    cols = []
    for spec, p in zip(specs, heads):
        bc, tc = [], []
        bo = mlp_forward(spec.branch, p.branch, branch_in, cache=bc)
        to = mlp_forward(spec.trunk, p.trunk, trunk_in, cache=tc)
        cols.append(deeponet.combine(bo, to, spec.n_outputs, p.combine_bias))
        saved.append((bo, to, bc[0], tc[0]))
    pred_norm = cols[0] if len(cols) == 1 else np.concatenate(cols, axis=2)
    pred_phys = scalers.denormalize_targets(pred_norm)

    loss, d_phys = _loss_value_grad(loss_spec, pred_phys, true_phys, ctx)
    d_norm = d_phys * scalers.output_std  # de-normalization chain factor

    grads = []
    col = 0
    for spec, p, (bo, to, bc, tc) in zip(specs, heads, saved):
        k, g = spec.n_outputs, spec.group_size
        dg = d_norm[:, :, col : col + k]
        col += k
        bo3 = bo.reshape(b_sz, k, g)
        to3 = to.reshape(p_sz, k, g)
        d_bo = np.einsum("bpk,pkg->bkg", dg, to3).reshape(b_sz, -1)
        d_to = np.einsum("bpk,bkg->pkg", dg, bo3).reshape(p_sz, -1)
        d_b0 = dg.sum(axis=(0, 1))
        grads.append(
            DeepONetParams(
                branch=_mlp_backward(spec.branch, p.branch, bc, d_bo),
                trunk=_mlp_backward(spec.trunk, p.trunk, tc, d_to),
                combine_bias=d_b0,
            )
        )
    return loss, flatten_heads(grads)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n_params: int, lr: float = 0.001) -> AdamState:
    return AdamState(lr=lr, m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(state: AdamState, params, grads) -> np.ndarray:
    """Standard Adam with bias correction; eps added after the sqrt."""
    g = np.asarray(grads, dtype=np.float64)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 20
    seed: int = 0
    lr: float = 0.001
    loss: LossSpec = field(default_factory=LossSpec)
    preset: str = "split-2d"
    ratio: float | None = None  # provenance echo only

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainReport:
    train_loss: list
    test_loss: list
    epoch_seconds: list
    steps_per_epoch: int
    best_epoch: int
    best_test_loss: float
    config: dict
    phys_scale_value: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _thread_cap() -> int:
    return max(1, int(os.environ.get("STIFFONET_THREADS", "1")))


def build_context(dataset: Dataset, kind: str, picked_nodes=None):
    """Physics context, trunk points, and target view for a loss kind.

    dd: no context, full field.  dd+ec: support-reduced K and forces,
    full field.  dd+ses: Schur reduction onto the picked nodes; trunk
    and targets restrict to those nodes, reusing stored F_c when the
    dataset carries it for the same picked set.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if kind == "dd":
        return None, dataset.trunk, dataset.targets, None

    sys = fem.assemble(dataset.model)
    if kind == "dd+ec":
        ctx = PhysicsContext(
            free_cols=sys.free, k_free=sys.k_free(), forces=dataset.forces
        )
        return ctx, dataset.trunk, dataset.targets, None

    picked = sorted(set(int(n) for n in (picked_nodes or DEFAULT_PICKED_NODES)))
    pos = sys.free_positions(picked)
    part = Partition.from_picked(pos, sys.free.size)
    schur = schur_reduce(sys.k_free(), part)
    if dataset.fc is not None and dataset.picked_nodes == picked:
        fc = dataset.fc
    else:
        fc = np.empty((dataset.n_samples, schur.n_picked))
        for i in range(dataset.n_samples):
            fc[i] = reduce_force(schur, dataset.forces[i])
    ctx = PhysicsContext(schur=schur, fc=fc)
    return ctx, dataset.trunk[picked], dataset.targets[:, picked, :], picked


def _eval_loss(specs, heads, branch, trunk, true, spec_eff, ctx, scalers, idx):
    pred = forward_heads(specs, heads, branch[idx], trunk)
    return compose_loss(
        spec_eff,
        scalers.denormalize_targets(pred),
        true[idx],
        None if ctx is None else ctx.select(idx),
    )


def train(config: TrainConfig, dataset: Dataset, out_dir=None, specs=None, picked_nodes=None):
    """Mini-batch Adam training; returns (Surrogate, TrainReport).

    Needs a dataset with split and scalers attached.  Per epoch: seeded
    shuffle of the training rows, ceil(n/batch) steps, then a full
    test-split loss; the parameters with the best test loss are kept.
    A non-finite loss aborts with the epoch and batch index.
    """
    if dataset.split_info is None:
        raise ValueError("dataset has no train/test split")
    if dataset.scalers is None:
        raise ValueError("dataset has no fitted scalers")
    loss_spec = config.loss
    ctx, trunk, targets, picked = build_context(dataset, loss_spec.kind, picked_nodes)
    if specs is None:
        specs = preset_heads(config.preset)
    scalers = dataset.scalers

    branch = scalers.normalize_branch(dataset.branch)
    train_idx = dataset.train_indices
    test_idx = dataset.test_indices

    heads = init_heads(specs, config.seed)
    vec = flatten_heads(heads)
    adam = adam_init(vec.size, config.lr)
    rng = np.random.default_rng(config.seed)

    with threadpool_limits(limits=_thread_cap()):
        eff = loss_spec
        scale = None
        if loss_spec.phys_scale and loss_spec.kind != "dd":
            # epoch-0 magnitude of the raw physics term on the train split
            pred = forward_heads(specs, heads, branch[train_idx], trunk)
            pred = scalers.denormalize_targets(pred)
            ctx0 = ctx.select(train_idx)
            raw = loss_ec(pred, ctx0) if loss_spec.kind == "dd+ec" else loss_ses(pred, ctx0)
            scale = max(raw, np.finfo(np.float64).tiny)
            eff = dataclasses.replace(loss_spec, weight_phys=loss_spec.weight_phys / scale)

        train_hist, test_hist, secs = [], [], []
        best_vec = vec.copy()
        best_test = np.inf
        best_epoch = 0
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(train_idx)
            batch_losses = []
            for step, start in enumerate(range(0, order.size, config.batch_size)):
                idx = order[start : start + config.batch_size]
                heads = unflatten_heads(specs, vec)
                loss, grad = backward(
                    specs, heads, branch[idx], trunk, targets[idx],
                    eff, None if ctx is None else ctx.select(idx), scalers,
                )
                if not np.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, batch {step}"
                    )
                vec = adam_step(adam, vec, grad)
                batch_losses.append(loss)
            heads = unflatten_heads(specs, vec)
            test_loss = _eval_loss(
                specs, heads, branch, trunk, targets, eff, ctx, scalers, test_idx
            )
            if not np.isfinite(test_loss):
                raise TrainingDivergedError(
                    f"non-finite test loss after epoch {epoch}"
                )
            train_hist.append(float(np.mean(batch_losses)))
            test_hist.append(float(test_loss))
            if test_loss < best_test:
                best_test = float(test_loss)
                best_vec = vec.copy()
                best_epoch = epoch
            secs.append(time.perf_counter() - t0)

    report = TrainReport(
        train_loss=train_hist,
        test_loss=test_hist,
        epoch_seconds=secs,
        steps_per_epoch=-(-train_idx.size // config.batch_size),  # ceil
        best_epoch=best_epoch,
        best_test_loss=best_test,
        config=dataclasses.asdict(config),
        phys_scale_value=scale,
    )
    model = Surrogate(
        specs=list(specs),
        heads=unflatten_heads(specs, best_vec),
        scalers=scalers,
        meta={
            "loss": loss_spec.kind,
            "preset": config.preset,
            "seed": config.seed,
            "picked_nodes": picked,
            "epochs": config.epochs,
            "uvl_direction": dataset.uvl_direction,
        },
    )
    if out_dir is not None:
        save_surrogate(model, out_dir)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="ascii") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    return model, report


# --------------------------------------------------------------------------
# finite-difference harness


def _toy_problem(kind: str, seed: int):
    """Small net + consistent physics operators for one loss kind."""
    rng = np.random.default_rng(seed)
    from .data import Scalers

    if kind == "dd+ses":
        # single-output head over 2 picked DOFs, Schur from a 5x5 SPD
        spec = deeponet.DeepONetSpec(
            branch=deeponet.MlpSpec((3, 6, 6)),
            trunk=deeponet.MlpSpec((2, 6, 6)),
            n_outputs=1,
            strategy="independent",
        )
        specs = [spec]
        n_pts, n_out = 2, 1
        a = rng.standard_normal((5, 5))
        k5 = a @ a.T + 5.0 * np.eye(5)
        part = Partition.from_picked([1, 3], 5)
        schur = schur_reduce(k5, part)
        b_sz = 3
        fc = rng.standard_normal((b_sz, 2))
        ctx = PhysicsContext(schur=schur, fc=fc)
        scalers = Scalers(
            branch_max_abs=1.0,
            output_mean=np.array([0.05]),
            output_std=np.array([1.7]),
        )
    else:
        # 3-output split head over 2 nodes -> 6 DOFs, all free
        spec = deeponet.DeepONetSpec(
            branch=deeponet.MlpSpec((3, 6, 6)),
            trunk=deeponet.MlpSpec((2, 6, 6)),
            n_outputs=3,
            strategy="split",
        )
        specs = [spec]
        n_pts, n_out = 2, 3
        b_sz = 3
        ctx = None
        if kind == "dd+ec":
            a = rng.standard_normal((6, 6))
            k6 = a @ a.T + 6.0 * np.eye(6)
            forces = rng.standard_normal((b_sz, 6))
            ctx = PhysicsContext(
                free_cols=np.arange(6), k_free=k6, forces=forces
            )
        scalers = Scalers(
            branch_max_abs=1.0,
            output_mean=np.array([0.1, -0.2, 0.3]),
            output_std=np.array([0.5, 2.0, 1.5]),
        )
    heads = init_heads(specs, seed)
    branch_in = rng.uniform(-1, 1, size=(b_sz, 3))
    trunk_in = rng.uniform(0, 1, size=(n_pts, 2))
    true = rng.standard_normal((b_sz, n_pts, n_out))
    return specs, heads, branch_in, trunk_in, true, ctx, scalers


def grad_check(seed: int = 0, h: float = 1e-6) -> dict:
    """Max relative deviation between analytic and central-difference
    gradients, per loss kind.  Metric: |a - fd| / max(1, |a|)."""
    out = {}
    for kind in LOSS_KINDS:
        specs, heads, b_in, t_in, true, ctx, scalers = _toy_problem(kind, seed)
        loss_spec = LossSpec(kind=kind)
        _, grad = backward(specs, heads, b_in, t_in, true, loss_spec, ctx, scalers)
        vec = flatten_heads(heads)

        def value(v):
            hs = unflatten_heads(specs, v)
            pred = forward_heads(specs, hs, b_in, t_in)
            return compose_loss(loss_spec, scalers.denormalize_targets(pred), true, ctx)

        fd = np.empty_like(vec)
        for i in range(vec.size):
            vp = vec.copy()
            vp[i] += h
            vm = vec.copy()
            vm[i] -= h
            fd[i] = (value(vp) - value(vm)) / (2.0 * h)
        dev = np.abs(grad - fd) / np.maximum(1.0, np.abs(grad))
        out[kind] = float(np.max(dev))
    return out
