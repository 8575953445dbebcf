"""Unstacked DeepONet in plain numpy.

A surrogate maps a load vector sampled at 21 sensors (branch input) and
a set of query coordinates (trunk input) to a response field.  Branch
and trunk are dense MLPs whose final layers have equal width; the
prediction for output k at point p is

    G[b, p, k] = sum_{j in group k} branch[b, j] * trunk[p, j] + b0[k]

Two multi-output strategies exist.  "split" uses one network pair whose
final width divides into n_outputs groups (hidden layers shared across
outputs); "independent" trains one complete single-output DeepONet per
variable, predictions concatenated column-wise.  Both are represented
uniformly as a list of heads: one head carrying 3 outputs, or three
heads carrying 1 each.

Forward passes are batched: branch over samples, trunk over all query
points at once.  Parameters flatten to a single float64 vector in a
canonical order, which is what the optimizer and the weight files use.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MlpSpec",
    "DeepONetSpec",
    "MlpParams",
    "DeepONetParams",
    "Surrogate",
    "preset_heads",
    "init_params",
    "init_heads",
    "mlp_forward",
    "combine",
    "forward",
    "forward_heads",
    "flatten_heads",
    "unflatten_heads",
    "head_param_counts",
    "save_surrogate",
    "load_surrogate",
]

ACTIVATIONS = ("tanh", "relu")

PRESETS = {
    # one split network, final width 48 = 3 groups of 16
    "split-2d": {
        "strategy": "split",
        "branch": [21, 48, 48, 48, 48, 48, 48],
        "trunk": [2, 48, 48, 48, 48, 48, 48],
        "n_outputs": 3,
    },
    # three single-output networks of width 75
    "independent-2d": {
        "strategy": "independent",
        "branch": [21, 75, 75, 75, 75, 75, 75],
        "trunk": [2, 75, 75, 75, 75, 75, 75],
        "n_outputs": 3,
    },
}


@dataclass(frozen=True)
class MlpSpec:
    """Dense MLP shape: sizes input-first, activation on hidden layers only."""

    layer_sizes: tuple
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class DeepONetSpec:
    """One branch/trunk pair with its output grouping."""

    branch: MlpSpec
    trunk: MlpSpec
    n_outputs: int = 1
    strategy: str = "split"

    def __post_init__(self):
        if self.strategy not in ("split", "independent"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.branch.n_out != self.trunk.n_out:
            raise ValueError(
                f"branch width {self.branch.n_out} != trunk width {self.trunk.n_out}"
            )
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be >= 1")
        if self.branch.n_out % self.n_outputs != 0:
            raise ValueError(
                f"final width {self.branch.n_out} not divisible by {self.n_outputs} outputs"
            )

    @property
    def width(self) -> int:
        return self.branch.n_out

    @property
    def group_size(self) -> int:
        return self.width // self.n_outputs


@dataclass
class MlpParams:
    weights: list  # (n_in, n_out) per layer
    biases: list  # (n_out,) per layer


@dataclass
class DeepONetParams:
    branch: MlpParams
    trunk: MlpParams
    combine_bias: np.ndarray  # (n_outputs,)


def preset_heads(name: str):
    """Resolve a preset name to its list of head specs."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    p = PRESETS[name]
    branch = list(p["branch"])
    trunk = list(p["trunk"])
    if p["strategy"] == "split":
        return [
            DeepONetSpec(
                branch=MlpSpec(branch),
                trunk=MlpSpec(trunk),
                n_outputs=p["n_outputs"],
                strategy="split",
            )
        ]
    return [
        DeepONetSpec(
            branch=MlpSpec(branch),
            trunk=MlpSpec(trunk),
            n_outputs=1,
            strategy="independent",
        )
        for _ in range(p["n_outputs"])
    ]


def _init_mlp(spec: MlpSpec, rng) -> MlpParams:
    weights, biases = [], []
    sizes = spec.layer_sizes
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        std = np.sqrt(2.0 / (n_in + n_out))  # Glorot-normal
        weights.append(rng.normal(0.0, std, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights=weights, biases=biases)


def init_params(spec: DeepONetSpec, seed: int) -> DeepONetParams:
    """Glorot-normal weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    return DeepONetParams(
        branch=_init_mlp(spec.branch, rng),
        trunk=_init_mlp(spec.trunk, rng),
        combine_bias=np.zeros(spec.n_outputs),
    )


def init_heads(specs, seed: int):
    """Init every head; member k draws from seed + k so members differ."""
    return [init_params(spec, seed + k) for k, spec in enumerate(specs)]


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(name, z):
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def mlp_forward(spec: MlpSpec, params: MlpParams, x, cache=None):
    """Batched dense forward; activation on hidden layers, linear output.

    x is (batch, n_in) or a single (n_in,) vector.  When `cache` is a
    list it receives (pre_activations, activations) for backprop.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.shape[1] != spec.n_in:
        raise ValueError(f"input width {a.shape[1]} != spec input {spec.n_in}")
    n_layers = len(params.weights)
    zs, acts = [], [a]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        zs.append(z)
        a = _act(spec.activation, z) if i < n_layers - 1 else z
        acts.append(a)
    if cache is not None:
        cache.append((zs, acts))
    return a[0] if squeeze else a


def combine(branch_out, trunk_out, n_outputs: int, biases) -> np.ndarray:
    """Grouped dot product plus per-output bias.

    branch_out (B, W), trunk_out (P, W), W divisible into n_outputs
    groups -> (B, P, n_outputs).
    """
    bo = np.asarray(branch_out, dtype=np.float64)
    to = np.asarray(trunk_out, dtype=np.float64)
    if bo.shape[-1] != to.shape[-1]:
        raise ValueError("branch and trunk widths differ")
    w = bo.shape[-1]
    if w % n_outputs != 0:
        raise ValueError(f"width {w} not divisible by {n_outputs} outputs")
    g = w // n_outputs
    bo = bo.reshape(bo.shape[0], n_outputs, g)
    to = to.reshape(to.shape[0], n_outputs, g)
    out = np.einsum("bkg,pkg->bpk", bo, to)
    return out + np.asarray(biases, dtype=np.float64)


def forward(spec: DeepONetSpec, params: DeepONetParams, branch_in, trunk_in) -> np.ndarray:
    """One head: (B, n_branch_in) x (P, 2) -> (B, P, n_outputs)."""
    bo = mlp_forward(spec.branch, params.branch, np.atleast_2d(branch_in))
    to = mlp_forward(spec.trunk, params.trunk, np.atleast_2d(trunk_in))
    return combine(bo, to, spec.n_outputs, params.combine_bias)


def forward_heads(specs, heads, branch_in, trunk_in) -> np.ndarray:
    """All heads, output columns concatenated: (B, P, total outputs)."""
    cols = [forward(s, p, branch_in, trunk_in) for s, p in zip(specs, heads)]
    return cols[0] if len(cols) == 1 else np.concatenate(cols, axis=2)


# --------------------------------------------------------------------------
# flat parameter vector


def _mlp_param_count(spec: MlpSpec) -> int:
    sizes = spec.layer_sizes
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def head_param_counts(specs) -> list:
    return [
        _mlp_param_count(s.branch) + _mlp_param_count(s.trunk) + s.n_outputs
        for s in specs
    ]


def flatten_heads(heads) -> np.ndarray:
    """Canonical order: per head, branch W1 b1 W2 b2 ..., trunk likewise,
    then combine_bias."""
    parts = []
    for p in heads:
        for mlp in (p.branch, p.trunk):
            for w, b in zip(mlp.weights, mlp.biases):
                parts.append(w.ravel())
                parts.append(b)
        parts.append(p.combine_bias)
    return np.concatenate(parts)


def unflatten_heads(specs, vec) -> list:
    vec = np.asarray(vec, dtype=np.float64)
    heads = []
    pos = 0
    for spec in specs:
        mlps = []
        for ms in (spec.branch, spec.trunk):
            weights, biases = [], []
            sizes = ms.layer_sizes
            for n_in, n_out in zip(sizes[:-1], sizes[1:]):
                weights.append(vec[pos : pos + n_in * n_out].reshape(n_in, n_out).copy())
                pos += n_in * n_out
                biases.append(vec[pos : pos + n_out].copy())
                pos += n_out
            mlps.append(MlpParams(weights=weights, biases=biases))
        cb = vec[pos : pos + spec.n_outputs].copy()
        pos += spec.n_outputs
        heads.append(DeepONetParams(branch=mlps[0], trunk=mlps[1], combine_bias=cb))
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, specs need {pos}")
    return heads


# --------------------------------------------------------------------------
# model files


@dataclass
class Surrogate:
    """Trained model bundle: heads, normalization snapshot, provenance."""

    specs: list  # DeepONetSpec per head
    heads: list  # DeepONetParams per head
    scalers: object  # data.Scalers
    meta: dict = field(default_factory=dict)  # loss kind, preset, seed, picked nodes

    @property
    def n_outputs(self) -> int:
        return sum(s.n_outputs for s in self.specs)

    def predict_normalized(self, branch_norm, trunk) -> np.ndarray:
        return forward_heads(self.specs, self.heads, branch_norm, trunk)


def _spec_to_dict(spec: DeepONetSpec) -> dict:
    return {
        "branch": {"layer_sizes": list(spec.branch.layer_sizes), "activation": spec.branch.activation},
        "trunk": {"layer_sizes": list(spec.trunk.layer_sizes), "activation": spec.trunk.activation},
        "n_outputs": spec.n_outputs,
        "strategy": spec.strategy,
    }


def _spec_from_dict(d: dict) -> DeepONetSpec:
    return DeepONetSpec(
        branch=MlpSpec(tuple(d["branch"]["layer_sizes"]), d["branch"]["activation"]),
        trunk=MlpSpec(tuple(d["trunk"]["layer_sizes"]), d["trunk"]["activation"]),
        n_outputs=int(d["n_outputs"]),
        strategy=d["strategy"],
    )


def save_surrogate(model: Surrogate, out_dir) -> str:
    """Write surrogate.json plus a weights.f64 blob in canonical order."""
    os.makedirs(out_dir, exist_ok=True)
    vec = flatten_heads(model.heads)
    vec.astype("<f8").tofile(os.path.join(out_dir, "weights.f64"))
    doc = {
        "heads": [_spec_to_dict(s) for s in model.specs],
        "weights": {"file": "weights.f64", "dtype": "<f8", "count": int(vec.size)},
        "scalers": model.scalers.to_dict() if model.scalers is not None else None,
        "meta": model.meta,
    }
    path = os.path.join(out_dir, "surrogate.json")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


def load_surrogate(in_dir) -> Surrogate:
    from .data import Scalers  # local import keeps module deps one-way

    with open(os.path.join(in_dir, "surrogate.json"), "r", encoding="ascii") as fh:
        doc = json.load(fh)
    specs = [_spec_from_dict(d) for d in doc["heads"]]
    vec = np.fromfile(
        os.path.join(in_dir, doc["weights"]["file"]), dtype=doc["weights"]["dtype"]
    ).astype(np.float64)
    if vec.size != doc["weights"]["count"]:
        raise ValueError("weight blob length does not match the manifest")
    heads = unflatten_heads(specs, vec)
    scalers = Scalers.from_dict(doc["scalers"]) if doc["scalers"] is not None else None
    return Surrogate(specs=specs, heads=heads, scalers=scalers, meta=doc["meta"])
