"""stiffonet: stiffness-informed DeepONet surrogates for 2D frame statics.

The package has three layers:

* a small dense finite-element kernel for planar Timoshenko frames
  (`fem`, `linalg`) used both to manufacture ground-truth data and to
  supply stiffness operators to physics-based losses,
* an unstacked DeepONet in plain numpy with hand-written backprop
  (`deeponet`, `training`), trainable under data, energy-conservation,
  and static-equilibrium losses,
* dataset generation, evaluation, and study drivers (`data`,
  `evaluate`, `cli`).
"""

__version__ = "0.1.0"

from . import data, deeponet, evaluate, fem, linalg, training  # noqa: E402
from .data import Dataset, Scalers, fit_scalers, load_dataset, make_dataset, save_dataset, split
from .deeponet import (
    DeepONetSpec,
    MlpSpec,
    Surrogate,
    load_surrogate,
    preset_heads,
    save_surrogate,
)
from .evaluate import ErrorStats, error_stats, evaluate_surrogate, predict_field
from .fem import SCENARIOS, assemble, build_lattice, make_load_case, solve_static
from .training import LossSpec, TrainConfig, TrainReport, grad_check, train
