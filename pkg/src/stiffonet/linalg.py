"""Dense 64-bit linear algebra: factorizations, multi-RHS solves, and
Schur-complement reduction of partitioned symmetric systems.

Everything here works on plain row-major float64 numpy arrays.  Problem
sizes in this toolkit stay in the hundreds of DOFs, so dense storage and
direct factorizations are the right tool; there is deliberately no sparse
or iterative path.

The reduction pipeline splits a system K U = F into picked DOFs (I) and
remaining DOFs (N) and produces

    S   = K_II - K_IN @ inv(K_NN) @ K_NI      (Schur complement)
    F_c = F_I  - K_IN @ inv(K_NN) @ F_N       (reduced force)
    U_N = inv(K_NN) @ (F_N - K_NI @ U_I)      (interior recovery)

K_NN is factored once per SchurSystem and reused for every force vector
and recovery, since K is fixed while F varies per load sample.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "SingularMatrixError",
    "NotPositiveDefiniteError",
    "Factorization",
    "Partition",
    "SchurSystem",
    "factor",
    "solve",
    "solve_multi",
    "schur_reduce",
    "reduce_force",
    "recover_interior",
    "scatter",
    "save_matrix",
    "load_matrix",
]

# Pivots below this fraction of the largest matrix entry flag a singular
# system, e.g. a stiffness matrix whose rigid-body modes were never
# constrained.  Scaled to machine epsilon so it only fires on genuine
# rank deficiency.
SINGULAR_PIVOT_RTOL = 1e-14


class SingularMatrixError(ValueError):
    """Factorization hit a pivot indistinguishable from zero."""


class NotPositiveDefiniteError(ValueError):
    """Cholesky requested on a matrix that is not SPD."""


def _as_matrix(m, name="matrix") -> np.ndarray:
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _as_vector(v, name="vector") -> np.ndarray:
    a = np.ascontiguousarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass
class Factorization:
    """Factored square matrix ready for repeated solves.

    kind is "lu" (partial pivoting, any nonsingular matrix) or "cholesky"
    (SPD only).  `factors`/`pivots` hold the LAPACK representation.
    """

    kind: str
    n: int
    factors: np.ndarray
    pivots: np.ndarray | None = None  # LU row swaps; None for Cholesky


def factor(m, kind: str = "lu") -> Factorization:
    """Factor a square matrix for later solves.

    Raises SingularMatrixError when any pivot falls below
    SINGULAR_PIVOT_RTOL times the largest entry of `m`, and
    NotPositiveDefiniteError when a Cholesky factorization fails.
    """
    a = _as_matrix(m)
    n, ncols = a.shape
    if n != ncols:
        raise ValueError(f"matrix must be square, got {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero")

    if kind == "lu":
        with warnings.catch_warnings():
            # scipy warns on exact zero pivots; our own check below turns
            # them into SingularMatrixError.
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if np.any(pivots < SINGULAR_PIVOT_RTOL * scale):
            k = int(np.argmin(pivots))
            raise SingularMatrixError(
                f"pivot {pivots[k]:.3e} at step {k} below "
                f"{SINGULAR_PIVOT_RTOL:g} * max entry {scale:.3e}"
            )
        return Factorization(kind="lu", n=n, factors=lu, pivots=piv)

    if kind == "cholesky":
        sym_err = np.max(np.abs(a - a.T))
        if sym_err > 1e-10 * scale:
            raise NotPositiveDefiniteError(
                f"matrix asymmetric by {sym_err:.3e} (relative {sym_err / scale:.3e})"
            )
        try:
            c, lower = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(str(exc)) from exc
        return Factorization(kind="cholesky", n=n, factors=c)

    raise ValueError(f"unknown factorization kind {kind!r}")


def solve(f: Factorization, b) -> np.ndarray:
    """Solve the factored system for a single right-hand side."""
    rhs = _as_vector(b, "right-hand side")
    if rhs.shape[0] != f.n:
        raise ValueError(f"rhs length {rhs.shape[0]} != system size {f.n}")
    if f.kind == "lu":
        return scipy.linalg.lu_solve((f.factors, f.pivots), rhs, check_finite=False)
    return scipy.linalg.cho_solve((f.factors, True), rhs, check_finite=False)


def solve_multi(f: Factorization, rhs) -> np.ndarray:
    """Solve against every column of `rhs` independently.

    Columns are solved one at a time so the result is bitwise identical
    to stacking single solves.
    """
    r = _as_matrix(rhs, "rhs matrix")
    if r.shape[0] != f.n:
        raise ValueError(f"rhs has {r.shape[0]} rows, system size is {f.n}")
    cols = [solve(f, r[:, j]) for j in range(r.shape[1])]
    out = np.empty_like(r)
    for j, c in enumerate(cols):
        out[:, j] = c
    return out


@dataclass
class Partition:
    """Split of DOF indices 0..n-1 into picked (I) and remaining (N) sets.

    Both lists are sorted ascending, non-empty, and together cover every
    index exactly once.
    """

    picked: np.ndarray
    remaining: np.ndarray

    def __post_init__(self):
        self.picked = np.asarray(self.picked, dtype=np.intp)
        self.remaining = np.asarray(self.remaining, dtype=np.intp)
        if self.picked.size == 0 or self.remaining.size == 0:
            raise ValueError("both picked and remaining must be non-empty")
        for name, idx in (("picked", self.picked), ("remaining", self.remaining)):
            if np.any(np.diff(idx) <= 0):
                raise ValueError(f"{name} indices must be strictly ascending")
        n = self.n
        union = np.concatenate([self.picked, self.remaining])
        if np.min(union) < 0 or np.max(union) >= n:
            raise ValueError("indices out of range")
        if len(np.unique(union)) != n:
            raise ValueError("picked and remaining must cover all DOFs exactly once")

    @property
    def n(self) -> int:
        return self.picked.size + self.remaining.size

    @classmethod
    def from_picked(cls, picked, n: int) -> "Partition":
        picked = np.unique(np.asarray(picked, dtype=np.intp))
        mask = np.ones(n, dtype=bool)
        if picked.size and (picked.min() < 0 or picked.max() >= n):
            raise ValueError(f"picked indices out of range for n={n}")
        mask[picked] = False
        return cls(picked=picked, remaining=np.nonzero(mask)[0])


@dataclass
class SchurSystem:
    """Reduced system S @ U_I = F_c with the pieces needed for recovery."""

    partition: Partition
    s_matrix: np.ndarray
    knn_fact: Factorization = field(repr=False)
    kin: np.ndarray = field(repr=False)
    kni: np.ndarray = field(repr=False)

    @property
    def n_picked(self) -> int:
        return self.partition.picked.size


def schur_reduce(k, p: Partition, kind: str = "lu") -> SchurSystem:
    """Reduce K onto the picked DOFs: S = K_II - K_IN @ inv(K_NN) @ K_NI.

    K must be symmetric (checked to 1e-10 relative).  K_NN is factored
    once here; reduce_force and recover_interior reuse it per sample.
    """
    a = _as_matrix(k)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if p.n != n:
        raise ValueError(f"partition covers {p.n} DOFs, matrix has {n}")
    scale = np.max(np.abs(a))
    if scale == 0.0 or np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ValueError("schur_reduce requires a symmetric matrix")

    pi, pn = p.picked, p.remaining
    k_ii = a[np.ix_(pi, pi)]
    k_in = a[np.ix_(pi, pn)]
    k_ni = a[np.ix_(pn, pi)]
    k_nn = a[np.ix_(pn, pn)]

    knn_fact = factor(k_nn, kind=kind)
    s = k_ii - k_in @ solve_multi(knn_fact, k_ni)
    return SchurSystem(partition=p, s_matrix=s, knn_fact=knn_fact, kin=k_in, kni=k_ni)


def reduce_force(s: SchurSystem, f) -> np.ndarray:
    """Reduced force F_c = F_I - K_IN @ inv(K_NN) @ F_N."""
    v = _as_vector(f, "force vector")
    if v.shape[0] != s.partition.n:
        raise ValueError(f"force length {v.shape[0]} != full DOF count {s.partition.n}")
    f_i = v[s.partition.picked]
    f_n = v[s.partition.remaining]
    return f_i - s.kin @ solve(s.knn_fact, f_n)


def recover_interior(s: SchurSystem, u_i, f) -> np.ndarray:
    """Remaining DOFs U_N = inv(K_NN) @ (F_N - K_NI @ U_I)."""
    ui = _as_vector(u_i, "picked solution")
    if ui.shape[0] != s.n_picked:
        raise ValueError(f"picked solution length {ui.shape[0]} != |I| {s.n_picked}")
    v = _as_vector(f, "force vector")
    if v.shape[0] != s.partition.n:
        raise ValueError(f"force length {v.shape[0]} != full DOF count {s.partition.n}")
    f_n = v[s.partition.remaining]
    return solve(s.knn_fact, f_n - s.kni @ ui)


def scatter(p: Partition, u_i, u_n) -> np.ndarray:
    """Merge picked and remaining values back into full DOF order."""
    ui = _as_vector(u_i, "picked values")
    un = _as_vector(u_n, "remaining values")
    if ui.shape[0] != p.picked.size or un.shape[0] != p.remaining.size:
        raise ValueError("scatter lengths do not match partition")
    out = np.empty(p.n, dtype=np.float64)
    out[p.picked] = ui
    out[p.remaining] = un
    return out


def save_matrix(path, m) -> None:
    """Write a matrix as text: header line `rows cols`, then row-major
    whitespace-separated decimals.  Debugging interface, full precision."""
    a = _as_matrix(m)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_matrix(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"bad matrix header in {path}")
        rows, cols = int(header[0]), int(header[1])
        data = np.array(fh.read().split(), dtype=np.float64)
    if data.size != rows * cols:
        raise ValueError(f"expected {rows * cols} entries, got {data.size}")
    if not np.all(np.isfinite(data)):
        raise ValueError("matrix file has non-finite entries")
    return data.reshape(rows, cols)
