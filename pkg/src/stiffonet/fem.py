"""2D frame finite elements: Timoshenko beams, lattice builder, loads, solves.

Every element is a prismatic 2-node Timoshenko frame member with 3 DOFs
per node (u_x, u_y, r_z), so the stiffness matrix is exact for end
loading: a one-element cantilever reproduces PL^3/(3EI) + PL/(kGA) to
machine precision.  Distributed line loads enter through work-equivalent
(cubic Hermite) nodal forces on the bottom chord.

The built-in structure is a 20 m x 5 m planar lattice with 21 bottom
nodes on a 1 m pitch, 21 top nodes, and 14 mid-height web nodes, pinned
by a hinge at (0,0) and a roller at (20,0).  Geometry, member pattern,
and support layout are mirror-symmetric about midspan, which the tests
exploit: under a symmetric load, u_y is symmetric and r_z antisymmetric,
while u_x is antisymmetric only up to a rigid shift set by which end
carries the hinge.

Units are SI throughout (N, m, rad); load intensities cross the public
interface in kN/m and are converted on ingestion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    Factorization,
    NotPositiveDefiniteError,
    SingularMatrixError,
    factor,
    solve,
)

__all__ = [
    "MaterialSection",
    "FrameModel",
    "GlobalSystem",
    "LoadCase",
    "SCENARIOS",
    "steel_rect_section",
    "build_lattice",
    "element_stiffness",
    "assemble",
    "nodal_intensity_profile",
    "equivalent_nodal_loads",
    "make_load_case",
    "StaticSolver",
    "solve_static",
    "model_to_json",
    "model_from_json",
]

SCENARIOS = ("udl-half", "uvl-half", "udl-full")

# Intensity bounds for generated load cases, kN/m.
INTENSITY_MIN = 0.1
INTENSITY_MAX = 15.0

DOF_NAMES = ("u_x", "u_y", "r_z")
NDOF = 3


@dataclass(frozen=True)
class MaterialSection:
    """Homogeneous material plus rectangular cross-section constants."""

    youngs_modulus: float  # Pa
    poisson_ratio: float
    density: float  # kg/m^3
    width: float  # m
    height: float  # m
    shear_correction: float = 5.0 / 6.0

    def __post_init__(self):
        for name in ("youngs_modulus", "density", "width", "height", "shear_correction"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (0, 0.5)")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def inertia(self) -> float:
        # Bending about the in-plane axis of a w x h rectangle.
        return self.width * self.height**3 / 12.0

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))


def steel_rect_section() -> MaterialSection:
    """Default member: structural steel, 0.40 m x 0.25 m rectangle."""
    return MaterialSection(
        youngs_modulus=210e9,
        poisson_ratio=0.3,
        density=7850.0,
        width=0.40,
        height=0.25,
    )


@dataclass
class FrameModel:
    """Node coordinates, members, supports, and the loaded bottom chord.

    elements are (node_a, node_b, MaterialSection) triples; supports are
    (node, constrained local DOFs) with DOFs indexed 0=u_x, 1=u_y, 2=r_z.
    """

    nodes: np.ndarray  # (n, 2) coordinates in m
    elements: list
    supports: list
    bottom_chord: list

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValueError("nodes must be an (n, 2) array")
        n = self.n_nodes
        for a, b, _ in self.elements:
            if a == b:
                raise ValueError(f"element connects node {a} to itself")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"element ({a}, {b}) references a missing node")
        for node, dofs in self.supports:
            if not 0 <= node < n:
                raise ValueError(f"support on missing node {node}")
            if not set(dofs) <= {0, 1, 2}:
                raise ValueError(f"bad DOF set {dofs} on node {node}")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_dofs(self) -> int:
        return NDOF * self.n_nodes

    def constrained_dofs(self) -> np.ndarray:
        out = sorted(NDOF * node + d for node, dofs in self.supports for d in dofs)
        return np.asarray(out, dtype=np.intp)


@dataclass
class GlobalSystem:
    """Assembled stiffness with the support bookkeeping for reduction."""

    k: np.ndarray  # (3n, 3n), symmetric
    constrained: np.ndarray  # sorted global DOF indices held at zero
    free: np.ndarray  # complement of constrained, sorted

    @property
    def n_dofs(self) -> int:
        return self.k.shape[0]

    def k_free(self) -> np.ndarray:
        """Support-reduced stiffness (rows/columns of free DOFs)."""
        return self.k[np.ix_(self.free, self.free)]

    def reduce(self, v) -> np.ndarray:
        """Restrict a full DOF vector to the free DOFs."""
        v = np.asarray(v, dtype=np.float64)
        return v[self.free]

    def expand(self, v_free) -> np.ndarray:
        """Pad a free-DOF vector with zeros at the constrained entries."""
        out = np.zeros(self.n_dofs, dtype=np.float64)
        out[self.free] = v_free
        return out

    def free_positions(self, nodes) -> np.ndarray:
        """Positions of the given nodes' DOFs within the free-DOF vector.

        Raises if any requested DOF is constrained, since a constrained
        DOF has no slot in the reduced system.
        """
        dofs = np.array([NDOF * n + d for n in nodes for d in range(NDOF)])
        pos = np.searchsorted(self.free, dofs)
        bad = (pos >= self.free.size) | (self.free[np.minimum(pos, self.free.size - 1)] != dofs)
        if np.any(bad):
            raise ValueError(f"DOFs {dofs[bad].tolist()} are constrained or out of range")
        return pos


@dataclass
class LoadCase:
    """One distributed-load scenario instance on the bottom chord.

    intensity and nodal_intensities are in kN/m; force_vector holds the
    assembled consistent nodal forces in N and N*m over all DOFs.
    """

    scenario: str
    intensity: float
    nodal_intensities: np.ndarray
    force_vector: np.ndarray

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not INTENSITY_MIN <= self.intensity <= INTENSITY_MAX:
            raise ValueError(
                f"intensity {self.intensity} outside [{INTENSITY_MIN}, {INTENSITY_MAX}] kN/m"
            )


# --------------------------------------------------------------------------
# element matrices


def _local_stiffness(ms: MaterialSection, length: float) -> np.ndarray:
    """6x6 Timoshenko frame element in local axes.

    DOF order (u1, v1, t1, u2, v2, t2).  Bending entries carry the shear
    parameter phi = 12EI/(kappa G A L^2); phi -> 0 recovers the
    Euler-Bernoulli matrix.
    """
    e = ms.youngs_modulus
    a = ms.area
    i = ms.inertia
    g = ms.shear_modulus
    kappa = ms.shear_correction
    L = length

    phi = 12.0 * e * i / (kappa * g * a * L * L)
    ax = e * a / L
    bz = e * i / ((1.0 + phi) * L**3)

    k = np.zeros((6, 6))
    k[0, 0] = k[3, 3] = ax
    k[0, 3] = k[3, 0] = -ax

    c12 = 12.0 * bz
    c6 = 6.0 * bz * L
    c4 = (4.0 + phi) * bz * L * L
    c2 = (2.0 - phi) * bz * L * L
    # v1, t1, v2, t2 block
    k[1, 1] = k[4, 4] = c12
    k[1, 4] = k[4, 1] = -c12
    k[1, 2] = k[2, 1] = k[1, 5] = k[5, 1] = c6
    k[2, 4] = k[4, 2] = k[4, 5] = k[5, 4] = -c6
    k[2, 2] = k[5, 5] = c4
    k[2, 5] = k[5, 2] = c2
    return k


def _transformation(dx: float, dy: float, length: float) -> np.ndarray:
    """Global -> local rotation for both element nodes."""
    c = dx / length
    s = dy / length
    t = np.eye(6)
    t[0, 0] = t[1, 1] = t[3, 3] = t[4, 4] = c
    t[0, 1] = t[3, 4] = s
    t[1, 0] = t[4, 3] = -s
    return t


def element_stiffness(element, coords) -> np.ndarray:
    """Transformed 6x6 stiffness of one element in global axes.

    element is a (node_a, node_b, MaterialSection) triple, coords the
    full (n, 2) node array.
    """
    a, b, ms = element
    coords = np.asarray(coords, dtype=np.float64)
    dx = coords[b, 0] - coords[a, 0]
    dy = coords[b, 1] - coords[a, 1]
    length = float(np.hypot(dx, dy))
    if length < 1e-9:
        raise ValueError(f"element ({a}, {b}) has near-zero length {length:.3e}")
    t = _transformation(dx, dy, length)
    k = t.T @ _local_stiffness(ms, length) @ t
    # BLAS rounding can leave K_e asymmetric at the last bit; pin it.
    return 0.5 * (k + k.T)


# --------------------------------------------------------------------------
# lattice builder

# Bays (between consecutive bottom nodes) left without a web node and
# diagonals.  14 braced bays give the 14 web nodes that complete the
# 56-node count; the set is mirror-symmetric about midspan.
UNBRACED_BAYS = frozenset({3, 6, 9, 10, 13, 16})


def build_lattice(span: float = 20.0, height: float = 5.0, material=None) -> FrameModel:
    """Build the 56-node lattice: chords, verticals, and braced-bay diagonals.

    Nodes 0..20 run along the bottom chord, 21..41 along the top chord,
    42..55 are web nodes at mid-height over the braced bays.  A hinge at
    (0,0) constrains u_x,u_y and a roller at (span,0) constrains u_y.
    """
    if span <= 0 or height <= 0:
        raise ValueError("span and height must be positive")
    ms = material if material is not None else steel_rect_section()

    n_bottom = 21
    pitch = span / (n_bottom - 1)
    xs = np.arange(n_bottom) * pitch

    nodes = [(x, 0.0) for x in xs]
    nodes += [(x, height) for x in xs]
    braced = [b for b in range(n_bottom - 1) if b not in UNBRACED_BAYS]
    web_of_bay = {}
    for b in braced:
        web_of_bay[b] = len(nodes)
        nodes.append((xs[b] + 0.5 * pitch, 0.5 * height))

    top = lambda i: n_bottom + i

    elements = []
    for i in range(n_bottom - 1):
        elements.append((i, i + 1, ms))  # bottom chord
    for i in range(n_bottom - 1):
        elements.append((top(i), top(i + 1), ms))  # top chord
    for i in range(n_bottom):
        elements.append((i, top(i), ms))  # verticals
    for b in braced:
        w = web_of_bay[b]
        elements.append((b, w, ms))
        elements.append((b + 1, w, ms))
        elements.append((top(b), w, ms))
        elements.append((top(b + 1), w, ms))

    supports = [(0, (0, 1)), (n_bottom - 1, (1,))]
    return FrameModel(
        nodes=np.asarray(nodes),
        elements=elements,
        supports=supports,
        bottom_chord=list(range(n_bottom)),
    )


def assemble(model: FrameModel) -> GlobalSystem:
    """Scatter-add all transformed element matrices into the global K."""
    n = model.n_dofs
    k = np.zeros((n, n))
    for a, b, ms in model.elements:
        ke = element_stiffness((a, b, ms), model.nodes)
        idx = np.array([3 * a, 3 * a + 1, 3 * a + 2, 3 * b, 3 * b + 1, 3 * b + 2])
        k[np.ix_(idx, idx)] += ke
    constrained = model.constrained_dofs()
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    return GlobalSystem(k=k, constrained=constrained, free=np.nonzero(mask)[0])


# --------------------------------------------------------------------------
# distributed loads

def nodal_intensity_profile(scenario, intensity, xs, span=20.0, uvl_direction="left"):
    """Line-load intensity (kN/m) sampled at the bottom-chord node positions.

    udl-full is uniform; udl-half covers [0, span/2] (boundary node
    included on the loaded side); uvl-half ramps linearly from the peak
    at the support down to zero at midspan.  uvl_direction picks which
    support carries the peak, and mirrors udl-half too.
    """
    xs = np.asarray(xs, dtype=np.float64)
    half = 0.5 * span
    if uvl_direction not in ("left", "right"):
        raise ValueError(f"uvl_direction must be 'left' or 'right', got {uvl_direction!r}")
    if uvl_direction == "right":
        xs = span - xs
    if scenario == "udl-full":
        return np.full_like(xs, intensity)
    if scenario == "udl-half":
        return np.where(xs <= half, intensity, 0.0)
    if scenario == "uvl-half":
        return intensity * np.clip(1.0 - xs / half, 0.0, 1.0)
    raise ValueError(f"unknown scenario {scenario!r}")


def _hermite_line_load(q1: float, q2: float, length: float) -> np.ndarray:
    """Work-equivalent end forces of a linearly varying transverse load.

    q in N/m along local +y.  Integrating q against the cubic Hermite
    shape functions gives, for uniform q, the familiar
    [qL/2, qL^2/12, qL/2, -qL^2/12].
    """
    L = length
    f1 = L * (7.0 * q1 + 3.0 * q2) / 20.0
    m1 = L * L * (3.0 * q1 + 2.0 * q2) / 60.0
    f2 = L * (3.0 * q1 + 7.0 * q2) / 20.0
    m2 = -L * L * (2.0 * q1 + 3.0 * q2) / 60.0
    return np.array([0.0, f1, m1, 0.0, f2, m2])


def _element_load_bounds(scenario, intensity, xa, xb, span, uvl_direction):
    """Signed line-load values (N/m, negative = down) at an element's ends.

    The scenario shape is evaluated exactly per element rather than
    interpolated from nodal samples, so the half-span discontinuity sits
    on the element boundary and the resultant is conserved exactly.
    """
    w = -1000.0 * intensity  # kN/m down -> N/m in global y
    half = 0.5 * span
    if uvl_direction == "right":
        xa, xb = span - xb, span - xa
    if scenario == "udl-full":
        return w, w
    if scenario == "udl-half":
        # Loaded iff the element lies in [0, span/2]; grid puts the break
        # exactly on a node.
        return (w, w) if xb <= half + 1e-12 else (0.0, 0.0)
    if scenario == "uvl-half":
        if xa >= half - 1e-12:
            return 0.0, 0.0
        ramp = lambda x: 1.0 - x / half
        qa, qb = w * ramp(xa), w * ramp(xb)
        if uvl_direction == "right":
            qa, qb = qb, qa
        return qa, qb
    raise ValueError(f"unknown scenario {scenario!r}")


def equivalent_nodal_loads(model, scenario, intensity, uvl_direction="left") -> np.ndarray:
    """Assemble the consistent nodal force vector for one load case.

    Returns the full-DOF vector (N, N*m).  Only bottom-chord elements
    carry load; they are horizontal, so local and global axes coincide.
    """
    if not INTENSITY_MIN <= intensity <= INTENSITY_MAX:
        raise ValueError(f"intensity {intensity} outside bounds")
    chord = model.bottom_chord
    span = float(model.nodes[chord[-1], 0] - model.nodes[chord[0], 0])
    f = np.zeros(model.n_dofs)
    for a, b in zip(chord[:-1], chord[1:]):
        xa, xb = model.nodes[a, 0], model.nodes[b, 0]
        q1, q2 = _element_load_bounds(scenario, intensity, xa, xb, span, uvl_direction)
        if q1 == 0.0 and q2 == 0.0:
            continue
        fe = _hermite_line_load(q1, q2, xb - xa)
        idx = np.array([3 * a, 3 * a + 1, 3 * a + 2, 3 * b, 3 * b + 1, 3 * b + 2])
        f[idx] += fe
    return f


def make_load_case(model, scenario, intensity, uvl_direction="left") -> LoadCase:
    """LoadCase with nodal intensity samples and assembled force vector."""
    xs = model.nodes[model.bottom_chord, 0]
    span = float(xs[-1] - xs[0])
    profile = nodal_intensity_profile(scenario, intensity, xs, span, uvl_direction)
    force = equivalent_nodal_loads(model, scenario, intensity, uvl_direction)
    return LoadCase(
        scenario=scenario,
        intensity=float(intensity),
        nodal_intensities=profile,
        force_vector=force,
    )


# --------------------------------------------------------------------------
# static solution


class StaticSolver:
    """Factored support-reduced system, reusable across load cases."""

    def __init__(self, sys: GlobalSystem, kind: str = "cholesky"):
        self.sys = sys
        if sys.free.size == 0:
            raise SingularMatrixError("no free DOFs")
        try:
            self.fact: Factorization = factor(sys.k_free(), kind=kind)
        except NotPositiveDefiniteError as exc:
            # A frame with too few supports is only semidefinite.
            raise SingularMatrixError(
                f"reduced stiffness is not positive definite ({exc}); "
                "check the support set"
            ) from exc

    def solve(self, f) -> np.ndarray:
        """Full-DOF displacement vector; constrained entries exactly 0."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.sys.n_dofs,):
            raise ValueError(f"force vector must have {self.sys.n_dofs} entries")
        u_free = solve(self.fact, f[self.sys.free])
        return self.sys.expand(u_free)


def solve_static(sys: GlobalSystem, f) -> np.ndarray:
    """One-shot static solve; factor once and use StaticSolver for batches."""
    return StaticSolver(sys).solve(f)


# --------------------------------------------------------------------------
# model serialization

def model_to_json(model: FrameModel) -> str:
    """Portable JSON: nodes, elements, supports, section constants."""
    sections = []
    sec_index = {}
    elements = []
    for a, b, ms in model.elements:
        if id(ms) not in sec_index:
            sec_index[id(ms)] = len(sections)
            sections.append(
                {
                    "youngs_modulus": ms.youngs_modulus,
                    "poisson_ratio": ms.poisson_ratio,
                    "density": ms.density,
                    "width": ms.width,
                    "height": ms.height,
                    "shear_correction": ms.shear_correction,
                }
            )
        elements.append([int(a), int(b), sec_index[id(ms)]])
    doc = {
        "nodes": [[float(x), float(y)] for x, y in model.nodes],
        "sections": sections,
        "elements": elements,
        "supports": [[int(n), sorted(int(d) for d in dofs)] for n, dofs in model.supports],
        "bottom_chord": [int(i) for i in model.bottom_chord],
    }
    return json.dumps(doc, indent=2)


def model_from_json(text: str) -> FrameModel:
    doc = json.loads(text)
    sections = [MaterialSection(**s) for s in doc["sections"]]
    elements = [(a, b, sections[s]) for a, b, s in doc["elements"]]
    supports = [(n, tuple(d)) for n, d in doc["supports"]]
    return FrameModel(
        nodes=np.asarray(doc["nodes"], dtype=np.float64),
        elements=elements,
        supports=supports,
        bottom_chord=list(doc["bottom_chord"]),
    )
