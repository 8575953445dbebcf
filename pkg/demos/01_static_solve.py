"""Solve the lattice under a full-span distributed load and sanity-check it.

Builds the 56-node frame, applies a 7 kN/m uniform load on the bottom
chord, solves the static system, and prints the quantities a structural
engineer would eyeball first: total applied load, midspan deflection,
and the symmetry of the vertical displacement field.
"""

import numpy as np

from stiffonet import fem


def main():
    model = fem.build_lattice()
    system = fem.assemble(model)
    case = fem.make_load_case(model, "udl-full", intensity=7.0)
    u = fem.solve_static(system, case.force_vector)

    total = case.force_vector[1::3].sum()
    print(f"lattice: {model.n_nodes} nodes, {len(model.elements)} elements")
    print(f"applied vertical load: {total / 1000:.1f} kN (expect -7 kN/m x 20 m = -140 kN)")

    field = u.reshape(-1, 3)
    mid = field[10]  # bottom chord midspan
    print(f"midspan: u_x={mid[0] * 1000:.4f} mm, u_y={mid[1] * 1000:.4f} mm, r_z={mid[2]:.2e} rad")

    uy = field[model.bottom_chord, 1]
    asym = np.max(np.abs(uy - uy[::-1]))
    print(f"u_y mirror asymmetry along bottom chord: {asym:.3e} m (symmetric load)")

    residual = np.linalg.norm(system.k_free() @ u[system.free] - case.force_vector[system.free])
    print(f"equilibrium residual: {residual:.3e} N")


if __name__ == "__main__":
    main()
