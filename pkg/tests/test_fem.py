"""Tests for the frame kernel.

Oracles, written before the implementation and kept independent of it:
closed-form Timoshenko cantilever deflection, Euler-Bernoulli entries in
the vanishing-shear limit, Gauss-Legendre quadrature of load times
Hermite shape functions for the consistent load vectors, and a
coordinate-built mirror map for symmetry of the lattice solution.
"""

import numpy as np
import pytest

from stiffonet import fem
from stiffonet.fem import (
    FrameModel,
    MaterialSection,
    StaticSolver,
    assemble,
    build_lattice,
    element_stiffness,
    equivalent_nodal_loads,
    make_load_case,
    model_from_json,
    model_to_json,
    nodal_intensity_profile,
    solve_static,
    steel_rect_section,
)
from stiffonet.linalg import SingularMatrixError, factor


def hermite_load_oracle(qfun, length, npts=8):
    """Consistent end loads by quadrature of q(x) * Hermite shapes.

    Independent of the closed-form expressions in fem: integrates with
    Gauss-Legendre, exact here since integrands are polynomials of
    degree <= 4.
    """
    x, w = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * length * (x + 1.0)
    w = 0.5 * length * w
    xi = x / length
    shapes = [
        1.0 - 3.0 * xi**2 + 2.0 * xi**3,
        length * (xi - 2.0 * xi**2 + xi**3),
        3.0 * xi**2 - 2.0 * xi**3,
        length * (-(xi**2) + xi**3),
    ]
    q = qfun(x)
    return np.array([np.sum(w * q * n) for n in shapes])


def two_node_beam(length, material=None, fix=(0, 1, 2)):
    ms = material if material is not None else steel_rect_section()
    return FrameModel(
        nodes=np.array([[0.0, 0.0], [length, 0.0]]),
        elements=[(0, 1, ms)],
        supports=[(0, tuple(fix))],
        bottom_chord=[0, 1],
    )


class TestMaterialSection:
    def test_derived_constants(self):
        ms = steel_rect_section()
        assert ms.area == pytest.approx(0.1, rel=1e-15)
        assert ms.inertia == pytest.approx(0.4 * 0.25**3 / 12.0, rel=1e-15)
        assert ms.shear_modulus == pytest.approx(210e9 / 2.6, rel=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            MaterialSection(210e9, 0.5, 7850.0, 0.4, 0.25)
        with pytest.raises(ValueError):
            MaterialSection(-1.0, 0.3, 7850.0, 0.4, 0.25)


class TestElementStiffness:
    def test_axial_entry_horizontal(self):
        ms = steel_rect_section()
        k = element_stiffness((0, 1, ms), np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert k[0, 0] == pytest.approx(ms.youngs_modulus * ms.area / 2.0, rel=1e-12)

    def test_symmetric(self):
        ms = steel_rect_section()
        coords = np.array([[0.0, 0.0], [3.0, 4.0]])
        k = element_stiffness((0, 1, ms), coords)
        assert np.array_equal(k, k.T)

    def test_rigid_translation_annihilated(self):
        ms = steel_rect_section()
        coords = np.array([[0.2, -1.0], [3.0, 4.0]])
        k = element_stiffness((0, 1, ms), coords)
        for v in ([1, 0, 0, 1, 0, 0], [0, 1, 0, 0, 1, 0]):
            r = k @ np.asarray(v, dtype=float)
            assert np.max(np.abs(r)) < 1e-6 * np.max(np.abs(k))

    def test_three_zero_eigenvalues(self):
        ms = steel_rect_section()
        coords = np.array([[0.0, 0.0], [2.0, 1.0]])
        k = element_stiffness((0, 1, ms), coords)
        lam = np.sort(np.abs(np.linalg.eigvalsh(k)))
        assert np.all(lam[:3] < 1e-8 * lam[-1])
        assert np.all(lam[3:] > 1e-8 * lam[-1])

    def test_euler_bernoulli_limit(self):
        # kappa G A -> infinity kills phi; bending block must match the
        # classical 12/6/4/2 EI pattern.
        ms = MaterialSection(210e9, 0.3, 7850.0, 0.4, 0.25, shear_correction=1e9)
        L = 2.5
        k = element_stiffness((0, 1, ms), np.array([[0.0, 0.0], [L, 0.0]]))
        ei = ms.youngs_modulus * ms.inertia
        assert k[1, 1] == pytest.approx(12.0 * ei / L**3, rel=1e-9)
        assert k[1, 2] == pytest.approx(6.0 * ei / L**2, rel=1e-9)
        assert k[2, 2] == pytest.approx(4.0 * ei / L, rel=1e-9)
        assert k[2, 5] == pytest.approx(2.0 * ei / L, rel=1e-9)

    def test_vertical_element_swaps_roles(self):
        ms = steel_rect_section()
        L = 2.0
        k = element_stiffness((0, 1, ms), np.array([[0.0, 0.0], [0.0, L]]))
        assert k[1, 1] == pytest.approx(ms.youngs_modulus * ms.area / L, rel=1e-12)

    def test_zero_length_rejected(self):
        ms = steel_rect_section()
        with pytest.raises(ValueError):
            element_stiffness((0, 1, ms), np.zeros((2, 2)))


class TestLattice:
    def test_node_counts_and_positions(self):
        m = build_lattice(20.0, 5.0)
        assert m.n_nodes == 56
        ys = m.nodes[:, 1]
        bottom = np.nonzero(ys == 0.0)[0]
        top = np.nonzero(ys == 5.0)[0]
        web = np.nonzero(ys == 2.5)[0]
        assert len(bottom) == 21 and len(top) == 21 and len(web) == 14
        assert m.bottom_chord == list(bottom)
        xs = m.nodes[m.bottom_chord, 0]
        np.testing.assert_allclose(np.diff(xs), 1.0, rtol=0, atol=1e-15)

    def test_supports(self):
        m = build_lattice()
        c = m.constrained_dofs()
        assert len(c) == 3
        # hinge at node 0: u_x,u_y; roller at node 20: u_y
        assert c.tolist() == [0, 1, 3 * 20 + 1]

    def test_geometry_is_mirror_symmetric(self):
        m = build_lattice()
        coords = m.nodes
        for x, y in coords:
            d = np.hypot(coords[:, 0] - (20.0 - x), coords[:, 1] - y)
            assert d.min() < 1e-12

    def test_reduced_stiffness_is_spd(self):
        sys = assemble(build_lattice())
        factor(sys.k_free(), "cholesky")  # must not raise

    def test_rejects_bad_span(self):
        with pytest.raises(ValueError):
            build_lattice(0.0, 5.0)


class TestAssemble:
    def test_single_element_model(self):
        ms = steel_rect_section()
        m = two_node_beam(2.0)
        sys = assemble(m)
        ke = element_stiffness((0, 1, ms), m.nodes)
        np.testing.assert_allclose(sys.k, ke, rtol=1e-15)

    def test_exactly_symmetric(self):
        sys = assemble(build_lattice())
        assert np.array_equal(sys.k, sys.k.T)

    def test_rigid_body_null_space(self):
        m = build_lattice()
        sys = assemble(m)
        n = m.n_nodes
        tx = np.tile([1.0, 0.0, 0.0], n)
        ty = np.tile([0.0, 1.0, 0.0], n)
        rot = np.zeros(3 * n)
        rot[0::3] = -m.nodes[:, 1]
        rot[1::3] = m.nodes[:, 0]
        rot[2::3] = 1.0
        k_norm = np.linalg.norm(sys.k)
        for r in (tx, ty, rot):
            resid = np.linalg.norm(sys.k @ r)
            assert resid <= 1e-8 * k_norm * np.linalg.norm(r)


class TestLoads:
    def test_udl_full_resultant(self):
        m = build_lattice()
        f = equivalent_nodal_loads(m, "udl-full", 1.0)
        total = np.sum(f[1::3])
        assert total == pytest.approx(-20_000.0, rel=1e-10)

    def test_udl_half_resultant(self):
        m = build_lattice()
        w = 3.7
        f = equivalent_nodal_loads(m, "udl-half", w)
        assert np.sum(f[1::3]) == pytest.approx(-10_000.0 * w, rel=1e-10)

    def test_uvl_half_resultant_is_triangle_area(self):
        m = build_lattice()
        q = 2.5
        f = equivalent_nodal_loads(m, "uvl-half", q)
        assert np.sum(f[1::3]) == pytest.approx(-q * 10.0 / 2.0 * 1000.0, rel=1e-10)

    def test_udl_half_interior_moments_cancel(self):
        m = build_lattice()
        w = 2.0
        f = equivalent_nodal_loads(m, "udl-half", w)
        moments = f[2::3][:21]
        # uniform over [0,10]: only nodes 0 and 10 keep an end moment
        q = -1000.0 * w
        assert moments[0] == pytest.approx(q / 12.0, rel=1e-12)
        assert moments[10] == pytest.approx(-q / 12.0, rel=1e-12)
        untouched = np.delete(moments, [0, 10])
        assert np.all(untouched == 0.0)

    def test_against_quadrature_oracle_uvl(self):
        # Element from x=2 to x=3 under the left-peak ramp of intensity q:
        # line load is -1000 q (1 - x/10) on it.
        m = build_lattice()
        q = 4.0
        f = equivalent_nodal_loads(m, "uvl-half", q)
        # node 2 accumulates from elements 1-2 and 2-3; both via quadrature
        left = hermite_load_oracle(lambda x: -1000.0 * q * (1.0 - (1.0 + x) / 10.0), 1.0)
        right = hermite_load_oracle(lambda x: -1000.0 * q * (1.0 - (2.0 + x) / 10.0), 1.0)
        assert f[3 * 2 + 1] == pytest.approx(left[2] + right[0], rel=1e-12)
        assert f[3 * 2 + 2] == pytest.approx(left[3] + right[1], rel=1e-12)

    def test_nodal_profile_shapes(self):
        xs = np.arange(21.0)
        full = nodal_intensity_profile("udl-full", 2.0, xs)
        assert np.all(full == 2.0)
        half = nodal_intensity_profile("udl-half", 2.0, xs)
        assert np.all(half[:11] == 2.0) and np.all(half[11:] == 0.0)
        ramp = nodal_intensity_profile("uvl-half", 2.0, xs)
        np.testing.assert_allclose(ramp[:11], 2.0 * (1.0 - xs[:11] / 10.0), atol=1e-15)
        assert np.all(ramp[11:] == 0.0)

    def test_uvl_direction_right_mirrors(self):
        xs = np.arange(21.0)
        left = nodal_intensity_profile("uvl-half", 3.0, xs, uvl_direction="left")
        right = nodal_intensity_profile("uvl-half", 3.0, xs, uvl_direction="right")
        np.testing.assert_allclose(right, left[::-1], atol=1e-15)
        m = build_lattice()
        fl = equivalent_nodal_loads(m, "uvl-half", 3.0, uvl_direction="left")
        fr = equivalent_nodal_loads(m, "uvl-half", 3.0, uvl_direction="right")
        # mirrored loading: vertical forces reverse, moments flip sign
        np.testing.assert_allclose(fr[1::3][:21], fl[1::3][:21][::-1], atol=1e-9)
        np.testing.assert_allclose(fr[2::3][:21], -fl[2::3][:21][::-1], atol=1e-9)

    def test_make_load_case_bounds(self):
        m = build_lattice()
        with pytest.raises(ValueError):
            make_load_case(m, "udl-full", 0.05)
        with pytest.raises(ValueError):
            make_load_case(m, "udl-full", 15.1)
        case = make_load_case(m, "udl-full", 1.0)
        assert case.nodal_intensities.shape == (21,)
        assert case.force_vector.shape == (168,)


class TestSolveStatic:
    def test_zero_force_zero_displacement(self):
        sys = assemble(build_lattice())
        u = solve_static(sys, np.zeros(sys.n_dofs))
        assert np.all(u == 0.0)

    def test_cantilever_closed_form(self):
        ms = steel_rect_section()
        L, p = 3.0, 1e4
        m = two_node_beam(L)
        sys = assemble(m)
        f = np.zeros(6)
        f[4] = -p
        u = solve_static(sys, f)
        ei = ms.youngs_modulus * ms.inertia
        kga = ms.shear_correction * ms.shear_modulus * ms.area
        expect = -(p * L**3 / (3.0 * ei) + p * L / kga)
        assert u[4] == pytest.approx(expect, rel=1e-9)
        assert np.all(u[:3] == 0.0)  # constrained entries exactly zero

    def test_residual_bound(self):
        m = build_lattice()
        sys = assemble(m)
        solver = StaticSolver(sys)
        rng = np.random.default_rng(0)
        for _ in range(5):
            f = np.zeros(sys.n_dofs)
            f[sys.free] = rng.standard_normal(sys.free.size) * 1e4
            u = solver.solve(f)
            resid = np.linalg.norm((sys.k @ u - f)[sys.free])
            assert resid <= 1e-9 * np.linalg.norm(f)

    def test_linearity(self):
        m = build_lattice()
        sys = assemble(m)
        solver = StaticSolver(sys)
        f = equivalent_nodal_loads(m, "udl-full", 1.0)
        u1 = solver.solve(f)
        u7 = solver.solve(7.0 * f)
        np.testing.assert_allclose(u7, 7.0 * u1, rtol=1e-12, atol=1e-18)

    def test_energy_identity(self):
        m = build_lattice()
        sys = assemble(m)
        solver = StaticSolver(sys)
        for scen, w in (("udl-full", 1.0), ("udl-half", 8.0), ("uvl-half", 14.0)):
            f = equivalent_nodal_loads(m, scen, w)
            u = solver.solve(f)
            internal = u @ sys.k @ u
            external = u @ f
            assert internal == pytest.approx(external, rel=1e-9)

    def test_uy_symmetric_under_symmetric_load(self):
        # Geometry and load are mirror-symmetric; the hinge/roller swap
        # only adds a rigid x-shift, so u_y mirrors and r_z flips sign.
        m = build_lattice()
        sys = assemble(m)
        f = equivalent_nodal_loads(m, "udl-full", 5.0)
        u = solve_static(sys, f)
        coords = m.nodes
        mirror = np.empty(m.n_nodes, dtype=int)
        for i, (x, y) in enumerate(coords):
            d = np.hypot(coords[:, 0] - (20.0 - x), coords[:, 1] - y)
            mirror[i] = int(np.argmin(d))
            assert d[mirror[i]] < 1e-12
        uy = u[1::3]
        rz = u[2::3]
        scale = np.max(np.abs(uy))
        assert np.max(np.abs(uy - uy[mirror])) < 1e-8 * scale
        assert np.max(np.abs(rz + rz[mirror])) < 1e-8 * np.max(np.abs(rz))

    def test_insufficient_supports_raise(self):
        ms = steel_rect_section()
        m = two_node_beam(2.0, fix=(1,))  # vertical prop only: mechanisms left
        with pytest.raises(SingularMatrixError):
            solve_static(assemble(m), np.zeros(6))


class TestModelJson:
    def test_round_trip(self):
        m = build_lattice()
        m2 = model_from_json(model_to_json(m))
        assert np.array_equal(m2.nodes, m.nodes)
        assert len(m2.elements) == len(m.elements)
        assert m2.bottom_chord == m.bottom_chord
        assert [(n, tuple(d)) for n, d in m2.supports] == [
            (n, tuple(d)) for n, d in m.supports
        ]
        f = equivalent_nodal_loads(m, "udl-full", 1.0)
        u1 = solve_static(assemble(m), f)
        u2 = solve_static(assemble(m2), f)
        assert np.array_equal(u1, u2)
