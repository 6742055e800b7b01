"""Mesh geometry, adjoint exactness, field completion and boundary data."""

import numpy as np
import pytest

from wavemin import moduli
from wavemin.fields import (
    BoundarySpec,
    FieldState,
    MaterialField,
    Mesh,
    apply_constitutive,
    boundary_residual,
    build_source_data,
    complete_trial_field,
    get_layout,
    read_field_table,
    reaction_traces,
    write_field_table,
)
from wavemin.moduli import PassivityError, assemble_L, build_blocks

from test_moduli import random_passive


def random_interval(rng, n_cells=17):
    """Non-uniform 1D mesh; exercises the weight bookkeeping."""
    x = np.sort(rng.uniform(0.0, 1.0, n_cells - 1))
    nodes = np.concatenate([[0.0], x, [1.0]])
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    return Mesh(nodes, cells)


class TestMeshGeometry:
    def test_interval_weights(self):
        mesh = Mesh.interval(4, length=2.0)
        assert mesh.volumes == pytest.approx(np.full(4, 0.5))
        assert mesh.node_weights == pytest.approx([0.25, 0.5, 0.5, 0.5, 0.25])
        assert list(mesh.boundary_nodes) == [0, 4]
        assert list(mesh.boundary_tags) == ["left", "right"]
        assert mesh.boundary_normals[:, 0] == pytest.approx([-1.0, 1.0])
        assert mesh.boundary_mass == pytest.approx([1.0, 1.0])

    def test_rectangle_measures(self):
        mesh = Mesh.rectangle(3, 2, lx=3.0, ly=1.0)
        assert mesh.volumes.sum() == pytest.approx(3.0)
        assert mesh.node_weights.sum() == pytest.approx(3.0)
        assert mesh.boundary_mass.sum() == pytest.approx(8.0)

    def test_rectangle_tags_and_normals(self):
        mesh = Mesh.rectangle(2, 2)
        tags = dict(zip(mesh.boundary_nodes, mesh.boundary_tags))
        coord = {j: mesh.nodes[j] for j in mesh.boundary_nodes}
        for j, t in tags.items():
            x, y = coord[j]
            if x == 0.0:
                assert t == "left"
            elif x == 1.0:
                assert t == "right"
            elif y == 0.0:
                assert t == "bottom"
            else:
                assert t == "top"
        # side-interior normals are exact axis vectors
        for j, n in zip(mesh.boundary_nodes, mesh.boundary_normals):
            x, y = coord[j]
            if x == 0.0 and 0.0 < y < 1.0:
                assert n == pytest.approx([-1.0, 0.0])
            if y == 1.0 and 0.0 < x < 1.0:
                assert n == pytest.approx([0.0, 1.0])

    def test_degenerate_cell_rejected(self):
        nodes = [[0.0], [0.0], [1.0]]
        cells = [[0, 1], [1, 2]]
        with pytest.raises(ValueError, match="degenerate"):
            Mesh(nodes, cells)

    def test_region_callback(self):
        mesh = Mesh.interval(10, region_of=lambda x: int(x > 0.5))
        assert mesh.region.sum() == 5
        mesh2 = Mesh.rectangle(2, 2, region_of=lambda c: int(c[0] > 0.5))
        assert set(mesh2.region) == {0, 1}

    def test_node_average(self):
        mesh = Mesh.interval(2)  # cells of volume 0.5 each
        vals = np.array([2.0, 6.0])
        avg = mesh.node_average(vals)
        assert avg == pytest.approx([2.0, 4.0, 6.0])

    def test_mesh_table_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        for mesh in (random_interval(rng), Mesh.rectangle(3, 2, lx=1 / 3)):
            np_, cp = tmp_path / "nodes.csv", tmp_path / "cells.csv"
            mesh.write_tables(np_, cp)
            back = Mesh.from_tables(np_, cp)
            assert np.array_equal(back.nodes, mesh.nodes)
            assert np.array_equal(back.cells, mesh.cells)
            assert np.array_equal(back.region, mesh.region)


class TestSummationByParts:
    """The discrete surface identity must hold for arbitrary fields."""

    CASES = [
        ("elastic", 1), ("acoustic", 1), ("electromagnetic", 1),
        ("elastic", 2), ("acoustic", 2),
    ]

    @pytest.mark.parametrize("physics,dim", CASES)
    def test_identity(self, physics, dim):
        rng = np.random.default_rng(42)
        for trial in range(10):
            if dim == 1:
                mesh = random_interval(rng, n_cells=11 + trial)
            else:
                mesh = Mesh.rectangle(3 + trial % 3, 2 + trial % 2, lx=1.7, ly=0.9)
            lay = get_layout(mesh, physics)
            X = rng.standard_normal((mesh.n_nodes, lay.cx))
            Y = rng.standard_normal((mesh.n_cells, lay.cy))
            tr = rng.standard_normal((mesh.n_boundary, lay.cx))
            vol_term = float(np.sum(mesh.volumes[:, None] * Y * lay.apply_B(X)))
            node_term = float(np.sum(mesh.node_weights[:, None] * X
                                     * lay.div_trace(Y, tr)))
            surf = lay.boundary_sum(X[mesh.boundary_nodes], tr)
            scale = abs(vol_term) + abs(node_term) + abs(surf) + 1.0
            assert abs(vol_term + node_term - surf) < 1e-13 * scale


def elastic_rod_source(mesh, f=0.0):
    bc = BoundarySpec(mesh, "elastic")
    return build_source_data(f, bc, mesh, omega=2.0)


class TestCompleteTrialField:
    def test_linear_stress_momentum(self):
        # sigma'(x) = x with omega = 2 balances p'' = -0.5 exactly
        mesh = Mesh.interval(10)
        src = elastic_rod_source(mesh)
        mids = mesh.nodes[mesh.cells, 0].mean(axis=1)
        Y = mids[:, None]
        tr = np.array([[0.0], [1.0]])  # sigma.n at x=0 and x=1
        F = complete_trial_field((np.zeros((11, 1)), Y, tr), src)
        assert F.div_part == pytest.approx(np.full((11, 1), -0.5), abs=1e-14)

    def test_linear_displacement_strain(self):
        mesh = random_interval(np.random.default_rng(3))
        src = elastic_rod_source(mesh)
        X = 3.0 * mesh.nodes
        F = complete_trial_field((X, np.zeros((mesh.n_cells, 1)),
                                  np.zeros((2, 1))), src)
        assert F.grad_part == pytest.approx(np.full((mesh.n_cells, 1), 3.0))

    def test_acoustic_constant_pressure(self):
        mesh = Mesh.interval(8)
        bc = BoundarySpec(mesh, "acoustic")
        src = build_source_data(0.0, bc, mesh, omega=1.5)
        X = np.full((9, 1), 4.2)
        F = complete_trial_field((X, np.zeros((8, 1)), np.zeros((2, 1))), src)
        assert np.abs(F.grad_part).max() < 1e-14

    def test_rejects_bad_omega(self):
        mesh = Mesh.interval(4)
        src = elastic_rod_source(mesh)
        with pytest.raises(ValueError, match="omega"):
            complete_trial_field((np.zeros((5, 1)), np.zeros((4, 1)),
                                  np.zeros((2, 1))), src, omega=-1.0)

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_constraints_by_construction(self, physics):
        # grad_part and div_part always satisfy their linking equations
        rng = np.random.default_rng(11)
        mesh = random_interval(rng)
        lay = get_layout(mesh, physics)
        bc = BoundarySpec(mesh, physics)
        omega = 1.3
        f = complex(rng.standard_normal(), rng.standard_normal())
        src = build_source_data(f, bc, mesh, omega)
        X = rng.standard_normal((mesh.n_nodes, lay.cx))
        Y = rng.standard_normal((mesh.n_cells, lay.cy))
        tr = rng.standard_normal((mesh.n_boundary, lay.cx))
        F = complete_trial_field((X, Y, tr), src)

        def close(lhs, rhs):
            scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1.0)
            assert np.abs(lhs - rhs).max() < 1e-13 * scale

        if physics == "elastic":
            close(lay.div_trace(Y, tr) + src.f_real, -omega * F.div_part)
        elif physics == "acoustic":
            close(lay.apply_B(X) - src.f_real, omega * F.grad_part)
        else:
            close(lay.apply_B(X), -omega * F.grad_part)
            close(lay.div_trace(Y, tr) + src.f_imag, omega * F.div_part)


def direct_state(physics, mesh, omega, **parts):
    """FieldState with hand-set components (bypasses the constraints)."""
    lay = get_layout(mesh, physics)
    shapes = dict(primary=(mesh.n_nodes, lay.cx), flux=(mesh.n_cells, lay.cy),
                  trace=(mesh.n_boundary, lay.cx),
                  grad_part=(mesh.n_cells, lay.cy),
                  div_part=(mesh.n_nodes, lay.cx))
    arrays = {}
    for name, shape in shapes.items():
        val = parts.get(name, 0.0)
        arrays[name] = np.broadcast_to(np.asarray(val, float), shape).copy()
    return FieldState(physics, mesh, omega, **arrays)


class TestApplyConstitutive:
    def test_zero_maps_to_zero(self):
        mesh = Mesh.interval(5)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=1.0)
        L = assemble_L(*build_blocks(m))
        G = apply_constitutive(direct_state("elastic", mesh, 1.0), L)
        for arr in (G.primary, G.flux, G.grad_part, G.div_part):
            assert np.abs(arr).max() == 0.0

    def test_scalar_block_example(self):
        # C = 2+i, rho = 1-i: quadruple (1, 0, 1, 0) maps to (5, -2, 2, -1)
        mesh = Mesh.interval(5)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=1.0)
        L = assemble_L(*build_blocks(m))
        F = direct_state("elastic", mesh, 1.0, grad_part=1.0, primary=1.0)
        G = apply_constitutive(F, L)
        assert G.flux == pytest.approx(np.full((5, 1), 5.0))
        assert G.grad_part == pytest.approx(np.full((5, 1), 2.0))
        assert G.div_part == pytest.approx(np.full((6, 1), 2.0))
        assert G.primary == pytest.approx(np.full((6, 1), -1.0))

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_complex_arithmetic_oracle(self, physics):
        # the real block image must agree with the complex constitutive law
        rng = np.random.default_rng(17)
        mesh = random_interval(rng, n_cells=6)
        lay = get_layout(mesh, physics)
        omega = 1.7
        for _ in range(20):
            m = random_passive(physics, 1, lay.cy if physics == "acoustic" else 1,
                               rng, omega=omega)
            mat = MaterialField(mesh, m)
            if physics == "elastic":
                e = rng.standard_normal(mesh.n_cells) \
                    + 1j * rng.standard_normal(mesh.n_cells)
                u = rng.standard_normal(mesh.n_nodes) \
                    + 1j * rng.standard_normal(mesh.n_nodes)
                sig = m.primal[0, 0] * e
                p = 1j * omega * m.dual[0, 0] * u
                F = direct_state(physics, mesh, omega,
                                 grad_part=e.real[:, None], flux=sig.real[:, None],
                                 primary=u.real[:, None], div_part=p.imag[:, None])
                G = apply_constitutive(F, mat)
                assert G.flux[:, 0] == pytest.approx(sig.imag, abs=1e-12)
                assert G.grad_part[:, 0] == pytest.approx(e.imag, abs=1e-12)
                assert G.div_part[:, 0] == pytest.approx(p.real, abs=1e-12)
                assert G.primary[:, 0] == pytest.approx(u.imag, abs=1e-12)
            elif physics == "acoustic":
                P = rng.standard_normal(mesh.n_nodes) \
                    + 1j * rng.standard_normal(mesh.n_nodes)
                v = rng.standard_normal(mesh.n_cells) \
                    + 1j * rng.standard_normal(mesh.n_cells)
                h = -1j * omega * m.primal[0, 0] * P
                p = v / m.dual[0, 0]  # v = r p with scalar r
                F = direct_state(physics, mesh, omega,
                                 primary=P.real[:, None], div_part=h.imag[:, None],
                                 grad_part=p.imag[:, None], flux=v.imag[:, None])
                G = apply_constitutive(F, mat)
                assert G.div_part[:, 0] == pytest.approx(h.real, abs=1e-12)
                assert G.primary[:, 0] == pytest.approx(P.imag, abs=1e-12)
                assert G.flux[:, 0] == pytest.approx(v.real, abs=1e-12)
                assert G.grad_part[:, 0] == pytest.approx(p.real, abs=1e-12)
            else:
                E = rng.standard_normal(mesh.n_nodes) \
                    + 1j * rng.standard_normal(mesh.n_nodes)
                B = rng.standard_normal(mesh.n_cells) \
                    + 1j * rng.standard_normal(mesh.n_cells)
                D = m.primal[0, 0] * E
                H = m.dual[0, 0] * B
                F = direct_state(physics, mesh, omega,
                                 primary=E.real[:, None], div_part=D.real[:, None],
                                 grad_part=B.imag[:, None], flux=H.imag[:, None])
                G = apply_constitutive(F, mat)
                assert G.div_part[:, 0] == pytest.approx(D.imag, abs=1e-12)
                assert G.primary[:, 0] == pytest.approx(E.imag, abs=1e-12)
                assert G.flux[:, 0] == pytest.approx(H.real, abs=1e-12)
                assert G.grad_part[:, 0] == pytest.approx(B.real, abs=1e-12)

    def test_dimension_mismatch(self):
        mesh = Mesh.rectangle(2, 2)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=1.0)
        L = assemble_L(*build_blocks(m))  # scalar blocks on a 2D layout
        F = direct_state("elastic", mesh, 1.0)
        with pytest.raises(ValueError, match="block size"):
            apply_constitutive(F, L)


class TestSourceData:
    def test_zero_everything(self):
        mesh = Mesh.interval(6)
        src = elastic_rod_source(mesh)
        g0 = src.g0
        for arr in (g0.primary, g0.flux, g0.grad_part, g0.div_part, g0.trace):
            assert np.abs(arr).max() == 0.0

    def test_constant_imaginary_force(self):
        # f'' = c with sigma''0 = 0 forces p'0 = c / omega
        mesh = random_interval(np.random.default_rng(5))
        bc = BoundarySpec(mesh, "elastic")
        src = build_source_data(3.0j, bc, mesh, omega=2.0)
        assert src.g0.div_part == pytest.approx(np.full((mesh.n_nodes, 1), 1.5))

    def test_linear_dual_displacement(self):
        mesh = Mesh.interval(9)
        bc = BoundarySpec(mesh, "elastic")
        bc.set_selection("left", False, 0.0, True, 0.0)
        bc.set_selection("right", False, 0.0, True, 0.0)
        u0 = 2.0 * mesh.nodes
        src = build_source_data(0.0, bc, mesh, omega=1.0, dual_primary=u0)
        assert src.g0.grad_part == pytest.approx(np.full((9, 1), 2.0))

    def test_infeasible_dual_primary(self):
        mesh = Mesh.interval(4)
        bc = BoundarySpec(mesh, "elastic")  # natural targets zero
        u0 = np.ones((5, 1))
        with pytest.raises(ValueError, match="admissible"):
            build_source_data(0.0, bc, mesh, omega=1.0, dual_primary=u0)

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_trace_targets_recovered(self, physics):
        # reaction traces of the canonical G0 reproduce the stored targets
        rng = np.random.default_rng(23)
        mesh = random_interval(rng, n_cells=9)
        lay = get_layout(mesh, physics)
        bc = BoundarySpec(mesh, physics)
        bc.val1[:] = rng.standard_normal(bc.val1.shape)
        f = rng.standard_normal() + 1j * rng.standard_normal()
        src = build_source_data(f, bc, mesh, omega=1.9,
                                dual_flux=rng.standard_normal((mesh.n_cells,
                                                               lay.cy)))
        got = reaction_traces(src.g0, src)
        assert got == pytest.approx(bc.val1, abs=1e-12)


class TestBoundaryResidual:
    def test_zero_fields_zero_targets(self):
        mesh = Mesh.interval(5)
        src = elastic_rod_source(mesh)
        F = complete_trial_field((np.zeros((6, 1)), np.zeros((5, 1)),
                                  np.zeros((2, 1))), src)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=2.0)
        G = apply_constitutive(F, MaterialField(mesh, m))
        table = boundary_residual(F, G, src)
        assert table.max_abs() == 0.0

    def test_essential_components_masked(self):
        mesh = Mesh.interval(5)
        bc = BoundarySpec(mesh, "elastic")
        bc.set_dirichlet("left", 1.0 + 0.5j)
        src = build_source_data(0.0, bc, mesh, omega=2.0)
        F = complete_trial_field((np.zeros((6, 1)), np.zeros((5, 1)),
                                  np.zeros((2, 1))), src)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=2.0)
        G = apply_constitutive(F, MaterialField(mesh, m))
        table = boundary_residual(F, G, src)
        left = list(mesh.boundary_tags).index("left")
        assert np.isnan(table.flux_trace[left, 0])
        assert not np.isnan(table.primary[left, 0])

    def test_flux_perturbation_sensitivity(self):
        # changing sigma' in a boundary cell moves the primary-type
        # residual linearly through the balance constraint
        mesh = Mesh.interval(6)
        src = elastic_rod_source(mesh)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=2.0)
        mat = MaterialField(mesh, m)

        def resid(delta):
            Y = np.zeros((6, 1))
            Y[0, 0] = delta
            F = complete_trial_field((np.zeros((7, 1)), Y, np.zeros((2, 1))),
                                     src)
            table = boundary_residual(F, apply_constitutive(F, mat), src)
            return table.primary[0, 0]

        base = resid(0.0)
        d1 = resid(1e-3) - base
        d2 = resid(2e-3) - base
        assert d1 != 0.0
        assert d2 / d1 == pytest.approx(2.0, rel=1e-8)


class TestMaterialField:
    def test_two_region_blocks(self):
        mesh = Mesh.interval(4, region_of=lambda x: int(x > 0.5))
        m0 = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=1.0)
        m1 = moduli.ComplexModuli.elastic(3 + 2j, 2 - 0.5j, omega=1.0)
        mat = MaterialField(mesh, {0: m0, 1: m1})
        a, b = mat.block_arrays()
        blk0 = build_blocks(m0)[0].matrix
        blk1 = build_blocks(m1)[0].matrix
        assert a[0] == pytest.approx(blk0)
        assert a[3] == pytest.approx(blk1)
        # interface node sees the volume-weighted average density
        rho_bar = 0.5 * (m0.dual[0, 0] + m1.dual[0, 0])
        mid_block = b[2]
        s = 1.0 / (-rho_bar.imag)
        assert mid_block[1, 1] == pytest.approx(s)

    def test_missing_region(self):
        mesh = Mesh.interval(4, region_of=lambda x: int(x > 0.5))
        m0 = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=1.0)
        with pytest.raises(ValueError, match="no moduli"):
            MaterialField(mesh, {0: m0})

    def test_lossless_flag_and_block_failure(self):
        mesh = Mesh.interval(3)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1.0 + 0j, omega=1.0)
        mat = MaterialField(mesh, m)
        assert mat.lossless
        with pytest.raises(PassivityError, match="density"):
            mat.block_arrays()

    def test_shape_mismatch(self):
        mesh = Mesh.rectangle(2, 2)
        m = moduli.ComplexModuli.elastic(2 + 1j, 1 - 1j, omega=1.0)
        with pytest.raises(ValueError, match="layout"):
            MaterialField(mesh, m)


class TestBoundarySpec:
    def test_dirichlet_bookkeeping(self):
        mesh = Mesh.interval(4)
        bc = BoundarySpec(mesh, "elastic")
        bc.set_dirichlet("left", 2.0 - 3.0j)
        left = list(mesh.boundary_tags).index("left")
        right = 1 - left
        assert bc.sel1[left, 0] and not bc.sel2[left, 0]
        assert bc.val1[left, 0] == 2.0
        assert bc.val2[left, 0] == -3.0
        assert not bc.sel1[right, 0]

    def test_neumann_bookkeeping(self):
        mesh = Mesh.interval(4)
        bc = BoundarySpec(mesh, "elastic")
        bc.set_neumann("right", 0.5 + 0.25j)
        right = list(mesh.boundary_tags).index("right")
        assert bc.sel2[right, 0] and not bc.sel1[right, 0]
        assert bc.val2[right, 0] == 0.5
        assert bc.val1[right, 0] == 0.25
        # acoustic and electromagnetic traces swap the real and
        # imaginary roles between essential value and natural target
        bca = BoundarySpec(mesh, "acoustic")
        bca.set_neumann("right", 0.5 + 0.25j)
        assert bca.val2[right, 0] == 0.25
        assert bca.val1[right, 0] == 0.5

    def test_callable_values(self):
        mesh = Mesh.rectangle(2, 2)
        bc = BoundarySpec(mesh, "acoustic")
        bc.set_dirichlet("top", lambda x: x[0] + 1j * x[1])
        top = mesh.boundary_tags == "top"
        xs = mesh.nodes[mesh.boundary_nodes[top], 0]
        assert bc.val1[top, 0] == pytest.approx(xs)
        assert bc.val2[top, 0] == pytest.approx(np.ones(top.sum()))

    def test_unknown_tag(self):
        mesh = Mesh.interval(4)
        bc = BoundarySpec(mesh, "elastic")
        with pytest.raises(ValueError, match="tagged"):
            bc.set_dirichlet("lid", 0.0)


class TestFieldTables:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(31)
        vals = rng.standard_normal((13, 3))
        vals[0, 0] = 0.1
        vals[1, 1] = 1.0 / 3.0
        vals[2, 2] = 1e-300
        path = tmp_path / "field.csv"
        write_field_table(path, vals, "node")
        back = read_field_table(path)
        assert np.array_equal(back, vals)

    def test_one_component(self, tmp_path):
        path = tmp_path / "f.csv"
        write_field_table(path, np.array([1.5, -2.25]), "cell")
        back = read_field_table(path)
        assert back.shape == (2, 1)
        assert np.array_equal(back[:, 0], [1.5, -2.25])
