"""Functional values, surface forms, gradients, slack and dissipation."""

import numpy as np
import pytest

from wavemin import moduli
from wavemin.fields import (
    BoundarySpec,
    MaterialField,
    Mesh,
    build_source_data,
    complete_trial_field,
    get_layout,
)
from wavemin.functional import (
    boundary_working_rate,
    dissipation_rate,
    evaluate_boundary_form,
    evaluate_functional,
    gradient,
    minimum_value_surface,
    tomography_slack,
    _pairing,
    _quadratic,
)

from test_fields import direct_state, random_interval
from test_moduli import random_passive


def make_problem(physics, rng, n_cells=12, omega=1.7, with_force=True,
                 with_targets=True):
    mesh = random_interval(rng, n_cells)
    m = random_passive(physics, 1, 1, rng, omega)
    mat = MaterialField(mesh, m)
    bc = BoundarySpec(mesh, physics)
    if with_targets:
        bc.val1[:] = rng.standard_normal(bc.val1.shape)
        bc.val2[:] = rng.standard_normal(bc.val2.shape)
    f = complex(rng.standard_normal(), rng.standard_normal()) if with_force else 0.0
    src = build_source_data(f, bc, mesh, omega)
    return mesh, mat, src


def random_state(src, rng, scale=1.0):
    mesh, physics = src.mesh, src.physics
    lay = get_layout(mesh, physics)
    X = scale * rng.standard_normal((mesh.n_nodes, lay.cx))
    Y = scale * rng.standard_normal((mesh.n_cells, lay.cy))
    tr = scale * rng.standard_normal((mesh.n_boundary, lay.cx))
    return complete_trial_field((X, Y, tr), src)


class TestEvaluateFunctional:
    def test_zero_state_zero_value(self):
        # pure imaginary force keeps the all-zero unknowns constraint-complete
        rng = np.random.default_rng(0)
        mesh = random_interval(rng)
        m = random_passive("elastic", 1, 1, rng)
        bc = BoundarySpec(mesh, "elastic")
        bc.val1[:] = 1.0
        src = build_source_data(2.0j, bc, mesh, omega=2.0)
        F = complete_trial_field((np.zeros((mesh.n_nodes, 1)),
                                  np.zeros((mesh.n_cells, 1)),
                                  np.zeros((2, 1))), src)
        val = evaluate_functional(F, MaterialField(mesh, m), src)
        assert val.total == 0.0
        assert val.volume_term == 0.0 and val.boundary_term == 0.0

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_positive_without_data(self, physics):
        rng = np.random.default_rng(1)
        mesh, mat, src = make_problem(physics, rng, with_force=False,
                                      with_targets=False)
        for _ in range(5):
            F = random_state(src, rng)
            assert evaluate_functional(F, mat, src).total > 0.0

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_split_matches_direct_pairing(self, physics):
        # volume/boundary split equals quadratic minus <G0, F> exactly
        rng = np.random.default_rng(2)
        mesh, mat, src = make_problem(physics, rng)
        for _ in range(5):
            F = random_state(src, rng)
            val = evaluate_functional(F, mat, src)
            direct = _quadratic(F, mat) - _pairing(src.g0, F)
            scale = abs(_quadratic(F, mat)) + abs(_pairing(src.g0, F)) + 1.0
            assert abs(val.total - direct) < 1e-13 * scale

    def test_mesh_mismatch(self):
        rng = np.random.default_rng(3)
        mesh, mat, src = make_problem("elastic", rng)
        other_mesh, _, other_src = make_problem("elastic", rng)
        F = random_state(other_src, rng)
        with pytest.raises(ValueError, match="mesh"):
            evaluate_functional(F, mat, src)

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_convexity(self, physics):
        rng = np.random.default_rng(4)
        mesh, mat, src = make_problem(physics, rng)
        J = lambda F: evaluate_functional(F, mat, src).total
        for _ in range(10):
            F1, F2 = random_state(src, rng), random_state(src, rng)
            t = rng.uniform()
            mix = type(F1)(physics, mesh, F1.omega,
                           *(t * a + (1 - t) * b for a, b in zip(
                               (F1.primary, F1.flux, F1.trace,
                                F1.grad_part, F1.div_part),
                               (F2.primary, F2.flux, F2.trace,
                                F2.grad_part, F2.div_part))))
            lhs = J(mix)
            rhs = t * J(F1) + (1 - t) * J(F2)
            scale = abs(J(F1)) + abs(J(F2)) + 1.0
            assert lhs <= rhs + 1e-12 * scale


class TestBoundaryForm:
    def test_all_zero(self):
        rng = np.random.default_rng(5)
        mesh, mat, src = make_problem("elastic", rng, with_force=False,
                                      with_targets=False)
        F = complete_trial_field((np.zeros((mesh.n_nodes, 1)),
                                  np.zeros((mesh.n_cells, 1)),
                                  np.zeros((2, 1))), src)
        assert evaluate_boundary_form(F, mat, src).total == 0.0

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_difference_constant_in_field(self, physics):
        rng = np.random.default_rng(6)
        mesh, mat, src = make_problem(physics, rng)
        diffs, scales = [], []
        for _ in range(10):
            F = random_state(src, rng, scale=rng.uniform(0.1, 10.0))
            a = evaluate_functional(F, mat, src).total
            b = evaluate_boundary_form(F, mat, src).total
            diffs.append(b - a)
            scales.append(abs(a) + abs(b))
        spread = max(diffs) - min(diffs)
        assert spread < 1e-11 * (max(scales) + 1.0)

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_forms_agree_without_data(self, physics):
        rng = np.random.default_rng(7)
        mesh, mat, src = make_problem(physics, rng, with_force=False,
                                      with_targets=False)
        F = random_state(src, rng)
        a = evaluate_functional(F, mat, src)
        b = evaluate_boundary_form(F, mat, src)
        assert a.total == b.total
        assert a.volume_term == b.volume_term


def flatten(parts):
    return np.concatenate([p.ravel() for p in parts])


class TestGradient:
    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_finite_difference(self, physics):
        rng = np.random.default_rng(8)
        mesh, mat, src = make_problem(physics, rng)
        lay = get_layout(mesh, physics)
        shapes = [(mesh.n_nodes, lay.cx), (mesh.n_cells, lay.cy),
                  (mesh.n_boundary, lay.cx)]

        def J(z):
            parts, k = [], 0
            for s in shapes:
                parts.append(z[k:k + s[0] * s[1]].reshape(s))
                k += s[0] * s[1]
            F = complete_trial_field(tuple(parts), src)
            return evaluate_functional(F, mat, src).total

        z0 = rng.standard_normal(sum(s[0] * s[1] for s in shapes))
        F0 = complete_trial_field(
            (z0[:shapes[0][0]].reshape(shapes[0]),
             z0[shapes[0][0]:shapes[0][0] + shapes[1][0]].reshape(shapes[1]),
             z0[-shapes[2][0]:].reshape(shapes[2])), src)
        g = flatten(gradient(F0, mat, src))
        d = rng.standard_normal(z0.size)
        d /= np.linalg.norm(d)
        h = 1e-5 * (np.linalg.norm(z0) + 1.0)
        fd = (-J(z0 + 2 * h * d) + 8 * J(z0 + h * d)
              - 8 * J(z0 - h * d) + J(z0 - 2 * h * d)) / (12 * h)
        gd = float(g @ d)
        assert fd == pytest.approx(gd, rel=1e-6)

    def test_2d_elastic_finite_difference(self):
        rng = np.random.default_rng(9)
        mesh = Mesh.rectangle(3, 2, lx=1.3, ly=0.8)
        m = random_passive("elastic", 3, 2, rng, omega=1.4)
        mat = MaterialField(mesh, m)
        bc = BoundarySpec(mesh, "elastic")
        bc.val1[:] = rng.standard_normal(bc.val1.shape)
        bc.val2[:] = rng.standard_normal(bc.val2.shape)
        f = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        src = build_source_data(f, bc, mesh, 1.4)
        shapes = [(mesh.n_nodes, 2), (mesh.n_cells, 3), (mesh.n_boundary, 2)]

        def unpack(z):
            parts, k = [], 0
            for s in shapes:
                parts.append(z[k:k + s[0] * s[1]].reshape(s))
                k += s[0] * s[1]
            return tuple(parts)

        z0 = rng.standard_normal(sum(a * b for a, b in shapes))
        F0 = complete_trial_field(unpack(z0), src)
        g = flatten(gradient(F0, mat, src))
        d = rng.standard_normal(z0.size)
        d /= np.linalg.norm(d)
        h = 1e-5 * (np.linalg.norm(z0) + 1.0)

        def J(z):
            F = complete_trial_field(unpack(z), src)
            return evaluate_functional(F, mat, src).total

        fd = (-J(z0 + 2 * h * d) + 8 * J(z0 + h * d)
              - 8 * J(z0 - h * d) + J(z0 - 2 * h * d)) / (12 * h)
        assert fd == pytest.approx(float(g @ d), rel=1e-6)

    def test_zero_state_gradient_is_data_load(self):
        # at F = 0 the gradient pairs a direction with -G0
        rng = np.random.default_rng(10)
        mesh = random_interval(rng)
        m = random_passive("elastic", 1, 1, rng)
        bc = BoundarySpec(mesh, "elastic")
        bc.val1[:] = rng.standard_normal((2, 1))
        bc.val2[:] = rng.standard_normal((2, 1))
        src = build_source_data(1.5j, bc, mesh, omega=2.0)
        zeros = (np.zeros((mesh.n_nodes, 1)), np.zeros((mesh.n_cells, 1)),
                 np.zeros((2, 1)))
        F0 = complete_trial_field(zeros, src)
        g = flatten(gradient(F0, MaterialField(mesh, m), src))

        src_h = build_source_data(0.0, BoundarySpec(mesh, "elastic"),
                                  mesh, omega=2.0)
        for _ in range(5):
            dX = rng.standard_normal((mesh.n_nodes, 1))
            dY = rng.standard_normal((mesh.n_cells, 1))
            dt = rng.standard_normal((2, 1))
            Fd = complete_trial_field((dX, dY, dt), src_h)
            expect = -_pairing(src.g0, Fd)
            got = float(g @ flatten((dX, dY, dt)))
            assert got == pytest.approx(expect, rel=1e-12, abs=1e-12)

    def test_essential_components_zeroed(self):
        rng = np.random.default_rng(11)
        mesh, mat, src = make_problem("elastic", rng, with_targets=False)
        src.bc.set_dirichlet("left", 1.0 + 1.0j)
        src.bc.set_neumann("right", 2.0 - 1.0j)
        F = random_state(src, rng)
        gX, gY, gtr = gradient(F, mat, src)
        left = list(mesh.boundary_tags).index("left")
        right = 1 - left
        assert gX[mesh.boundary_nodes[left], 0] == 0.0
        assert gtr[right, 0] == 0.0
        assert gtr[left, 0] != 0.0
        assert gX[mesh.boundary_nodes[right], 0] != 0.0


class TestMinimumValueSurface:
    def test_zero_data(self):
        rng = np.random.default_rng(12)
        mesh, mat, src = make_problem("elastic", rng, with_force=False,
                                      with_targets=False)
        z = np.zeros((2, 1), dtype=complex)
        assert minimum_value_surface(z, z, src) == 0.0

    def test_body_force_rejected(self):
        rng = np.random.default_rng(13)
        mesh, mat, src = make_problem("elastic", rng, with_force=True)
        z = np.zeros((2, 1), dtype=complex)
        with pytest.raises(ValueError, match="body force"):
            minimum_value_surface(z, z, src)

    def test_doubling_trace_target_shift(self):
        # value is affine in the trace target with slope -sum(m u' t)
        rng = np.random.default_rng(14)
        mesh = random_interval(rng)
        bc1 = BoundarySpec(mesh, "elastic")
        t = rng.standard_normal((2, 1))
        bc1.val1[:] = t
        src1 = build_source_data(0.0, bc1, mesh, omega=2.0)
        bc2 = BoundarySpec(mesh, "elastic")
        bc2.val1[:] = 2.0 * t
        src2 = build_source_data(0.0, bc2, mesh, omega=2.0)
        u = rng.standard_normal((2, 1)) + 1j * rng.standard_normal((2, 1))
        tr = rng.standard_normal((2, 1)) + 1j * rng.standard_normal((2, 1))
        v1 = minimum_value_surface(u, tr, src1)
        v2 = minimum_value_surface(u, tr, src2)
        m = mesh.boundary_mass[:, None]
        shift = -float(np.sum(m * u.real * t))
        assert v2 - v1 == pytest.approx(shift, rel=1e-12)


class TestTomographySlack:
    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_zero_trial_closed_form(self, physics):
        rng = np.random.default_rng(15)
        mesh, mat, src0 = make_problem(physics, rng, with_force=False,
                                       with_targets=False)
        lay = get_layout(mesh, physics)
        shape = (mesh.n_boundary, lay.cx)
        F0 = complete_trial_field((np.zeros((mesh.n_nodes, lay.cx)),
                                   np.zeros((mesh.n_cells, lay.cy)),
                                   np.zeros(shape)), src0)
        u = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        tr = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        slack = tomography_slack(F0, u, tr, mat)
        m = mesh.boundary_mass[:, None]
        if physics == "elastic":
            expect = 0.5 * np.sum(m * (u.real * tr.imag - u.imag * tr.real))
        elif physics == "acoustic":
            expect = -0.5 * src0.omega * np.sum(
                m * (u.real * tr.real + u.imag * tr.imag))
        else:
            expect = -0.5 / src0.omega * np.sum(
                m * (u.real * tr.real + u.imag * tr.imag))
        assert slack == pytest.approx(float(expect), rel=1e-12)

    def test_incomplete_data_rejected(self):
        rng = np.random.default_rng(16)
        mesh, mat, src = make_problem("elastic", rng, with_force=False)
        F = random_state(src, rng)
        good = np.zeros((2, 1), dtype=complex)
        with pytest.raises(ValueError, match="incomplete"):
            tomography_slack(F, good[:1], good, mat)
        bad = good.copy()
        bad[0] = np.nan
        with pytest.raises(ValueError, match="incomplete"):
            tomography_slack(F, bad, good, mat)


class TestDissipation:
    def test_unit_example(self):
        # e' = 1, C'' = 1, omega = 2 on a unit interval gives power 1
        mesh = Mesh.interval(1)
        m = moduli.ComplexModuli.elastic(1.0j, 1.0 - 1.0j, omega=2.0)
        rep = dissipation_rate(np.array([1.0 + 0.0j]),
                               np.zeros(2, dtype=complex), m, mesh)
        assert rep.mean_power == pytest.approx(1.0)
        assert rep.stiffness_part == pytest.approx(1.0)
        assert rep.inertial_part == 0.0

    def test_zero_fields(self):
        mesh = Mesh.interval(3)
        m = moduli.ComplexModuli.elastic(1 + 1j, 1 - 1j, omega=2.0)
        rep = dissipation_rate(np.zeros(3, complex), np.zeros(4, complex),
                               m, mesh)
        assert rep.mean_power == 0.0

    @pytest.mark.parametrize("physics", moduli.PHYSICS)
    def test_matches_quadratic_form(self, physics):
        # for constitutive-consistent complex fields the weighted
        # quadratic form reproduces the physical dissipation
        rng = np.random.default_rng(17)
        mesh = random_interval(rng, 9)
        omega = 2.3
        m = random_passive(physics, 1, 1, rng, omega)
        mat = MaterialField(mesh, m)
        u = rng.standard_normal(mesh.n_nodes) \
            + 1j * rng.standard_normal(mesh.n_nodes)
        cell = rng.standard_normal(mesh.n_cells) \
            + 1j * rng.standard_normal(mesh.n_cells)
        if physics == "elastic":
            e, sig = cell, m.primal[0, 0] * cell
            rho_bar = mesh.node_average(np.full(mesh.n_cells, m.dual[0, 0]))
            p = 1j * omega * rho_bar * u
            F = direct_state(physics, mesh, omega,
                             grad_part=e.real[:, None], flux=sig.real[:, None],
                             primary=u.real[:, None], div_part=p.imag[:, None])
        elif physics == "acoustic":
            p, v = cell, m.dual[0, 0] * cell
            k_bar = mesh.node_average(np.full(mesh.n_cells, m.primal[0, 0]))
            h = -1j * omega * k_bar * u
            F = direct_state(physics, mesh, omega,
                             primary=u.real[:, None], div_part=h.imag[:, None],
                             grad_part=p.imag[:, None], flux=v.imag[:, None])
        else:
            B, H = cell, m.dual[0, 0] * cell
            eps_bar = mesh.node_average(np.full(mesh.n_cells, m.primal[0, 0]))
            D = eps_bar * u
            F = direct_state(physics, mesh, omega,
                             primary=u.real[:, None], div_part=D.real[:, None],
                             grad_part=B.imag[:, None], flux=H.imag[:, None])
        rep = dissipation_rate(cell, u, mat)
        factor = 1.0 / (2.0 * omega) if physics == "acoustic" else 0.5 * omega
        quad = 2.0 * _quadratic(F, mat) * factor
        assert rep.mean_power > 0.0
        assert rep.mean_power == pytest.approx(quad, rel=1e-11)


class TestBoundaryWorkingRate:
    def test_zero_fields(self):
        mesh = Mesh.interval(4)
        for physics in moduli.PHYSICS:
            rate = boundary_working_rate(np.zeros(5, complex),
                                         np.zeros(2, complex),
                                         mesh, physics, omega=2.0)
            assert rate == 0.0

    def test_acoustic_force_needs_velocity(self):
        mesh = Mesh.interval(4)
        with pytest.raises(ValueError, match="velocity"):
            boundary_working_rate(np.zeros(5, complex), np.zeros(2, complex),
                                  mesh, "acoustic", omega=1.0,
                                  f=np.ones(4, complex))
