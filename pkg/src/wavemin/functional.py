"""The convex functional, its gradient, surface forms and dissipation.

Everything here reduces to three ingredients: the positive definite
quadratic form ``(1/2) <F, L F>`` weighted by the mesh volumes and
lumped node weights, the data pairing ``<G0, F>``, and exact discrete
integration by parts.  Because the divergence is the exact adjoint of
the gradient, the data pairing collapses onto boundary values of the
primary field and trace plus body-force terms, with no remainder.  The
surface-only value formulas below are therefore identities of the
discrete problem, not approximations.
"""

import dataclasses

import numpy as np

from .fields import (
    BoundarySpec,
    MaterialField,
    _material_blocks,
    apply_constitutive,
    build_source_data,
    get_layout,
)
from .moduli import ComplexModuli

__all__ = [
    "FunctionalValue",
    "DissipationReport",
    "evaluate_functional",
    "evaluate_boundary_form",
    "gradient",
    "minimum_value_surface",
    "tomography_slack",
    "dissipation_rate",
    "boundary_working_rate",
]


@dataclasses.dataclass(frozen=True)
class FunctionalValue:
    """Scalar functional split into volume and boundary contributions."""

    volume_term: float
    boundary_term: float

    @property
    def total(self):
        return self.volume_term + self.boundary_term


@dataclasses.dataclass(frozen=True)
class DissipationReport:
    """Mean power absorbed, split by constitutive tensor.

    ``stiffness_part`` is the primal-tensor contribution (stiffness,
    compressibility, permittivity) and ``inertial_part`` the dual-tensor
    one (density, inverse density, inverse permeability).  Both are
    nonnegative in a passive medium.
    """

    mean_power: float
    stiffness_part: float
    inertial_part: float


def _pair_weights(mesh, physics):
    """Integration weights for the (pair_A, pair_B) homes."""
    if physics == "elastic":
        return mesh.volumes, mesh.node_weights
    return mesh.node_weights, mesh.volumes


def _pairing(G, F):
    """Weighted inner product <G, F> over volume entities."""
    wA, wB = _pair_weights(F.mesh, F.physics)
    return float(np.einsum("n,ni,ni->", wA, G.pair_A(), F.pair_A())
                 + np.einsum("n,ni,ni->", wB, G.pair_B(), F.pair_B()))


def _quadratic(F, L):
    """(1/2) <F, L F> with per-entity blocks."""
    a, b = _material_blocks(L, F.mesh, F.physics)
    wA, wB = _pair_weights(F.mesh, F.physics)
    pa, pb = F.pair_A(), F.pair_B()
    qa = np.einsum("n,ni,nij,nj->", wA, pa, a, pa)
    qb = np.einsum("n,ni,nij,nj->", wB, pb, b, pb)
    return 0.5 * float(qa + qb)


def _load_split(F, src):
    """Split <G0, F> into (boundary, data-only volume, F-dependent volume).

    The three pieces sum to the full pairing exactly; the split is the
    discrete integration by parts of the data term.
    """
    mesh, omega = F.mesh, F.omega
    g0 = src.g0
    m = mesh.boundary_mass[:, None]
    w = mesh.node_weights[:, None]
    vol = mesh.volumes[:, None]
    pb = F.primary[mesh.boundary_nodes]
    p0b = g0.primary[mesh.boundary_nodes]
    if F.physics == "elastic":
        b = float(np.sum(m * (pb * g0.trace - p0b * F.trace)))
        v_data = -float(np.sum(w * g0.primary * src.f_real))
        v_field = float(np.sum(w * F.primary * src.f_imag))
    elif F.physics == "acoustic":
        b = -omega * float(np.sum(m * (pb * g0.trace + p0b * F.trace)))
        v_data = omega * float(np.sum(vol * src.f_real * g0.flux))
        v_field = omega * float(np.sum(vol * src.f_imag * F.flux))
    else:
        b = -float(np.sum(m * (pb * g0.trace + p0b * F.trace))) / omega
        v_data = -float(np.sum(w * g0.primary * src.f_imag)) / omega
        v_field = -float(np.sum(w * F.primary * src.f_real)) / omega
    return b, v_data, v_field


def _check_same_mesh(F, src):
    if F.mesh is not src.mesh or F.physics != src.physics:
        raise ValueError("field and source data live on different meshes")


def evaluate_functional(F, L, src):
    """Value of the minimization functional at a trial field.

    Returns (1/2) <F, L F> - <G0, F> as a FunctionalValue whose
    boundary term carries the surface part of the data pairing.
    """
    _check_same_mesh(F, src)
    quad = _quadratic(F, L)
    b, v_data, v_field = _load_split(F, src)
    return FunctionalValue(volume_term=quad - v_data - v_field,
                           boundary_term=-b)


def evaluate_boundary_form(F, L, src):
    """Surface-weighted equivalent form of the functional.

    Shares its minimizer with `evaluate_functional`; the two differ by a
    constant depending only on the data (the real body force paired with
    the data fields).  The volume term here involves only the
    imaginary-side body force, the boundary term only surface data.
    """
    _check_same_mesh(F, src)
    quad = _quadratic(F, L)
    b, _, v_field = _load_split(F, src)
    return FunctionalValue(volume_term=quad - v_field, boundary_term=-b)


def gradient(F, L, src, bc=None):
    """Gradient of the functional in the free primary unknowns.

    Returns arrays (g_primary, g_flux, g_trace) shaped like the unknown
    triple, with entries on essential components zeroed.  Derived by
    chaining the constitutive image through the constraint completion;
    vanishes at the exact solution.
    """
    _check_same_mesh(F, src)
    if bc is None:
        bc = src.bc
    mesh, omega = F.mesh, F.omega
    layout = get_layout(mesh, F.physics)
    G = apply_constitutive(F, L)
    g0 = src.g0
    w = mesh.node_weights[:, None]
    vol = mesh.volumes[:, None]
    m = mesh.boundary_mass[:, None]
    n, cx = mesh.n_nodes, layout.cx

    d_flux = G.flux - g0.flux
    d_grad = G.grad_part - g0.grad_part
    d_div = G.div_part - g0.div_part
    d_prim = G.primary - g0.primary
    div_dual = (layout.BT_V @ d_flux.ravel()).reshape(n, cx)
    grad_dual = layout.apply_B(d_prim)

    if F.physics == "elastic":
        g_primary = div_dual + w * omega * d_div
        g_flux = -vol * d_grad + vol * grad_dual
        g_trace = -m * d_prim[mesh.boundary_nodes]
    elif F.physics == "acoustic":
        g_primary = -omega * (w * d_div + div_dual)
        g_flux = omega * vol * (omega * d_grad + grad_dual)
        g_trace = -omega * m * d_prim[mesh.boundary_nodes]
    else:
        g_primary = w * d_div - div_dual / omega
        g_flux = -vol * d_grad + vol * grad_dual / omega
        g_trace = -(m / omega) * d_prim[mesh.boundary_nodes]

    g_primary[mesh.boundary_nodes] = np.where(bc.sel1, 0.0,
                                              g_primary[mesh.boundary_nodes])
    g_trace = np.where(bc.sel2, 0.0, g_trace)
    return g_primary, g_flux, g_trace


def minimum_value_surface(primary, trace, src):
    """Minimum of the functional from boundary values alone.

    Parameters
    ----------
    primary, trace : complex (n_boundary, cx) arrays
        Surface values of the complex primary field and flux trace at the
        minimizer.
    src : SourceData
        Supplies the natural targets; its body force must vanish.

    Returns
    -------
    float
        Valid only with zero body force, where the volume terms of the
        minimum collapse onto the surface exactly.
    """
    if np.abs(src.f).max() != 0.0:
        raise ValueError("nonzero body force: the minimum is not a pure "
                         "surface expression, evaluate the volume functional")
    mesh, omega = src.mesh, src.omega
    m = mesh.boundary_mass[:, None]
    primary = np.asarray(primary, dtype=complex).reshape(mesh.n_boundary, -1)
    trace = np.asarray(trace, dtype=complex).reshape(mesh.n_boundary, -1)
    t0 = src.g0.trace
    p0 = src.g0.primary[mesh.boundary_nodes]
    # the trial-side trace is the real part for elastic media but the
    # imaginary part for acoustics and electromagnetism, so the surface
    # pairing swaps accordingly
    if src.physics == "elastic":
        term = np.sum(m * (primary.real * (trace.imag - 2.0 * t0)
                           + (2.0 * p0 - primary.imag) * trace.real))
        return 0.5 * float(term)
    term = np.sum(m * (primary.real * (trace.real - 2.0 * t0)
                       + (primary.imag - 2.0 * p0) * trace.imag))
    if src.physics == "acoustic":
        return -0.5 * omega * float(term)
    return -0.5 * float(term) / omega


def tomography_slack(F, measured_primary, measured_trace, L, omega=None):
    """Gap between a trial field's functional value and the measured bound.

    Uses the measured complex surface data as the natural targets; the
    result is nonnegative for every constraint-complete trial field
    (zero body force) when the measurements come from the medium ``L``
    describes, and zero when the trial field is the actual solution.
    """
    mesh = F.mesh
    if omega is not None and omega != F.omega:
        raise ValueError("omega disagrees with the trial field")
    nb = mesh.n_boundary
    cx = get_layout(mesh, F.physics).cx
    mp = np.asarray(measured_primary, dtype=complex)
    mt = np.asarray(measured_trace, dtype=complex)
    if mp.shape != (nb, cx) or mt.shape != (nb, cx):
        raise ValueError("incomplete surface data: measurements must cover "
                         "every boundary node and component")
    if not (np.isfinite(mp).all() and np.isfinite(mt).all()):
        raise ValueError("incomplete surface data: non-finite entries")

    bc = BoundarySpec(mesh, F.physics)
    # the natural trace target is the imaginary-side counterpart of the
    # trial trace: imaginary for elastic, real for the other physics
    bc.val1[:] = mt.imag if F.physics == "elastic" else mt.real
    bc.val2[:] = mp.imag
    src = build_source_data(0.0, bc, mesh, F.omega)
    value = evaluate_functional(F, L, src).total
    return value - minimum_value_surface(mp, mt, src)


def dissipation_rate(cell_field, primary_field, m, mesh=None):
    """Cycle-averaged absorbed power of a complex field pair.

    Parameters
    ----------
    cell_field : complex cellwise array
        Strain for elastic media, the momentum-like field p (with
        v = r p) for acoustics, the magnetic field B for
        electromagnetism.
    primary_field : complex nodal array
        Displacement, pressure, or electric field.
    m : MaterialField or ComplexModuli
        With a bare ComplexModuli a mesh must be supplied.
    """
    if isinstance(m, ComplexModuli):
        if mesh is None:
            raise ValueError("a mesh is required with bare moduli")
        m = MaterialField(mesh, m)
    mesh = m.mesh
    omega = m.omega
    e = np.asarray(cell_field, dtype=complex).reshape(mesh.n_cells, -1)
    u = np.asarray(primary_field, dtype=complex).reshape(mesh.n_nodes, -1)
    vol, w = mesh.volumes, mesh.node_weights

    def form(weights, field, coeff_imag):
        return float(np.real(
            np.einsum("n,ni,nij,nj->", weights, field.conj(), coeff_imag, field)))

    if m.physics == "elastic":
        sp = 0.5 * omega * form(vol, e, m.primal_cells.imag)
        ip = -0.5 * omega ** 3 * form(w, u, m.node_coeff.imag)
    elif m.physics == "acoustic":
        sp = -0.5 * omega * form(w, u, m.node_coeff.imag)
        ip = 0.5 * omega * form(vol, e, m.dual_cells.imag)
    else:
        sp = 0.5 * omega * form(w, u, m.node_coeff.imag)
        ip = -0.5 * omega * form(vol, e, m.dual_cells.imag)
    return DissipationReport(mean_power=sp + ip,
                             stiffness_part=sp, inertial_part=ip)


def boundary_working_rate(primary, trace, mesh, physics, omega,
                          f=None, flux=None):
    """Mean rate of working of boundary tractions and body forces.

    Parameters
    ----------
    primary : complex (n_nodes, cx)
        Full complex primary field (boundary values are extracted).
    trace : complex (n_boundary, cx)
        Complex flux trace (sigma.n, v.n, H.n analogues).
    f : complex body force in its home, optional.
    flux : complex cellwise velocity, required for acoustic f != 0.

    At a solution of the balance equations this equals the dissipation
    rate; the pair of evaluations is the discrete power balance.
    """
    primary = np.asarray(primary, dtype=complex).reshape(mesh.n_nodes, -1)
    trace = np.asarray(trace, dtype=complex).reshape(mesh.n_boundary, -1)
    pb = primary[mesh.boundary_nodes]
    m = mesh.boundary_mass[:, None]
    w = mesh.node_weights[:, None]
    surf_prod = np.sum(m * trace * pb.conj())
    if physics == "elastic":
        out = 0.5 * omega * float(surf_prod.imag)
        if f is not None:
            f = np.asarray(f, dtype=complex).reshape(mesh.n_nodes, -1)
            out += 0.5 * omega * float(np.sum(w * f * primary.conj()).imag)
        return out
    if physics == "acoustic":
        out = -0.5 * float(np.sum(m * pb * trace.conj()).real)
        if f is not None and np.abs(f).max() > 0:
            if flux is None:
                raise ValueError("acoustic body-force working needs the "
                                 "complex velocity field")
            f = np.asarray(f, dtype=complex).reshape(mesh.n_cells, -1)
            flux = np.asarray(flux, dtype=complex).reshape(mesh.n_cells, -1)
            out += 0.5 * float(
                np.sum(mesh.volumes[:, None] * f * flux.conj()).real)
        return out
    out = -0.5 * float(np.sum(m * pb * trace.conj()).real)
    if f is not None:
        f = np.asarray(f, dtype=complex).reshape(mesh.n_nodes, -1)
        out -= 0.5 * float(np.sum(w * primary * f.conj()).real)
    return out
