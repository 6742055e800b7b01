"""Polarization bounds against a homogeneous comparison medium.

Given the per-entity constitutive operator L of the true medium and a
constant comparison operator L0, the polarization T = (L - L0) F turns
the minimization functional into

    J_hs(F, T) = sum W [ (T - G0).F + (1/2) F.L0 F
                         - (1/2) T.(L - L0)^{-1} T ],

which equals the original functional when T is the exact polarization
of F.  When L0 - L is positive definite everywhere the infimum of J_hs
over trial fields at any fixed T is an upper bound on the true minimum;
when L - L0 is positive definite one obtains a saddle principle and a
lower bound.  Eliminating the trial field through the comparison
response operator H0 condenses the problem onto T alone.

Component naming inside a polarization follows the constitutive image:
the first half of ``part_A`` is flux-type (stress, velocity, magnetic
intensity), the second gradient-type with a sign; the first half of
``part_B`` is momentum-type, the second primary-rate-type.
"""

import dataclasses

import numpy as np
from scipy.sparse.linalg import splu

from . import moduli as _moduli
from .fields import (
    MaterialField,
    _material_blocks,
    get_layout,
    read_field_table,
    write_field_table,
)
from .functional import _pair_weights, evaluate_functional
from .moduli import CGBlock, OperatorL
from .solver import Discretization, Problem

__all__ = [
    "Polarization",
    "ComparisonMedium",
    "CondensedResult",
    "exact_polarization",
    "evaluate_hs",
    "classify_bound",
    "bounded_h0_applier",
    "BoundedH0",
    "condensed_operator",
    "condense_and_solve",
]


def _pair_shapes(mesh, physics):
    """((nA, 2a), (nB, 2b)) shapes of the two pair families."""
    lay = get_layout(mesh, physics)
    if physics == "elastic":
        return (mesh.n_cells, 2 * lay.cy), (mesh.n_nodes, 2 * lay.cx)
    return (mesh.n_nodes, 2 * lay.cx), (mesh.n_cells, 2 * lay.cy)


@dataclasses.dataclass
class Polarization:
    """Pair-space polarization field T = (L - L0) F.

    ``part_A`` lives on the first pair family (cells for elastic media,
    nodes otherwise), ``part_B`` on the complementary family; layouts
    match the pair vectors of a FieldState of the same physics.
    """

    physics: str
    mesh: object
    omega: float
    part_A: np.ndarray
    part_B: np.ndarray

    def __post_init__(self):
        sa, sb = _pair_shapes(self.mesh, self.physics)
        self.part_A = np.asarray(self.part_A, dtype=float).reshape(sa)
        self.part_B = np.asarray(self.part_B, dtype=float).reshape(sb)

    @classmethod
    def zeros(cls, mesh, physics, omega):
        sa, sb = _pair_shapes(mesh, physics)
        return cls(physics, mesh, omega, np.zeros(sa), np.zeros(sb))

    def pair_A(self):
        return self.part_A

    def pair_B(self):
        return self.part_B

    def weighted_norm(self):
        """Norm in the integration metric of the pair homes."""
        wA, wB = _pair_weights(self.mesh, self.physics)
        return float(np.sqrt(np.sum(wA[:, None] * self.part_A ** 2)
                             + np.sum(wB[:, None] * self.part_B ** 2)))

    def write_tables(self, prefix):
        """Two field tables ``{prefix}_a.csv`` and ``{prefix}_b.csv``."""
        write_field_table(f"{prefix}_a.csv", self.part_A, "entity")
        write_field_table(f"{prefix}_b.csv", self.part_B, "entity")

    @classmethod
    def read_tables(cls, prefix, mesh, physics, omega):
        a = read_field_table(f"{prefix}_a.csv")
        b = read_field_table(f"{prefix}_b.csv")
        return cls(physics, mesh, omega, a, b)


def _real_matrix(value, name):
    a = _moduli._as_matrix(value)
    if np.abs(a.imag).max() > 0.0:
        raise ValueError(f"{name} must be a real matrix")
    return a.real.copy()


def _check_spd(mat, name, definite="positive"):
    _moduli._check_symmetric(mat, name)
    sym = 0.5 * (mat + mat.T)
    eig = np.linalg.eigvalsh(sym if definite == "positive" else -sym)
    scale = max(np.abs(eig).max(), 1.0)
    if eig[0] <= 1e-14 * scale:
        raise ValueError(f"{name} must be {definite} definite")


def _family_block(m1, m2, m3):
    """Stored constitutive block from (linear, quadratic, quadratic) parts.

    ``m2`` and ``m3`` are the sign-adjusted (positive definite) loss
    parts; the result is the positive definite block whose quadratic
    form is the Legendre-coupled energy of the family.
    """
    s = np.linalg.inv(m3)
    b = -m1 @ s
    a = m2 + m1 @ s @ m1.T
    return CGBlock(a, b, s)


class ComparisonMedium:
    """Constant comparison operator in six-parameter real block form.

    Parameters ``d1, d2, d3`` describe the first (stiffness-type) block
    and ``q1, q2, q3`` the second (density-type) block; ``d2``, ``d3``
    are positive definite while ``q2``, ``q3`` are negative definite,
    matching the loss signs of a passive medium.  The stored operator is
    block-diagonal and positive definite.
    """

    def __init__(self, physics, omega, d1, d2, d3, q1, q2, q3):
        if physics not in _moduli.PHYSICS:
            raise ValueError(f"unknown physics {physics!r}")
        self.physics = physics
        self.omega = float(omega)
        self.d1 = _real_matrix(d1, "d1")
        self.d2 = _real_matrix(d2, "d2")
        self.d3 = _real_matrix(d3, "d3")
        self.q1 = _real_matrix(q1, "q1")
        self.q2 = _real_matrix(q2, "q2")
        self.q3 = _real_matrix(q3, "q3")
        _moduli._check_symmetric(self.d1, "d1")
        _moduli._check_symmetric(self.q1, "q1")
        _check_spd(self.d2, "d2")
        _check_spd(self.d3, "d3")
        _check_spd(self.q2, "q2", definite="negative")
        _check_spd(self.q3, "q3", definite="negative")
        blockA = _family_block(self.d1, self.d2, self.d3)
        blockB = _family_block(self.q1, -self.q2, -self.q3)
        self.operator = OperatorL(blockA, blockB)
        for blk, name in ((blockA, "first"), (blockB, "second")):
            if blk.min_eigenvalue() <= 0.0:
                raise ValueError(f"{name} comparison block is not positive "
                                 "definite")

    @classmethod
    def from_moduli(cls, m):
        """Comparison medium matching a strictly passive complex medium."""
        _, _, psign, dsign = _moduli._TENSOR_INFO[m.physics]
        d1 = m.primal.real
        d23 = psign * m.primal.imag
        q1 = m.dual.real
        q23 = -dsign * m.dual.imag
        return cls(m.physics, m.omega, d1, d23, d23, q1, q23, q23)

    @classmethod
    def from_operator(cls, L0, physics, omega):
        """Six-parameter form of a given block operator.

        Inverts the stored-block construction; the round trip through
        the parameters reproduces ``L0`` exactly up to roundoff.
        """
        if not isinstance(L0, OperatorL):
            raise TypeError("expected an OperatorL")
        A, B = L0.blockA, L0.blockB
        d3 = np.linalg.inv(A.d)
        d1 = -A.b @ d3
        d2 = A.a - d1 @ A.d @ d1.T
        q3 = -np.linalg.inv(B.d)
        q1 = -B.b @ (-q3)
        q2 = -(B.a - q1 @ B.d @ q1.T)
        return cls(physics, omega, d1, d2, d3, q1, q2, q3)

    def matrices(self):
        """Dense (2a, 2a) and (2b, 2b) stored block matrices."""
        return self.operator.blockA.matrix, self.operator.blockB.matrix


def _entity_blocks(L, mesh, physics):
    if isinstance(L, ComparisonMedium):
        L = L.operator
    return _material_blocks(L, mesh, physics)


def _l0_matrices(L0):
    if isinstance(L0, ComparisonMedium):
        return L0.matrices()
    if isinstance(L0, OperatorL):
        return L0.blockA.matrix, L0.blockB.matrix
    raise TypeError("expected a ComparisonMedium or OperatorL")


def _difference_stacks(L, L0, mesh, physics, eig_margin=None):
    """Per-entity stacks of L - L0 with singularity screening.

    Entities whose difference determinant falls below 1e-12 times the
    entry-scale power are reported by index; ``eig_margin`` additionally
    rejects ill-conditioned differences (used by the condensed path).
    """
    sA, sB = _entity_blocks(L, mesh, physics)
    a0, b0 = _l0_matrices(L0)
    dA = sA - a0[None]
    dB = sB - b0[None]
    for d, name in ((dA, "first"), (dB, "second")):
        k = d.shape[1]
        det = np.abs(np.linalg.det(d))
        scale = np.abs(d).max(axis=(1, 2)) ** k
        bad = np.flatnonzero((scale == 0.0) | (det < 1e-12 * scale))
        if bad.size:
            raise ValueError(
                f"difference of the {name} blocks is singular on entities "
                f"{bad[:8].tolist()}: the comparison medium must differ "
                "from the true medium everywhere")
        if eig_margin is not None:
            eig = np.abs(np.linalg.eigvalsh(0.5 * (d + d.transpose(0, 2, 1))))
            bad = np.flatnonzero(eig.min(axis=1) < eig_margin * eig.max(axis=1))
            if bad.size:
                raise ValueError(
                    f"difference of the {name} blocks is nearly singular on "
                    f"entities {bad[:8].tolist()} (margin below {eig_margin:g})")
    return dA, dB


def _stack_solve(mats, vecs):
    """Per-entity linear solve with a vector right-hand side."""
    return np.linalg.solve(mats, vecs[:, :, None])[:, :, 0]


def exact_polarization(F, L, L0):
    """Polarization consistent with the constitutive law: T = (L - L0) F."""
    dA, dB = _difference_stacks(L, L0, F.mesh, F.physics)
    TA = np.einsum("nij,nj->ni", dA, F.pair_A())
    TB = np.einsum("nij,nj->ni", dB, F.pair_B())
    return Polarization(F.physics, F.mesh, F.omega, TA, TB)


def evaluate_hs(F, T, L, L0, src):
    """Value of the polarization functional at a trial pair (F, T).

    Equals the primal functional when ``T = exact_polarization(F)`` and
    F is admissible (its dependent components satisfy the differential
    constraints, as after `complete_trial_field`); for other T it
    brackets the primal minimum in the direction given by
    `classify_bound`.
    """
    if T.mesh is not F.mesh or T.physics != F.physics:
        raise ValueError("field and polarization live on different meshes")
    if src.mesh is not F.mesh:
        raise ValueError("source data lives on a different mesh")
    dA, dB = _difference_stacks(L, L0, F.mesh, F.physics)
    a0, b0 = _l0_matrices(L0)
    wA, wB = _pair_weights(F.mesh, F.physics)
    fa, fb = F.pair_A(), F.pair_B()
    ga, gb = src.g0.pair_A(), src.g0.pair_B()
    ta, tb = T.pair_A(), T.pair_B()

    lin = (np.einsum("n,ni,ni->", wA, ta - ga, fa)
           + np.einsum("n,ni,ni->", wB, tb - gb, fb))
    quad0 = 0.5 * (np.einsum("n,ni,ij,nj->", wA, fa, a0, fa)
                   + np.einsum("n,ni,ij,nj->", wB, fb, b0, fb))
    xa = _stack_solve(dA, ta)
    xb = _stack_solve(dB, tb)
    corr = 0.5 * (np.einsum("n,ni,ni->", wA, ta, xa)
                  + np.einsum("n,ni,ni->", wB, tb, xb))
    return float(lin + quad0 - corr)


def classify_bound(L, L0):
    """Direction of the polarization principle for the pair (L, L0).

    ``minimum_principle`` when L0 - L is positive definite on every
    entity (upper bounds), ``saddle_principle`` when L - L0 is positive
    definite everywhere (lower bounds), ``indefinite`` otherwise.
    """
    if isinstance(L, MaterialField):
        sA, sB = L.block_arrays()
        mesh = L.mesh
    elif isinstance(L, OperatorL):
        sA, sB = L.blockA.matrix[None], L.blockB.matrix[None]
    else:
        raise TypeError("expected OperatorL or MaterialField")
    a0, b0 = _l0_matrices(L0)

    def side(diffs):
        eig = np.linalg.eigvalsh(0.5 * (diffs + diffs.transpose(0, 2, 1)))
        return bool((eig[:, 0] > 0.0).all())

    if side(a0[None] - sA) and side(b0[None] - sB):
        return "minimum_principle"
    if side(sA - a0[None]) and side(sB - b0[None]):
        return "saddle_principle"
    return "indefinite"


class _UniformMaterial:
    """Adapter presenting a ComparisonMedium as a per-entity material."""

    def __init__(self, cm, mesh):
        self.mesh = mesh
        self.physics = cm.physics
        self.omega = cm.omega
        self.lossless = False
        self._cm = cm

    def block_arrays(self):
        a, b = _material_blocks(self._cm.operator, self.mesh, self.physics)
        return np.ascontiguousarray(a), np.ascontiguousarray(b)


class BoundedH0:
    """Response operator of the comparison medium on a bounded mesh.

    Applies H0 = K A0^{-1} K^T W: the pair image of the comparison
    problem's homogeneous-data solve loaded by a polarization.  Also
    carries ``comparison_field``, the comparison solution with the
    problem's actual data (the T = 0 field).
    """

    def __init__(self, cm, src):
        if cm.physics != src.physics or cm.omega != src.omega:
            raise ValueError("comparison medium and sources disagree")
        self._disc = Discretization(Problem(_UniformMaterial(cm, src.mesh),
                                            src))
        self._lu = splu(self._disc.A.tocsc())
        self._z0 = self._lu.solve(self._disc.b)
        self.comparison_field = self._disc.field_state(self._z0)
        self._sa, self._sb = _pair_shapes(src.mesh, src.physics)

    def _zres(self, TA, TB):
        tvec = np.concatenate([np.ravel(TA), np.ravel(TB)])
        return self._lu.solve(self._disc.K.T @ (self._disc.Wvec * tvec))

    def __call__(self, TA, TB):
        """Pair-space image (H0 T)_A, (H0 T)_B."""
        hvec = self._disc.K @ self._zres(TA, TB)
        na = self._sa[0] * self._sa[1]
        return hvec[:na].reshape(self._sa), hvec[na:].reshape(self._sb)

    def minimizing_field(self, T):
        """Trial field attaining the infimum at fixed T: F0 - H0 T."""
        z = self._z0 - self._zres(T.pair_A(), T.pair_B())
        return self._disc.field_state(z)


def bounded_h0_applier(cm, src):
    """Build the discrete comparison response for a bounded mesh."""
    return BoundedH0(cm, src)


def condensed_operator(h0, L, L0, mesh, physics):
    """Symmetric map T -> (L - L0)^{-1} T + H0 T in pair space.

    Returns a callable on (TA, TB); its stationarity equation equates
    this image with the comparison field F0.
    """
    dA, dB = _difference_stacks(L, L0, mesh, physics, eig_margin=1e-8)

    def apply(TA, TB):
        xa = _stack_solve(dA, TA)
        xb = _stack_solve(dB, TB)
        ha, hb = h0(TA, TB)
        return xa + ha, xb + hb

    return apply


@dataclasses.dataclass
class CondensedResult:
    value: float
    polarization: Polarization
    residual_A: np.ndarray
    residual_B: np.ndarray
    iterations: int

    def residual_norm(self):
        p = self.polarization
        wA, wB = _pair_weights(p.mesh, p.physics)
        return float(np.sqrt(np.sum(wA[:, None] * self.residual_A ** 2)
                             + np.sum(wB[:, None] * self.residual_B ** 2)))


def condense_and_solve(T, F0, h0, L, L0, src, solve=False,
                       tolerance=1e-10, max_iterations=500):
    """Polarization-only value and stationarity defect, optionally solved.

    Evaluates the condensed functional

        value(T) = J0(F0) + <T, F0> - (1/2) <T, [H0 + (L - L0)^{-1}] T>

    (all pairings in the integration metric) together with the residual
    of the stationarity equation (L - L0)^{-1} T + H0 T - F0.  With
    ``solve=True`` the stationary T is found by conjugate gradients in
    the weighted metric, starting from the given T.
    """
    mesh, physics = F0.mesh, F0.physics
    if T.mesh is not mesh or T.physics != physics:
        raise ValueError("polarization and comparison field live on "
                         "different meshes")
    apply_m = condensed_operator(h0, L, L0, mesh, physics)
    wA, wB = _pair_weights(mesh, physics)
    f0a, f0b = F0.pair_A(), F0.pair_B()

    def dot(xa, xb, ya, yb):
        return float(np.einsum("n,ni,ni->", wA, xa, ya)
                     + np.einsum("n,ni,ni->", wB, xb, yb))

    ta, tb = T.pair_A().copy(), T.pair_B().copy()
    iterations = 0
    if solve:
        # the stationary equation M T = F0 is solved through the
        # definite signed operator: -M for the minimum direction, +M
        # for the saddle direction
        sgn = 1.0 if classify_bound(L, L0) == "saddle_principle" else -1.0

        def op(xa, xb):
            ma, mb = apply_m(xa, xb)
            return sgn * ma, sgn * mb

        ra, rb = op(ta, tb)
        ra, rb = sgn * f0a - ra, sgn * f0b - rb
        da, db = ra.copy(), rb.copy()
        delta = dot(ra, rb, ra, rb)
        norm_rhs = np.sqrt(dot(f0a, f0b, f0a, f0b))
        if norm_rhs == 0.0:
            ta, tb = np.zeros_like(ta), np.zeros_like(tb)
        else:
            for iterations in range(1, max_iterations + 1):
                qa, qb = op(da, db)
                curv = dot(da, db, qa, qb)
                if curv <= 0.0:
                    raise ValueError("singular or indefinite condensed "
                                     "operator")
                alpha = delta / curv
                ta += alpha * da
                tb += alpha * db
                ra -= alpha * qa
                rb -= alpha * qb
                delta_new = dot(ra, rb, ra, rb)
                if np.sqrt(delta_new) <= tolerance * norm_rhs:
                    break
                da = ra + (delta_new / delta) * da
                db = rb + (delta_new / delta) * db
                delta = delta_new

    ma, mb = apply_m(ta, tb)
    res_a, res_b = ma - f0a, mb - f0b
    l0_op = L0.operator if isinstance(L0, ComparisonMedium) else L0
    j0 = evaluate_functional(F0, l0_op, src).total
    value = (j0 + dot(ta, tb, f0a, f0b)
             - 0.5 * dot(ta, tb, ma, mb))
    pol = Polarization(physics, mesh, F0.omega, ta, tb)
    return CondensedResult(value=value, polarization=pol,
                           residual_A=res_a, residual_B=res_b,
                           iterations=iterations)
