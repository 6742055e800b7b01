"""Conjugate-gradient minimization and the direct complex oracle.

The minimization route assembles the quadratic functional over the free
unknowns z = (primary nodes, fluxes, traces) after eliminating the
constraint-derived components symbolically: the pair vector is an affine
map P = K z + P0, so

    J(z) = (1/2) z^T A z - b^T z + c,     A = K^T W L K,

with A symmetric positive definite for strictly passive media.  The
oracle route discretizes the complex balance equations on the same mesh
with the same weights and boundary encoding, so the two solutions agree
to solver tolerance rather than to discretization accuracy.

For media whose dual tensor is exactly lossless (real density and
analogues) the quadratic block of the dual pair is dropped and the
primary-side variable it governed is eliminated through the balance
constraint; the remaining problem is again positive definite.
"""

import dataclasses
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import moduli as _moduli
from .fields import (
    BoundarySpec,
    MaterialField,
    SourceData,
    _complete_dual,
    apply_constitutive,
    build_source_data,
    complete_trial_field,
    get_layout,
    reaction_traces,
)
from .functional import (
    _pair_weights,
    _pairing,
    evaluate_functional,
    minimum_value_surface,
)

__all__ = [
    "Problem",
    "SolveOptions",
    "SolveReport",
    "Discretization",
    "ComplexSolution",
    "ComparisonReport",
    "minimize_cg",
    "solve_direct_complex",
    "recover_complex",
    "solve_rotated",
    "cross_validate",
]


@dataclasses.dataclass
class Problem:
    """A material field plus source data on a shared mesh."""

    material: MaterialField
    src: SourceData

    def __post_init__(self):
        if self.material.mesh is not self.src.mesh:
            raise ValueError("material and sources live on different meshes")
        if self.material.physics != self.src.physics:
            raise ValueError("material and sources disagree on physics")
        if self.material.omega != self.src.omega:
            raise ValueError("material and sources disagree on frequency")

    @property
    def mesh(self):
        return self.src.mesh

    @property
    def physics(self):
        return self.src.physics

    @property
    def omega(self):
        return self.src.omega

    @property
    def bc(self):
        return self.src.bc

    @property
    def reduced(self):
        """True when the dual tensor is lossless and the reduced path applies."""
        return self.material.lossless


@dataclasses.dataclass
class SolveOptions:
    max_iterations: int = 2000
    relative_residual_tolerance: float = 1e-10
    preconditioner: str = "block_jacobi"
    seed: int = None  # random start when set; zero start otherwise

    def __post_init__(self):
        if not 0.0 < self.relative_residual_tolerance < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.preconditioner not in ("none", "block_jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclasses.dataclass
class SolveReport:
    iterations: int
    final_residual: float
    functional_value: float
    wall_time: float
    history: np.ndarray  # rows (iteration, relative residual, functional)
    converged: bool

    def write_history(self, path):
        with open(path, "w") as f:
            f.write("iteration,residual,functional\n")
            for it, res, val in self.history:
                f.write(f"{int(it)},{float(res)!r},{float(val)!r}\n")


def _bsr(blocks, size):
    """Block-diagonal sparse matrix from an (n, k, k) stack."""
    n = blocks.shape[0]
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)),
                         shape=(size, size))


def _selection(total, free_flat):
    """Columns of the identity keeping the flagged dofs."""
    idx = np.flatnonzero(free_flat)
    return sp.csr_matrix(
        (np.ones(idx.size), (idx, np.arange(idx.size))),
        shape=(total, idx.size)), idx


class Discretization:
    """Assembled quadratic form of a problem over its free unknowns.

    Exposes ``A`` (sparse SPD), ``b``, the constant ``c`` such that the
    functional is (1/2) z A z - b z + c, an affine reconstruction
    ``unknowns(z) -> (primary, flux, trace)`` and the per-entity group
    structure used by the block-Jacobi preconditioner.
    """

    def __init__(self, problem):
        self.problem = problem
        mesh = problem.mesh
        physics = problem.physics
        omega = problem.omega
        bc = problem.bc
        lay = get_layout(mesh, physics)
        self.layout = lay
        n, nc, nb = mesh.n_nodes, mesh.n_cells, mesh.n_boundary
        cx, cy = lay.cx, lay.cy
        nX, nY, nT = n * cx, nc * cy, nb * cx

        x_free = np.ones((n, cx), dtype=bool)
        x_free[mesh.boundary_nodes] = ~bc.sel1
        tr_free = ~bc.sel2
        x_ess = np.zeros((n, cx))
        x_ess[mesh.boundary_nodes] = np.where(bc.sel1, bc.val1, 0.0)
        tr_ess = np.where(bc.sel2, bc.val2, 0.0)

        Sx, self._x_free_idx = _selection(nX, x_free.ravel())
        St, self._tr_free_idx = _selection(nT, tr_free.ravel())

        K_all, P0f = self._pair_map()
        reduced = problem.reduced
        self.reduced = reduced
        mat = problem.material

        if not reduced:
            blkA, blkB = mat.block_arrays()
            T = sp.bmat([[Sx, None, None],
                         [None, sp.identity(nY, format="csr"), None],
                         [None, None, St]], format="csr")
            t0 = np.concatenate([x_ess.ravel(), np.zeros(nY), tr_ess.ravel()])
            groups = self._groups(x_free, tr_free, with_x=True, with_y=True)
        else:
            blkA = mat.blockA_array()
            blkB = None
            w_rep, f = lay.w_rep, problem.src.f_real
            if physics == "elastic":
                if bc.sel1.any():
                    raise ValueError(
                        "essential primary conditions cannot be imposed when "
                        "the density is lossless: the primary field is "
                        "eliminated; prescribe traces instead")
                rho_r = mat.node_coeff.real
                try:
                    rinv = np.linalg.inv(rho_r)
                except np.linalg.LinAlgError:
                    raise ValueError("singular real density in the reduced path")
                E = _bsr(rinv, nX) @ sp.diags(-1.0 / (omega ** 2 * w_rep))
                TXY = (E @ (-lay.BT_V)).tocsr()
                TXt = (E @ lay.M @ St).tocsr()
                t0_X = (E @ (lay.M @ tr_ess.ravel())
                        - (_bsr(rinv, nX) @ f.ravel()) / omega ** 2)
                T = sp.bmat([[TXY, TXt],
                             [sp.identity(nY, format="csr"), None],
                             [None, St]], format="csr")
                t0 = np.concatenate([t0_X, np.zeros(nY), tr_ess.ravel()])
                groups = self._groups(x_free, tr_free, with_x=False, with_y=True)
            else:
                coef = mat.dual_cells.real
                if physics == "electromagnetic":
                    coef = -coef
                Cb = _bsr(coef / omega, nY)
                TYX = (Cb @ lay.B @ Sx).tocsr()
                t0_Y = Cb @ (lay.B @ x_ess.ravel())
                if physics == "acoustic":
                    t0_Y -= Cb @ f.ravel()
                T = sp.bmat([[Sx, None],
                             [TYX, None],
                             [None, St]], format="csr")
                t0 = np.concatenate([x_ess.ravel(), t0_Y, tr_ess.ravel()])
                groups = self._groups(x_free, tr_free, with_x=True, with_y=False)

        self.T = T.tocsr()
        self.t0 = t0
        self.K = (K_all @ self.T).tocsr()
        self.P0 = K_all @ t0 + P0f

        nA, a = blkA.shape[0], blkA.shape[1] // 2
        if physics == "elastic":
            nB, bdim = n, cx
        else:
            nB, bdim = nc, cy
        LA = _bsr(blkA, nA * 2 * a)
        if blkB is None:
            LB = sp.csr_matrix((nB * 2 * bdim, nB * 2 * bdim))
        else:
            LB = _bsr(blkB, nB * 2 * bdim)
        self.Lmat = sp.block_diag([LA, LB], format="csr")

        wA, wB = _pair_weights(mesh, physics)
        self.Wvec = np.concatenate([np.repeat(wA, 2 * a),
                                    np.repeat(wB, 2 * bdim)])
        g0 = problem.src.g0
        self.G0vec = np.concatenate([g0.pair_A().ravel(), g0.pair_B().ravel()])

        WL = sp.diags(self.Wvec) @ self.Lmat
        A = (self.K.T @ WL @ self.K).tocsr()
        self.A = (A + A.T) * 0.5
        self.b = self.K.T @ (self.Wvec * (self.G0vec - self.Lmat @ self.P0))
        self.c = float(0.5 * self.P0 @ (self.Wvec * (self.Lmat @ self.P0))
                       - self.G0vec @ (self.Wvec * self.P0))
        self.groups = groups
        self.n_unknowns = self.A.shape[0]

    def _pair_map(self):
        """Affine map from all raw dofs (X, Y, tr) to the pair vector."""
        problem = self.problem
        mesh, lay = problem.mesh, self.layout
        omega = problem.omega
        physics = problem.physics
        n, nc, nb = mesh.n_nodes, mesh.n_cells, mesh.n_boundary
        cx, cy = lay.cx, lay.cy
        nX, nY, nT = n * cx, nc * cy, nb * cx
        B, BT_V, M = lay.B, lay.BT_V, lay.M
        w_rep = lay.w_rep
        IX = sp.identity(nX, format="csr")
        IY = sp.identity(nY, format="csr")
        ZXY = sp.csr_matrix((nX, nY))
        ZXT = sp.csr_matrix((nX, nT))
        ZYX = sp.csr_matrix((nY, nX))
        ZYT = sp.csr_matrix((nY, nT))
        f = problem.src.f_real
        fi = problem.src.f_imag

        if physics == "elastic":
            Dw = sp.diags(1.0 / (omega * w_rep))
            parts = [
                sp.hstack([B, sp.csr_matrix((nY, nY)), ZYT]),
                sp.hstack([ZYX, IY, ZYT]),
                sp.hstack([omega * IX, ZXY, ZXT]),
                sp.hstack([sp.csr_matrix((nX, nX)), Dw @ BT_V, -(Dw @ M)]),
            ]
            offs = [np.zeros(nY), np.zeros(nY), np.zeros(nX),
                    -f.ravel() / omega]
            sizes = [(nc, cy), (nc, cy), (n, cx), (n, cx)]
        elif physics == "acoustic":
            Dw = sp.diags(1.0 / w_rep)
            parts = [
                sp.hstack([-omega * IX, ZXY, ZXT]),
                sp.hstack([sp.csr_matrix((nX, nX)), -(Dw @ BT_V), Dw @ M]),
                sp.hstack([B, sp.csr_matrix((nY, nY)), ZYT]),
                sp.hstack([ZYX, omega * IY, ZYT]),
            ]
            offs = [np.zeros(nX), np.zeros(nX), -f.ravel(), np.zeros(nY)]
            sizes = [(n, cx), (n, cx), (nc, cy), (nc, cy)]
        else:
            Dw = sp.diags(1.0 / (omega * w_rep))
            parts = [
                sp.hstack([IX, ZXY, ZXT]),
                sp.hstack([sp.csr_matrix((nX, nX)), -(Dw @ BT_V), Dw @ M]),
                sp.hstack([-B / omega, sp.csr_matrix((nY, nY)), ZYT]),
                sp.hstack([ZYX, IY, ZYT]),
            ]
            offs = [np.zeros(nX), fi.ravel() / omega, np.zeros(nY),
                    np.zeros(nY)]
            sizes = [(n, cx), (n, cx), (nc, cy), (nc, cy)]

        stacked = sp.vstack(parts).tocsr()
        off_vec = np.concatenate(offs)
        # reorder rows from [part1; part2; part3; part4] to the
        # entity-major pair layout [(A1 A2) per A-entity, (B1 B2) per B]
        nA, aw = sizes[0]
        nBh, bw = sizes[2]
        srcA = np.empty((nA, 2 * aw), dtype=int)
        base = np.arange(nA)[:, None] * aw + np.arange(aw)
        srcA[:, :aw] = base
        srcA[:, aw:] = nA * aw + base
        srcB = np.empty((nBh, 2 * bw), dtype=int)
        base = np.arange(nBh)[:, None] * bw + np.arange(bw)
        srcB[:, :bw] = 2 * nA * aw + base
        srcB[:, bw:] = 2 * nA * aw + nBh * bw + base
        perm = np.concatenate([srcA.ravel(), srcB.ravel()])
        return stacked[perm], off_vec[perm]

    def _groups(self, x_free, tr_free, with_x, with_y):
        """(start, size) runs of z belonging to one node/cell/trace entity."""
        mesh = self.problem.mesh
        cy = self.layout.cy
        groups = []
        pos = 0
        if with_x:
            for count in x_free.sum(axis=1):
                if count:
                    groups.append((pos, int(count)))
                    pos += int(count)
        if with_y:
            for _ in range(mesh.n_cells):
                groups.append((pos, cy))
                pos += cy
        for count in tr_free.sum(axis=1):
            if count:
                groups.append((pos, int(count)))
                pos += int(count)
        return groups

    def unknowns(self, z):
        """Reconstruct full (primary, flux, trace) arrays from free dofs."""
        mesh = self.problem.mesh
        lay = self.layout
        full = self.T @ z + self.t0
        nX = mesh.n_nodes * lay.cx
        nY = mesh.n_cells * lay.cy
        X = full[:nX].reshape(mesh.n_nodes, lay.cx)
        Y = full[nX:nX + nY].reshape(mesh.n_cells, lay.cy)
        tr = full[nX + nY:].reshape(mesh.n_boundary, lay.cx)
        return X, Y, tr

    def field_state(self, z):
        return complete_trial_field(self.unknowns(z), self.problem.src)

    def functional(self, z):
        Az = self.A @ z
        return float(0.5 * z @ Az - self.b @ z + self.c)


def _block_jacobi(A, groups):
    """Inverse of the per-entity diagonal blocks of A."""
    A = A.tocsr()
    rows, cols, vals = [], [], []
    for start, size in groups:
        block = A[start:start + size, start:start + size].toarray()
        inv = np.linalg.inv(block)
        r, c = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        rows.append((start + r).ravel())
        cols.append((start + c).ravel())
        vals.append(inv.ravel())
    n = A.shape[0]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))


def _pcg(A, b, Minv, opts, start=None):
    """Preconditioned conjugate gradients with energy history.

    Returns (z, history, converged); history rows are
    (iteration, relative residual, quadratic value without the constant).
    Raises on a direction of nonpositive curvature.
    """
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros_like(b), np.zeros((0, 3)), True
    z = np.zeros_like(b) if start is None else start.astype(float).copy()
    apply_m = (lambda v: v) if Minv is None else (lambda v: Minv @ v)
    r = b - A @ z
    s = apply_m(r)
    d = s.copy()
    delta = float(r @ s)
    history = []
    converged = False
    for k in range(1, opts.max_iterations + 1):
        q = A @ d
        dq = float(d @ q)
        if dq <= 0.0:
            raise ValueError(
                "indefinite operator: encountered a direction of nonpositive "
                "curvature (the medium is not strictly passive)")
        alpha = delta / dq
        z += alpha * d
        if k % 50 == 0:
            r = b - A @ z  # periodic exact refresh against drift
        else:
            r -= alpha * q
        relres = float(np.linalg.norm(r)) / norm_b
        value = float(-0.5 * z @ (b + r))
        history.append((k, relres, value))
        if relres <= opts.relative_residual_tolerance:
            converged = True
            break
        s = apply_m(r)
        delta_new = float(r @ s)
        beta = delta_new / delta
        delta = delta_new
        d = s + beta * d
    return z, np.asarray(history), converged


def minimize_cg(problem, opts=None):
    """Minimize the discrete functional by preconditioned CG.

    Returns (FieldState, SolveReport).  The iteration stops when the
    residual (the negative gradient in the free unknowns) drops below
    the tolerance times the load norm; non-convergence returns the best
    iterate with ``converged`` false rather than raising.
    """
    if opts is None:
        opts = SolveOptions()
    t0 = time.perf_counter()
    disc = Discretization(problem)
    Minv = None
    if opts.preconditioner == "block_jacobi":
        Minv = _block_jacobi(disc.A, disc.groups)
    start = None
    if opts.seed is not None:
        rng = np.random.default_rng(opts.seed)
        start = rng.standard_normal(disc.n_unknowns)
    z, history, converged = _pcg(disc.A, disc.b, Minv, opts, start=start)
    if history.size:
        history = history.copy()
        history[:, 2] += disc.c
        final_res = float(history[-1, 1])
        value = float(history[-1, 2])
        iters = int(history[-1, 0])
    else:
        final_res = 0.0
        value = disc.c
        iters = 0
    F = disc.field_state(z)
    report = SolveReport(iterations=iters, final_residual=final_res,
                         functional_value=value,
                         wall_time=time.perf_counter() - t0,
                         history=history, converged=converged)
    return F, report


# ----------------------------------------------------------------------
# direct complex oracle


@dataclasses.dataclass
class ComplexSolution:
    """Complex field bundle (primary, flux, trace and derived parts)."""

    problem: Problem
    primary: np.ndarray    # (n, cx) complex: u / P / E
    flux: np.ndarray       # (nc, cy) complex: sigma / v / H
    trace: np.ndarray      # (nb, cx) complex: tau / nu / theta
    grad_like: np.ndarray  # (nc, cy) complex: strain / p / B
    div_like: np.ndarray   # (n, cx) complex: momentum p / h / D

    def to_field_state(self):
        """Real-side quadruple as a constraint-complete trial field."""
        ph = self.problem.physics
        if ph == "elastic":
            raw = (self.primary.real, self.flux.real, self.trace.real)
        else:
            raw = (self.primary.real, self.flux.imag, self.trace.imag)
        return complete_trial_field(raw, self.problem.src)

    def to_dual_state(self):
        """Imaginary-side quadruple with its trace attached."""
        ph = self.problem.physics
        mesh, omega = self.problem.mesh, self.problem.omega
        if ph == "elastic":
            prim, flux, tr = (self.primary.imag, self.flux.imag,
                              self.trace.imag)
        else:
            prim, flux, tr = (self.primary.imag, self.flux.real,
                              self.trace.real)
        return _complete_dual(ph, mesh, omega, prim, flux, tr,
                              self.problem.src.f)


def solve_direct_complex(problem):
    """Direct sparse solve of the complex balance equations.

    Assembles the time-reduced equations (balance plus constitutive law)
    over complex nodal primaries and complex boundary traces, with two
    boundary-condition rows per boundary node and component matching the
    selection pairs.  Serves as the verification oracle for the
    minimization route; both use identical discrete operators.
    """
    mesh = problem.mesh
    lay = get_layout(mesh, problem.physics)
    omega = problem.omega
    mat = problem.material
    bc = problem.bc
    n, nc, nb = mesh.n_nodes, mesh.n_cells, mesh.n_boundary
    cx, cy = lay.cx, lay.cy
    nX, nY, nT = n * cx, nc * cy, nb * cx
    B, BT_V, M = lay.B, lay.BT_V, lay.M
    w_rep = lay.w_rep
    f = problem.src.f

    node_blocks = mat.node_coeff * mesh.node_weights[:, None, None]
    Dnode = _bsr(node_blocks.astype(complex), nX)
    if problem.physics == "elastic":
        Cb = _bsr(mat.primal_cells, nY)
        Suu = (-(BT_V @ Cb @ B) + omega ** 2 * Dnode).tocsr()
        Sut = M.astype(complex)
        rhs = -(w_rep * f.ravel())
    elif problem.physics == "acoustic":
        Rb = _bsr(mat.dual_cells, nY)
        Suu = ((BT_V @ Rb @ B) - omega ** 2 * Dnode).tocsr()
        Sut = (1j * omega) * M
        rhs = BT_V @ (Rb @ f.ravel())
    else:
        Mb = _bsr(mat.dual_cells, nY)
        Suu = (-(BT_V @ Mb @ B) + omega ** 2 * Dnode).tocsr()
        Sut = (1j * omega) * M
        rhs = -1j * omega * (w_rep * f.ravel())

    bal = sp.bmat([[Suu.real, -Suu.imag, Sut.real, -Sut.imag],
                   [Suu.imag, Suu.real, Sut.imag, Sut.real]], format="csr")
    rhs_bal = np.concatenate([rhs.real, rhs.imag])

    rows, cols, vals, rhs_bc = [], [], [], []
    re_x, im_x, re_t, im_t = 0, nX, 2 * nX, 2 * nX + nT
    elastic = problem.physics == "elastic"
    for bi, node in enumerate(mesh.boundary_nodes):
        for ci in range(cx):
            k = bi * cx + ci
            g = node * cx + ci
            r1, r2 = 2 * k, 2 * k + 1
            if bc.sel1[bi, ci]:
                rows.append(r1), cols.append(re_x + g)
            else:
                rows.append(r1)
                cols.append((im_t if elastic else re_t) + k)
            vals.append(1.0)
            rhs_bc.append(bc.val1[bi, ci])
            if bc.sel2[bi, ci]:
                rows.append(r2)
                cols.append((re_t if elastic else im_t) + k)
            else:
                rows.append(r2), cols.append(im_x + g)
            vals.append(1.0)
            rhs_bc.append(bc.val2[bi, ci])
    Abc = sp.csr_matrix((vals, (rows, cols)), shape=(2 * nT, 2 * nX + 2 * nT))
    system = sp.vstack([bal, Abc]).tocsc()
    sol = spla.spsolve(system, np.concatenate([rhs_bal, rhs_bc]))
    if not np.all(np.isfinite(sol)):
        raise ValueError("singular complex system: the discrete operator is "
                         "resonant (medium not strictly passive?)")

    U = (sol[:nX] + 1j * sol[nX:2 * nX]).reshape(n, cx)
    TR = (sol[2 * nX:2 * nX + nT] + 1j * sol[2 * nX + nT:]).reshape(nb, cx)
    gradU = (B @ U.ravel()).reshape(nc, cy)
    if problem.physics == "elastic":
        flux = np.einsum("nij,nj->ni", mat.primal_cells, gradU)
        grad_like = gradU
        div_like = 1j * omega * np.einsum("nij,nj->ni", mat.node_coeff, U)
    elif problem.physics == "acoustic":
        p = (1j / omega) * (gradU - f)
        flux = np.einsum("nij,nj->ni", mat.dual_cells, p)
        grad_like = p
        div_like = -1j * omega * np.einsum("nij,nj->ni", mat.node_coeff, U)
    else:
        bfield = (-1j / omega) * gradU
        flux = np.einsum("nij,nj->ni", mat.dual_cells, bfield)
        grad_like = bfield
        div_like = np.einsum("nij,nj->ni", mat.node_coeff, U)
    return ComplexSolution(problem, U, flux, TR, grad_like, div_like)


def recover_complex(F, problem):
    """Complex solution bundle from a minimizer of the functional.

    On the full path the imaginary parts are the constitutive image of
    ``F`` with the reaction traces; on the reduced (lossless-dual) path
    they come from the first constitutive block and the eliminated
    balance relation.
    """
    src = problem.src
    mesh, omega = problem.mesh, problem.omega
    ph = problem.physics
    if not problem.reduced:
        G = apply_constitutive(F, problem.material)
        reaction = reaction_traces(G, src)
        if ph == "elastic":
            return ComplexSolution(problem,
                                   F.primary + 1j * G.primary,
                                   F.flux + 1j * G.flux,
                                   F.trace + 1j * reaction,
                                   F.grad_part + 1j * G.grad_part,
                                   G.div_part + 1j * F.div_part)
        if ph == "acoustic":
            return ComplexSolution(problem,
                                   F.primary + 1j * G.primary,
                                   G.flux + 1j * F.flux,
                                   reaction + 1j * F.trace,
                                   G.grad_part + 1j * F.grad_part,
                                   G.div_part + 1j * F.div_part)
        return ComplexSolution(problem,
                               F.primary + 1j * G.primary,
                               G.flux + 1j * F.flux,
                               reaction + 1j * F.trace,
                               G.grad_part + 1j * F.grad_part,
                               F.div_part + 1j * G.div_part)

    mat = problem.material
    lay = get_layout(mesh, ph)
    blkA = mat.blockA_array()
    pa = F.pair_A()
    img = np.einsum("nij,nj->ni", blkA, pa)
    half = pa.shape[1] // 2
    w = mesh.node_weights[:, None]
    m = mesh.boundary_mass[:, None]
    if ph == "elastic":
        sig2 = img[:, :half]
        e2 = -img[:, half:]
        tr2 = src.g0.trace  # natural targets are the only dual traces
        rinv = np.linalg.inv(mat.node_coeff.real)
        div2 = lay.div_trace(sig2, tr2) + src.f_imag
        # p' = -omega rho u'' when the density is real
        u2 = -np.einsum("nij,nj->ni", rinv, div2) / omega ** 2
        p1 = div2 / omega
        return ComplexSolution(problem,
                               F.primary + 1j * u2,
                               F.flux + 1j * sig2,
                               F.trace + 1j * tr2,
                               F.grad_part + 1j * e2,
                               p1 + 1j * F.div_part)
    if ph == "acoustic":
        h1 = img[:, :half]
        P2 = -img[:, half:] / omega
        p1 = (-lay.apply_B(P2) + src.f_imag) / omega
        v1 = np.einsum("nij,nj->ni", mat.dual_cells.real, p1)
        bt = (lay.BT_V @ v1.ravel()).reshape(mesh.n_nodes, lay.cx)
        nu1 = (w * h1 + bt)[mesh.boundary_nodes] / m
        return ComplexSolution(problem,
                               F.primary + 1j * P2,
                               v1 + 1j * F.flux,
                               nu1 + 1j * F.trace,
                               p1 + 1j * F.grad_part,
                               h1 + 1j * F.div_part)
    D2 = img[:, :half]
    E2 = -img[:, half:]
    B1 = lay.apply_B(E2) / omega
    H1 = np.einsum("nij,nj->ni", mat.dual_cells.real, B1)
    bt = (lay.BT_V @ H1.ravel()).reshape(mesh.n_nodes, lay.cx)
    th1 = (bt - w * (omega * D2 + src.f_real))[mesh.boundary_nodes] / m
    return ComplexSolution(problem,
                           F.primary + 1j * E2,
                           H1 + 1j * F.flux,
                           th1 + 1j * F.trace,
                           B1 + 1j * F.grad_part,
                           F.div_part + 1j * D2)


# ----------------------------------------------------------------------
# rotation path for media that are passive only after a phase rotation


def _rotated_bc(bc, theta, physics):
    """Rotate complete Neumann data by exp(i theta); Dirichlet unchanged."""
    dirichlet = bc.sel1 & ~bc.sel2
    neumann = ~bc.sel1 & bc.sel2
    if not np.all(dirichlet | neumann):
        raise ValueError("rotation needs complete Dirichlet or Neumann data "
                         "on every boundary component")
    out = BoundarySpec(bc.mesh, physics)
    out.sel1[:], out.sel2[:] = bc.sel1, bc.sel2
    out.val1[:], out.val2[:] = bc.val1, bc.val2
    if physics == "elastic":
        t = bc.val2 + 1j * bc.val1
    else:
        t = bc.val1 + 1j * bc.val2
    t = np.exp(1j * theta) * t
    if physics == "elastic":
        out.val1[neumann] = t.imag[neumann]
        out.val2[neumann] = t.real[neumann]
    else:
        out.val1[neumann] = t.real[neumann]
        out.val2[neumann] = t.imag[neumann]
    return out


def solve_rotated(problem, theta=None, opts=None):
    """Solve a rotatable medium by minimizing in a rotated frame.

    Multiplying both constitutive tensors, the dual-type data and (for
    elastic and electromagnetic problems) the body force by exp(i theta)
    leaves the primary field unchanged while restoring strict passivity
    for suitable theta.  Returns the complex solution mapped back to the
    original frame plus the solve report.
    """
    media = problem.material.media
    if theta is None:
        for cand in np.pi / 2 * np.arange(1, 181) / 181.0 * -1.0:
            if all(_moduli.rotate_moduli(m, cand)[1] for m in media.values()):
                theta = float(cand)
                break
        else:
            raise ValueError("no rotation angle restores passivity")
    rotated = {tag: _moduli.rotate_moduli(m, theta)[0]
               for tag, m in media.items()}
    mesh = problem.mesh
    rmat = MaterialField(mesh, rotated)
    rbc = _rotated_bc(problem.bc, theta, problem.physics)
    f = problem.src.f
    if problem.physics != "acoustic":
        f = np.exp(1j * theta) * f
    rsrc = build_source_data(f, rbc, mesh, problem.omega)
    rprob = Problem(rmat, rsrc)
    F, report = minimize_cg(rprob, opts)
    sol = recover_complex(F, rprob)
    phase = np.exp(-1j * theta)
    return ComplexSolution(problem, sol.primary, phase * sol.flux,
                           phase * sol.trace, sol.grad_like,
                           phase * sol.div_like), report


# ----------------------------------------------------------------------
# cross validation


@dataclasses.dataclass
class ComparisonReport:
    primary_error: float
    flux_error: float
    trace_error: float
    functional_gap: float
    boundary_identity_gap: float  # None when a body force is present

    @property
    def max_field_error(self):
        return max(self.primary_error, self.flux_error, self.trace_error)


def _relative(a, b):
    diff = float(np.linalg.norm(np.asarray(a) - np.asarray(b)))
    base = float(np.linalg.norm(np.asarray(b)))
    if base == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / base


def _functional_total(F, problem):
    if not problem.reduced:
        return evaluate_functional(F, problem.material, problem.src).total
    blkA = problem.material.blockA_array()
    wA, _ = _pair_weights(problem.mesh, problem.physics)
    pa = F.pair_A()
    quad = 0.5 * float(np.einsum("n,ni,nij,nj->", wA, pa, blkA, pa))
    return quad - _pairing(problem.src.g0, F)


def cross_validate(cg_result, oracle):
    """Compare a minimization result against the complex oracle.

    ``cg_result`` may be the (FieldState, SolveReport) pair returned by
    `minimize_cg` or a bare FieldState.  Reports relative errors of the
    raw unknown triple, the functional-value gap, and (for zero body
    force) the defect of the surface-only minimum formula at the oracle
    solution.
    """
    F = cg_result[0] if isinstance(cg_result, tuple) else cg_result
    problem = oracle.problem
    F_or = oracle.to_field_state()
    report = ComparisonReport(
        primary_error=_relative(F.primary, F_or.primary),
        flux_error=_relative(F.flux, F_or.flux),
        trace_error=_relative(F.trace, F_or.trace),
        functional_gap=abs(_functional_total(F, problem)
                           - _functional_total(F_or, problem)),
        boundary_identity_gap=None,
    )
    if np.abs(problem.src.f).max() == 0.0 and not problem.reduced:
        j_or = _functional_total(F_or, problem)
        surf = minimum_value_surface(oracle.primary[problem.mesh.boundary_nodes],
                                     oracle.trace, problem.src)
        scale = abs(j_or) + abs(surf) + 1e-300
        report.boundary_identity_gap = abs(j_or - surf) / scale
    return report
