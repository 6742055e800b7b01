"""Infinite-body comparison response by plane-wave superposition.

The comparison medium of the polarization scheme, posed on all of
space, satisfies

    div(D0 grad U) + omega^2 Q0 U + f = 0

for the stacked real/imaginary displacement pair U.  Its Green's
function is assembled direction by direction: along each unit vector xi
the operator pencil (L0(xi), Q0) is diagonalized into wave branches
with complex speeds c_N (Im c_N > 0 so every branch decays), and the
full kernel is the sphere integral of a delta-line part plus a smooth
decaying part.  The delta part needs no branch data at all, since

    sum_N U_N U_N^T / c_N^2 = L0(xi)^{-1}

by completeness; only the oscillatory part uses the branch
decomposition, evaluated here as a matrix function of Q0^{-1} L0(xi).

Voxel-grid routines convolve this kernel with polarization sources and
body forces, using a forward-difference divergence and a
backward-difference gradient.  These are exact negative adjoints on the
grid, which keeps the discrete homogeneous-response operator symmetric.
"""

import dataclasses
import itertools
import warnings

import numpy as np

__all__ = [
    "InfiniteComparisonMedium",
    "EigenBranch",
    "GreensEvaluation",
    "VoxelGrid",
    "VoxelPolarization",
    "VoxelResponse",
    "FieldIncrement",
    "branch_eigen",
    "plane_wave_profile",
    "greens_evaluate",
    "solve_infinite_medium",
    "apply_H0",
    "h0_matrix",
    "write_greens_table",
    "read_greens_table",
]

# fixed rule for the great-circle delta-line integral
_CIRCLE_POINTS = 256

# probe directions for validity checks and decay estimates
_PROBES = np.array([
    [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0], [1.0, -1.0, 0.0], [1.0, 0.0, -1.0],
    [1.0, -1.0, 1.0],
])
_PROBES = _PROBES / np.linalg.norm(_PROBES, axis=1)[:, None]


def _as_block4(value, k, name):
    """Coerce to a (k, 3, k, 3) real gradient-space tensor."""
    a = np.asarray(value, dtype=float)
    if a.shape == ():
        out = np.zeros((k, 3, k, 3))
        for i in range(k):
            out[i, :, i, :] = a * np.eye(3)
        return out
    if a.shape != (k, 3, k, 3):
        raise ValueError(f"{name} must have shape {(k, 3, k, 3)}, "
                         f"got {a.shape}")
    return a.copy()


def _as_square(value, k, name):
    a = np.atleast_2d(np.asarray(value, dtype=float))
    if a.shape != (k, k):
        raise ValueError(f"{name} must have shape {(k, k)}, got {a.shape}")
    return a.copy()


def _gamma(block, xi):
    """Direction contraction Gamma_ab = xi_j block[a,j,b,l] xi_l, batched."""
    xi = np.atleast_2d(xi)
    return np.einsum("nj,ajbl,nl->nab", xi, block, xi)


class InfiniteComparisonMedium:
    """Homogeneous comparison tensors posed on all of space.

    The gradient-space blocks ``d1, d2, d3`` have shape (k, 3, k, 3)
    and the inertial blocks ``q1, q2, q3`` shape (k, k), where k is the
    number of displacement components carried by each half of the
    stacked pair (1 for a scalar field, 3 for elastodynamics).  The
    loss blocks satisfy the passivity signs: ``q2`` and ``q3`` are
    negative definite while the direction contractions of ``d2`` and
    ``d3`` are positive definite.
    """

    def __init__(self, d1, d2, d3, q1, q2, q3):
        q2 = np.atleast_2d(np.asarray(q2, dtype=float))
        k = q2.shape[0]
        self.k = k
        self.d1 = _as_block4(d1, k, "d1")
        self.d2 = _as_block4(d2, k, "d2")
        self.d3 = _as_block4(d3, k, "d3")
        self.q1 = _as_square(q1, k, "q1")
        self.q2 = _as_square(q2, k, "q2")
        self.q3 = _as_square(q3, k, "q3")
        for name in ("d2", "d3"):
            b = getattr(self, name)
            if np.abs(b - b.transpose(2, 3, 0, 1)).max() > 1e-12 * max(
                    np.abs(b).max(), 1.0):
                raise ValueError(f"{name} must have major symmetry")
        for name in ("q2", "q3"):
            q = getattr(self, name)
            if np.abs(q - q.T).max() > 1e-12 * max(np.abs(q).max(), 1.0):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(q)[-1] >= 0.0:
                raise ValueError(f"{name} must be negative definite")
        for name in ("d2", "d3"):
            g = _gamma(getattr(self, name), _PROBES)
            if np.linalg.eigvalsh(g)[:, 0].min() <= 0.0:
                raise ValueError(f"{name} has a direction with nonpositive "
                                 "acoustic-tensor eigenvalue")
        self.q0 = np.block([[self.q2, self.q1], [self.q1.T, -self.q3]])

    @classmethod
    def scalar_surrogate(cls, d, q):
        """Decoupled scalar medium with kernel exp(-w sqrt(q/d) r)/(4 pi d r).

        Both halves carry the same coefficients: d times the identity
        in gradient space and -q as the inertial block.
        """
        return cls(0.0, float(d), float(d), np.zeros((1, 1)),
                   [[-float(q)]], [[-float(q)]])

    @classmethod
    def isotropic_elastic(cls, lam, mu, q=1.0):
        """Decoupled isotropic stiffness on both halves, -q I inertia."""
        eye = np.eye(3)
        stiff = (lam * np.einsum("aj,bl->ajbl", eye, eye)
                 + mu * (np.einsum("ab,jl->ajbl", eye, eye)
                         + np.einsum("al,jb->ajbl", eye, eye)))
        zero = np.zeros((3, 3))
        return cls(np.zeros((3, 3, 3, 3)), stiff, stiff,
                   zero, -q * eye, -q * eye)

    def direction_matrix(self, xi):
        """The 2k x 2k symbol L0(xi) of the second-order term."""
        return self.direction_stack(np.atleast_2d(xi))[0]

    def direction_stack(self, xi):
        g2 = _gamma(self.d2, xi)
        g1 = _gamma(self.d1, xi)
        g3 = _gamma(self.d3, xi)
        top = np.concatenate([g2, g1], axis=2)
        bot = np.concatenate([g1.transpose(0, 2, 1), -g3], axis=2)
        return np.concatenate([top, bot], axis=1)

    def decay_length(self, omega):
        """Shortest branch decay length min |c|^2 / (omega Im c)."""
        lengths = []
        for xi in _PROBES:
            for br in branch_eigen(xi, self):
                c = br.speed
                lengths.append(abs(c) ** 2 / (omega * c.imag))
        return float(min(lengths))


@dataclasses.dataclass
class EigenBranch:
    """One wave branch of the direction pencil L0(xi) U = c^2 Q0 U.

    ``q_norm`` records the achieved bilinear normalization U^T Q0 U,
    which equals one up to roundoff; ``lmat`` is the symbol L0(xi)
    shared by all branches of the direction.
    """

    direction: np.ndarray
    index: int
    speed: complex
    speed_squared: complex
    vector: np.ndarray
    q_norm: complex
    lmat: np.ndarray


def _principal_root(c2):
    """Square roots with positive imaginary part (decaying branches)."""
    c = np.sqrt(np.asarray(c2, dtype=complex))
    return np.where(c.imag < 0.0, -c, c)


def _check_negative_real(w, xi):
    wr = np.real(w)
    wi = np.imag(w)
    real_like = np.abs(wi) <= 1e-10 * np.maximum(np.abs(w), 1e-300)
    if np.any(real_like & (wr >= 0.0)):
        raise ValueError(
            "comparison medium admits a nonnegative real wave-speed "
            f"eigenvalue at direction {np.round(np.atleast_2d(xi)[0], 6)}")


def _bilinear_orthonormalize(vecs, q0):
    """Q0-bilinear orthonormal basis of a degenerate eigengroup.

    Vectors sharing an eigenvalue are only defined up to mixing; a
    pivoted Gram-Schmidt in the (non-conjugated) Q0 form separates
    them.  Returns None when the group is defective (no combination
    attains a usable bilinear norm).
    """
    group = [v.astype(complex) for v in vecs]
    out = []
    while group:
        # pivot: try single vectors first, then pairwise mixes
        candidates = list(group)
        for a, b in itertools.combinations(group, 2):
            candidates.append(a + b)
            candidates.append(a + 1j * b)
        best, best_size = None, 0.0
        for cand in candidates:
            norm = cand @ q0 @ cand
            size = np.abs(norm) / float((cand @ np.conj(cand)).real)
            if size > best_size:
                best, best_size = cand, size
        if best is None or best_size < 1e-8:
            return None
        # principal sqrt supplies the factor i for negative norms
        u = best / np.sqrt(complex(best @ q0 @ best))
        out.append(u)
        proj = [v - (v @ q0 @ u) * u for v in group]
        if len(proj) == 1:
            group = []
        else:
            # drop the member best represented by u to shrink the span
            norms = [float((p @ np.conj(p)).real) for p in proj]
            drop = int(np.argmin(norms))
            group = [p for i, p in enumerate(proj) if i != drop]
    return out


def branch_eigen(xi, cm, _allow_retry=True):
    """All 2k wave branches along a unit direction.

    Branches are sorted by (Re c^2, Im c^2); eigenvectors satisfy the
    bilinear normalization U^T Q0 U = 1 (a factor i where the natural
    norm is negative) and together obey the completeness relation
    sum_N U_N U_N^T Q0 = I.
    """
    xi = np.asarray(xi, dtype=float).reshape(3)
    nrm = np.linalg.norm(xi)
    if not np.isclose(nrm, 1.0, rtol=0, atol=1e-8):
        raise ValueError("direction must be a unit vector")
    xi = xi / nrm
    q0 = cm.q0
    lmat = cm.direction_matrix(xi)
    w, v = np.linalg.eig(np.linalg.solve(q0, lmat))
    _check_negative_real(w, xi)

    # group equal eigenvalues, then orthonormalize inside each group
    order = np.lexsort((w.imag, w.real))
    w, v = w[order], v[:, order]
    scale = np.abs(w).max()
    groups, start = [], 0
    for j in range(1, len(w) + 1):
        if j == len(w) or np.abs(w[j] - w[start]) > 1e-8 * scale:
            groups.append((start, j))
            start = j
    vectors = []
    for a, b in groups:
        basis = _bilinear_orthonormalize([v[:, j] for j in range(a, b)], q0)
        if basis is None:
            if _allow_retry:
                bump = np.array([0.3, -0.7, 0.64])
                xi2 = xi + 1e-9 * (bump - (bump @ xi) * xi)
                return branch_eigen(xi2 / np.linalg.norm(xi2), cm,
                                    _allow_retry=False)
            raise ValueError("defective eigenproblem at direction "
                             f"{np.round(xi, 6)}")
        vectors.extend(basis)

    comp = sum(np.outer(u, u) for u in vectors) @ q0
    if np.abs(comp - np.eye(len(w))).max() > 1e-8:
        if _allow_retry:
            bump = np.array([0.3, -0.7, 0.64])
            xi2 = xi + 1e-9 * (bump - (bump @ xi) * xi)
            return branch_eigen(xi2 / np.linalg.norm(xi2), cm,
                                _allow_retry=False)
        raise ValueError("defective eigenproblem at direction "
                         f"{np.round(xi, 6)}")

    speeds = _principal_root(w)
    return [EigenBranch(direction=xi, index=n + 1,
                        speed=complex(speeds[n]),
                        speed_squared=complex(w[n]),
                        vector=vectors[n],
                        q_norm=complex(vectors[n] @ q0 @ vectors[n]),
                        lmat=lmat)
            for n in range(len(w))]


def plane_wave_profile(branch, s, omega, load):
    """Decaying profile of one branch under a line source at s = 0.

    Solves c^2 phi'' + omega^2 phi + load delta(s) = 0 with decay at
    infinity: phi(s) = load exp(-i omega |s| / c) / (2 i omega c).
    """
    c = branch.speed
    if c.imag <= 0.0:
        raise ValueError("branch does not decay: Im c must be positive")
    s = np.asarray(s, dtype=float)
    phi = load * np.exp(-1j * omega * np.abs(s) / c) / (2j * omega * c)
    return complex(phi) if phi.ndim == 0 else phi


# ----------------------------------------------------------------------
# kernel evaluation


@dataclasses.dataclass
class GreensEvaluation:
    """Kernel value at one point with its quadrature diagnostics.

    ``matrix`` is the real 2k x 2k kernel; ``imaginary_residue`` is the
    largest imaginary part discarded, relative to the matrix scale
    (conjugate branches cancel it analytically).
    """

    point: np.ndarray
    matrix: np.ndarray
    order: tuple
    imaginary_residue: float

    @property
    def g2(self):
        k = self.matrix.shape[0] // 2
        return self.matrix[:k, :k]

    @property
    def g1(self):
        k = self.matrix.shape[0] // 2
        return self.matrix[:k, k:]

    @property
    def g3(self):
        k = self.matrix.shape[0] // 2
        return -self.matrix[k:, k:]


def _frame(xhat):
    """Right-handed orthonormal triple completing a unit vector."""
    helper = np.array([1.0, 0.0, 0.0])
    if abs(xhat[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(xhat, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(xhat, e1)
    return e1, e2


def _smooth_kernel(cm, xi, rt, omega):
    """Oscillatory integrand sum_N (U U^T / c^2)(-i w / 2c) e^{-i w rt / c}.

    Evaluated as a matrix function of Q0^{-1} L0(xi), which avoids any
    per-node eigenvector normalization: for an eigenbasis V of that
    matrix the branch sum equals V g(diag) V^{-1} Q0^{-1}.
    """
    q0 = cm.q0
    a = np.linalg.solve(q0[None], cm.direction_stack(xi))
    w, v = np.linalg.eig(a)
    _check_negative_real(w, xi)
    c = _principal_root(w)
    g = (1.0 / w) * (-1j * omega / (2.0 * c)) * np.exp(
        -1j * omega * rt[:, None] / c)
    core = np.einsum("nij,nj->nij", v, g) @ np.linalg.inv(v)
    return core @ np.linalg.inv(q0)[None]


def _gl_unit(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _sphere_nodes(order, axis):
    """Product rule on the hemisphere around ``axis`` (doubled later)."""
    n_t, n_p = order
    t, wt = _gl_unit(n_t)
    phi = 2.0 * np.pi * np.arange(n_p) / n_p
    e1, e2 = _frame(axis)
    tt, pp = np.meshgrid(t, phi, indexing="ij")
    sin = np.sqrt(1.0 - tt ** 2)
    xi = (tt[..., None] * axis
          + sin[..., None] * (np.cos(pp)[..., None] * e1
                              + np.sin(pp)[..., None] * e2))
    weights = np.broadcast_to(wt[:, None] * (2.0 * np.pi / n_p),
                              tt.shape)
    return xi.reshape(-1, 3), weights.ravel(), tt.ravel()


def _delta_line(cm, xhat):
    """Great-circle integral of L0(xi)^{-1} around ``xhat``."""
    e1, e2 = _frame(xhat)
    alpha = 2.0 * np.pi * np.arange(_CIRCLE_POINTS) / _CIRCLE_POINTS
    xi = np.cos(alpha)[:, None] * e1 + np.sin(alpha)[:, None] * e2
    inv = np.linalg.inv(cm.direction_stack(xi))
    return inv.mean(axis=0) * 2.0 * np.pi


def greens_evaluate(x, omega, cm, order=(32, 64)):
    """Kernel matrix at a point by delta-line plus hemisphere quadrature."""
    x = np.asarray(x, dtype=float).reshape(3)
    r = np.linalg.norm(x)
    if r < 1e-8:
        raise ValueError("kernel point too close to the source singularity")
    xhat = x / r
    delta_part = _delta_line(cm, xhat) / (8.0 * np.pi ** 2 * r)
    xi, wq, t = _sphere_nodes(order, xhat)
    kern = _smooth_kernel(cm, xi, r * t, omega)
    # factor 2: the integrand is even under xi -> -xi, so a hemisphere
    # carries half the sphere integral
    smooth = 2.0 * np.einsum("n,nij->ij", wq, kern) / (8.0 * np.pi ** 2)
    total = delta_part + smooth
    scale = max(np.abs(total).max(), 1e-300)
    return GreensEvaluation(point=x, matrix=total.real, order=tuple(order),
                            imaginary_residue=float(
                                np.abs(total.imag).max() / scale))


def _greens_self(cm, omega, volume, order):
    """Averaged self-voxel kernel.

    The delta-line part behaves as direction / distance and is
    integrated exactly over the ball of equal volume; the smooth part
    is taken at zero separation.  This approximation only enters the
    self-interaction entry of voxel convolutions.
    """
    radius = (3.0 * volume / (4.0 * np.pi)) ** (1.0 / 3.0)
    axis = np.array([0.0, 0.0, 1.0])
    xi, wq, t = _sphere_nodes(order, axis)
    line = np.linalg.inv(cm.direction_stack(xi))
    mean_line = 2.0 * np.einsum("n,nij->ij", wq, line) / (4.0 * np.pi)
    delta_part = 3.0 * mean_line / (8.0 * np.pi * radius)
    kern = _smooth_kernel(cm, xi, np.zeros(len(xi)), omega)
    smooth = 2.0 * np.einsum("n,nij->ij", wq, kern) / (8.0 * np.pi ** 2)
    return (delta_part + smooth).real


# ----------------------------------------------------------------------
# voxel grids and discrete calculus


class VoxelGrid:
    """Uniform Cartesian voxel block.

    Fields on the grid are stored flat over ``n = n1 n2 n3`` voxels in
    C order; values outside the block are zero (compact support).
    """

    def __init__(self, shape, spacing, origin=(0.0, 0.0, 0.0)):
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValueError("shape must be three positive extents")
        self.spacing = float(spacing)
        if self.spacing <= 0.0:
            raise ValueError("spacing must be positive")
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.n = int(np.prod(self.shape))
        self.volume = self.spacing ** 3
        idx = np.stack(np.meshgrid(*[np.arange(s) for s in self.shape],
                                   indexing="ij"), axis=-1).reshape(-1, 3)
        self.indices = idx
        self.points = self.origin + self.spacing * idx

    def cube(self, values):
        return np.asarray(values).reshape(self.shape + values.shape[1:])

    def flat(self, cube):
        return cube.reshape((self.n,) + cube.shape[3:])


def _grad_back(grid, u):
    """Backward-difference gradient, (n, k) -> (n, k, 3), zero padded."""
    cube = grid.cube(u)
    out = np.zeros(cube.shape + (3,), dtype=cube.dtype)
    h = grid.spacing
    for j in range(3):
        shifted = np.zeros_like(cube)
        sl = [slice(None)] * 3
        sl[j] = slice(1, None)
        src = [slice(None)] * 3
        src[j] = slice(None, -1)
        shifted[tuple(sl)] = cube[tuple(src)]
        out[..., j] = (cube - shifted) / h
    return grid.flat(out)


def _div_fwd(grid, t):
    """Forward-difference divergence, (n, k, 3) -> (n, k), zero padded.

    Exact negative adjoint of `_grad_back` under the flat voxel sum.
    """
    cube = grid.cube(t)
    out = np.zeros(cube.shape[:-1], dtype=cube.dtype)
    h = grid.spacing
    for j in range(3):
        comp = cube[..., j]
        shifted = np.zeros_like(comp)
        sl = [slice(None)] * 3
        sl[j] = slice(None, -1)
        src = [slice(None)] * 3
        src[j] = slice(1, None)
        shifted[tuple(sl)] = comp[tuple(src)]
        out += (shifted - comp) / h
    return grid.flat(out)


# ----------------------------------------------------------------------
# sources and responses on a grid


@dataclasses.dataclass
class VoxelPolarization:
    """Polarization source fields on a voxel grid.

    Stores the physical quadruple (tau, eta, pi, nu); the slot vector
    of the polarization functional is (tau, -eta, pi, -nu), pairing
    with the field slots (strain, stress, velocity, momentum).
    """

    tau: np.ndarray
    eta: np.ndarray
    pi: np.ndarray
    nu: np.ndarray

    @classmethod
    def zeros(cls, grid, k):
        return cls(np.zeros((grid.n, k, 3)), np.zeros((grid.n, k, 3)),
                   np.zeros((grid.n, k)), np.zeros((grid.n, k)))

    def slots(self):
        return np.concatenate([self.tau.ravel(), -self.eta.ravel(),
                               self.pi.ravel(), -self.nu.ravel()])

    @classmethod
    def from_slots(cls, vec, grid, k):
        m = grid.n * k * 3
        s1, s2 = vec[:m].reshape(grid.n, k, 3), vec[m:2 * m].reshape(
            grid.n, k, 3)
        rest = vec[2 * m:].reshape(2, grid.n, k)
        return cls(s1, -s2, rest[0], -rest[1])


@dataclasses.dataclass
class VoxelResponse:
    """Displacement pair with recovered flux and momentum fields."""

    U: np.ndarray          # (n, 2k) stacked (u', u'')
    strain1: np.ndarray    # (n, k, 3) gradient of u'
    strain2: np.ndarray    # (n, k, 3) gradient of u''
    sigma: np.ndarray      # (n, k, 3) recovered real flux
    momentum: np.ndarray   # (n, k) recovered imaginary momentum


@dataclasses.dataclass
class FieldIncrement:
    """Work-conjugate field slots produced by a polarization source."""

    strain: np.ndarray     # (n, k, 3) e'
    stress: np.ndarray     # (n, k, 3) sigma'
    velocity: np.ndarray   # (n, k) omega u'
    momentum: np.ndarray   # (n, k) p''

    def slots(self):
        return np.concatenate([self.strain.ravel(), self.stress.ravel(),
                               self.velocity.ravel(),
                               self.momentum.ravel()])


def _offset_range(extent, halo):
    return range(-(extent - 1) - halo, extent + halo)


def _kernel_table(grid, cm, omega, order, halo=0):
    """Kernel matrices for every voxel offset, exploiting evenness."""
    table = {}
    h = grid.spacing
    for off in itertools.product(*[_offset_range(s, halo)
                                   for s in grid.shape]):
        key = off if (off > (0, 0, 0) or off == (0, 0, 0)) else \
            tuple(-o for o in off)
        if key in table:
            continue
        if key == (0, 0, 0):
            table[key] = _greens_self(cm, omega, grid.volume, order)
        else:
            table[key] = greens_evaluate(h * np.array(key), omega, cm,
                                         order).matrix
    return table


def _kernel(table, off):
    key = tuple(off)
    if key not in table:
        key = tuple(-o for o in key)
    return table[key]


def _convolve(grid, table, source):
    """U[i] = sum_j G(x_i - x_j) source[j] * voxel volume."""
    out = np.zeros((grid.n, source.shape[1]))
    for i in range(grid.n):
        acc = np.zeros(source.shape[1])
        for j in range(grid.n):
            acc += _kernel(table, grid.indices[i] - grid.indices[j]) \
                @ source[j]
        out[i] = acc * grid.volume
    return out


def _check_resolution(grid, cm, omega):
    decay = cm.decay_length(omega)
    if grid.spacing > decay / 4.0:
        warnings.warn(
            "voxel grid resolves fewer than 4 voxels per decay length "
            f"({grid.spacing:g} > {decay / 4.0:g}); fields will be "
            "under-resolved", RuntimeWarning, stacklevel=3)


def _apply_d(block, field):
    return np.einsum("ajbl,nbl->naj", block, field)


def _apply_dT(block, field):
    return np.einsum("blaj,nbl->naj", block, field)


def _assemble_force(T, f, cm, omega, grid):
    """Stacked force (f'' + div(tau - D1 eta) + w(Q1 nu - pi);
    f' + div(D3 eta) - w Q3 nu)."""
    k = cm.k
    if f is None:
        f = np.zeros((grid.n, k), dtype=complex)
    f = np.asarray(f, dtype=complex).reshape(grid.n, k)
    upper = f.imag + _div_fwd(grid, T.tau - _apply_d(cm.d1, T.eta)) \
        + omega * (T.nu @ cm.q1.T - T.pi)
    lower = f.real + _div_fwd(grid, _apply_d(cm.d3, T.eta)) \
        - omega * (T.nu @ cm.q3.T)
    return np.concatenate([upper, lower], axis=1)


def _extended(grid):
    """Grid grown by one voxel on every face.

    The forward divergence of a field supported on the grid spills one
    voxel outward, so forces must be collected on this halo before the
    kernel convolution.
    """
    return VoxelGrid(tuple(s + 2 for s in grid.shape), grid.spacing,
                     grid.origin - grid.spacing)


def _embed(grid, ext, field):
    cube = np.zeros(ext.shape + field.shape[1:], dtype=field.dtype)
    cube[1:-1, 1:-1, 1:-1] = grid.cube(field)
    return ext.flat(cube)


def _restrict(grid, ext, field):
    return grid.flat(ext.cube(field)[1:-1, 1:-1, 1:-1])


def solve_infinite_medium(T, f, cm, omega, grid, order=(32, 64)):
    """Response of the comparison medium to polarization and force.

    The force density is the complex body force (its imaginary part
    drives the first half of the stacked pair); the polarization
    contributes through discrete divergences collected on a one-voxel
    halo around the grid.  Returns the displacement pair with the
    recovered flux and momentum, restricted back to the grid.
    """
    k = cm.k
    if T is None:
        T = VoxelPolarization.zeros(grid, k)
    if f is None:
        f = np.zeros((grid.n, k), dtype=complex)
    f = np.asarray(f, dtype=complex).reshape(grid.n, k)
    _check_resolution(grid, cm, omega)
    ext = _extended(grid)
    T_ext = VoxelPolarization(_embed(grid, ext, T.tau),
                              _embed(grid, ext, T.eta),
                              _embed(grid, ext, T.pi),
                              _embed(grid, ext, T.nu))
    force = _assemble_force(T_ext, _embed(grid, ext, f), cm, omega, ext)
    table = _kernel_table(ext, cm, omega, order)
    U_ext = _convolve(ext, table, force)
    e1 = _restrict(grid, ext, _grad_back(ext, U_ext[:, :k]))
    e2 = _restrict(grid, ext, _grad_back(ext, U_ext[:, k:]))
    U = _restrict(grid, ext, U_ext)
    u1, u2 = U[:, :k], U[:, k:]
    sigma = _apply_dT(cm.d1, e1) + _apply_d(cm.d3, T.eta - e2)
    momentum = omega * (u1 @ cm.q1) - (omega * u2 + T.nu) @ cm.q3.T
    return VoxelResponse(U=U, strain1=e1, strain2=e2, sigma=sigma,
                         momentum=momentum)


def apply_H0(T, cm, omega, grid, order=(32, 64)):
    """Field increment F' = -H0 T of the homogeneous-response operator.

    Assembled from the kernel and its first and second grid
    differences, applied directly to the polarization parts; the
    divergences never touch the source fields, so this is an
    independent composition route from `solve_infinite_medium`.
    """
    k = cm.k
    _check_resolution(grid, cm, omega)
    table = _kernel_table(grid, cm, omega, order, halo=1)
    h = grid.spacing
    n = grid.n

    # flux-like combination whose divergence feeds the force
    S = np.concatenate([T.tau - _apply_d(cm.d1, T.eta),
                        _apply_d(cm.d3, T.eta)], axis=1)
    W = np.concatenate([omega * (T.nu @ cm.q1.T - T.pi),
                        -omega * (T.nu @ cm.q3.T)], axis=1)

    def g_at(off):
        return _kernel(table, off)

    eye = np.eye(3, dtype=int)
    U = np.zeros((n, 2 * k))
    E = np.zeros((n, 2 * k, 3))
    for i in range(n):
        acc_u = np.zeros(2 * k)
        acc_e = np.zeros((2 * k, 3))
        for j in range(n):
            z = grid.indices[i] - grid.indices[j]
            g0 = g_at(z)
            # forward kernel difference carries the source divergence
            gfwd = np.stack([(g_at(z + eye[a]) - g0) / h
                             for a in range(3)], axis=-1)
            acc_u += g0 @ W[j] + np.einsum("ijl,jl->i", gfwd, S[j])
            gb = np.stack([(g0 - g_at(z - eye[b])) / h
                           for b in range(3)], axis=-1)
            acc_e += np.einsum("ijb,j->ib", gb, W[j])
            # backward difference (index b) of the forward one (index a)
            gdd = np.stack([np.stack(
                [(g_at(z + eye[a]) - g0
                  - g_at(z + eye[a] - eye[b]) + g_at(z - eye[b])) / h ** 2
                 for a in range(3)], axis=-1)
                for b in range(3)], axis=-1)
            acc_e += np.einsum("ijab,ja->ib", gdd, S[j])
        U[i] = acc_u * grid.volume
        E[i] = acc_e * grid.volume

    u1, u2 = U[:, :k], U[:, k:]
    e1, e2 = E[:, :k, :], E[:, k:, :]
    sigma = _apply_dT(cm.d1, e1) + _apply_d(cm.d3, T.eta - e2)
    momentum = omega * (u1 @ cm.q1) - (omega * u2 + T.nu) @ cm.q3.T
    return FieldIncrement(strain=e1, stress=sigma, velocity=omega * u1,
                          momentum=momentum)


def h0_matrix(cm, omega, grid, order=(32, 64)):
    """Dense matrix of H0 in polarization slot coordinates.

    Row and column vectors are slot vectors (tau, -eta, pi, -nu); the
    entries carry the voxel volume so the matrix represents the
    integral pairing, under which H0 is symmetric.
    """
    k = cm.k
    size = grid.n * (6 * k + 2 * k)
    cols = np.empty((size, size))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for j in range(size):
            unit = np.zeros(size)
            unit[j] = 1.0
            T = VoxelPolarization.from_slots(unit, grid, k)
            inc = apply_H0(T, cm, omega, grid, order)
            cols[:, j] = -inc.slots()
    return cols * grid.volume


# ----------------------------------------------------------------------
# table export


def write_greens_table(path, evaluations):
    """Write kernel evaluations as x,y,z,row,col,value rows."""
    with open(path, "w") as fh:
        fh.write("x,y,z,row,col,value\n")
        for ev in evaluations:
            x, y, z = (float(c) for c in ev.point)
            m = ev.matrix
            for i in range(m.shape[0]):
                for j in range(m.shape[1]):
                    fh.write(f"{x!r},{y!r},{z!r},{i},{j},"
                             f"{float(m[i, j])!r}\n")


def read_greens_table(path):
    """Read a kernel table back as a list of (point, matrix) pairs."""
    raw = np.genfromtxt(path, delimiter=",", skip_header=1)
    raw = np.atleast_2d(raw)
    out = []
    for pt in np.unique(raw[:, :3], axis=0):
        rows = raw[np.all(raw[:, :3] == pt, axis=1)]
        dim = int(rows[:, 3].max()) + 1
        mat = np.zeros((dim, dim))
        mat[rows[:, 3].astype(int), rows[:, 4].astype(int)] = rows[:, 5]
        out.append((pt, mat))
    return out
