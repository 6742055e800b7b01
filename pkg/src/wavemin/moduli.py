"""Complex material moduli and their real positive-definite block forms.

A passive time-harmonic medium is described by a pair of complex tensors
(stiffness and density, compressibility and inverse density, or
permittivity and inverse permeability).  Each pair maps to two real
symmetric block matrices via a partial Legendre transform; the blocks are
positive definite exactly when the medium is strictly dissipative, which
is what makes the wave problem a convex minimization.  This module builds
and validates those blocks, applies global phase rotations, and prepares
the reduced description used when the dual modulus is lossless.
"""

import dataclasses

import numpy as np

__all__ = [
    "PassivityError",
    "ComplexModuli",
    "CGBlock",
    "OperatorL",
    "PassivityReport",
    "ReducedFormSpec",
    "build_blocks",
    "assemble_L",
    "rotate_moduli",
    "auto_rotation_angle",
    "check_passivity",
    "lossless_limit",
    "isotropic_stiffness",
]

# min eigenvalue must exceed this fraction of the max to count as strict;
# guards conjugate-gradient conditioning downstream.
STRICT_TOL = 1e-10

PHYSICS = ("elastic", "acoustic", "electromagnetic")

# (primal name, dual name, sign of primal Im part, sign of dual Im part)
# such that sign * Im(tensor) must be positive definite for passivity.
_TENSOR_INFO = {
    "elastic": ("stiffness", "density", +1, -1),
    "acoustic": ("compressibility", "inverse density", -1, +1),
    "electromagnetic": ("permittivity", "inverse permeability", +1, -1),
}


class PassivityError(ValueError):
    """Raised when a modulus violates the dissipation inequality."""


def _as_matrix(value):
    """Coerce a scalar or array-like to a square complex matrix."""
    a = np.asarray(value, dtype=complex)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"modulus must be scalar or square, got shape {a.shape}")
    return a


def _check_symmetric(a, name):
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} must have symmetric real and imaginary parts")


@dataclasses.dataclass(frozen=True)
class ComplexModuli:
    """Complex material pair for one physics at one frequency.

    Parameters
    ----------
    physics : str
        One of ``elastic``, ``acoustic``, ``electromagnetic``.
    primal : array_like
        Stiffness C (compressed symmetric layout), scalar compressibility
        k = 1/kappa, or permittivity matrix.  Scalars are stored 1x1.
    dual : array_like
        Density rho, inverse density r, or inverse permeability m.
    omega : float
        Angular frequency, > 0.

    Notes
    -----
    Symmetry of real and imaginary parts is enforced here; passivity is
    checked where it is consumed (`check_passivity`, `build_blocks`), so
    rotated or deliberately lossy-free media can still be represented.
    """

    physics: str
    primal: np.ndarray
    dual: np.ndarray
    omega: float

    def __post_init__(self):
        if self.physics not in PHYSICS:
            raise ValueError(f"unknown physics {self.physics!r}")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        p = _as_matrix(self.primal)
        d = _as_matrix(self.dual)
        names = _TENSOR_INFO[self.physics]
        _check_symmetric(p, names[0])
        _check_symmetric(d, names[1])
        if self.physics == "acoustic" and p.shape != (1, 1):
            raise ValueError("compressibility must be scalar")
        p.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "primal", p)
        object.__setattr__(self, "dual", d)

    @classmethod
    def elastic(cls, C, rho, omega):
        return cls("elastic", C, rho, omega)

    @classmethod
    def acoustic(cls, k, r, omega):
        return cls("acoustic", k, r, omega)

    @classmethod
    def electromagnetic(cls, eps, m, omega, time_convention="-"):
        """Build EM moduli; ``time_convention`` names the sign of the
        assumed exp(sign * i*omega*t) factor.  Inputs with the "+"
        convention are conjugated on ingestion so that the stored fields
        always satisfy eps'' > 0 and m'' < 0."""
        if time_convention not in ("-", "+"):
            raise ValueError("time_convention must be '-' or '+'")
        eps = _as_matrix(eps)
        m = _as_matrix(m)
        if time_convention == "+":
            eps, m = eps.conj(), m.conj()
        return cls("electromagnetic", eps, m, omega)

    @property
    def tensor_names(self):
        info = _TENSOR_INFO[self.physics]
        return info[0], info[1]


@dataclasses.dataclass(frozen=True)
class CGBlock:
    """Real symmetric 2x2-block matrix [[a, b], [b.T, d]]."""

    a: np.ndarray
    b: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        d = np.atleast_2d(np.asarray(self.d, dtype=float))
        if a.shape != b.shape or b.shape != d.shape or a.shape[0] != a.shape[1]:
            raise ValueError("block shapes must be equal and square")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "d", d)

    @property
    def size(self):
        """Dimension of each sub-block."""
        return self.a.shape[0]

    @property
    def matrix(self):
        """Dense (2*size, 2*size) matrix."""
        return np.block([[self.a, self.b], [self.b.T, self.d]])

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.matrix)[0])


@dataclasses.dataclass(frozen=True)
class OperatorL:
    """Block-diagonal composite of the two constitutive blocks."""

    blockA: CGBlock
    blockB: CGBlock

    @property
    def matrix(self):
        na = 2 * self.blockA.size
        nb = 2 * self.blockB.size
        out = np.zeros((na + nb, na + nb))
        out[:na, :na] = self.blockA.matrix
        out[na:, na:] = self.blockB.matrix
        return out


@dataclasses.dataclass(frozen=True)
class TensorPassivity:
    """Classification of one signed imaginary part."""

    name: str
    min_eigenvalue: float
    classification: str  # strict | semidefinite | violated


@dataclasses.dataclass(frozen=True)
class PassivityReport:
    primal: TensorPassivity
    dual: TensorPassivity

    @property
    def strict(self):
        return (self.primal.classification == "strict"
                and self.dual.classification == "strict")

    @property
    def lossless_dual(self):
        return self.dual.classification == "semidefinite"


def _classify(sym, name):
    """Classify a signed imaginary part (already multiplied by its
    passivity sign, so positive definite means dissipative)."""
    eigs = np.linalg.eigvalsh(sym)
    lo = float(eigs[0])
    scale = max(float(np.abs(eigs).max()), 0.0)
    if scale == 0.0:
        return TensorPassivity(name, 0.0, "semidefinite")
    if lo > STRICT_TOL * scale:
        cls = "strict"
    elif lo >= -STRICT_TOL * scale:
        cls = "semidefinite"
    else:
        cls = "violated"
    return TensorPassivity(name, lo, cls)


def check_passivity(m):
    """Report the passivity status of both tensors of ``m``.

    Returns
    -------
    PassivityReport
        Minimum eigenvalue of each signed imaginary part
        (e.g. C'' and -rho'') with a strict / semidefinite / violated
        classification per tensor.
    """
    pname, dname, psign, dsign = _TENSOR_INFO[m.physics]
    return PassivityReport(
        _classify(psign * m.primal.imag, pname),
        _classify(dsign * m.dual.imag, dname),
    )


def _legendre_block(mod, sign, name):
    """Real block of a complex symmetric matrix with definite imaginary
    part.  ``sign`` = +1 requires Im positive definite (stiffness type),
    -1 requires Im negative definite (density type).  Both cases give a
    symmetric positive definite block."""
    mr = mod.real
    mi = mod.imag
    rep = _classify(sign * mi, name)
    if rep.classification != "strict":
        raise PassivityError(
            f"{name}: imaginary part must be strictly "
            f"{'positive' if sign > 0 else 'negative'} definite "
            f"(min signed eigenvalue {rep.min_eigenvalue:.3e})")
    s = np.linalg.inv(mi)
    a = mi + mr @ s @ mr
    b = -mr @ s
    if sign < 0:
        return CGBlock(-a, -b, -s)
    return CGBlock(a, b, s)


def build_blocks(m):
    """Construct the pair of real positive-definite blocks for ``m``.

    Returns (blockA, blockB): the stiffness-type and density-type blocks
    for elastic media, the compressibility and inverse-density blocks for
    acoustics, and the permittivity and inverse-permeability blocks for
    electromagnetism.

    Raises
    ------
    PassivityError
        If either imaginary part is singular or indefinite; the message
        names the violating tensor.
    """
    pname, dname, psign, dsign = _TENSOR_INFO[m.physics]
    return (_legendre_block(m.primal, psign, pname),
            _legendre_block(m.dual, dsign, dname))


def assemble_L(blockA, blockB):
    """Combine two constitutive blocks into the block-diagonal operator.

    The first block acts on strain-stress type pairs, the second on
    velocity-momentum type pairs.
    """
    if not isinstance(blockA, CGBlock) or not isinstance(blockB, CGBlock):
        raise TypeError("assemble_L expects two CGBlock instances")
    return OperatorL(blockA, blockB)


def rotate_moduli(m, theta):
    """Multiply both moduli by exp(i*theta).

    Rotating the constitutive law by a global phase can restore strict
    passivity when the dual modulus is lossless (real density).  The
    rotated medium describes the same complex field equations provided
    sources and natural boundary data are rotated consistently.

    Returns
    -------
    (ComplexModuli, bool)
        The rotated moduli and a flag reporting whether they satisfy
        strict passivity.
    """
    phase = np.exp(1j * theta)
    rotated = ComplexModuli(m.physics, m.primal * phase, m.dual * phase, m.omega)
    return rotated, check_passivity(rotated).strict


def _rotation_margin(m):
    """Smaller of the two relative passivity margins (min over both
    signed imaginary parts of min_eig / max_abs_eig)."""
    _, _, psign, dsign = _TENSOR_INFO[m.physics]
    margins = []
    for tensor, sign in ((m.primal, psign), (m.dual, dsign)):
        eigs = np.linalg.eigvalsh(sign * tensor.imag)
        scale = max(float(np.abs(eigs).max()), 1e-300)
        margins.append(float(eigs[0]) / scale)
    return min(margins)


def auto_rotation_angle(m, count=180):
    """Scan theta over a uniform grid in (-pi/2, 0) and return the angle
    maximizing the minimum rotated passivity margin.

    Returns
    -------
    (float, float)
        Best angle and its margin.  A non-positive margin means no angle
        on the grid restores strict passivity.
    """
    thetas = -np.pi / 2 * (np.arange(1, count + 1)) / (count + 1)
    best = (0.0, -np.inf)
    for theta in thetas:
        rotated, _ = rotate_moduli(m, theta)
        margin = _rotation_margin(rotated)
        if margin > best[1]:
            best = (float(theta), margin)
    return best


@dataclasses.dataclass(frozen=True)
class ReducedFormSpec:
    """Pointwise elimination rule active when the dual modulus is real.

    With a real invertible dual modulus the dual unknown stops being an
    independent trial field: finiteness of the functional forces
    u' = p'' / (rho' * omega) for elastic media, v'' = r' p'' for
    acoustics and H'' = m' B'' for electromagnetism, and the second
    quadratic block drops from the functional.
    """

    physics: str
    dual_real: np.ndarray
    omega: float

    def recover(self, x):
        """Apply the elimination rule to a momentum-like array.

        elastic: p'' -> u' = inv(rho') p'' / omega;
        acoustic: p'' -> v'' = r' p'';
        electromagnetic: B'' -> H'' = m' B''.
        Works on arrays whose last axis matches the dual dimension.
        """
        x = np.asarray(x, dtype=float)
        d = self.dual_real
        if self.physics == "elastic":
            return np.einsum("ij,...j->...i", np.linalg.inv(d), x) / self.omega
        return np.einsum("ij,...j->...i", d, x)


def lossless_limit(m):
    """Return the reduced-form elimination rule for a lossless dual.

    Raises
    ------
    ValueError
        If the dual imaginary part is not exactly zero (use the full
        formulation) or the real part is singular.
    """
    if np.abs(m.dual.imag).max() != 0.0:
        raise ValueError(
            "dual modulus has nonzero imaginary part; "
            "use the full (unreduced) formulation")
    dr = m.dual.real
    if abs(np.linalg.det(dr)) <= 1e-14 * max(np.abs(dr).max(), 1e-300) ** dr.shape[0]:
        raise ValueError("real part of the dual modulus is singular")
    return ReducedFormSpec(m.physics, dr.copy(), m.omega)


def isotropic_stiffness(lam, mu, dim):
    """Isotropic stiffness in compressed symmetric layout.

    Shear components carry weight sqrt(2) so that the matrix quadratic
    form equals the tensor double contraction and matrix definiteness
    equals tensor definiteness.  ``dim`` is 1, 2 or 3; the 1D case
    returns the scalar pressure-wave modulus lam + 2 mu.
    """
    if dim == 1:
        return np.array([[lam + 2.0 * mu]], dtype=complex)
    if dim == 2:
        c = np.zeros((3, 3), dtype=complex)
        c[:2, :2] = lam
        c[0, 0] = c[1, 1] = lam + 2.0 * mu
        c[2, 2] = 2.0 * mu
        return c
    if dim == 3:
        c = np.zeros((6, 6), dtype=complex)
        c[:3, :3] = lam
        for i in range(3):
            c[i, i] = lam + 2.0 * mu
        for i in range(3, 6):
            c[i, i] = 2.0 * mu
        return c
    raise ValueError("dim must be 1, 2 or 3")
