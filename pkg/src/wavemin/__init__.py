"""Variational minimization solvers for time-harmonic waves in dissipative media.

The package converts complex-valued constitutive laws (viscoelastic,
acoustic, electromagnetic) into real positive-definite quadratic forms,
minimizes the resulting functionals by conjugate gradients, and exposes
the boundary-only value formulas, tomography bounds, Hashin-Shtrikman
polarization machinery, and the infinite-medium comparison kernel.
"""

__version__ = "0.1.0"

from . import moduli
from . import fields
from . import functional
from . import solver
from . import hs
from . import greens

__all__ = ["moduli", "fields", "functional", "solver", "hs", "greens"]
