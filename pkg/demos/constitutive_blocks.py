"""From complex moduli to real positive-definite blocks.

Complex constitutive laws make the time-harmonic energy functional a
saddle: the real part of the stiffness pushes one way, the imaginary
part the other.  A partial Legendre transform in the flux variables
turns each passive complex tensor into a real symmetric positive
definite block, and positive definiteness is exactly strict passivity.
This demo classifies a few media, builds their blocks, and shows the
rotation trick that restores definiteness when one imaginary part is
only semidefinite.
"""

import numpy as np

from wavemin.moduli import (
    ComplexModuli,
    assemble_L,
    auto_rotation_angle,
    build_blocks,
    check_passivity,
    isotropic_stiffness,
    rotate_moduli,
)

omega = 2.0


def describe(tag, m):
    rep = check_passivity(m)
    print(f"{tag}:")
    for part in (rep.primal, rep.dual):
        print(f"  {part.name}: {part.classification} "
              f"(min signed eigenvalue {part.min_eigenvalue:+.3f})")
    return rep


# --- a strictly passive viscoelastic solid in compressed tensor form
C = isotropic_stiffness(2.0, 1.0, dim=3) * (1.0 + 0.3j)
rho = (1.0 - 0.2j) * np.eye(3)
solid = ComplexModuli.elastic(C, rho, omega)
rep = describe("viscoelastic solid", solid)
assert rep.strict

blockA, blockB = build_blocks(solid)
for name, block in (("stiffness-type", blockA), ("density-type", blockB)):
    lam = np.linalg.eigvalsh(block.matrix)
    print(f"  {name} block: size {block.matrix.shape[0]}, "
          f"eigenvalues in [{lam.min():.3f}, {lam.max():.3f}]")
L = assemble_L(blockA, blockB)
print(f"  assembled operator sizes: {L.blockA.matrix.shape}, "
      f"{L.blockB.matrix.shape}")

# --- an acoustic medium: compressibility loss has the opposite sign
gas = ComplexModuli.acoustic(1.0 - 0.4j, (1.0 + 0.1j) * np.eye(3), omega)
describe("lossy acoustic medium", gas)

# --- lossless density is only semidefinite; a rotation exp(i theta)
# trades stiffness margin for density margin and restores strictness
marginal = ComplexModuli.elastic(1.0 + 0.5j, 1.0, omega)
rep = describe("elastic, real density", marginal)
assert rep.lossless_dual

theta, margin = auto_rotation_angle(marginal)
rotated, _ = rotate_moduli(marginal, theta)
print(f"rotation angle {theta:.4f} rad gives relative margin {margin:.4f}")
describe("rotated medium", rotated)
