"""A few standard crystals and point-group generators."""
import numpy as np

from .lattice import Crystal, SymOp


def cubic(a=1.0, s=1.0, g=2.0) -> Crystal:
    return Crystal(a * np.eye(3), [[0, 0, 0]], s, g)


def chain(a=1.0, s=1.0, g=2.0) -> Crystal:
    """One site per cell along x; the perpendicular axes are long enough to be irrelevant."""
    return Crystal(np.diag([a, 10.0, 10.0]), [[0, 0, 0]], s, g)


def square(a=1.0, s=1.0, g=2.0) -> Crystal:
    return Crystal(np.diag([a, a, 10.0]), [[0, 0, 0]], s, g)


def neel_square(a=1.0, s=1.0, g=2.0) -> Crystal:
    """Square lattice in its two-site root-2 x root-2 cell (checkerboard sublattices)."""
    A = np.array([[a, -a, 0.0], [a, a, 0.0], [0.0, 0.0, 10.0]])
    return Crystal(A, [[0, 0, 0], [0.5, 0.5, 0]], s, g)


def hexagonal(a=1.0, c=1.0, s=1.0, g=2.0) -> Crystal:
    A = np.array([[a, -a / 2, 0.0], [0.0, a * np.sqrt(3) / 2, 0.0], [0.0, 0.0, c]])
    return Crystal(A, [[0, 0, 0]], s, g)


C4Z = SymOp([[0, -1, 0], [1, 0, 0], [0, 0, 1]])
C4X = SymOp([[1, 0, 0], [0, 0, -1], [0, 1, 0]])
C3D = SymOp([[0, 0, 1], [1, 0, 0], [0, 1, 0]])
INVERSION = SymOp(-np.eye(3))
MIRROR_Z = SymOp(np.diag([1, 1, -1]))


def oh_generators() -> list[SymOp]:
    """Generators of the full octahedral group m-3m (order 48) in a cubic basis."""
    return [C4Z, C3D, INVERSION]
