"""Crystal geometry, space-group operations and symmetry-constrained bonds.

Conventions
-----------
* ``lattice_vectors`` stores the primitive vectors as *columns*, so a
  fractional coordinate ``x`` sits at Cartesian ``A @ x``.
* A symmetry operation acts on fractional coordinates as ``x -> W x + t``.
  Its Cartesian rotation is ``R = A W A^-1``.
* A :class:`Bond` ``(i, j, d)`` joins site ``i`` in cell 0 to site ``j`` in
  cell ``d``.  A bond and its reversal ``(j, i, -d)`` are the same pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidCrystalError, SizeError, SymmetryError

POSITION_TOL = 1e-6
ORTHOGONALITY_TOL = 1e-8
MAX_GROUP_ORDER = 192
MAX_SUPERCELL_SITES = 1_000_000


@dataclass(frozen=True, eq=False)
class Crystal:
    lattice_vectors: np.ndarray
    sites: np.ndarray
    spin_s: np.ndarray
    g_factor: np.ndarray

    def __post_init__(self):
        A = np.array(self.lattice_vectors, dtype=float)
        sites = np.atleast_2d(np.array(self.sites, dtype=float))
        n = len(sites)
        s = np.broadcast_to(np.asarray(self.spin_s, dtype=float), (n,)).copy()
        g = np.broadcast_to(np.asarray(self.g_factor, dtype=float), (n,)).copy()
        if A.shape != (3, 3):
            raise InvalidCrystalError(f"lattice_vectors must be 3x3, got {A.shape}")
        if sites.shape[1] != 3 or n == 0:
            raise InvalidCrystalError("sites must be a non-empty list of 3-vectors")
        if not np.linalg.det(A) > 0:
            raise InvalidCrystalError("lattice vectors must be right-handed (det > 0)")
        if np.any(sites < 0) or np.any(sites >= 1):
            raise InvalidCrystalError("fractional site coordinates must lie in [0, 1)")
        if np.any(s <= 0):
            raise InvalidCrystalError("spin magnitude s must be positive on every site")
        for name, val in [("lattice_vectors", A), ("sites", sites), ("spin_s", s), ("g_factor", g)]:
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def nsites(self) -> int:
        return len(self.sites)

    def cartesian(self, frac) -> np.ndarray:
        return np.asarray(frac, dtype=float) @ self.lattice_vectors.T


def reciprocal_lattice(crystal: Crystal) -> np.ndarray:
    """Reciprocal vectors as columns, ``a_i . b_j = 2 pi delta_ij``."""
    A = np.asarray(crystal.lattice_vectors, dtype=float)
    if abs(np.linalg.det(A)) < 1e-14:
        raise InvalidCrystalError("singular lattice matrix")
    return 2 * np.pi * np.linalg.inv(A).T


@dataclass(frozen=True, eq=False)
class SymOp:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        W = np.array(self.rotation, dtype=float)
        t = np.mod(np.array(self.translation, dtype=float), 1.0)
        t[np.isclose(t, 1.0, atol=POSITION_TOL)] = 0.0
        if W.shape != (3, 3) or abs(np.linalg.det(W)) < 1e-8:
            raise SymmetryError("rotation part of a symmetry operation must be an invertible 3x3 matrix")
        object.__setattr__(self, "rotation", W)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SymOp":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, frac) -> np.ndarray:
        return np.asarray(frac, dtype=float) @ self.rotation.T + self.translation

    def compose(self, other: "SymOp") -> "SymOp":
        """``self ∘ other``: apply ``other`` first."""
        return SymOp(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def same_as(self, other: "SymOp") -> bool:
        if not np.allclose(self.rotation, other.rotation, atol=POSITION_TOL):
            return False
        dt = self.translation - other.translation
        return bool(np.all(np.abs(dt - np.round(dt)) < POSITION_TOL))

    def cartesian_rotation(self, crystal: Crystal) -> np.ndarray:
        A = crystal.lattice_vectors
        return A @ self.rotation @ np.linalg.inv(A)

    def __repr__(self):
        rows = "; ".join(" ".join(f"{v:g}" for v in r) for r in self.rotation)
        return f"SymOp([{rows}] + [{' '.join(f'{v:g}' for v in self.translation)}])"


class Bond(NamedTuple):
    site_i: int
    site_j: int
    cell_offset: tuple

    @classmethod
    def make(cls, i, j, offset) -> "Bond":
        return cls(int(i), int(j), tuple(int(v) for v in offset))

    def reversed(self) -> "Bond":
        return Bond(self.site_j, self.site_i, tuple(-v for v in self.cell_offset))

    def is_canonical(self) -> bool:
        if self.site_i != self.site_j:
            return self.site_i < self.site_j
        neg = tuple(-v for v in self.cell_offset)
        return self.cell_offset >= neg

    def canonical(self) -> "Bond":
        if self.site_i == self.site_j and not any(self.cell_offset):
            raise ValueError(f"bond {self} joins a site to itself")
        return self if self.is_canonical() else self.reversed()

    def displacement(self, crystal: Crystal) -> np.ndarray:
        """Cartesian vector from site_i to site_j."""
        d = crystal.sites[self.site_j] + np.asarray(self.cell_offset) - crystal.sites[self.site_i]
        return crystal.cartesian(d)


def map_site(crystal: Crystal, op: SymOp, k: int) -> tuple[int, np.ndarray]:
    """Image of site ``k`` under ``op`` as (site index, integer lattice shift)."""
    x = op.apply(crystal.sites[k])
    for m, xm in enumerate(crystal.sites):
        diff = x - xm
        shift = np.round(diff)
        if np.all(np.abs(diff - shift) < POSITION_TOL):
            return m, shift.astype(int)
    raise SymmetryError(f"{op!r} maps site {k} at {crystal.sites[k]} to {x}, which is not a crystal site")


def check_symop(crystal: Crystal, op: SymOp) -> None:
    """Validate orthogonality and site permutation; raise :class:`SymmetryError` if violated."""
    R = op.cartesian_rotation(crystal)
    if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHOGONALITY_TOL:
        raise SymmetryError(f"{op!r} is not an isometry of the lattice")
    images = set()
    for k in range(crystal.nsites):
        m, _ = map_site(crystal, op, k)
        if crystal.spin_s[m] != crystal.spin_s[k] or crystal.g_factor[m] != crystal.g_factor[k]:
            raise SymmetryError(f"{op!r} maps site {k} onto site {m} with different spin or g-factor")
        images.add(m)
    if len(images) != crystal.nsites:
        raise SymmetryError(f"{op!r} does not permute the site list")


def generate_group(crystal: Crystal, generators: Sequence[SymOp], cap: int = MAX_GROUP_ORDER) -> list[SymOp]:
    """Closure of ``generators`` modulo lattice translations, identity first."""
    for op in generators:
        check_symop(crystal, op)
    group = [SymOp.identity()]
    frontier = list(group)
    gens = list(generators)
    while frontier:
        new = []
        for a in frontier:
            for g in gens:
                c = g.compose(a)
                if not any(c.same_as(h) for h in group):
                    group.append(c)
                    new.append(c)
                    if len(group) > cap:
                        raise SymmetryError(f"symmetry group generated from input exceeds {cap} elements")
        frontier = new
    return group


def transform_bond(crystal: Crystal, op: SymOp, bond: Bond) -> Bond:
    """Oriented image of ``bond`` under ``op`` (not canonicalized)."""
    mi, ni = map_site(crystal, op, bond.site_i)
    xj = crystal.sites[bond.site_j] + np.asarray(bond.cell_offset)
    xj_img = op.apply(xj)
    mj, _ = map_site(crystal, op, bond.site_j)
    offset = np.round(xj_img - crystal.sites[mj] - ni).astype(int)
    return Bond.make(mi, mj, offset)


def bond_orbit(crystal: Crystal, symops: Sequence[SymOp], ref: Bond) -> list[Bond]:
    """All canonical bonds symmetry-equivalent to ``ref``, sorted."""
    group = generate_group(crystal, symops)
    ref = ref.canonical()
    return sorted({transform_bond(crystal, g, ref).canonical() for g in group})


def bond_site_symmetry(crystal: Crystal, group: Sequence[SymOp], bond: Bond):
    """Split the group elements leaving ``bond`` invariant.

    Returns ``(stabilizers, reversers)``: lists of ``(SymOp, R_cart)`` for ops
    that map the bond onto itself with the same or with swapped orientation.
    """
    rev = bond.reversed()
    stab, revs = [], []
    for g in group:
        img = transform_bond(crystal, g, bond)
        if img == bond:
            stab.append((g, g.cartesian_rotation(crystal)))
        elif img == rev:
            revs.append((g, g.cartesian_rotation(crystal)))
    return stab, revs


_TRANSPOSE = np.eye(9)[[0, 3, 6, 1, 4, 7, 2, 5, 8]]


def exchange_projector(crystal: Crystal, symops: Sequence[SymOp], bond: Bond) -> np.ndarray:
    """9x9 group-averaged projector onto symmetry-allowed exchange matrices.

    Acts on row-major flattened 3x3 matrices.
    """
    group = generate_group(crystal, symops)
    stab, revs = bond_site_symmetry(crystal, group, bond.canonical())
    ops = [np.kron(R, R) for _, R in stab] + [np.kron(R, R) @ _TRANSPOSE for _, R in revs]
    return sum(ops) / len(ops)


def allowed_exchange_basis(crystal: Crystal, symops: Sequence[SymOp], bond: Bond) -> list[np.ndarray]:
    """Frobenius-orthonormal basis of the exchange matrices allowed on ``bond``.

    The basis is made deterministic by projecting the elementary matrices
    E_00, E_01, ..., E_22 in order and Gram-Schmidt orthogonalizing.
    """
    P = exchange_projector(crystal, symops, bond)
    basis = []
    for k in range(9):
        v = P[:, k].copy()
        for b in basis:
            v -= (b @ v) * b
        nrm = np.linalg.norm(v)
        if nrm > 1e-8:
            basis.append(v / nrm)
    out = []
    for b in basis:
        b = b.copy()
        b[np.abs(b) < 1e-14] = 0.0
        out.append(b.reshape(3, 3))
    return out


def check_exchange_symmetry(crystal: Crystal, symops: Sequence[SymOp], bond: Bond, J, tol: float = 1e-8) -> None:
    """Raise :class:`SymmetryError` naming the first site-symmetry op that ``J`` violates."""
    J = np.asarray(J, dtype=float)
    group = generate_group(crystal, symops)
    stab, revs = bond_site_symmetry(crystal, group, bond)
    for g, R in stab:
        res = np.max(np.abs(R @ J @ R.T - J))
        if res > tol:
            raise SymmetryError(f"exchange on bond {tuple(bond)} violates {g!r} (residual {res:.3g})")
    for g, R in revs:
        res = np.max(np.abs(R @ J.T @ R.T - J))
        if res > tol:
            raise SymmetryError(f"exchange on bond {tuple(bond)} violates bond-reversing {g!r} (residual {res:.3g})")


def propagate_exchange(crystal: Crystal, symops: Sequence[SymOp], ref: Bond, J) -> list[tuple[Bond, np.ndarray]]:
    """Copy ``J`` on ``ref`` to every equivalent bond as ``R J R^T``."""
    J = np.asarray(J, dtype=float)
    ref_c = ref.canonical()
    if ref_c != ref:
        J = J.T
    check_exchange_symmetry(crystal, symops, ref_c, J)
    group = generate_group(crystal, symops)
    out: dict[Bond, np.ndarray] = {}
    for g in group:
        R = g.cartesian_rotation(crystal)
        img = transform_bond(crystal, g, ref_c)
        Jg = R @ J @ R.T
        if not img.is_canonical():
            img, Jg = img.reversed(), Jg.T
        if img in out:
            if np.max(np.abs(out[img] - Jg)) > 1e-8:
                raise SymmetryError(f"{g!r} gives an inconsistent coupling on bond {tuple(img)}")
        else:
            out[img] = Jg
    return sorted(out.items(), key=lambda kv: kv[0])


class SiteTable(NamedTuple):
    positions: np.ndarray  # (N, 3) Cartesian
    site: np.ndarray  # (N,) index into crystal.sites
    cell: np.ndarray  # (N, 3) integer cell coordinates
    dims: tuple


def site_index(dims, nsites: int, cell, site) -> np.ndarray:
    """Flat supercell index, cell-major and site-minor, cells wrapped periodically."""
    cell = np.mod(np.asarray(cell), dims)
    flat = np.ravel_multi_index(tuple(np.moveaxis(cell, -1, 0)), dims)
    return flat * nsites + np.asarray(site)


def build_supercell(crystal: Crystal, dims, max_sites: int = MAX_SUPERCELL_SITES) -> SiteTable:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise SizeError(f"supercell dims must be three positive integers, got {dims}")
    n = int(np.prod(dims)) * crystal.nsites
    if n > max_sites:
        raise SizeError(f"supercell has {n} sites, above the limit of {max_sites}")
    cells = np.array(list(np.ndindex(*dims)), dtype=int)
    cell = np.repeat(cells, crystal.nsites, axis=0)
    site = np.tile(np.arange(crystal.nsites), len(cells))
    positions = crystal.cartesian(cell + crystal.sites[site])
    return SiteTable(positions, site, cell, dims)
